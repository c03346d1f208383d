//! Innovized evolutionary multi-objective optimization.
//!
//! Rules are learned from the non-dominated set of an NSGA-II run, arranged in
//! variable relation graphs, optionally curated by a user, and used to repair
//! offspring before evaluation.

pub mod config;
pub mod feedback;
pub mod learning;
pub mod metrics;
pub mod nsga2;
pub mod problems;
pub mod repair;
pub mod report;
pub mod rule;
mod serde_ext;
pub mod session;
pub mod vrg;

pub use config::{BatchConfig, InteractionMode, RunConfig, Schedule, UserSpec};
pub use feedback::{RuleUsage, Specificity, UserFeedback};
pub use learning::{learn_all, NdSet, RuleSet};
pub use metrics::{HvConfig, RunRecord};
pub use nsga2::{EvoConfig, Individual, Nsga2State};
pub use problems::{Evaluation, Problem, ProblemRegistry};
pub use repair::{EnsembleState, RepairAgentKind, RepairDispatch, RepairOption};
pub use report::Report;
pub use rule::{
    Diagnostics, LearningConfig, Rule, RuleHierarchy, RuleKey, RuleKind, VariableGroup,
    VariableSpec,
};
pub use session::{
    run_to_end, Checkpoint, GenLog, RunStatus, Session, SessionError, StateSnapshot, StepOutcome,
};
pub use vrg::Vrg;
