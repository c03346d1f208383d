//! The interactive optimization loop: NSGA-II plus scheduled learning,
//! feedback and repair.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, InteractionMode, RunConfig, Units, UserSpec};
use crate::feedback::{artificial_feedback, merge_feedback_async, FieldError, UserFeedback};
use crate::learning::{learn_all, NdSet, RuleSet};
use crate::metrics::RunRecord;
use crate::nsga2::{Individual, NoHook, Nsga2State, StepReport};
use crate::problems::{Problem, ProblemRegistry};
use crate::repair::{
    EnsembleState, FamilyMode, RepairDispatch, RepairOption, RepairTag, RuleFamily, SurvivalTally,
};
use crate::rule::{Diagnostics, LearningConfig, Rule, VariableGroup};
use crate::vrg::{
    apply_feedback, build_complete, orient, select_rules, transitive_reduce, traverse_and_repair,
    OrientationSequence, Vrg,
};

pub const CHECKPOINT_SCHEMA: &str = "ikemo-checkpoint/1";

/// Stream id of the repair RNG, kept apart from the variation RNG so a run
/// without repair follows the plain NSGA-II trajectory exactly.
const REPAIR_STREAM: u64 = 0x5eed;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run has finished")]
    Finished,
    #[error("no rules have been learned yet")]
    NoRules,
    #[error("invalid feedback")]
    InvalidFeedback(Vec<FieldError>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    PausedForFeedback,
    Paused,
    Finished,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Failed)
    }
}

/// Per-generation log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLog {
    pub gen: usize,
    pub fe: u64,
    pub hv: f64,
    pub archive_size: usize,
    /// Operator probabilities per ensemble family.
    pub ensemble_p: BTreeMap<RuleFamily, Vec<f64>>,
    /// Rules in the effective set.
    pub rules_active: usize,
    pub repaired: bool,
    pub pop_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLog {
    pub fe: u64,
    pub family: RuleFamily,
    pub operator: RepairOption,
    pub p: f64,
}

/// A rule set handed to the user and not answered yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub requested_fe: u64,
    /// FE count at which an artificial user answers (`None` for humans).
    pub ready_fe: Option<u64>,
    pub rules: RuleSet,
    /// Learning phases run since the request, the requesting one included.
    pub phases_during: u64,
}

/// One answered request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deliberation {
    pub requested_fe: u64,
    pub delivered_fe: u64,
    pub learning_phases: u64,
}

/// Inputs and output of the latest asynchronous merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub fe: u64,
    pub previous: Vec<Rule>,
    pub feedback: UserFeedback,
    pub latest: Vec<Rule>,
    pub effective: Vec<Rule>,
}

/// Everything that changes while a run executes; this is what a checkpoint
/// stores next to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub status: RunStatus,
    pub evo: Nsga2State,
    pub repair_rng: ChaCha8Rng,
    pub learning_phases: u64,
    pub repair_ticks: u64,
    pub repair_due: bool,
    pub latest: Option<RuleSet>,
    /// Rules the VRGs are built from.
    pub effective: Vec<Rule>,
    /// Feedback applied to every VRG.
    pub feedback: UserFeedback,
    /// Last answered feedback and the rules it was given on.
    pub standing: Option<(Vec<Rule>, UserFeedback)>,
    pub pending: Option<FeedbackRequest>,
    pub ensembles: BTreeMap<RuleFamily, EnsembleState>,
    /// FEs charged for synchronous deliberation.
    pub deducted_fe: u64,
    pub diagnostics: Diagnostics,
    pub log: Vec<GenLog>,
    pub ensemble_log: Vec<EnsembleLog>,
    pub deliberations: Vec<Deliberation>,
    pub last_merge: Option<MergeRecord>,
    pub repair_phases: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config: RunConfig,
    pub state: SessionState,
}

/// Result of one call to [`Session::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    AwaitingFeedback,
    Paused,
    Finished,
}

/// Read-only view for dashboards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub gen: usize,
    pub fe: u64,
    pub hv: f64,
    pub status: RunStatus,
    pub ensemble_p: BTreeMap<RuleFamily, Vec<f64>>,
    pub archive_size: usize,
    pub learning_phases: u64,
    pub awaiting_feedback: bool,
}

pub struct Session {
    config: RunConfig,
    problem: Arc<dyn Problem>,
    learning: LearningConfig,
    groups: Vec<VariableGroup>,
    state: SessionState,
}

impl Session {
    pub fn new(config: RunConfig, registry: &ProblemRegistry) -> Result<Self, SessionError> {
        config.validate(registry)?;
        let problem = registry
            .build(&config.problem, &config.problem_params)
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        let evo = Nsga2State::initialize(problem.as_ref(), &config.evo);
        let mut repair_rng = ChaCha8Rng::seed_from_u64(config.evo.seed);
        repair_rng.set_stream(REPAIR_STREAM);
        let ensembles = config
            .agent
            .families()
            .into_iter()
            .filter(|(_, m)| *m == FamilyMode::Ensemble)
            .map(|(f, _)| {
                let e = EnsembleState {
                    alpha: config.ensemble.alpha,
                    p_min: config.ensemble.p_min,
                    ..EnsembleState::default()
                };
                (f, e)
            })
            .collect();
        let state = SessionState {
            status: RunStatus::Running,
            evo,
            repair_rng,
            learning_phases: 0,
            repair_ticks: 0,
            repair_due: false,
            latest: None,
            effective: Vec::new(),
            feedback: UserFeedback::default(),
            standing: None,
            pending: None,
            ensembles,
            deducted_fe: 0,
            diagnostics: Diagnostics::default(),
            log: Vec::new(),
            ensemble_log: Vec::new(),
            deliberations: Vec::new(),
            last_merge: None,
            repair_phases: 0,
        };
        let mut s = Self::assemble(config, problem, state);
        s.record(false);
        s.schedule();
        s.check_budget();
        Ok(s)
    }

    fn assemble(config: RunConfig, problem: Arc<dyn Problem>, state: SessionState) -> Self {
        let learning = config
            .learning
            .clone()
            .unwrap_or_else(|| problem.learning_config());
        let groups = problem.groups();
        Self {
            config,
            problem,
            learning,
            groups,
            state,
        }
    }

    pub fn resume(
        checkpoint: Checkpoint,
        registry: &ProblemRegistry,
    ) -> Result<Self, SessionError> {
        if checkpoint.schema != CHECKPOINT_SCHEMA {
            return Err(SessionError::Checkpoint(format!(
                "unsupported schema {:?}",
                checkpoint.schema
            )));
        }
        checkpoint.config.validate(registry)?;
        let problem = registry
            .build(
                &checkpoint.config.problem,
                &checkpoint.config.problem_params,
            )
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(Self::assemble(checkpoint.config, problem, checkpoint.state))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn problem(&self) -> &dyn Problem {
        self.problem.as_ref()
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn status(&self) -> RunStatus {
        self.state.status
    }

    pub fn fe(&self) -> u64 {
        self.state.evo.fe
    }

    pub fn gen(&self) -> usize {
        self.state.evo.gen
    }

    pub fn hv(&self) -> f64 {
        self.problem
            .hv_config()
            .hypervolume(self.state.evo.archive.objectives())
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            gen: self.gen(),
            fe: self.fe(),
            hv: self.state.log.last().map_or_else(|| self.hv(), |l| l.hv),
            status: self.state.status,
            ensemble_p: self.ensemble_p(),
            archive_size: self.state.evo.archive.len(),
            learning_phases: self.state.learning_phases,
            awaiting_feedback: self.state.pending.is_some(),
        }
    }

    /// Latest learned rules with the ranks currently in force; rules the
    /// current feedback drops are marked excluded.
    pub fn rules_view(&self) -> RuleSet {
        let Some(latest) = &self.state.latest else {
            return RuleSet::default();
        };
        let effective: BTreeMap<String, &Rule> =
            self.state.effective.iter().map(|r| (r.id(), r)).collect();
        let mut out = latest.clone();
        for r in &mut out.rules {
            match effective
                .get(&r.id())
                .map(|e| self.state.feedback.verdict(e))
            {
                Some(Some(rank)) => {
                    if let Some(rank) = rank {
                        r.rank = rank;
                    }
                }
                _ => r.excluded = true,
            }
        }
        out
    }

    /// Selected (unoriented) VRGs of the effective rule set.
    pub fn vrgs(&self) -> Vec<Vrg> {
        self.groups
            .iter()
            .map(|g| {
                select_rules(
                    &build_complete(g),
                    &self.state.effective,
                    self.learning.s_min,
                )
            })
            .map(|v| apply_feedback(&v, &self.state.feedback))
            .collect()
    }

    fn ensemble_p(&self) -> BTreeMap<RuleFamily, Vec<f64>> {
        self.state
            .ensembles
            .iter()
            .map(|(f, e)| (*f, e.p.clone()))
            .collect()
    }

    pub fn pause(&mut self) -> Result<(), SessionError> {
        match self.state.status {
            s if s.is_terminal() => Err(SessionError::Finished),
            RunStatus::Running => {
                self.state.status = RunStatus::Paused;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn resume_run(&mut self) -> Result<(), SessionError> {
        match self.state.status {
            s if s.is_terminal() => Err(SessionError::Finished),
            RunStatus::Paused => {
                self.state.status = if self.awaiting_sync_feedback() {
                    RunStatus::PausedForFeedback
                } else {
                    RunStatus::Running
                };
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn awaiting_sync_feedback(&self) -> bool {
        self.config.mode == InteractionMode::Sync
            && self.config.user == UserSpec::Human
            && self.state.pending.is_some()
    }

    fn budget_spent(&self) -> bool {
        let evo = &self.config.evo;
        self.state.evo.gen >= evo.max_gen
            || evo
                .max_fe
                .is_some_and(|m| self.state.evo.fe + self.state.deducted_fe >= m)
    }

    fn check_budget(&mut self) {
        if !self.state.status.is_terminal() && self.budget_spent() {
            self.state.status = RunStatus::Finished;
            info!(
                "run finished at gen {} with {} FEs",
                self.state.evo.gen, self.state.evo.fe
            );
        }
    }

    /// Runs one generation if the run can proceed.
    pub fn step(&mut self) -> StepOutcome {
        match self.state.status {
            RunStatus::Finished | RunStatus::Failed => return StepOutcome::Finished,
            RunStatus::Paused => return StepOutcome::Paused,
            RunStatus::PausedForFeedback => return StepOutcome::AwaitingFeedback,
            RunStatus::Running => {}
        }
        let repairing = self.state.repair_due
            && !self.config.agent.is_none()
            && self
                .vrgs()
                .iter()
                .any(|v| !v.edges.is_empty() || !v.constant_rules.is_empty());
        let report = if repairing {
            self.state.repair_due = false;
            self.state.repair_phases += 1;
            self.repair_generation()
        } else {
            self.state.repair_due = false;
            self.state
                .evo
                .step(self.problem.as_ref(), &self.config.evo, &mut NoHook)
        };
        if repairing {
            self.update_ensembles(&report);
        }
        self.record(repairing);
        self.schedule();
        self.check_budget();
        StepOutcome::Advanced
    }

    /// Steps until the run finishes or blocks.
    pub fn run(&mut self) -> StepOutcome {
        loop {
            match self.step() {
                StepOutcome::Advanced => continue,
                other => return other,
            }
        }
    }

    fn repair_generation(&mut self) -> StepReport {
        let vrgs = self.vrgs();
        let agent = self.config.agent;
        let specs = self.problem.variables().to_vec();
        let families = agent.families();
        let SessionState {
            evo,
            repair_rng,
            ensembles,
            diagnostics,
            ..
        } = &mut self.state;
        let mut hook = |_gen: usize, offspring: &mut [Individual]| {
            for child in offspring.iter_mut() {
                let mut tag = RepairTag::default();
                for (family, mode) in &families {
                    let option = match mode {
                        FamilyMode::Fixed(a) => RepairOption::from(*a),
                        FamilyMode::Ensemble => {
                            let e = &ensembles[family];
                            e.operators[e.pick(repair_rng)]
                        }
                    };
                    tag.set(*family, option);
                }
                let mut dispatch = RepairDispatch::new(agent, &specs, tag);
                for vrg in &vrgs {
                    let seq = OrientationSequence::random(&vrg.group, repair_rng);
                    let graph = orient(vrg, &seq)
                        .and_then(|d| transitive_reduce(&d))
                        .expect("a permutation orientation is acyclic");
                    traverse_and_repair(&mut child.x, &graph, &mut dispatch, repair_rng)
                        .expect("graph is directed");
                }
                diagnostics.merge(&dispatch.diag);
                child.op_tag = Some(tag);
            }
        };
        evo.step(self.problem.as_ref(), &self.config.evo, &mut hook)
    }

    fn update_ensembles(&mut self, report: &StepReport) {
        let fe = self.state.evo.fe;
        let survivors = report.survived.iter().filter(|s| **s).count();
        for (family, state) in self.state.ensembles.iter_mut() {
            let mut tally = SurvivalTally::new(state.operators.len());
            tally.total = survivors;
            for (tag, survived) in report.tags.iter().zip(&report.survived) {
                if !survived {
                    continue;
                }
                if let Some(k) = tag
                    .and_then(|t| t.get(*family))
                    .and_then(|o| state.index_of(o))
                {
                    tally.survivors[k] += 1;
                }
            }
            *state = state.update(&tally);
            for (op, p) in state.operators.iter().zip(&state.p) {
                self.state.ensemble_log.push(EnsembleLog {
                    fe,
                    family: *family,
                    operator: *op,
                    p: *p,
                });
            }
        }
    }

    fn record(&mut self, repaired: bool) {
        let log = GenLog {
            gen: self.state.evo.gen,
            fe: self.state.evo.fe,
            hv: self.hv(),
            archive_size: self.state.evo.archive.len(),
            ensemble_p: self.ensemble_p(),
            rules_active: self.state.effective.len(),
            repaired,
            pop_hash: self.state.evo.population_hash(),
        };
        self.state.log.push(log);
    }

    fn units_elapsed(&self) -> u64 {
        match self.config.schedule.units {
            Units::Generations => self.state.evo.gen as u64,
            Units::Fes => self.state.evo.fe,
        }
    }

    /// Learning, feedback and repair bookkeeping at a generation boundary.
    fn schedule(&mut self) {
        let elapsed = self.units_elapsed();
        let sched = self.config.schedule.clone();
        if self.config.mode == InteractionMode::Async {
            self.deliver_if_ready();
        }
        while self.state.learning_phases < elapsed / sched.t_l {
            self.learning_phase();
        }
        if self.config.mode == InteractionMode::Async {
            self.deliver_if_ready();
        }
        if self.config.mode == InteractionMode::Sync {
            let ticks = elapsed / sched.t_r;
            if ticks > self.state.repair_ticks {
                self.state.repair_ticks = ticks;
                if self.state.learning_phases > 0 {
                    self.state.repair_due = true;
                }
            }
        }
    }

    fn learning_phase(&mut self) {
        self.state.learning_phases += 1;
        if let Some(p) = &mut self.state.pending {
            p.phases_during += 1;
        }
        let agent = self.config.agent;
        if agent.is_none() {
            return;
        }
        let solutions = self.state.evo.archive.solutions();
        let specs = self.problem.variables();
        let rules = learn_all(
            &NdSet::new(&solutions, specs),
            &self.groups,
            &agent.hierarchy(),
            &self.learning,
        );
        debug!(
            "learning phase {} at fe {}: {} rules",
            self.state.learning_phases,
            self.state.evo.fe,
            rules.len()
        );
        let set = RuleSet {
            generation: self.state.evo.gen as u64,
            fe_count: self.state.evo.fe,
            archive_size: solutions.len(),
            rules,
        };
        self.state.latest = Some(set.clone());
        match self.config.mode {
            InteractionMode::Sync => self.sync_round(set),
            InteractionMode::Async => self.async_learned(set),
        }
    }

    fn sync_round(&mut self, set: RuleSet) {
        match self.config.user {
            UserSpec::Artificial(scheme) => {
                self.state.feedback = artificial_feedback(&set.rules, scheme, self.learning.s_min);
                self.state.effective = set.rules;
                self.state.deducted_fe += self.config.schedule.t_u.unwrap_or(0);
            }
            UserSpec::Human => {
                self.state.pending = Some(FeedbackRequest {
                    requested_fe: self.state.evo.fe,
                    ready_fe: None,
                    rules: set,
                    phases_during: 1,
                });
                self.state.status = RunStatus::PausedForFeedback;
            }
        }
    }

    fn async_learned(&mut self, set: RuleSet) {
        match &self.state.standing {
            Some((rules, fb)) => {
                self.state.effective = merge_feedback_async(rules, fb, &set.rules);
                self.state.feedback = fb.clone();
            }
            None => {
                self.state.effective = set.rules.clone();
                self.state.feedback = UserFeedback::default();
            }
        }
        self.state.repair_due = true;
        if self.state.pending.is_none() {
            let ready_fe = match self.config.user {
                UserSpec::Artificial(_) => {
                    Some(self.state.evo.fe + self.config.schedule.t_u.unwrap_or(0))
                }
                UserSpec::Human => None,
            };
            self.state.pending = Some(FeedbackRequest {
                requested_fe: self.state.evo.fe,
                ready_fe,
                rules: set,
                phases_during: 1,
            });
        }
    }

    fn deliver_if_ready(&mut self) {
        let ready = self
            .state
            .pending
            .as_ref()
            .and_then(|p| p.ready_fe)
            .is_some_and(|r| self.state.evo.fe >= r);
        if !ready {
            return;
        }
        let UserSpec::Artificial(scheme) = self.config.user else {
            return;
        };
        let request = self.state.pending.as_ref().expect("checked above");
        let fb = artificial_feedback(&request.rules.rules, scheme, self.learning.s_min);
        self.deliver(fb);
    }

    /// Applies an answer to the pending request.
    fn deliver(&mut self, fb: UserFeedback) {
        let request = self.state.pending.take().expect("a pending request");
        let fe = self.state.evo.fe;
        self.state.deliberations.push(Deliberation {
            requested_fe: request.requested_fe,
            delivered_fe: fe,
            learning_phases: request.phases_during,
        });
        let latest = self
            .state
            .latest
            .as_ref()
            .map(|l| l.rules.clone())
            .unwrap_or_default();
        match self.config.mode {
            InteractionMode::Sync => {
                self.state.effective = request.rules.rules.clone();
                self.state.feedback = fb.clone();
                self.state.status = RunStatus::Running;
            }
            InteractionMode::Async => {
                let effective = merge_feedback_async(&request.rules.rules, &fb, &latest);
                self.state.last_merge = Some(MergeRecord {
                    fe,
                    previous: request.rules.rules.clone(),
                    feedback: fb.clone(),
                    latest,
                    effective: effective.clone(),
                });
                self.state.effective = effective;
                self.state.feedback = fb.clone();
                self.state.repair_due = true;
            }
        }
        self.state.standing = Some((request.rules.rules, fb));
    }

    /// Feedback from a human (or an override). It answers the pending
    /// request; without one it is applied to the latest rules directly.
    pub fn submit_feedback(&mut self, fb: UserFeedback) -> Result<(), SessionError> {
        if self.state.status.is_terminal() {
            return Err(SessionError::Finished);
        }
        fb.validate().map_err(SessionError::InvalidFeedback)?;
        if self.state.pending.is_none() {
            let latest = self.state.latest.clone().ok_or(SessionError::NoRules)?;
            self.state.pending = Some(FeedbackRequest {
                requested_fe: self.state.evo.fe,
                ready_fe: None,
                rules: latest,
                phases_during: 0,
            });
        }
        let was_paused = self.state.status == RunStatus::Paused;
        self.deliver(fb);
        if was_paused {
            self.state.status = RunStatus::Paused;
        }
        Ok(())
    }

    pub fn record_summary(&self) -> RunRecord {
        let evo = &self.config.evo;
        let budget = evo
            .max_fe
            .unwrap_or(evo.pop_size as u64 * (evo.max_gen as u64 + 1));
        RunRecord {
            seed: evo.seed,
            agent: self.config.agent.to_string(),
            user: self.config.user.to_string(),
            trace: self.state.log.iter().map(|l| (l.fe, l.hv)).collect(),
            budget,
            fe_to_target: None,
        }
    }

    pub fn fail(&mut self) {
        self.state.status = RunStatus::Failed;
    }
}

/// Runs a headless session to completion and returns it.
pub fn run_to_end(config: RunConfig, registry: &ProblemRegistry) -> Result<Session, SessionError> {
    let mut s = Session::new(config, registry)?;
    if s.run() == StepOutcome::AwaitingFeedback {
        return Err(SessionError::Checkpoint(
            "a human-in-the-loop run cannot finish headless".into(),
        ));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::RuleUsage;
    use crate::nsga2::run_baseline;
    use crate::repair::RepairAgentKind;

    fn planted(agent: RepairAgentKind, gens: usize) -> RunConfig {
        let mut cfg = RunConfig::new("planted_eq_6");
        cfg.agent = agent;
        cfg.user = UserSpec::Artificial(RuleUsage::Ru4);
        cfg.evo.pop_size = 20;
        cfg.evo.max_gen = gens;
        cfg.evo.seed = 5;
        cfg
    }

    #[test]
    fn null_agent_matches_baseline() {
        let reg = ProblemRegistry::default();
        let cfg = planted(RepairAgentKind::None, 30);
        let s = run_to_end(cfg.clone(), &reg).unwrap();
        let problem = reg.build("planted_eq_6", &serde_json::Value::Null).unwrap();
        let (_, hashes) = run_baseline(problem.as_ref(), &cfg.evo);
        let ours: Vec<u64> = s.state().log.iter().map(|l| l.pop_hash).collect();
        assert_eq!(ours, hashes);
    }

    #[test]
    fn learning_phase_count() {
        let reg = ProblemRegistry::default();
        let s = run_to_end(planted(RepairAgentKind::PlRa1, 100), &reg).unwrap();
        assert_eq!(s.state().learning_phases, 10);
        let mut fe_cfg = planted(RepairAgentKind::PlRa1, 50);
        fe_cfg.schedule.units = Units::Fes;
        fe_cfg.schedule.t_l = 70;
        fe_cfg.schedule.t_r = 70;
        let s = run_to_end(fe_cfg, &reg).unwrap();
        assert_eq!(s.state().learning_phases, s.fe() / 70);
    }

    #[test]
    fn repair_changes_the_trajectory_and_is_deterministic() {
        let reg = ProblemRegistry::default();
        let a = run_to_end(planted(RepairAgentKind::PlRa1, 40), &reg).unwrap();
        let b = run_to_end(planted(RepairAgentKind::PlRa1, 40), &reg).unwrap();
        assert_eq!(a.state().log, b.state().log);
        assert!(a.state().repair_phases > 0);
        let base = run_to_end(planted(RepairAgentKind::None, 40), &reg).unwrap();
        assert_ne!(
            a.state().log.last().unwrap().pop_hash,
            base.state().log.last().unwrap().pop_hash
        );
    }

    #[test]
    fn ensemble_probabilities_move() {
        let reg = ProblemRegistry::default();
        let s = run_to_end(planted(RepairAgentKind::PlRaE, 60), &reg).unwrap();
        let p = &s.state().ensembles[&RuleFamily::PowerLaw].p;
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(!s.state().ensemble_log.is_empty());
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let reg = ProblemRegistry::default();
        let cfg = planted(RepairAgentKind::PlRaE, 45);
        let full = run_to_end(cfg.clone(), &reg).unwrap();
        let mut part = Session::new(cfg, &reg).unwrap();
        for _ in 0..23 {
            part.step();
        }
        let text = serde_json::to_string(&part.checkpoint()).unwrap();
        let mut resumed = Session::resume(serde_json::from_str(&text).unwrap(), &reg).unwrap();
        resumed.run();
        assert_eq!(resumed.state(), full.state());
    }

    #[test]
    fn sync_human_blocks_until_feedback() {
        let reg = ProblemRegistry::default();
        let mut cfg = planted(RepairAgentKind::PlRa1, 30);
        cfg.user = UserSpec::Human;
        let mut s = Session::new(cfg, &reg).unwrap();
        assert_eq!(s.run(), StepOutcome::AwaitingFeedback);
        let fe = s.fe();
        assert_eq!(s.step(), StepOutcome::AwaitingFeedback);
        assert_eq!(s.fe(), fe);
        assert_eq!(s.status(), RunStatus::PausedForFeedback);
        let bad = UserFeedback {
            rankings: BTreeMap::from([("power_law:0:1".to_string(), 0)]),
            ..UserFeedback::default()
        };
        assert!(matches!(
            s.submit_feedback(bad),
            Err(SessionError::InvalidFeedback(_))
        ));
        let first = s
            .rules_view()
            .rules
            .iter()
            .find(|r| r.j.is_some())
            .map(|r| r.id());
        let mut fb = UserFeedback::default();
        if let Some(id) = &first {
            fb.exclusions.insert(id.clone());
        }
        s.submit_feedback(fb).unwrap();
        assert_eq!(s.status(), RunStatus::Running);
        assert_eq!(s.step(), StepOutcome::Advanced);
        if let Some(id) = first {
            assert!(s
                .vrgs()
                .iter()
                .all(|v| v.edges.iter().all(|e| e.rule.as_ref().unwrap().id() != id)));
        }
    }

    #[test]
    fn rules_before_learning_are_empty() {
        let reg = ProblemRegistry::default();
        let s = Session::new(planted(RepairAgentKind::PlRa1, 30), &reg).unwrap();
        assert!(s.rules_view().rules.is_empty());
    }

    #[test]
    fn pause_and_resume() {
        let reg = ProblemRegistry::default();
        let mut s = Session::new(planted(RepairAgentKind::PlRa1, 5), &reg).unwrap();
        s.pause().unwrap();
        assert_eq!(s.step(), StepOutcome::Paused);
        s.resume_run().unwrap();
        assert_eq!(s.run(), StepOutcome::Finished);
        assert!(s.pause().is_err());
        assert!(matches!(
            s.submit_feedback(UserFeedback::default()),
            Err(SessionError::Finished)
        ));
    }
}
