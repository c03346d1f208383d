//! Run and batch configuration files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::feedback::{FieldError, RuleUsage};
use crate::nsga2::EvoConfig;
use crate::problems::ProblemRegistry;
use crate::repair::RepairAgentKind;
use crate::rule::LearningConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config:\n{}", format_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn format_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Who answers feedback requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UserSpec {
    Artificial(RuleUsage),
    Human,
}

impl Default for UserSpec {
    fn default() -> Self {
        UserSpec::Artificial(RuleUsage::Ru4)
    }
}

impl fmt::Display for UserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserSpec::Artificial(ru) => f.write_str(ru.as_str()),
            UserSpec::Human => f.write_str("human"),
        }
    }
}

impl FromStr for UserSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("human") {
            return Ok(UserSpec::Human);
        }
        s.parse::<RuleUsage>()
            .map(UserSpec::Artificial)
            .map_err(|_| format!("unknown user {s:?} (expected RU1..RU4 or human)"))
    }
}

impl TryFrom<String> for UserSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<UserSpec> for String {
    fn from(u: UserSpec) -> Self {
        u.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    #[default]
    #[serde(alias = "synchronous")]
    Sync,
    #[serde(alias = "asynchronous")]
    Async,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Generations,
    Fes,
}

/// Learning, repair and feedback timing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub t_l: u64,
    pub t_r: u64,
    pub units: Units,
    /// Feedback lag in FEs. In asynchronous mode the user answers this many
    /// FEs after a request; in synchronous mode it is the deliberation cost
    /// charged to the FE budget per feedback round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_u: Option<u64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            t_l: 10,
            t_r: 10,
            units: Units::Generations,
            t_u: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub alpha: f64,
    pub p_min: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            p_min: 0.1,
        }
    }
}

fn none_agent() -> RepairAgentKind {
    RepairAgentKind::None
}

fn is_null(v: &Value) -> bool {
    v.is_null()
}

/// One optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default, skip_serializing_if = "is_null")]
    pub problem_params: Value,
    #[serde(default = "none_agent")]
    pub agent: RepairAgentKind,
    #[serde(default)]
    pub user: UserSpec,
    #[serde(default)]
    pub mode: InteractionMode,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub evo: EvoConfig,
    /// Overrides the problem's default rule parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningConfig>,
    #[serde(default)]
    pub ensemble: EnsembleParams,
    /// Seeds for batch use; a single run uses `evo.seed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn field(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn new(problem: impl Into<String>) -> Self {
        Self {
            problem: problem.into(),
            problem_params: Value::Null,
            agent: RepairAgentKind::None,
            user: UserSpec::default(),
            mode: InteractionMode::Sync,
            schedule: Schedule::default(),
            evo: EvoConfig::default(),
            learning: None,
            ensemble: EnsembleParams::default(),
            seeds: Vec::new(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks every field; problem parameters are checked by building the
    /// problem.
    pub fn validate(&self, registry: &ProblemRegistry) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if let Err(e) = registry.build(&self.problem, &self.problem_params) {
            let name = match e {
                crate::problems::ProblemError::Unknown(_) => "problem",
                _ => "problem_params",
            };
            errors.push(field(name, e.to_string()));
        }
        if let Err(e) = self.evo.validate() {
            errors.push(field("evo", e));
        }
        if self.schedule.t_l == 0 {
            errors.push(field("schedule.t_l", "must be at least 1"));
        }
        if self.schedule.t_r == 0 {
            errors.push(field("schedule.t_r", "must be at least 1"));
        }
        if let Some(l) = &self.learning {
            if let Err(e) = l.validate() {
                errors.push(field("learning", e));
            }
        }
        let EnsembleParams { alpha, p_min } = self.ensemble;
        if !(0.0..=1.0).contains(&alpha) {
            errors.push(field("ensemble.alpha", "must lie in [0, 1]"));
        }
        // four operators share the simplex, so the floor must leave room
        if !(0.0..=0.25).contains(&p_min) {
            errors.push(field("ensemble.p_min", "must lie in [0, 0.25]"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.agent, self.user)
    }
}

/// A grid of runs: every agent with every user, for every seed. Runs of the
/// agent `NONE` do not depend on the user and are made once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub base: RunConfig,
    pub agents: Vec<RepairAgentKind>,
    pub users: Vec<UserSpec>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl BatchConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self, registry: &ProblemRegistry) -> Result<(), ConfigError> {
        let mut errors = match self.base.validate(registry) {
            Ok(()) => Vec::new(),
            Err(ConfigError::Invalid(e)) => e
                .into_iter()
                .map(|mut f| {
                    f.field = format!("base.{}", f.field);
                    f
                })
                .collect(),
            Err(other) => return Err(other),
        };
        for (name, empty) in [
            ("agents", self.agents.is_empty()),
            ("users", self.users.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                errors.push(field(name, "must not be empty"));
            }
        }
        if let Some(k) = self.users.iter().position(|u| *u == UserSpec::Human) {
            errors.push(field(&format!("users[{k}]"), "batch runs are headless"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// The concrete runs of the grid, in a stable order.
    pub fn expand(&self) -> Vec<RunConfig> {
        let mut runs = Vec::new();
        for &agent in &self.agents {
            let users: Vec<UserSpec> = if agent.is_none() {
                self.users.iter().take(1).copied().collect()
            } else {
                self.users.clone()
            };
            for user in users {
                for &seed in &self.seeds {
                    let mut cfg = self.base.clone();
                    cfg.agent = agent;
                    cfg.user = user;
                    cfg.evo.seed = seed;
                    cfg.seeds = Vec::new();
                    runs.push(cfg);
                }
            }
        }
        runs
    }
}
