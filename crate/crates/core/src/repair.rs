//! Per-edge repair operators, their adaptive ensemble, and routing of rule
//! kinds to operator families.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rule::{Diagnostics, LearningConfig, Rule, RuleHierarchy, RuleKind, VariableSpec};

/// Largest usable `nu` for the `>=` repair, which divides by `1 - nu`.
const NU2_CEILING: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairError {
    #[error("agent {agent} does not repair {kind} rules")]
    NotAdmitted {
        agent: RepairAgentKind,
        kind: RuleKind,
    },
    #[error("unknown repair agent `{0}`")]
    UnknownAgent(String),
    #[error("rule {rule} does not connect variables {base} and {target}")]
    EdgeMismatch {
        rule: String,
        base: usize,
        target: usize,
    },
    #[error(transparent)]
    Rule(#[from] crate::rule::RuleError),
}

/// How closely a repair follows the learned rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adherence {
    /// Exact fitted parameters.
    Ra1,
    /// One standard deviation of spread.
    Ra2,
    /// Loose: two standard deviations (power law) or uniform slack
    /// (inequality).
    Ra3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOption {
    Ra1,
    Ra2,
    Ra3,
    NoRepair,
}

impl RepairOption {
    pub fn adherence(self) -> Option<Adherence> {
        match self {
            RepairOption::Ra1 => Some(Adherence::Ra1),
            RepairOption::Ra2 => Some(Adherence::Ra2),
            RepairOption::Ra3 => Some(Adherence::Ra3),
            RepairOption::NoRepair => None,
        }
    }
}

impl From<Adherence> for RepairOption {
    fn from(a: Adherence) -> Self {
        match a {
            Adherence::Ra1 => RepairOption::Ra1,
            Adherence::Ra2 => RepairOption::Ra2,
            Adherence::Ra3 => RepairOption::Ra3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFamily {
    PowerLaw,
    Inequality,
}

impl RuleFamily {
    pub fn of(kind: RuleKind) -> Option<RuleFamily> {
        match kind {
            RuleKind::Constant => None,
            RuleKind::PowerLaw => Some(RuleFamily::PowerLaw),
            RuleKind::Equality | RuleKind::InequalityLe | RuleKind::InequalityGe => {
                Some(RuleFamily::Inequality)
            }
        }
    }
}

/// How an agent drives one rule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyMode {
    Fixed(Adherence),
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum RepairAgentKind {
    #[serde(rename = "PL_RA1")]
    PlRa1,
    #[serde(rename = "PL_RA2")]
    PlRa2,
    #[serde(rename = "PL_RA3")]
    PlRa3,
    #[serde(rename = "PL_RA_E")]
    PlRaE,
    #[serde(rename = "IQ_RA1")]
    IqRa1,
    #[serde(rename = "IQ_RA2")]
    IqRa2,
    #[serde(rename = "IQ_RA3")]
    IqRa3,
    #[serde(rename = "IQ_RA_E")]
    IqRaE,
    /// PL-RA2 together with IQ-RA2.
    #[serde(rename = "MIXED_RA2")]
    MixedRa2,
    /// PL-RA-E together with IQ-RA-E.
    #[serde(rename = "MIXED_E")]
    MixedE,
    #[serde(rename = "NONE")]
    None,
}

impl RepairAgentKind {
    pub const ALL: [RepairAgentKind; 11] = [
        RepairAgentKind::PlRa1,
        RepairAgentKind::PlRa2,
        RepairAgentKind::PlRa3,
        RepairAgentKind::PlRaE,
        RepairAgentKind::IqRa1,
        RepairAgentKind::IqRa2,
        RepairAgentKind::IqRa3,
        RepairAgentKind::IqRaE,
        RepairAgentKind::MixedRa2,
        RepairAgentKind::MixedE,
        RepairAgentKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RepairAgentKind::PlRa1 => "PL_RA1",
            RepairAgentKind::PlRa2 => "PL_RA2",
            RepairAgentKind::PlRa3 => "PL_RA3",
            RepairAgentKind::PlRaE => "PL_RA_E",
            RepairAgentKind::IqRa1 => "IQ_RA1",
            RepairAgentKind::IqRa2 => "IQ_RA2",
            RepairAgentKind::IqRa3 => "IQ_RA3",
            RepairAgentKind::IqRaE => "IQ_RA_E",
            RepairAgentKind::MixedRa2 => "MIXED_RA2",
            RepairAgentKind::MixedE => "MIXED_E",
            RepairAgentKind::None => "NONE",
        }
    }

    pub fn is_none(self) -> bool {
        self == RepairAgentKind::None
    }

    pub fn hierarchy(self) -> RuleHierarchy {
        use RepairAgentKind::*;
        match self {
            PlRa1 | PlRa2 | PlRa3 | PlRaE => RuleHierarchy::power_law(),
            IqRa1 | IqRa2 | IqRa3 | IqRaE => RuleHierarchy::inequality(),
            MixedRa2 | MixedE => RuleHierarchy::mixed(),
            None => RuleHierarchy::empty(),
        }
    }

    /// The rule families this agent repairs and how.
    pub fn families(self) -> Vec<(RuleFamily, FamilyMode)> {
        use FamilyMode::{Ensemble, Fixed};
        use RepairAgentKind::*;
        use RuleFamily::{Inequality, PowerLaw};
        match self {
            PlRa1 => vec![(PowerLaw, Fixed(Adherence::Ra1))],
            PlRa2 => vec![(PowerLaw, Fixed(Adherence::Ra2))],
            PlRa3 => vec![(PowerLaw, Fixed(Adherence::Ra3))],
            PlRaE => vec![(PowerLaw, Ensemble)],
            IqRa1 => vec![(Inequality, Fixed(Adherence::Ra1))],
            IqRa2 => vec![(Inequality, Fixed(Adherence::Ra2))],
            IqRa3 => vec![(Inequality, Fixed(Adherence::Ra3))],
            IqRaE => vec![(Inequality, Ensemble)],
            MixedRa2 => vec![
                (PowerLaw, Fixed(Adherence::Ra2)),
                (Inequality, Fixed(Adherence::Ra2)),
            ],
            MixedE => vec![(PowerLaw, Ensemble), (Inequality, Ensemble)],
            None => vec![],
        }
    }
}

impl fmt::Display for RepairAgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepairAgentKind {
    type Err = RepairError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let norm = match norm.as_str() {
            "BASE" => "NONE".to_string(),
            "PL_RA2+IQ_RA2" => "MIXED_RA2".to_string(),
            "PL_RA_E+IQ_RA_E" => "MIXED_E".to_string(),
            _ => norm,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| RepairError::UnknownAgent(s.to_string()))
    }
}

impl TryFrom<String> for RepairAgentKind {
    type Error = RepairError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Routes a rule kind to the operator family of `agent`.
pub fn route(kind: RuleKind, agent: RepairAgentKind) -> Result<RuleFamily, RepairError> {
    let not_admitted = RepairError::NotAdmitted { agent, kind };
    let family = RuleFamily::of(kind).ok_or(not_admitted.clone())?;
    if agent.hierarchy().contains(kind) && agent.families().iter().any(|(f, _)| *f == family) {
        Ok(family)
    } else {
        Err(not_admitted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairOutcome {
    Repaired,
    /// The repaired value left the variable bounds and was clamped.
    Clamped,
    /// An intermediate value was not finite; the target was left unchanged.
    NonFinite,
    /// The offspring's option for this family is "no repair".
    Skipped,
}

fn store(
    x: &mut [f64],
    target: usize,
    value: f64,
    spec: &VariableSpec,
    diag: &mut Diagnostics,
) -> RepairOutcome {
    if !value.is_finite() {
        diag.non_finite += 1;
        return RepairOutcome::NonFinite;
    }
    let clamped = spec.clamp(value);
    x[target] = clamped;
    if clamped != value {
        diag.clamped += 1;
        RepairOutcome::Clamped
    } else {
        RepairOutcome::Repaired
    }
}

fn sample_normal<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    match Normal::new(mean, std.max(0.0)) {
        Ok(d) => d.sample(rng),
        Err(_) => mean,
    }
}

fn check_edge(rule: &Rule, base: usize, target: usize) -> Result<bool, RepairError> {
    match rule.j {
        Some(j) if rule.i == base && j == target => Ok(true),
        Some(j) if j == base && rule.i == target => Ok(false),
        _ => Err(RepairError::EdgeMismatch {
            rule: rule.id(),
            base,
            target,
        }),
    }
}

/// Rewrites `x[target]` so that `x̂_i · x̂_j^b = c_r` holds given `x[base]`.
#[allow(clippy::too_many_arguments)]
pub fn repair_power_law<R: Rng + ?Sized>(
    x: &mut [f64],
    base: usize,
    target: usize,
    rule: &Rule,
    adherence: Adherence,
    specs: &[VariableSpec],
    rng: &mut R,
    diag: &mut Diagnostics,
) -> Result<RepairOutcome, RepairError> {
    let forward = check_edge(rule, base, target)?;
    let (b, c, sigma_c) = rule.power_params()?;
    let c_r = match adherence {
        Adherence::Ra1 => c,
        Adherence::Ra2 => sample_normal(c, sigma_c, rng),
        Adherence::Ra3 => sample_normal(c, 2.0 * sigma_c, rng),
    };
    let base_hat = specs[base].normalize_flagged(x[base], diag);
    let target_hat = if forward {
        // base is x_i: x̂_j = (c_r / x̂_i)^(1/b)
        (c_r / base_hat).powf(1.0 / b)
    } else {
        // base is x_j: x̂_i = c_r / x̂_j^b
        c_r / base_hat.powf(b)
    };
    let value = specs[target].denormalize(target_hat);
    Ok(store(x, target, value, &specs[target], diag))
}

fn draw_nu<R: Rng + ?Sized>(mean: f64, std: f64, adherence: Adherence, rng: &mut R) -> f64 {
    let nu = match adherence {
        Adherence::Ra1 => mean,
        Adherence::Ra2 => sample_normal(mean, std, rng),
        Adherence::Ra3 => rng.random::<f64>(),
    };
    nu.max(0.0)
}

/// `target <- base + nu (U_base - base)`: makes `target >= base`.
fn raise_from(base_value: f64, base_upper: f64, nu: f64) -> f64 {
    base_value + nu * (base_upper - base_value)
}

/// `target <- (base - nu U_base) / (1 - nu)`: makes `target <= base`.
fn lower_from(base_value: f64, base_upper: f64, nu: f64) -> f64 {
    let nu = nu.min(NU2_CEILING);
    (base_value - nu * base_upper) / (1.0 - nu)
}

/// Equality and inequality repair of `x[target]` from `x[base]`.
#[allow(clippy::too_many_arguments)]
pub fn repair_inequality<R: Rng + ?Sized>(
    x: &mut [f64],
    base: usize,
    target: usize,
    rule: &Rule,
    adherence: Adherence,
    specs: &[VariableSpec],
    rng: &mut R,
    diag: &mut Diagnostics,
) -> Result<RepairOutcome, RepairError> {
    let forward = check_edge(rule, base, target)?;
    let base_value = x[base];
    let upper = specs[base].upper;
    let stats = |rev: bool| {
        let s = if rev {
            rule.nu_stats_rev
        } else {
            rule.nu_stats
        };
        s.unwrap_or_default()
    };
    let value = match (rule.kind, forward) {
        (RuleKind::Equality, _) => base_value,
        // x_i <= x_j, repairing x_j from x_i
        (RuleKind::InequalityLe, true) => {
            let s = stats(false);
            raise_from(
                base_value,
                upper,
                draw_nu(s.nu1_mean, s.nu1_std, adherence, rng),
            )
        }
        // x_i >= x_j, repairing x_j from x_i
        (RuleKind::InequalityGe, true) => {
            let s = stats(false);
            lower_from(
                base_value,
                upper,
                draw_nu(s.nu2_mean, s.nu2_std, adherence, rng),
            )
        }
        // x_i <= x_j, repairing x_i from x_j
        (RuleKind::InequalityLe, false) => {
            let s = stats(true);
            lower_from(
                base_value,
                upper,
                draw_nu(s.nu2_mean, s.nu2_std, adherence, rng),
            )
        }
        // x_i >= x_j, repairing x_i from x_j
        (RuleKind::InequalityGe, false) => {
            let s = stats(true);
            raise_from(
                base_value,
                upper,
                draw_nu(s.nu1_mean, s.nu1_std, adherence, rng),
            )
        }
        (kind, _) => {
            return Err(RepairError::NotAdmitted {
                agent: RepairAgentKind::None,
                kind,
            })
        }
    };
    Ok(store(x, target, value, &specs[target], diag))
}

/// The options one offspring uses in a repair phase, per rule family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTag {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_law: Option<RepairOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inequality: Option<RepairOption>,
}

impl RepairTag {
    pub fn get(&self, family: RuleFamily) -> Option<RepairOption> {
        match family {
            RuleFamily::PowerLaw => self.power_law,
            RuleFamily::Inequality => self.inequality,
        }
    }

    pub fn set(&mut self, family: RuleFamily, option: RepairOption) {
        match family {
            RuleFamily::PowerLaw => self.power_law = Some(option),
            RuleFamily::Inequality => self.inequality = Some(option),
        }
    }

    /// True when every family present opted out of repair.
    pub fn is_no_repair(&self) -> bool {
        let opts = [self.power_law, self.inequality];
        opts.iter().any(Option::is_some)
            && opts.iter().flatten().all(|o| *o == RepairOption::NoRepair)
    }
}

/// Applies the right operator to each traversed edge of one offspring.
pub struct RepairDispatch<'a> {
    pub agent: RepairAgentKind,
    pub specs: &'a [VariableSpec],
    pub tag: RepairTag,
    pub diag: Diagnostics,
}

impl<'a> RepairDispatch<'a> {
    pub fn new(agent: RepairAgentKind, specs: &'a [VariableSpec], tag: RepairTag) -> Self {
        Self {
            agent,
            specs,
            tag,
            diag: Diagnostics::default(),
        }
    }

    /// Convenience constructor for a single fixed-adherence agent.
    pub fn fixed(agent: RepairAgentKind, specs: &'a [VariableSpec]) -> Self {
        let mut tag = RepairTag::default();
        for (family, mode) in agent.families() {
            if let FamilyMode::Fixed(a) = mode {
                tag.set(family, a.into());
            }
        }
        Self::new(agent, specs, tag)
    }

    pub fn repair<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        base: usize,
        target: usize,
        rule: &Rule,
        rng: &mut R,
    ) -> Result<RepairOutcome, RepairError> {
        let family = route(rule.kind, self.agent)?;
        let Some(adherence) = self.tag.get(family).and_then(RepairOption::adherence) else {
            return Ok(RepairOutcome::Skipped);
        };
        match family {
            RuleFamily::PowerLaw => repair_power_law(
                x,
                base,
                target,
                rule,
                adherence,
                self.specs,
                rng,
                &mut self.diag,
            ),
            RuleFamily::Inequality => repair_inequality(
                x,
                base,
                target,
                rule,
                adherence,
                self.specs,
                rng,
                &mut self.diag,
            ),
        }
    }

    /// Constant rules are always applied with tight adherence.
    pub fn repair_constant(
        &mut self,
        x: &mut [f64],
        rule: &Rule,
    ) -> Result<RepairOutcome, RepairError> {
        let kappa = rule.kappa()?;
        Ok(store(x, rule.i, kappa, &self.specs[rule.i], &mut self.diag))
    }
}

/// Checks a power-law repair against the satisfaction condition.
pub fn power_law_holds(
    rule: &Rule,
    x: &[f64],
    specs: &[VariableSpec],
    cfg: &LearningConfig,
) -> bool {
    crate::rule::is_satisfied(rule, x, specs, cfg).unwrap_or(false)
}

/// Survivor counts per ensemble operator after environmental selection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalTally {
    pub survivors: Vec<usize>,
    /// All surviving offspring of the generation, tagged or not.
    pub total: usize,
}

impl SurvivalTally {
    pub fn new(n_operators: usize) -> Self {
        Self {
            survivors: vec![0; n_operators],
            total: 0,
        }
    }
}

/// Adaptive selection probabilities over repair options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub operators: Vec<RepairOption>,
    pub p: Vec<f64>,
    pub alpha: f64,
    pub p_min: f64,
}

impl Default for EnsembleState {
    fn default() -> Self {
        Self::uniform(
            vec![
                RepairOption::Ra1,
                RepairOption::Ra2,
                RepairOption::Ra3,
                RepairOption::NoRepair,
            ],
            0.5,
            0.1,
        )
    }
}

impl EnsembleState {
    pub fn uniform(operators: Vec<RepairOption>, alpha: f64, p_min: f64) -> Self {
        let n = operators.len();
        Self {
            operators,
            p: vec![1.0 / n as f64; n],
            alpha,
            p_min,
        }
    }

    pub fn index_of(&self, option: RepairOption) -> Option<usize> {
        self.operators.iter().position(|o| *o == option)
    }

    /// Samples an operator index proportionally to `p`.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.p.iter().sum::<f64>();
        let mut acc = 0.0;
        for (k, p) in self.p.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // Rounding can leave u at the total; fall back to the last positive.
        self.p.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// Floored, un-normalized probabilities after one survival update, or
    /// `None` when the tally carries no information.
    pub fn raw_update(&self, tally: &SurvivalTally) -> Option<Vec<f64>> {
        if tally.total == 0 {
            return None;
        }
        let rates: Vec<f64> = tally
            .survivors
            .iter()
            .map(|&n| n as f64 / tally.total as f64)
            .collect();
        let sum: f64 = rates.iter().sum();
        if sum <= 0.0 {
            return None;
        }
        Some(
            rates
                .iter()
                .zip(&self.p)
                .map(|(r, p)| (self.alpha * r / sum + (1.0 - self.alpha) * p).max(self.p_min))
                .collect(),
        )
    }

    pub fn update(&self, tally: &SurvivalTally) -> EnsembleState {
        match self.raw_update(tally) {
            Some(raw) => {
                let total: f64 = raw.iter().sum();
                EnsembleState {
                    p: raw.iter().map(|p| p / total).collect(),
                    ..self.clone()
                }
            }
            None => self.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::{is_satisfied, NuStats};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs(upper: f64) -> Vec<VariableSpec> {
        vec![
            VariableSpec::new(0, 0.0, upper, "a"),
            VariableSpec::new(1, 0.0, upper, "b"),
        ]
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn power_law_ra1_by_substitution() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, 1.0, 2.0, 0.3, 1.0);
        let mut x = vec![2.5, 0.0]; // x̂_0 = 1.25
        let mut d = Diagnostics::default();
        let out =
            repair_power_law(&mut x, 0, 1, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(out, RepairOutcome::Repaired);
        assert!((sp[1].normalize(x[1]) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn power_law_ra1_fixed_point() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, 1.0, 2.0, 0.0, 1.0);
        let mut x = vec![2.5, 6.0];
        let mut d = Diagnostics::default();
        repair_power_law(&mut x, 0, 1, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        assert!((x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_reverse_direction() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, 1.0, 2.0, 0.0, 1.0);
        let mut x = vec![0.0, 6.0]; // x̂_1 = 1.6 -> x̂_0 = 2 / 1.6
        let mut d = Diagnostics::default();
        repair_power_law(&mut x, 1, 0, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        assert!((sp[0].normalize(x[0]) - 1.25).abs() < 1e-12);
        assert!(is_satisfied(&rule, &x, &sp, &LearningConfig::default()).unwrap());
    }

    #[test]
    fn ra2_with_zero_sigma_matches_ra1() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, -1.3, 1.1, 0.0, 1.0);
        let mut a = vec![4.0, 0.0];
        let mut b = a.clone();
        let mut d = Diagnostics::default();
        repair_power_law(&mut a, 0, 1, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        repair_power_law(&mut b, 0, 1, &rule, Adherence::Ra2, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn power_law_out_of_range_is_clamped() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, 1.0, 4.0, 0.0, 1.0);
        let mut x = vec![0.0, 5.0]; // (4 / 1)^1 = 4 > 2
        let mut d = Diagnostics::default();
        let out =
            repair_power_law(&mut x, 0, 1, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(out, RepairOutcome::Clamped);
        assert_eq!(x[1], 10.0);
        assert_eq!(d.clamped, 1);
    }

    #[test]
    fn power_law_non_finite_leaves_target() {
        let sp = specs(10.0);
        let rule = Rule::power_law(0, 1, 0.3, -1.0, 0.0, 1.0);
        let mut x = vec![3.0, 5.0];
        let mut d = Diagnostics::default();
        let out =
            repair_power_law(&mut x, 0, 1, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(out, RepairOutcome::NonFinite);
        assert_eq!(x[1], 5.0);
    }

    fn le_rule(nu1: f64, nu2: f64) -> Rule {
        let mut r = Rule::pairwise(RuleKind::InequalityLe, 0, 1, 1.0);
        r.nu_stats = Some(NuStats {
            nu1_mean: nu1,
            nu1_std: 0.1,
            nu2_mean: nu2,
            nu2_std: 0.1,
        });
        r.nu_stats_rev = r.nu_stats;
        r
    }

    #[test]
    fn le_repair_by_substitution() {
        let sp = specs(10.0);
        let mut x = vec![2.0, 0.0];
        let mut d = Diagnostics::default();
        repair_inequality(
            &mut x,
            0,
            1,
            &le_rule(0.25, 0.0),
            Adherence::Ra1,
            &sp,
            &mut rng(),
            &mut d,
        )
        .unwrap();
        assert_eq!(x[1], 4.0);
        repair_inequality(
            &mut x,
            0,
            1,
            &le_rule(0.0, 0.0),
            Adherence::Ra1,
            &sp,
            &mut rng(),
            &mut d,
        )
        .unwrap();
        assert_eq!(x[1], 2.0);
    }

    #[test]
    fn ge_repair_then_clamp() {
        let sp = specs(10.0);
        let mut r = le_rule(0.0, 0.5);
        r.kind = RuleKind::InequalityGe;
        let mut x = vec![4.0, 7.0];
        let mut d = Diagnostics::default();
        let out =
            repair_inequality(&mut x, 0, 1, &r, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
        // (4 - 5) / 0.5 = -2, clamped to the lower bound.
        assert_eq!(out, RepairOutcome::Clamped);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn reversed_le_keeps_order() {
        let sp = specs(10.0);
        let mut x = vec![9.0, 5.0];
        let mut d = Diagnostics::default();
        repair_inequality(
            &mut x,
            1,
            0,
            &le_rule(0.0, 0.2),
            Adherence::Ra1,
            &sp,
            &mut rng(),
            &mut d,
        )
        .unwrap();
        // x_0 <- (5 - 0.2 * 10) / 0.8
        assert!((x[0] - 3.75).abs() < 1e-12);
        assert!(x[0] <= x[1]);
    }

    #[test]
    fn equality_copies_base() {
        let sp = specs(10.0);
        let r = Rule::pairwise(RuleKind::Equality, 0, 1, 1.0);
        let mut x = vec![3.0, 8.0];
        let mut d = Diagnostics::default();
        repair_inequality(&mut x, 1, 0, &r, Adherence::Ra3, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(x, vec![8.0, 8.0]);
    }

    #[test]
    fn ra2_negative_draws_become_zero() {
        let sp = specs(10.0);
        let mut r = le_rule(-5.0, 0.0);
        r.nu_stats.as_mut().unwrap().nu1_std = 0.0;
        let mut x = vec![2.0, 9.0];
        let mut d = Diagnostics::default();
        repair_inequality(&mut x, 0, 1, &r, Adherence::Ra2, &sp, &mut rng(), &mut d).unwrap();
        assert_eq!(x[1], 2.0);
    }

    #[test]
    fn wrong_edge_is_rejected() {
        let sp = specs(10.0);
        let mut x = vec![2.0, 9.0];
        let mut d = Diagnostics::default();
        let r = repair_inequality(
            &mut x,
            0,
            0,
            &le_rule(0.1, 0.1),
            Adherence::Ra1,
            &sp,
            &mut rng(),
            &mut d,
        );
        assert!(matches!(r, Err(RepairError::EdgeMismatch { .. })));
    }

    #[test]
    fn ra1_consumes_no_randomness() {
        let sp = specs(10.0);
        let mut r1 = rng();
        let r2 = rng();
        let mut x = vec![2.0, 9.0];
        let mut d = Diagnostics::default();
        repair_inequality(
            &mut x,
            0,
            1,
            &le_rule(0.3, 0.1),
            Adherence::Ra1,
            &sp,
            &mut r1,
            &mut d,
        )
        .unwrap();
        repair_power_law(
            &mut x,
            0,
            1,
            &Rule::power_law(0, 1, 1.0, 2.0, 0.5, 1.0),
            Adherence::Ra1,
            &sp,
            &mut r1,
            &mut d,
        )
        .unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn routing() {
        assert_eq!(
            route(RuleKind::PowerLaw, RepairAgentKind::MixedRa2),
            Ok(RuleFamily::PowerLaw)
        );
        assert_eq!(
            route(RuleKind::InequalityGe, RepairAgentKind::MixedE),
            Ok(RuleFamily::Inequality)
        );
        assert!(route(RuleKind::PowerLaw, RepairAgentKind::IqRa1).is_err());
        assert!(route(RuleKind::Equality, RepairAgentKind::PlRa2).is_err());
        assert!(route(RuleKind::PowerLaw, RepairAgentKind::None).is_err());
    }

    #[test]
    fn none_agent_leaves_vector() {
        let sp = specs(10.0);
        let mut dispatch = RepairDispatch::fixed(RepairAgentKind::None, &sp);
        let mut x = vec![2.0, 9.0];
        let r = dispatch.repair(
            &mut x,
            0,
            1,
            &Rule::power_law(0, 1, 1.0, 2.0, 0.0, 1.0),
            &mut rng(),
        );
        assert!(r.is_err());
        assert_eq!(x, vec![2.0, 9.0]);
    }

    #[test]
    fn mixed_ra2_power_law_edge_uses_ra2() {
        let sp = specs(10.0);
        let dispatch = RepairDispatch::fixed(RepairAgentKind::MixedRa2, &sp);
        assert_eq!(dispatch.tag.power_law, Some(RepairOption::Ra2));
        assert_eq!(dispatch.tag.inequality, Some(RepairOption::Ra2));
    }

    #[test]
    fn agent_names_parse() {
        for k in RepairAgentKind::ALL {
            assert_eq!(k.as_str().parse::<RepairAgentKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert_eq!(
            "base".parse::<RepairAgentKind>().unwrap(),
            RepairAgentKind::None
        );
        assert_eq!(
            "PL-RA-E".parse::<RepairAgentKind>().unwrap(),
            RepairAgentKind::PlRaE
        );
        assert!("PL_RA9".parse::<RepairAgentKind>().is_err());
    }

    #[test]
    fn ensemble_worked_examples() {
        let s = EnsembleState::uniform(vec![RepairOption::Ra1, RepairOption::Ra2], 0.5, 0.1);
        let up = s.update(&SurvivalTally {
            survivors: vec![3, 1],
            total: 4,
        });
        assert_eq!(up.p, vec![0.625, 0.375]);
        let up = s.update(&SurvivalTally {
            survivors: vec![0, 4],
            total: 4,
        });
        assert_eq!(up.p, vec![0.25, 0.75]);
        let same = s.update(&SurvivalTally {
            survivors: vec![0, 0],
            total: 0,
        });
        assert_eq!(same, s);
    }

    #[test]
    fn ensemble_pick_degenerate_and_frequencies() {
        let mut r = rng();
        let s = EnsembleState {
            p: vec![1.0, 0.0, 0.0, 0.0],
            ..EnsembleState::default()
        };
        assert!((0..1000).all(|_| s.pick(&mut r) == 0));

        let s = EnsembleState::default();
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[s.pick(&mut r)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }

        let s2 = EnsembleState {
            p: vec![0.625, 0.375],
            ..EnsembleState::uniform(vec![RepairOption::Ra1, RepairOption::Ra2], 0.5, 0.1)
        };
        let hits = (0..n).filter(|_| s2.pick(&mut r) == 0).count();
        assert!((hits as f64 / n as f64 - 0.625).abs() < 0.01);
    }

    #[test]
    fn ensemble_converges_to_unfloored_fixed_point() {
        // Constant survival shares (0.7, 0.3): the map p <- a r + (1 - a) p has
        // fixed point p* = r, reached geometrically with ratio (1 - a).
        let mut s = EnsembleState::uniform(vec![RepairOption::Ra1, RepairOption::Ra2], 0.5, 0.1);
        let tally = SurvivalTally {
            survivors: vec![7, 3],
            total: 10,
        };
        let mut prev_err = f64::INFINITY;
        for _ in 0..60 {
            s = s.update(&tally);
            let err = (s.p[0] - 0.7).abs();
            assert!(err <= prev_err * 0.5 + 1e-15);
            prev_err = err;
        }
        assert!(prev_err < 1e-12);
    }

    proptest! {
        #[test]
        fn ensemble_update_keeps_simplex(
            survivors in prop::collection::vec(0usize..20, 4),
            untagged in 0usize..5,
            steps in 1usize..20,
        ) {
            let mut s = EnsembleState::default();
            let total = survivors.iter().sum::<usize>() + untagged;
            let tally = SurvivalTally { survivors, total };
            for _ in 0..steps {
                if let Some(raw) = s.raw_update(&tally) {
                    prop_assert!(raw.iter().all(|p| *p >= s.p_min));
                }
                s = s.update(&tally);
                prop_assert!((s.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn repairs_stay_in_bounds(
            kind in 0usize..4,
            adherence in 0usize..3,
            forward in any::<bool>(),
            b in prop_oneof![-3.0f64..-0.01, 0.01f64..3.0],
            c in 0.1f64..4.0,
            sigma in 0.0f64..1.0,
            nu in -1.0f64..2.0,
            x0 in 0.0f64..10.0,
            x1 in -5.0f64..5.0,
            seed in any::<u64>(),
        ) {
            let sp = vec![VariableSpec::new(0, 0.0, 10.0, "a"), VariableSpec::new(1, -5.0, 5.0, "b")];
            let adherence = [Adherence::Ra1, Adherence::Ra2, Adherence::Ra3][adherence];
            let mut rule = match kind {
                0 => Rule::power_law(0, 1, b, c, sigma, 1.0),
                1 => Rule::pairwise(RuleKind::Equality, 0, 1, 1.0),
                2 => Rule::pairwise(RuleKind::InequalityLe, 0, 1, 1.0),
                _ => Rule::pairwise(RuleKind::InequalityGe, 0, 1, 1.0),
            };
            let st = NuStats { nu1_mean: nu, nu1_std: sigma, nu2_mean: nu, nu2_std: sigma };
            rule.nu_stats = Some(st);
            rule.nu_stats_rev = Some(st);
            let (base, target) = if forward { (0, 1) } else { (1, 0) };
            let mut x = vec![x0, x1];
            let mut d = Diagnostics::default();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            if kind == 0 {
                repair_power_law(&mut x, base, target, &rule, adherence, &sp, &mut r, &mut d).unwrap();
            } else {
                repair_inequality(&mut x, base, target, &rule, adherence, &sp, &mut r, &mut d).unwrap();
            }
            for (v, s) in x.iter().zip(&sp) {
                prop_assert!(*v >= s.lower && *v <= s.upper);
            }
        }

        #[test]
        fn pl_ra1_satisfies_rule_unless_clamped(
            b in prop_oneof![-3.0f64..-0.01, 0.01f64..3.0],
            c in 0.5f64..3.0,
            x0 in 0.0f64..10.0,
            forward in any::<bool>(),
        ) {
            let sp = specs(10.0);
            let rule = Rule::power_law(0, 1, b, c, 0.0, 1.0);
            let mut x = vec![x0, x0];
            let (base, target) = if forward { (0, 1) } else { (1, 0) };
            let mut d = Diagnostics::default();
            let out = repair_power_law(&mut x, base, target, &rule, Adherence::Ra1, &sp, &mut rng(), &mut d).unwrap();
            if out == RepairOutcome::Repaired {
                prop_assert!(power_law_holds(&rule, &x, &sp, &LearningConfig::default()));
            }
        }
    }
}
