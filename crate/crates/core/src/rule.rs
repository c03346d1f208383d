//! Rule representation: variable bounds, rule kinds, fitted parameters,
//! satisfaction predicates and the per-agent rule hierarchy.
//!
//! Power-law rules live in a normalized space where every variable is mapped
//! linearly onto `[1, 2]`; the other kinds are expressed in native units
//! unless [`ToleranceSpace::Normalized`] is selected.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("degenerate exponent: |b| = {b} is below b_min = {b_min}")]
    DegenerateExponent { b: f64, b_min: f64 },
    #[error("rule references variable {index} but the vector has {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{kind} rule is missing its second variable")]
    MissingPartner { kind: RuleKind },
    #[error("{kind} rule is missing fitted parameter `{field}`")]
    MissingParameter { kind: RuleKind, field: &'static str },
}

/// Counters for repairs and normalizations that had to be clamped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub clamped: u64,
    pub non_finite: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.clamped += other.clamped;
        self.non_finite += other.non_finite;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub name: String,
}

impl VariableSpec {
    pub fn new(index: usize, lower: f64, upper: f64, name: impl Into<String>) -> Self {
        debug_assert!(lower < upper, "variable {index}: lower must be < upper");
        Self {
            index,
            lower,
            upper,
            name: name.into(),
        }
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    /// Maps `value` onto `[1, 2]`, clamping out-of-bounds input.
    pub fn normalize(&self, value: f64) -> f64 {
        1.0 + (self.clamp(value) - self.lower) / self.range()
    }

    /// Like [`normalize`](Self::normalize) but counts clamped inputs.
    pub fn normalize_flagged(&self, value: f64, diag: &mut Diagnostics) -> f64 {
        if value < self.lower || value > self.upper {
            diag.clamped += 1;
        }
        self.normalize(value)
    }

    pub fn denormalize(&self, normalized: f64) -> f64 {
        self.lower + (normalized - 1.0) * self.range()
    }

    /// Maps `value` onto `[0, 1]`; used when tolerances are normalized.
    pub fn unit(&self, value: f64) -> f64 {
        (value - self.lower) / self.range()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableGroup {
    pub id: String,
    pub members: Vec<usize>,
}

impl VariableGroup {
    pub fn new(id: impl Into<String>, members: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            members,
        }
    }

    /// One group holding every variable, the default when the user gives no
    /// grouping.
    pub fn all(n_var: usize) -> Self {
        Self::new("G1", (0..n_var).collect())
    }
}

/// Checks that members are distinct within each group and that groups do not
/// overlap.
pub fn validate_groups(groups: &[VariableGroup], n_var: usize) -> Result<(), String> {
    let mut owner = vec![None::<&str>; n_var];
    for g in groups {
        for &m in &g.members {
            if m >= n_var {
                return Err(format!(
                    "group {} references variable {m} (n_var = {n_var})",
                    g.id
                ));
            }
            if let Some(prev) = owner[m] {
                return Err(format!(
                    "variable {m} appears in group {prev} and group {}",
                    g.id
                ));
            }
            owner[m] = Some(&g.id);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Constant,
    PowerLaw,
    Equality,
    /// `x_i <= x_j`
    InequalityLe,
    /// `x_i >= x_j`
    InequalityGe,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Constant,
        RuleKind::PowerLaw,
        RuleKind::Equality,
        RuleKind::InequalityLe,
        RuleKind::InequalityGe,
    ];

    pub fn is_pairwise(self) -> bool {
        !matches!(self, RuleKind::Constant)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Constant => "constant",
            RuleKind::PowerLaw => "power_law",
            RuleKind::Equality => "equality",
            RuleKind::InequalityLe => "inequality_le",
            RuleKind::InequalityGe => "inequality_ge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structural identity of a rule: kind plus the variables it relates.
///
/// Its string form (`power_law:3:7`, `constant:4`) is the rule id used in
/// feedback payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleKey {
    pub kind: RuleKind,
    pub i: usize,
    pub j: Option<usize>,
}

impl fmt::Display for RuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.j {
            Some(j) => write!(f, "{}:{}:{}", self.kind, self.i, j),
            None => write!(f, "{}:{}", self.kind, self.i),
        }
    }
}

impl std::str::FromStr for RuleKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let kind = parts
            .next()
            .and_then(RuleKind::parse)
            .ok_or_else(|| format!("unknown rule kind in id `{s}`"))?;
        let parse_idx = |p: Option<&str>| -> Result<Option<usize>, String> {
            p.map(|v| {
                v.parse::<usize>()
                    .map_err(|e| format!("bad index in `{s}`: {e}"))
            })
            .transpose()
        };
        let i = parse_idx(parts.next())?.ok_or_else(|| format!("missing index in `{s}`"))?;
        let j = parse_idx(parts.next())?;
        if parts.next().is_some() || kind.is_pairwise() != j.is_some() {
            return Err(format!("malformed rule id `{s}`"));
        }
        Ok(RuleKey { kind, i, j })
    }
}

/// Mean and standard deviation of the inequality slack ratios.
///
/// `nu1 = (x_j - x_i) / (x_i^U - x_i)` drives the `x_i <= x_j` repair from
/// base `i`; `nu2 = (x_i - x_j) / (x_i^U - x_j)` drives the `x_i >= x_j`
/// repair from base `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NuStats {
    pub nu1_mean: f64,
    pub nu1_std: f64,
    pub nu2_mean: f64,
    pub nu2_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    pub i: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_stats: Option<NuStats>,
    /// Slack statistics with the roles of `i` and `j` swapped, used when the
    /// traversal repairs `x_i` from `x_j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_stats_rev: Option<NuStats>,
    /// Pearson correlation of the two variables over the archive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    pub score: f64,
    pub rank: u32,
    #[serde(default)]
    pub excluded: bool,
}

impl Rule {
    pub fn constant(i: usize, kappa: f64, score: f64) -> Self {
        Self {
            kind: RuleKind::Constant,
            i,
            j: None,
            kappa: Some(kappa),
            b: None,
            c: None,
            sigma_c: None,
            nu_stats: None,
            nu_stats_rev: None,
            correlation: None,
            score,
            rank: 1,
            excluded: false,
        }
    }

    pub fn power_law(i: usize, j: usize, b: f64, c: f64, sigma_c: f64, score: f64) -> Self {
        Self {
            kind: RuleKind::PowerLaw,
            j: Some(j),
            b: Some(b),
            c: Some(c),
            sigma_c: Some(sigma_c),
            kappa: None,
            ..Self::constant(i, 0.0, score)
        }
    }

    pub fn pairwise(kind: RuleKind, i: usize, j: usize, score: f64) -> Self {
        Self {
            kind,
            j: Some(j),
            kappa: None,
            ..Self::constant(i, 0.0, score)
        }
    }

    pub fn key(&self) -> RuleKey {
        RuleKey {
            kind: self.kind,
            i: self.i,
            j: self.j,
        }
    }

    pub fn id(&self) -> String {
        self.key().to_string()
    }

    /// True if the rule mentions variable `v`.
    pub fn touches(&self, v: usize) -> bool {
        self.i == v || self.j == Some(v)
    }

    fn partner(&self) -> Result<usize, RuleError> {
        self.j.ok_or(RuleError::MissingPartner { kind: self.kind })
    }

    fn param(&self, value: Option<f64>, field: &'static str) -> Result<f64, RuleError> {
        value.ok_or(RuleError::MissingParameter {
            kind: self.kind,
            field,
        })
    }

    pub fn kappa(&self) -> Result<f64, RuleError> {
        self.param(self.kappa, "kappa")
    }

    /// `(b, c, sigma_c)` of a power law.
    pub fn power_params(&self) -> Result<(f64, f64, f64), RuleError> {
        Ok((
            self.param(self.b, "b")?,
            self.param(self.c, "c")?,
            self.sigma_c.unwrap_or(0.0),
        ))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceSpace {
    /// `rho` and `eps_eq` are in the problem's own variable units.
    #[default]
    Native,
    /// `rho` and `eps_eq` apply to variables rescaled onto `[0, 1]`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub rho: f64,
    pub eps_eq: f64,
    pub e_min: f64,
    pub s_min: f64,
    pub b_min: f64,
    pub tolerance_space: ToleranceSpace,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            eps_eq: 0.1,
            e_min: 0.01,
            s_min: 0.7,
            b_min: 1e-3,
            tolerance_space: ToleranceSpace::Native,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("rho", self.rho),
            ("eps_eq", self.eps_eq),
            ("e_min", self.e_min),
            ("b_min", self.b_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("learning.{name} must be a positive finite number"));
            }
        }
        if !(self.s_min > 0.0 && self.s_min <= 1.0) {
            return Err("learning.s_min must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Distance between two values of variable `spec` in tolerance units.
    pub(crate) fn distance(&self, a: f64, b: f64, spec: &VariableSpec) -> f64 {
        match self.tolerance_space {
            ToleranceSpace::Native => (a - b).abs(),
            ToleranceSpace::Normalized => (spec.unit(a) - spec.unit(b)).abs(),
        }
    }

    pub(crate) fn pair_distance(
        &self,
        xi: f64,
        xj: f64,
        si: &VariableSpec,
        sj: &VariableSpec,
    ) -> f64 {
        match self.tolerance_space {
            ToleranceSpace::Native => (xi - xj).abs(),
            ToleranceSpace::Normalized => (si.unit(xi) - sj.unit(xj)).abs(),
        }
    }
}

/// Power-law prediction of normalized `x_j` from normalized `x_i`.
pub fn power_law_predict(xi_hat: f64, b: f64, c: f64) -> f64 {
    (c / xi_hat).powf(1.0 / b)
}

/// Whether decision vector `x` follows `rule`.
pub fn is_satisfied(
    rule: &Rule,
    x: &[f64],
    specs: &[VariableSpec],
    cfg: &LearningConfig,
) -> Result<bool, RuleError> {
    let check = |idx: usize| {
        if idx < x.len() && idx < specs.len() {
            Ok(idx)
        } else {
            Err(RuleError::IndexOutOfRange {
                index: idx,
                len: x.len().min(specs.len()),
            })
        }
    };
    let i = check(rule.i)?;
    match rule.kind {
        RuleKind::Constant => {
            let kappa = rule.kappa()?;
            Ok(cfg.distance(x[i], kappa, &specs[i]) <= cfg.rho)
        }
        RuleKind::PowerLaw => {
            let j = check(rule.partner()?)?;
            let (b, c, _) = rule.power_params()?;
            if b.abs() < cfg.b_min {
                return Err(RuleError::DegenerateExponent {
                    b,
                    b_min: cfg.b_min,
                });
            }
            let xi_hat = specs[i].normalize(x[i]);
            let xj_hat = specs[j].normalize(x[j]);
            let err = xj_hat - power_law_predict(xi_hat, b, c);
            Ok(err * err <= cfg.e_min)
        }
        RuleKind::Equality => {
            let j = check(rule.partner()?)?;
            Ok(cfg.pair_distance(x[i], x[j], &specs[i], &specs[j]) <= cfg.eps_eq)
        }
        RuleKind::InequalityLe => {
            let j = check(rule.partner()?)?;
            Ok(x[i] <= x[j])
        }
        RuleKind::InequalityGe => {
            let j = check(rule.partner()?)?;
            Ok(x[i] >= x[j])
        }
    }
}

/// Rank of each rule kind for a repair agent; 1 is the most preferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleHierarchy {
    ranks: BTreeMap<RuleKind, u32>,
}

impl RuleHierarchy {
    pub fn new(ranks: impl IntoIterator<Item = (RuleKind, u32)>) -> Self {
        Self {
            ranks: ranks.into_iter().collect(),
        }
    }

    /// Hierarchy of the power-law agents.
    pub fn power_law() -> Self {
        Self::new([(RuleKind::Constant, 1), (RuleKind::PowerLaw, 2)])
    }

    /// Hierarchy of the inequality agents.
    pub fn inequality() -> Self {
        Self::new([
            (RuleKind::Constant, 1),
            (RuleKind::Equality, 2),
            (RuleKind::InequalityLe, 3),
            (RuleKind::InequalityGe, 3),
        ])
    }

    /// Hierarchy of the mixed power-law + inequality agents.
    pub fn mixed() -> Self {
        Self::new([
            (RuleKind::Constant, 1),
            (RuleKind::PowerLaw, 2),
            (RuleKind::Equality, 2),
            (RuleKind::InequalityLe, 2),
            (RuleKind::InequalityGe, 2),
        ])
    }

    pub fn empty() -> Self {
        Self::new([])
    }

    pub fn rank(&self, kind: RuleKind) -> Option<u32> {
        self.ranks.get(&kind).copied()
    }

    pub fn contains(&self, kind: RuleKind) -> bool {
        self.ranks.contains_key(&kind)
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RuleKind, u32)> + '_ {
        self.ranks.iter().map(|(k, r)| (*k, *r))
    }

    /// Distinct ranks used by two-variable kinds, ascending.
    pub fn pairwise_levels(&self) -> Vec<(u32, Vec<RuleKind>)> {
        let mut levels: BTreeMap<u32, Vec<RuleKind>> = BTreeMap::new();
        for (kind, rank) in self.iter().filter(|(k, _)| k.is_pairwise()) {
            levels.entry(rank).or_default().push(kind);
        }
        levels.into_iter().collect()
    }
}
