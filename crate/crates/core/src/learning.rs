//! Rule extraction from the non-dominated archive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rule::{
    LearningConfig, NuStats, Rule, RuleHierarchy, RuleKind, VariableGroup, VariableSpec,
};

const DENOMINATOR_FLOOR: f64 = 1e-12;
const VARIANCE_FLOOR: f64 = 1e-24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("degenerate regressor: log x_{j} has zero variance over the archive")]
    DegenerateRegressor { j: usize },
    #[error("archive has {len} solutions, need at least {need}")]
    TooFewSolutions { len: usize, need: usize },
}

/// Borrowed view of the non-dominated decision vectors being mined.
#[derive(Debug, Clone, Copy)]
pub struct NdSet<'a> {
    pub solutions: &'a [Vec<f64>],
    pub specs: &'a [VariableSpec],
}

impl<'a> NdSet<'a> {
    pub fn new(solutions: &'a [Vec<f64>], specs: &'a [VariableSpec]) -> Self {
        Self { solutions, specs }
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.solutions.iter().map(move |x| x[i])
    }
}

/// Learned rules plus the run position they were learned at; this is the
/// payload shown to the decision maker.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub generation: u64,
    pub fe_count: u64,
    pub archive_size: usize,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn find(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id() == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub b: f64,
    pub c: f64,
    pub r2: f64,
    pub sigma_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRules {
    pub equality: Rule,
    pub le: Rule,
    pub ge: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Set when either variable has zero variance; `r` is then 0.
    pub degenerate: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median-anchored constant rule for variable `i`. Always returns a rule;
/// score thresholding happens later.
pub fn learn_constant(set: &NdSet<'_>, i: usize, cfg: &LearningConfig) -> Option<Rule> {
    if set.is_empty() {
        return None;
    }
    let mut col: Vec<f64> = set.column(i).collect();
    let kappa = median(&mut col);
    let spec = &set.specs[i];
    let hits = col
        .iter()
        .filter(|&&v| cfg.distance(v, kappa, spec) <= cfg.rho)
        .count();
    Some(Rule::constant(i, kappa, hits as f64 / col.len() as f64))
}

/// Least-squares fit of `log x̂_i = β log x̂_j + ε` in `[1, 2]`-normalized
/// space, reported as `x̂_i · x̂_j^b = c` with `b = -β`, `c = e^ε`.
pub fn learn_power_law(set: &NdSet<'_>, i: usize, j: usize) -> Result<PowerLawFit, LearnError> {
    if set.len() < 2 {
        return Err(LearnError::TooFewSolutions {
            len: set.len(),
            need: 2,
        });
    }
    let (si, sj) = (&set.specs[i], &set.specs[j]);
    let pts: Vec<(f64, f64)> = set
        .solutions
        .iter()
        .map(|x| (si.normalize(x[i]), sj.normalize(x[j])))
        .collect();
    let n = pts.len() as f64;
    let (sum_z, sum_y) = pts.iter().fold((0.0, 0.0), |(sz, sy), (xi, xj)| {
        (sz + xj.ln(), sy + xi.ln())
    });
    let (mz, my) = (sum_z / n, sum_y / n);
    let (mut szz, mut szy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, xj) in &pts {
        let dz = xj.ln() - mz;
        let dy = xi.ln() - my;
        szz += dz * dz;
        szy += dz * dy;
        syy += dy * dy;
    }
    if szz / n < VARIANCE_FLOOR {
        return Err(LearnError::DegenerateRegressor { j });
    }
    let beta = szy / szz;
    let eps = my - beta * mz;
    let ss_res: f64 = pts
        .iter()
        .map(|(xi, xj)| (xi.ln() - (beta * xj.ln() + eps)).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    let b = -beta;
    let cs: Vec<f64> = pts.iter().map(|(xi, xj)| xi * xj.powf(b)).collect();
    let (_, sigma_c) = mean_std(&cs);
    Ok(PowerLawFit {
        b,
        c: eps.exp(),
        r2,
        sigma_c,
    })
}

/// Slack statistics for base `i`, partner `j`; non-positive denominators are
/// skipped.
fn nu_stats(set: &NdSet<'_>, i: usize, j: usize) -> NuStats {
    let upper_i = set.specs[i].upper;
    let mut nu1 = Vec::with_capacity(set.len());
    let mut nu2 = Vec::with_capacity(set.len());
    for x in set.solutions {
        let (xi, xj) = (x[i], x[j]);
        let d1 = upper_i - xi;
        if d1 > DENOMINATOR_FLOOR {
            nu1.push((xj - xi) / d1);
        }
        let d2 = upper_i - xj;
        if d2 > DENOMINATOR_FLOOR {
            nu2.push((xi - xj) / d2);
        }
    }
    let (nu1_mean, nu1_std) = mean_std(&nu1);
    let (nu2_mean, nu2_std) = mean_std(&nu2);
    NuStats {
        nu1_mean,
        nu1_std,
        nu2_mean,
        nu2_std,
    }
}

/// Equality, `<=` and `>=` rules for the pair `(i, j)` with their scores.
pub fn learn_pairwise(set: &NdSet<'_>, i: usize, j: usize, cfg: &LearningConfig) -> PairwiseRules {
    let (si, sj) = (&set.specs[i], &set.specs[j]);
    let (mut eq, mut le, mut ge) = (0usize, 0usize, 0usize);
    for x in set.solutions {
        let (xi, xj) = (x[i], x[j]);
        if cfg.pair_distance(xi, xj, si, sj) <= cfg.eps_eq {
            eq += 1;
        }
        if xi <= xj {
            le += 1;
        }
        if xi >= xj {
            ge += 1;
        }
    }
    let n = set.len().max(1) as f64;
    let fwd = nu_stats(set, i, j);
    let rev = nu_stats(set, j, i);
    let with_nu = |kind, count: usize| {
        let mut r = Rule::pairwise(kind, i, j, count as f64 / n);
        r.nu_stats = Some(fwd);
        r.nu_stats_rev = Some(rev);
        r
    };
    PairwiseRules {
        equality: Rule::pairwise(RuleKind::Equality, i, j, eq as f64 / n),
        le: with_nu(RuleKind::InequalityLe, le),
        ge: with_nu(RuleKind::InequalityGe, ge),
    }
}

pub fn pearson_correlation(set: &NdSet<'_>, i: usize, j: usize) -> Correlation {
    let n = set.len() as f64;
    if set.len() < 2 {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    let mi = set.column(i).sum::<f64>() / n;
    let mj = set.column(j).sum::<f64>() / n;
    let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
    for x in set.solutions {
        let (di, dj) = (x[i] - mi, x[j] - mj);
        sij += di * dj;
        sii += di * di;
        sjj += dj * dj;
    }
    if sii / n < VARIANCE_FLOOR || sjj / n < VARIANCE_FLOOR {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        r: (sij / (sii * sjj).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Candidate rule of `kind` for the pair, or `None` when it cannot be fitted.
fn pair_candidate(
    set: &NdSet<'_>,
    kind: RuleKind,
    i: usize,
    j: usize,
    cfg: &LearningConfig,
    pairwise: &mut Option<PairwiseRules>,
) -> Option<Rule> {
    match kind {
        RuleKind::Constant => None,
        RuleKind::PowerLaw => {
            let fit = learn_power_law(set, i, j).ok()?;
            if !(fit.b.is_finite() && fit.c.is_finite()) || fit.b.abs() < cfg.b_min {
                return None;
            }
            Some(Rule::power_law(
                i,
                j,
                fit.b,
                fit.c,
                fit.sigma_c,
                fit.r2.clamp(0.0, 1.0),
            ))
        }
        RuleKind::Equality | RuleKind::InequalityLe | RuleKind::InequalityGe => {
            let p = pairwise.get_or_insert_with(|| learn_pairwise(set, i, j, cfg));
            Some(match kind {
                RuleKind::Equality => p.equality.clone(),
                RuleKind::InequalityLe => p.le.clone(),
                _ => p.ge.clone(),
            })
        }
    }
}

/// Mines every group of the archive following the hierarchy.
///
/// Constant rules are checked first and a variable whose constant rule reaches
/// `s_min` takes no part in two-variable rules. Each remaining intra-group pair
/// is examined level by level; within a level the highest-scoring kind is kept,
/// and lower levels are only examined while no rule of the pair reached
/// `s_min`. All examined rules are returned with their scores.
pub fn learn_all(
    set: &NdSet<'_>,
    groups: &[VariableGroup],
    hierarchy: &RuleHierarchy,
    cfg: &LearningConfig,
) -> Vec<Rule> {
    let mut rules = Vec::new();
    if set.is_empty() || hierarchy.is_empty() {
        return rules;
    }
    let levels = hierarchy.pairwise_levels();
    for group in groups {
        let mut members = group.members.clone();
        members.sort_unstable();
        members.dedup();
        let mut active = Vec::with_capacity(members.len());
        for &v in &members {
            let withdrawn = match hierarchy.rank(RuleKind::Constant) {
                Some(rank) => {
                    let mut rule = learn_constant(set, v, cfg).expect("archive is non-empty");
                    rule.rank = rank;
                    let qualifies = rule.score >= cfg.s_min;
                    rules.push(rule);
                    qualifies
                }
                None => false,
            };
            if !withdrawn {
                active.push(v);
            }
        }
        if set.len() < 2 {
            continue;
        }
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a + 1..] {
                let corr = pearson_correlation(set, i, j).r;
                let mut pairwise = None;
                for (rank, kinds) in &levels {
                    let best = kinds
                        .iter()
                        .filter_map(|&k| pair_candidate(set, k, i, j, cfg, &mut pairwise))
                        .fold(None::<Rule>, |best, r| match best {
                            Some(b) if b.score >= r.score => Some(b),
                            _ => Some(r),
                        });
                    if let Some(mut rule) = best {
                        rule.rank = *rank;
                        rule.correlation = Some(corr);
                        let qualifies = rule.score >= cfg.s_min;
                        rules.push(rule);
                        if qualifies {
                            break;
                        }
                    }
                }
            }
        }
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::is_satisfied;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn specs(n: usize, lower: f64, upper: f64) -> Vec<VariableSpec> {
        (0..n)
            .map(|i| VariableSpec::new(i, lower, upper, format!("x{i}")))
            .collect()
    }

    #[test]
    fn constant_on_identical_values() {
        let sol = vec![vec![5.0]; 6];
        let sp = specs(1, 0.0, 10.0);
        let r = learn_constant(&NdSet::new(&sol, &sp), 0, &LearningConfig::default()).unwrap();
        assert_eq!(r.kappa, Some(5.0));
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn constant_counts_neighbourhood() {
        let mut sol = vec![vec![5.0]; 8];
        sol.extend([vec![9.0], vec![9.0]]);
        let sp = specs(1, 0.0, 10.0);
        let r = learn_constant(&NdSet::new(&sol, &sp), 0, &LearningConfig::default()).unwrap();
        assert_eq!(r.kappa, Some(5.0));
        assert_eq!(r.score, 0.8);
    }

    #[test]
    fn constant_on_spread_values_scores_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sol: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.random_range(0.0..100.0)])
            .collect();
        let sp = specs(1, 0.0, 100.0);
        let r = learn_constant(&NdSet::new(&sol, &sp), 0, &LearningConfig::default()).unwrap();
        // Independent count: expected mass within ±0.1 of any point is 0.002.
        let kappa = r.kappa.unwrap();
        let count = sol.iter().filter(|x| (x[0] - kappa).abs() <= 0.1).count();
        assert_eq!(r.score, count as f64 / 1000.0);
        assert!(r.score < 0.2);
    }

    #[test]
    fn even_median_averages_central_pair() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [7.0]), 7.0);
    }

    /// Decision vectors whose normalized values satisfy `x̂0 · x̂1^b = c`.
    fn on_law(b: f64, c: f64, n: usize) -> (Vec<Vec<f64>>, Vec<VariableSpec>) {
        let sp = specs(2, 0.0, 1.0);
        let mut sol = Vec::new();
        for k in 0..n {
            let xj_hat = 1.0 + k as f64 / (n - 1) as f64;
            let xi_hat = c / xj_hat.powf(b);
            if (1.0..=2.0).contains(&xi_hat) {
                sol.push(vec![xi_hat - 1.0, xj_hat - 1.0]);
            }
        }
        (sol, sp)
    }

    #[test]
    fn power_law_exact_recovery() {
        let (sol, sp) = on_law(2.0, 1.5, 200);
        assert!(sol.len() > 20);
        let fit = learn_power_law(&NdSet::new(&sol, &sp), 0, 1).unwrap();
        assert!((fit.b - 2.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.c - 1.5).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-9);
        assert!(fit.sigma_c <= 1e-9);
    }

    #[test]
    fn equality_seen_as_power_law() {
        let sol: Vec<Vec<f64>> = (0..50).map(|k| vec![k as f64 / 49.0; 2]).collect();
        let sp = specs(2, 0.0, 1.0);
        let fit = learn_power_law(&NdSet::new(&sol, &sp), 0, 1).unwrap();
        assert!((fit.b + 1.0).abs() < 1e-12);
        assert!((fit.c - 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_on_independent_data_has_low_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sol: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let sp = specs(2, 0.0, 1.0);
        let fit = learn_power_law(&NdSet::new(&sol, &sp), 0, 1).unwrap();
        assert!(fit.r2 < 0.2, "r2 = {}", fit.r2);
    }

    #[test]
    fn constant_regressor_is_degenerate() {
        let sol: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64 / 10.0, 0.5]).collect();
        let sp = specs(2, 0.0, 1.0);
        assert_eq!(
            learn_power_law(&NdSet::new(&sol, &sp), 0, 1),
            Err(LearnError::DegenerateRegressor { j: 1 })
        );
    }

    proptest! {
        #[test]
        fn power_law_recovers_noiseless_parameters(
            b in prop_oneof![-3.0f64..-0.01, 0.01f64..3.0],
            c in 0.8f64..2.5,
        ) {
            let (sol, sp) = on_law(b, c, 400);
            prop_assume!(sol.len() >= 10);
            let fit = learn_power_law(&NdSet::new(&sol, &sp), 0, 1).unwrap();
            prop_assert!((fit.b - b).abs() < 1e-6, "b {} vs {}", fit.b, b);
            prop_assert!((fit.c - c).abs() < 1e-6, "c {} vs {}", fit.c, c);
            prop_assert!((fit.r2 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pairwise_scores_by_enumeration() {
        let sol = vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 1.0]];
        let sp = specs(2, 0.0, 10.0);
        let p = learn_pairwise(&NdSet::new(&sol, &sp), 0, 1, &LearningConfig::default());
        assert!((p.le.score - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.ge.score - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_on_equal_columns() {
        let sol: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64; 2]).collect();
        let sp = specs(2, 0.0, 10.0);
        let p = learn_pairwise(&NdSet::new(&sol, &sp), 0, 1, &LearningConfig::default());
        assert_eq!((p.equality.score, p.le.score, p.ge.score), (1.0, 1.0, 1.0));
    }

    #[test]
    fn nu1_by_substitution() {
        let sol = vec![vec![2.0, 4.0]];
        let sp = specs(2, 0.0, 10.0);
        let p = learn_pairwise(&NdSet::new(&sol, &sp), 0, 1, &LearningConfig::default());
        let nu = p.le.nu_stats.unwrap();
        assert!((nu.nu1_mean - 0.25).abs() < 1e-15);
        assert_eq!(nu.nu1_std, 0.0);
        // nu2 = (2 - 4) / (10 - 4)
        assert!((nu.nu2_mean + 1.0 / 3.0).abs() < 1e-15);
        let rev = p.le.nu_stats_rev.unwrap();
        // Roles swapped: nu1' = (2 - 4) / (10 - 4), nu2' = (4 - 2) / (10 - 2).
        assert!((rev.nu1_mean + 1.0 / 3.0).abs() < 1e-15);
        assert!((rev.nu2_mean - 0.25).abs() < 1e-15);
    }

    #[test]
    fn nu_skips_solutions_at_the_upper_bound() {
        let sol = vec![vec![10.0, 10.0]];
        let sp = specs(2, 0.0, 10.0);
        let p = learn_pairwise(&NdSet::new(&sol, &sp), 0, 1, &LearningConfig::default());
        assert_eq!(p.ge.nu_stats.unwrap(), NuStats::default());
    }

    #[test]
    fn pearson_extremes() {
        let sp = specs(2, -10.0, 10.0);
        let lin: Vec<Vec<f64>> = (0..10)
            .map(|k| vec![k as f64 * 0.3, k as f64 * 0.6])
            .collect();
        let anti: Vec<Vec<f64>> = (0..10)
            .map(|k| vec![k as f64 * 0.3, -(k as f64) * 0.3])
            .collect();
        assert!((pearson_correlation(&NdSet::new(&lin, &sp), 0, 1).r - 1.0).abs() < 1e-12);
        assert!((pearson_correlation(&NdSet::new(&anti, &sp), 0, 1).r + 1.0).abs() < 1e-12);
        let flat: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 1.0]).collect();
        let c = pearson_correlation(&NdSet::new(&flat, &sp), 0, 1);
        assert!(c.degenerate);
        assert_eq!(c.r, 0.0);
    }

    #[test]
    fn pearson_independent_samples_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sol: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let sp = specs(2, 0.0, 1.0);
        assert!(pearson_correlation(&NdSet::new(&sol, &sp), 0, 1).r.abs() < 0.1);
    }

    #[test]
    fn constants_preempt_pairs() {
        let sol = vec![vec![1.0, 2.0, 3.0]; 5];
        let sp = specs(3, 0.0, 10.0);
        let rules = learn_all(
            &NdSet::new(&sol, &sp),
            &[VariableGroup::new("g", vec![0, 1, 2])],
            &RuleHierarchy::mixed(),
            &LearningConfig::default(),
        );
        assert_eq!(rules.len(), 3);
        assert!(rules.iter().all(|r| r.kind == RuleKind::Constant));
    }

    #[test]
    fn inter_group_pairs_are_never_examined() {
        let sol: Vec<Vec<f64>> = (0..20)
            .map(|k| {
                let t = k as f64 / 19.0;
                vec![t, t, t, t]
            })
            .collect();
        let sp = specs(4, 0.0, 1.0);
        let groups = [
            VariableGroup::new("a", vec![0, 1]),
            VariableGroup::new("b", vec![2, 3]),
        ];
        let rules = learn_all(
            &NdSet::new(&sol, &sp),
            &groups,
            &RuleHierarchy::mixed(),
            &LearningConfig::default(),
        );
        let pairs: Vec<_> = rules.iter().filter_map(|r| r.j.map(|j| (r.i, j))).collect();
        assert!(pairs.contains(&(0, 1)));
        assert!(pairs.contains(&(2, 3)));
        assert!(!pairs.iter().any(|&(i, j)| (i < 2) != (j < 2)));
    }

    #[test]
    fn higher_inequality_score_wins() {
        // x0 <= x1 in 9 of 10 solutions, and the values are far apart so the
        // equality rule fails.
        let mut sol: Vec<Vec<f64>> = (0..9).map(|k| vec![k as f64, k as f64 + 5.0]).collect();
        sol.push(vec![9.0, 1.0]);
        let sp = specs(2, 0.0, 20.0);
        let rules = learn_all(
            &NdSet::new(&sol, &sp),
            &[VariableGroup::all(2)],
            &RuleHierarchy::inequality(),
            &LearningConfig::default(),
        );
        let pair: Vec<_> = rules.iter().filter(|r| r.j.is_some()).collect();
        assert_eq!(pair.len(), 2, "{pair:?}");
        assert_eq!(pair[0].kind, RuleKind::Equality);
        assert_eq!(pair[1].kind, RuleKind::InequalityLe);
        assert!((pair[1].score - 0.9).abs() < 1e-12);
        assert_eq!(pair[1].rank, 3);
    }

    #[test]
    fn empty_archive_gives_no_rules() {
        let sp = specs(3, 0.0, 1.0);
        let rules = learn_all(
            &NdSet::new(&[], &sp),
            &[VariableGroup::all(3)],
            &RuleHierarchy::mixed(),
            &LearningConfig::default(),
        );
        assert!(rules.is_empty());
    }

    proptest! {
        #[test]
        fn scores_match_satisfaction_counts(
            raw in prop::collection::vec(prop::collection::vec(0.0f64..4.0, 3), 2..40)
        ) {
            // Coarse grid so equalities and constants actually occur.
            let sol: Vec<Vec<f64>> = raw.iter()
                .map(|x| x.iter().map(|v| (v * 2.0).round() / 2.0).collect())
                .collect();
            let sp = specs(3, 0.0, 4.0);
            let cfg = LearningConfig::default();
            let set = NdSet::new(&sol, &sp);
            let rules = learn_all(&set, &[VariableGroup::all(3)], &RuleHierarchy::inequality(), &cfg);
            for r in rules.iter().filter(|r| r.kind != RuleKind::PowerLaw) {
                let hits = sol.iter().filter(|x| is_satisfied(r, x, &sp, &cfg).unwrap()).count();
                prop_assert!((r.score * sol.len() as f64 - hits as f64).abs() < 1e-9);
            }
            for r in rules.iter().filter(|r| r.j.is_some()) {
                let blocked = rules.iter().any(|c| {
                    c.kind == RuleKind::Constant && c.score >= cfg.s_min && r.touches(c.i)
                });
                prop_assert!(!blocked);
            }
        }

        #[test]
        fn median_is_permutation_invariant(
            mut vals in prop::collection::vec(-100.0f64..100.0, 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let sp = specs(1, -100.0, 100.0);
            let cfg = LearningConfig::default();
            let a: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            vals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            let ra = learn_constant(&NdSet::new(&a, &sp), 0, &cfg).unwrap();
            let rb = learn_constant(&NdSet::new(&b, &sp), 0, &cfg).unwrap();
            prop_assert_eq!(ra.kappa, rb.kappa);
        }
    }
}
