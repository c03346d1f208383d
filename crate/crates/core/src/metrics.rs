//! Hypervolume, target tracking and the rank-sum test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("each sample needs at least {min} values (got {a} and {b})")]
    SampleTooSmall { min: usize, a: usize, b: usize },
    #[error("ideal must be below nadir in every objective")]
    BadAnchors,
}

/// Objective-space normalization used for every HV value of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvConfig {
    pub ideal: [f64; 2],
    pub nadir: [f64; 2],
    #[serde(default = "default_reference")]
    pub reference: [f64; 2],
}

fn default_reference() -> [f64; 2] {
    [1.1, 1.1]
}

impl HvConfig {
    pub fn new(ideal: [f64; 2], nadir: [f64; 2]) -> Result<Self, MetricsError> {
        let cfg = Self {
            ideal,
            nadir,
            reference: default_reference(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if (0..2).all(|k| self.ideal[k] < self.nadir[k]) {
            Ok(())
        } else {
            Err(MetricsError::BadAnchors)
        }
    }

    pub fn normalize(&self, f: &[f64]) -> [f64; 2] {
        [0, 1].map(|k| (f[k] - self.ideal[k]) / (self.nadir[k] - self.ideal[k]))
    }

    /// HV of raw objective vectors after normalization.
    pub fn hypervolume<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        let pts: Vec<[f64; 2]> = points.into_iter().map(|f| self.normalize(f)).collect();
        hypervolume_2d(&pts, self.reference)
    }
}

/// Exact area dominated by `points` and bounded by `reference` (minimization).
pub fn hypervolume_2d(points: &[[f64; 2]], reference: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> = points
        .iter()
        .copied()
        .filter(|p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut floor = reference[1];
    for p in pts {
        if p[1] < floor {
            area += (reference[0] - p[0]) * (floor - p[1]);
            floor = p[1];
        }
    }
    area
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// 80% of the best per-algorithm median final HV.
pub fn target_hv(final_hv: &BTreeMap<String, Vec<f64>>) -> f64 {
    0.8 * final_hv
        .values()
        .filter(|v| !v.is_empty())
        .map(|v| median(v))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One run's HV history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub agent: String,
    pub user: String,
    /// `(fe, hv)` at the end of every generation.
    pub trace: Vec<(u64, f64)>,
    /// FE budget the run was allowed.
    #[serde(default)]
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fe_to_target: Option<u64>,
}

impl RunRecord {
    pub fn final_hv(&self) -> f64 {
        self.trace.last().map_or(0.0, |t| t.1)
    }

    pub fn fe_to(&self, target: f64) -> Option<u64> {
        fe_to_target(&self.trace, target)
    }
}

/// FEs at the end of the first generation whose HV reaches `target`.
pub fn fe_to_target(trace: &[(u64, f64)], target: f64) -> Option<u64> {
    trace
        .iter()
        .find(|(_, hv)| *hv >= target)
        .map(|(fe, _)| *fe)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Sum of the midranks of the first sample.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub const EXACT_LIMIT: usize = 12;
const MIN_SAMPLE: usize = 3;

fn midranks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; all.len()];
    let mut k = 0;
    while k < all.len() {
        let mut end = k + 1;
        while end < all.len() && all[end].0 == all[k].0 {
            end += 1;
        }
        let r = (k + end + 1) as f64 / 2.0;
        for item in &all[k..end] {
            ranks[item.1] = r;
        }
        k = end;
    }
    ranks
}

fn check(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() < MIN_SAMPLE || b.len() < MIN_SAMPLE {
        return Err(MetricsError::SampleTooSmall {
            min: MIN_SAMPLE,
            a: a.len(),
            b: b.len(),
        });
    }
    Ok(())
}

fn all_identical(a: &[f64], b: &[f64]) -> bool {
    a.iter().chain(b).all(|v| *v == a[0])
}

/// Exact two-sided rank-sum p-value: the share of all equally likely
/// assignments of midranks to the first sample whose rank sum lies at least
/// as far from its mean as the observed one.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<RankSum, MetricsError> {
    check(a, b)?;
    let ranks = midranks(a, b);
    let na = a.len();
    let n = ranks.len();
    let w: f64 = ranks[..na].iter().sum();
    if all_identical(a, b) {
        return Ok(RankSum {
            statistic: w,
            p_value: 1.0,
            exact: true,
        });
    }
    let mean = na as f64 * (n + 1) as f64 / 2.0;
    let observed = (w - mean).abs() - 1e-9;
    let (mut hits, mut total) = (0u64, 0u64);
    // iterate over all na-subsets of n positions
    let mut idx: Vec<usize> = (0..na).collect();
    loop {
        let s: f64 = idx.iter().map(|&k| ranks[k]).sum();
        total += 1;
        if (s - mean).abs() >= observed {
            hits += 1;
        }
        let mut k = na;
        loop {
            if k == 0 {
                return Ok(RankSum {
                    statistic: w,
                    p_value: hits as f64 / total as f64,
                    exact: true,
                });
            }
            k -= 1;
            if idx[k] < n - na + k {
                break;
            }
        }
        idx[k] += 1;
        for m in k + 1..na {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// Normal approximation with tie and continuity correction.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<RankSum, MetricsError> {
    check(a, b)?;
    let ranks = midranks(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let w: f64 = ranks[..a.len()].iter().sum();
    if all_identical(a, b) {
        return Ok(RankSum {
            statistic: w,
            p_value: 1.0,
            exact: false,
        });
    }
    let mut tied = BTreeMap::<u64, f64>::new();
    for r in &ranks {
        *tied.entry(r.to_bits()).or_default() += 1.0;
    }
    let ties: f64 = tied.values().map(|t| t * t * t - t).sum();
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let mean = na * (n + 1.0) / 2.0;
    let z = (((w - mean).abs() - 0.5).max(0.0)) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(RankSum {
        statistic: w,
        p_value: p,
        exact: false,
    })
}

/// Two-sided rank-sum test: exact for small combined samples, normal
/// approximation otherwise.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSum, MetricsError> {
    if a.len() + b.len() <= EXACT_LIMIT {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hv_examples() {
        assert_eq!(hypervolume_2d(&[[0.5, 0.5]], [1.0, 1.0]), 0.25);
        let three = [[0.2, 0.8], [0.5, 0.5], [0.8, 0.2]];
        assert!((hypervolume_2d(&three, [1.0, 1.0]) - 0.37).abs() < 1e-12);
        assert_eq!(hypervolume_2d(&[], [1.0, 1.0]), 0.0);
        assert_eq!(hypervolume_2d(&[[1.0, 0.5]], [1.0, 1.0]), 0.0);
    }

    #[test]
    fn anchors_normalize() {
        let cfg = HvConfig::new([0.0, 10.0], [2.0, 20.0]).unwrap();
        assert_eq!(cfg.normalize(&[1.0, 15.0]), [0.5, 0.5]);
        let hv = cfg.hypervolume([[1.0, 15.0].as_slice()]);
        assert!((hv - 0.36).abs() < 1e-12);
        assert!(HvConfig::new([0.0, 0.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn target_examples() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.9, 0.8, 1.0]);
        m.insert("b".to_string(), vec![1.0, 1.0, 1.0]);
        assert!((target_hv(&m) - 0.8).abs() < 1e-15);
        let single = BTreeMap::from([("a".to_string(), vec![0.5])]);
        assert!((target_hv(&single) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fe_to_target_first_crossing() {
        let trace = [(40, 0.1), (80, 0.5), (120, 0.5), (160, 0.9)];
        assert_eq!(fe_to_target(&trace, 0.5), Some(80));
        assert_eq!(fe_to_target(&trace, 0.95), None);
    }

    #[test]
    fn exact_small_example() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.statistic, 6.0);
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(wilcoxon_rank_sum(&a, &a).unwrap().p_value, 1.0);
        let same = [2.0; 4];
        assert_eq!(wilcoxon_normal(&same, &same).unwrap().p_value, 1.0);
        assert_eq!(wilcoxon_exact(&same, &same).unwrap().p_value, 1.0);
    }

    #[test]
    fn separated_large_samples() {
        let a: Vec<f64> = (1..=8).map(f64::from).collect();
        let b: Vec<f64> = (9..=16).map(f64::from).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn ties_get_midranks() {
        assert_eq!(midranks(&[1.0, 2.0], &[2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn too_small() {
        assert!(wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0, 5.0]).is_err());
    }

    #[test]
    fn sample_std() {
        assert!(
            (std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935299395).abs() < 1e-12
        );
        assert_eq!(std_dev(&[3.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    proptest! {
        #[test]
        fn hv_permutation_and_dominated_points(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..15),
            extra in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let p: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a, b]).collect();
            let base = hypervolume_2d(&p, [1.0, 1.0]);
            let mut rev = p.clone();
            rev.reverse();
            prop_assert!((hypervolume_2d(&rev, [1.0, 1.0]) - base).abs() < 1e-12);
            let mut more = p.clone();
            more.push([extra.0, extra.1]);
            let with = hypervolume_2d(&more, [1.0, 1.0]);
            prop_assert!(with >= base - 1e-12);
            if p.iter().any(|q| q[0] <= extra.0 && q[1] <= extra.1) {
                prop_assert!((with - base).abs() < 1e-12);
            }
        }

        #[test]
        fn exact_p_is_a_probability(
            a in prop::collection::vec(0u8..6, 3..6),
            b in prop::collection::vec(0u8..6, 3..6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = wilcoxon_exact(&a, &b).unwrap();
            let ba = wilcoxon_exact(&b, &a).unwrap();
            prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }
    }
}
