//! Decision-maker feedback on learned rules and the artificial users that
//! stand in for a human.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rule::{Rule, RuleKey};

/// Rule-specificity predicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specificity {
    /// Rules scoring at least this are ranked 1, the others are excluded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_score: Option<f64>,
    /// Rules whose variables correlate less than this (in absolute value)
    /// are excluded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_abs_correlation: Option<f64>,
}

impl Specificity {
    pub fn is_empty(&self) -> bool {
        self.min_score.is_none() && self.min_abs_correlation.is_none()
    }
}

/// Ranking, exclusion and specificity choices keyed by rule id
/// (see [`RuleKey`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFeedback {
    #[serde(default)]
    pub rankings: BTreeMap<String, u32>,
    #[serde(default)]
    pub exclusions: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Specificity::is_empty")]
    pub specificity: Specificity,
}

/// A validation failure pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl UserFeedback {
    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty() && self.exclusions.is_empty() && self.specificity.is_empty()
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        for (id, rank) in &self.rankings {
            if *rank == 0 {
                errors.push(FieldError {
                    field: format!("rankings.{id}"),
                    message: "rank must be a positive integer".into(),
                });
            }
            if let Err(e) = id.parse::<RuleKey>() {
                errors.push(FieldError {
                    field: format!("rankings.{id}"),
                    message: e,
                });
            }
            if self.exclusions.contains(id) {
                errors.push(FieldError {
                    field: format!("rankings.{id}"),
                    message: "an excluded rule cannot carry a rank".into(),
                });
            }
        }
        for id in &self.exclusions {
            if let Err(e) = id.parse::<RuleKey>() {
                errors.push(FieldError {
                    field: format!("exclusions.{id}"),
                    message: e,
                });
            }
        }
        if let Some(s) = self.specificity.min_score {
            if !(0.0..=1.0).contains(&s) {
                errors.push(FieldError {
                    field: "specificity.min_score".into(),
                    message: "must lie in [0, 1]".into(),
                });
            }
        }
        if let Some(c) = self.specificity.min_abs_correlation {
            if !(0.0..=1.0).contains(&c) {
                errors.push(FieldError {
                    field: "specificity.min_abs_correlation".into(),
                    message: "must lie in [0, 1]".into(),
                });
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// What the feedback does to `rule`: `None` when the rule is dropped,
    /// otherwise the rank it should carry (`Some(None)` keeps its own).
    pub fn verdict(&self, rule: &Rule) -> Option<Option<u32>> {
        let id = rule.id();
        if self.exclusions.contains(&id) {
            return None;
        }
        let mut rank = None;
        if let Some(min) = self.specificity.min_score {
            if rule.score >= min {
                rank = Some(1);
            } else {
                return None;
            }
        }
        if let Some(min) = self.specificity.min_abs_correlation {
            if rule.j.is_some() && rule.correlation.unwrap_or(0.0).abs() < min {
                return None;
            }
        }
        if let Some(r) = self.rankings.get(&id) {
            rank = Some(*r);
        }
        Some(rank)
    }
}

/// Artificial users keeping the top 10%, 20%, 50% or 100% of the rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleUsage {
    #[serde(rename = "RU1")]
    Ru1,
    #[serde(rename = "RU2")]
    Ru2,
    #[serde(rename = "RU3")]
    Ru3,
    #[serde(rename = "RU4")]
    Ru4,
}

impl RuleUsage {
    pub const ALL: [RuleUsage; 4] = [
        RuleUsage::Ru1,
        RuleUsage::Ru2,
        RuleUsage::Ru3,
        RuleUsage::Ru4,
    ];

    pub fn fraction(self) -> f64 {
        match self {
            RuleUsage::Ru1 => 0.10,
            RuleUsage::Ru2 => 0.20,
            RuleUsage::Ru3 => 0.50,
            RuleUsage::Ru4 => 1.00,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RuleUsage::Ru1 => "RU1",
            RuleUsage::Ru2 => "RU2",
            RuleUsage::Ru3 => "RU3",
            RuleUsage::Ru4 => "RU4",
        }
    }
}

impl fmt::Display for RuleUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleUsage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|u| u.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown rule usage scheme `{s}`"))
    }
}

/// Feedback an artificial user gives on `rules`.
///
/// Rules reaching `s_min` are sorted by descending score (ties by rule id),
/// the top `ceil(fraction * count)` are ranked `1..=k` in that order and every
/// other rule is excluded.
pub fn artificial_feedback(rules: &[Rule], scheme: RuleUsage, s_min: f64) -> UserFeedback {
    let mut eligible: Vec<&Rule> = rules
        .iter()
        .filter(|r| !r.excluded && r.score >= s_min)
        .collect();
    eligible.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.key().cmp(&b.key()))
    });
    let keep = (scheme.fraction() * eligible.len() as f64 - 1e-9).ceil() as usize;
    let keep = keep.min(eligible.len());
    let mut fb = UserFeedback::default();
    for (k, r) in eligible.iter().enumerate() {
        if k < keep {
            fb.rankings.insert(r.id(), k as u32 + 1);
        } else {
            fb.exclusions.insert(r.id());
        }
    }
    for r in rules.iter().filter(|r| r.score < s_min) {
        fb.exclusions.insert(r.id());
    }
    fb
}

/// Rules that survive `feedback`, carrying the user's rank where given.
pub fn apply_to_rules(rules: &[Rule], feedback: &UserFeedback) -> Vec<Rule> {
    rules
        .iter()
        .filter_map(|r| {
            feedback.verdict(r).map(|rank| {
                let mut r = r.clone();
                if let Some(rank) = rank {
                    r.rank = rank;
                }
                r
            })
        })
        .collect()
}

/// Combines feedback given on `previous` rules with freshly learned ones.
///
/// A latest rule survives only if a previous rule with the same structure
/// (kind and variables) was approved; it keeps the latest statistics and takes
/// the rank the user gave. Everything else is dropped.
pub fn merge_feedback_async(
    previous: &[Rule],
    feedback: &UserFeedback,
    latest: &[Rule],
) -> Vec<Rule> {
    let approved: BTreeMap<RuleKey, Option<u32>> = previous
        .iter()
        .filter_map(|r| feedback.verdict(r).map(|rank| (r.key(), rank)))
        .collect();
    latest
        .iter()
        .filter_map(|r| {
            approved.get(&r.key()).map(|rank| {
                let mut r = r.clone();
                if let Some(rank) = rank {
                    r.rank = *rank;
                }
                r
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::RuleKind;
    use proptest::prelude::*;

    fn pl(i: usize, j: usize, score: f64) -> Rule {
        let mut r = Rule::power_law(i, j, 1.0, 1.5, 0.1, score);
        r.rank = 2;
        r
    }

    fn ten_rules() -> Vec<Rule> {
        (0..10)
            .map(|k| pl(k, k + 1, 0.71 + 0.02 * k as f64))
            .collect()
    }

    #[test]
    fn ru2_keeps_top_two() {
        let fb = artificial_feedback(&ten_rules(), RuleUsage::Ru2, 0.7);
        assert_eq!(fb.rankings.len(), 2);
        assert_eq!(fb.rankings["power_law:9:10"], 1);
        assert_eq!(fb.rankings["power_law:8:9"], 2);
        assert_eq!(fb.exclusions.len(), 8);
    }

    #[test]
    fn ru4_keeps_everything() {
        let fb = artificial_feedback(&ten_rules(), RuleUsage::Ru4, 0.7);
        assert_eq!(fb.rankings.len(), 10);
        assert!(fb.exclusions.is_empty());
    }

    #[test]
    fn ru1_rounds_up() {
        let fb = artificial_feedback(&[pl(0, 1, 0.9)], RuleUsage::Ru1, 0.7);
        assert_eq!(fb.rankings.len(), 1);
    }

    #[test]
    fn no_rules_no_feedback() {
        assert!(artificial_feedback(&[], RuleUsage::Ru3, 0.7).is_empty());
    }

    #[test]
    fn sub_threshold_rules_are_excluded_before_the_cut() {
        let mut rules = ten_rules();
        rules.push(pl(20, 21, 0.5));
        let fb = artificial_feedback(&rules, RuleUsage::Ru4, 0.7);
        assert_eq!(fb.rankings.len(), 10);
        assert!(fb.exclusions.contains("power_law:20:21"));
    }

    #[test]
    fn constants_compete_with_pairwise_rules() {
        let mut rules = ten_rules();
        rules.push(Rule::constant(30, 1.0, 0.95));
        rules.push(Rule::constant(31, 1.0, 0.72));
        let fb = artificial_feedback(&rules, RuleUsage::Ru1, 0.7);
        assert_eq!(fb.rankings.len(), 2);
        assert_eq!(fb.rankings["constant:30"], 1);
        assert_eq!(fb.rankings["power_law:9:10"], 2);
        assert!(fb.exclusions.contains("constant:31"));
    }

    #[test]
    fn merge_keeps_structural_matches_with_latest_stats() {
        let mut prev_iq = Rule::pairwise(RuleKind::InequalityLe, 3, 4, 0.9);
        prev_iq.rank = 3;
        let prev = vec![pl(1, 2, 0.9), prev_iq];
        let mut fb = UserFeedback::default();
        fb.rankings.insert("power_law:1:2".into(), 1);
        fb.rankings.insert("inequality_le:3:4".into(), 2);
        let mut fresh = Rule::power_law(1, 2, 1.0, 1.9, 0.2, 0.8);
        fresh.rank = 2;
        let latest = vec![fresh, pl(5, 6, 0.95)];
        let merged = merge_feedback_async(&prev, &fb, &latest);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].key(), prev[0].key());
        assert_eq!(merged[0].rank, 1);
        assert_eq!(merged[0].c, Some(1.9));
    }

    #[test]
    fn merge_with_everything_excluded_is_empty() {
        let prev = ten_rules();
        let fb = UserFeedback {
            exclusions: prev.iter().map(Rule::id).collect(),
            ..UserFeedback::default()
        };
        assert!(merge_feedback_async(&prev, &fb, &prev).is_empty());
    }

    #[test]
    fn specificity_threshold() {
        let rules = vec![pl(0, 1, 0.95), pl(1, 2, 0.8)];
        let fb = UserFeedback {
            specificity: Specificity {
                min_score: Some(0.9),
                min_abs_correlation: None,
            },
            ..UserFeedback::default()
        };
        let kept = apply_to_rules(&rules, &fb);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].rank, 1);
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut fb = UserFeedback::default();
        fb.rankings.insert("power_law:1:2".into(), 0);
        fb.exclusions.insert("nonsense".into());
        let errs = fb.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.field == "rankings.power_law:1:2"));
        assert!(errs.iter().any(|e| e.field == "exclusions.nonsense"));
    }

    #[test]
    fn feedback_json_rejects_unknown_keys() {
        let ok: UserFeedback = serde_json::from_str(
            r#"{"rankings":{"power_law:0:1":1},"exclusions":["equality:2:3"]}"#,
        )
        .unwrap();
        assert_eq!(ok.rankings["power_law:0:1"], 1);
        assert!(serde_json::from_str::<UserFeedback>(r#"{"ranking":{}}"#).is_err());
    }

    proptest! {
        #[test]
        fn usage_schemes_are_nested(scores in prop::collection::vec(0.0f64..1.0, 0..60)) {
            let rules: Vec<Rule> = scores.iter().enumerate().map(|(k, s)| pl(k, k + 100, *s)).collect();
            let kept = |u| {
                artificial_feedback(&rules, u, 0.7).rankings.into_keys().collect::<BTreeSet<_>>()
            };
            let sets: Vec<_> = RuleUsage::ALL.into_iter().map(kept).collect();
            for w in sets.windows(2) {
                prop_assert!(w[0].is_subset(&w[1]));
            }
        }
    }
}
