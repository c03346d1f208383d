//! Aggregation of run records into an agent-by-user grid of FEs to reach the
//! target hypervolume.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{median, std_dev, target_hv, wilcoxon_rank_sum, RunRecord};

/// Row label of runs without repair.
pub const BASE_ROW: &str = "NONE";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no runs found")]
    NoRuns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub agent: String,
    pub user: String,
    pub runs: usize,
    /// Runs that reached the target; the rest count with their full budget.
    pub reached: usize,
    pub median_fe: f64,
    pub std_fe: f64,
    pub median_final_hv: f64,
    /// Rank-sum p-value against the column's best cell; absent for the best
    /// cell itself or when either sample is too small.
    pub p_value: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub target_hv: f64,
    pub agents: Vec<String>,
    pub users: Vec<String>,
    pub cells: Vec<Cell>,
}

fn fes(records: &[&RunRecord], target: f64) -> Vec<f64> {
    records
        .iter()
        .map(|r| r.fe_to(target).unwrap_or(r.budget) as f64)
        .collect()
}

impl Report {
    pub fn build(records: &[RunRecord]) -> Result<Self, ReportError> {
        if records.is_empty() {
            return Err(ReportError::NoRuns);
        }
        let is_base = |r: &RunRecord| r.agent == BASE_ROW;
        let mut users: BTreeSet<String> = records
            .iter()
            .filter(|r| !is_base(r))
            .map(|r| r.user.clone())
            .collect();
        if users.is_empty() {
            users.extend(records.iter().map(|r| r.user.clone()));
        }
        let users: Vec<String> = users.into_iter().collect();

        // Base runs are user-independent and shared by every column.
        let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            if is_base(r) {
                for u in &users {
                    groups
                        .entry((r.agent.clone(), u.clone()))
                        .or_default()
                        .push(r);
                }
            } else {
                groups
                    .entry((r.agent.clone(), r.user.clone()))
                    .or_default()
                    .push(r);
            }
        }

        let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in records {
            let key = if is_base(r) {
                BASE_ROW.to_string()
            } else {
                format!("{}/{}", r.agent, r.user)
            };
            finals.entry(key).or_default().push(r.final_hv());
        }
        let target = target_hv(&finals);

        let mut agents: Vec<String> = groups.keys().map(|(a, _)| a.clone()).collect();
        agents.dedup();
        agents.sort_by_key(|a| (a != BASE_ROW, a.clone()));

        let mut cells = Vec::new();
        for user in &users {
            let column: Vec<(&String, Vec<f64>, &Vec<&RunRecord>)> = agents
                .iter()
                .filter_map(|a| {
                    groups
                        .get(&(a.clone(), user.clone()))
                        .map(|rs| (a, fes(rs, target), rs))
                })
                .collect();
            let best = column
                .iter()
                .enumerate()
                .min_by(|x, y| median(&x.1 .1).total_cmp(&median(&y.1 .1)))
                .map(|(k, _)| k);
            for (k, (agent, fe, rs)) in column.iter().enumerate() {
                let is_best = Some(k) == best;
                let p_value = match best {
                    Some(b) if !is_best => {
                        wilcoxon_rank_sum(fe, &column[b].1).ok().map(|t| t.p_value)
                    }
                    _ => None,
                };
                let hv: Vec<f64> = rs.iter().map(|r| r.final_hv()).collect();
                cells.push(Cell {
                    agent: (*agent).clone(),
                    user: user.clone(),
                    runs: rs.len(),
                    reached: rs.iter().filter(|r| r.fe_to(target).is_some()).count(),
                    median_fe: median(fe),
                    std_fe: if fe.len() > 1 { std_dev(fe) } else { 0.0 },
                    median_final_hv: median(&hv),
                    p_value,
                    best: is_best,
                });
            }
        }
        Ok(Self {
            target_hv: target,
            agents,
            users,
            cells,
        })
    }

    pub fn cell(&self, agent: &str, user: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.agent == agent && c.user == user)
    }

    /// Wide CSV: one row per agent, one column per user, cells
    /// `median ± std` with the p-value in brackets (`best` for the winner).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent");
        for u in &self.users {
            let _ = write!(out, ",{u}");
        }
        out.push('\n');
        for a in &self.agents {
            out.push_str(a);
            for u in &self.users {
                out.push(',');
                if let Some(c) = self.cell(a, u) {
                    let tag = match (c.best, c.p_value) {
                        (true, _) => "best".to_string(),
                        (false, Some(p)) => format!("p={p:.3}"),
                        (false, None) => "p=n/a".to_string(),
                    };
                    let _ = write!(out, "{:.0} ± {:.0} [{tag}]", c.median_fe, c.std_fe);
                }
            }
            out.push('\n');
        }
        out
    }
}
