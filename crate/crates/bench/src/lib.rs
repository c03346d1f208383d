//! Fixtures shared by the benchmarks: populations and archives taken from
//! real runs rather than synthetic data.

use ikemo_core::{ProblemRegistry, RepairAgentKind, Rule, RunConfig, Session, UserSpec};

/// A session on `problem` advanced `gens` generations with the given agent.
pub fn advanced(problem: &str, agent: RepairAgentKind, pop: usize, gens: usize) -> Session {
    let mut cfg = RunConfig::new(problem);
    cfg.agent = agent;
    cfg.user = UserSpec::default();
    cfg.evo.pop_size = pop;
    cfg.evo.max_gen = gens;
    cfg.evo.seed = 7;
    let mut s = Session::new(cfg, &ProblemRegistry::default()).expect("bench config is valid");
    s.run();
    s
}

/// Feasible non-dominated solutions of `s`.
pub fn archive(s: &Session) -> Vec<Vec<f64>> {
    s.state().evo.archive.solutions()
}

/// Rules the session has learned most recently.
pub fn rules(s: &Session) -> Vec<Rule> {
    s.state()
        .latest
        .as_ref()
        .map(|r| r.rules.clone())
        .unwrap_or_default()
}
