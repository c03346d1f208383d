//! Constrained NSGA-II with an offspring hook and an unbounded ND archive.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problems::Problem;
use crate::repair::RepairTag;
use crate::rule::VariableSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub x: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec")]
    pub f: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec")]
    pub g: Vec<f64>,
    #[serde(with = "crate::serde_ext::scalar")]
    pub cv: f64,
    pub nd_rank: usize,
    #[serde(with = "crate::serde_ext::scalar")]
    pub crowding: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_tag: Option<RepairTag>,
    /// Generation that created the individual (0 for the initial population).
    #[serde(default)]
    pub born: usize,
}

impl Individual {
    /// Unevaluated individual.
    pub fn new(x: Vec<f64>, born: usize) -> Self {
        Self {
            x,
            f: Vec::new(),
            g: Vec::new(),
            cv: f64::INFINITY,
            nd_rank: 0,
            crowding: 0.0,
            op_tag: None,
            born,
        }
    }

    pub fn with_values(x: Vec<f64>, f: Vec<f64>, g: Vec<f64>) -> Self {
        let mut ind = Self::new(x, 0);
        ind.set_values(f, g);
        ind
    }

    pub fn set_values(&mut self, f: Vec<f64>, g: Vec<f64>) {
        self.cv = total_violation(&g);
        self.f = f;
        self.g = g;
    }

    pub fn is_feasible(&self) -> bool {
        self.cv == 0.0
    }
}

pub fn total_violation(g: &[f64]) -> f64 {
    g.iter().map(|v| v.max(0.0)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub pop_size: usize,
    pub max_gen: usize,
    pub p_c: f64,
    pub eta_c: f64,
    /// Per-variable mutation probability; `1 / n_var` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_m: Option<f64>,
    pub eta_m: f64,
    pub seed: u64,
    /// Stop once this many FEs (plus any deducted deliberation cost) are spent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_fe: Option<u64>,
    /// Crowding-pruned archive limit; unbounded when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive_cap: Option<usize>,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            pop_size: 40,
            max_gen: 200,
            p_c: 0.9,
            eta_c: 30.0,
            p_m: None,
            eta_m: 50.0,
            seed: 0,
            max_fe: None,
            archive_cap: None,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pop_size < 2 || !self.pop_size.is_multiple_of(2) {
            return Err("pop_size must be even and at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err("p_c must lie in [0, 1]".into());
        }
        if let Some(p) = self.p_m {
            if !(0.0..=1.0).contains(&p) {
                return Err("p_m must lie in [0, 1]".into());
            }
        }
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return Err("distribution indices must be non-negative".into());
        }
        if self.archive_cap == Some(0) {
            return Err("archive_cap must be positive".into());
        }
        Ok(())
    }

    pub fn mutation_probability(&self, n_var: usize) -> f64 {
        self.p_m.unwrap_or(1.0 / n_var.max(1) as f64)
    }
}

/// Pareto dominance for minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Feasibility-first dominance: feasible beats infeasible, lower violation
/// beats higher, Pareto dominance among feasible solutions.
pub fn constrained_dominates(a: &Individual, b: &Individual) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.cv < b.cv,
        (true, true) => dominates(&a.f, &b.f),
    }
}

/// Fronts of the population under constrained dominance, best first.
pub fn fast_nondominated_sort(pop: &[Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for p in 0..n {
        for q in p + 1..n {
            if constrained_dominates(&pop[p], &pop[q]) {
                dominated_by[p].push(q);
                count[q] += 1;
            } else if constrained_dominates(&pop[q], &pop[p]) {
                dominated_by[q].push(p);
                count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&p| count[p] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                count[q] -= 1;
                if count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front.
pub fn crowding_distance(objectives: &[&[f64]]) -> Vec<f64> {
    let n = objectives.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = objectives[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    #[allow(clippy::needless_range_loop)]
    for k in 0..m {
        order.sort_by(|&a, &b| objectives[a][k].total_cmp(&objectives[b][k]));
        let lo = objectives[order[0]][k];
        let hi = objectives[order[n - 1]][k];
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if !(span.is_finite() && span > 0.0) {
            continue;
        }
        for w in 1..n - 1 {
            let gap = objectives[order[w + 1]][k] - objectives[order[w - 1]][k];
            d[order[w]] += gap / span;
        }
    }
    d
}

/// Simulated binary crossover with bounds (Deb's bounded variant).
pub fn sbx_crossover<R: Rng + ?Sized>(
    p1: &[f64],
    p2: &[f64],
    specs: &[VariableSpec],
    p_c: f64,
    eta_c: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.random::<f64>() > p_c {
        return (c1, c2);
    }
    let expo = 1.0 / (eta_c + 1.0);
    for (k, spec) in specs.iter().enumerate() {
        if rng.random::<f64>() > 0.5 || (p1[k] - p2[k]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[k] < p2[k] {
            (p1[k], p2[k])
        } else {
            (p2[k], p1[k])
        };
        let (yl, yu) = (spec.lower, spec.upper);
        let u: f64 = rng.random();
        let betaq = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta_c + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(expo)
            } else {
                (1.0 / (2.0 - u * alpha)).powf(expo)
            }
        };
        let diff = y2 - y1;
        let lo = 0.5 * ((y1 + y2) - betaq(1.0 + 2.0 * (y1 - yl) / diff) * diff);
        let hi = 0.5 * ((y1 + y2) + betaq(1.0 + 2.0 * (yu - y2) / diff) * diff);
        let (lo, hi) = (spec.clamp(lo), spec.clamp(hi));
        if rng.random::<f64>() <= 0.5 {
            c1[k] = hi;
            c2[k] = lo;
        } else {
            c1[k] = lo;
            c2[k] = hi;
        }
    }
    (c1, c2)
}

/// Polynomial mutation with bounds.
pub fn polynomial_mutation<R: Rng + ?Sized>(
    x: &mut [f64],
    specs: &[VariableSpec],
    p_m: f64,
    eta_m: f64,
    rng: &mut R,
) {
    let expo = 1.0 / (eta_m + 1.0);
    for (k, spec) in specs.iter().enumerate() {
        if rng.random::<f64>() > p_m {
            continue;
        }
        let (yl, yu) = (spec.lower, spec.upper);
        let range = yu - yl;
        let y = x[k];
        let d1 = (y - yl) / range;
        let d2 = (yu - y) / range;
        let r: f64 = rng.random();
        let deltaq = if r <= 0.5 {
            let val = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(eta_m + 1.0);
            val.powf(expo) - 1.0
        } else {
            let val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(eta_m + 1.0);
            1.0 - val.powf(expo)
        };
        x[k] = spec.clamp(y + deltaq * range);
    }
}

/// Crowded comparison: lower rank, then larger crowding distance.
fn crowded_better(a: &Individual, b: &Individual) -> Ordering {
    a.nd_rank
        .cmp(&b.nd_rank)
        .then_with(|| b.crowding.total_cmp(&a.crowding))
}

pub fn binary_tournament<'p, R: Rng + ?Sized>(
    pop: &'p [Individual],
    rng: &mut R,
) -> &'p Individual {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    match crowded_better(&pop[a], &pop[b]) {
        Ordering::Less => &pop[a],
        Ordering::Greater => &pop[b],
        Ordering::Equal => {
            if rng.random::<bool>() {
                &pop[a]
            } else {
                &pop[b]
            }
        }
    }
}

/// All mutually non-dominated feasible solutions seen so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub members: Vec<Individual>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

impl Archive {
    pub fn new(cap: Option<usize>) -> Self {
        Self {
            members: Vec::new(),
            cap,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Inserts a feasible, non-dominated candidate and drops members it
    /// dominates. Returns whether it was inserted.
    pub fn offer(&mut self, ind: &Individual) -> bool {
        if !ind.is_feasible() || ind.f.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if self
            .members
            .iter()
            .any(|m| m.f == ind.f || dominates(&m.f, &ind.f))
        {
            return false;
        }
        self.members.retain(|m| !dominates(&ind.f, &m.f));
        let mut kept = ind.clone();
        kept.op_tag = None;
        self.members.push(kept);
        if let Some(cap) = self.cap {
            while self.members.len() > cap {
                let objs: Vec<&[f64]> = self.members.iter().map(|m| m.f.as_slice()).collect();
                let d = crowding_distance(&objs);
                let worst = (0..d.len())
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]))
                    .expect("non-empty");
                self.members.remove(worst);
            }
        }
        true
    }

    pub fn objectives(&self) -> Vec<&[f64]> {
        self.members.iter().map(|m| m.f.as_slice()).collect()
    }

    pub fn solutions(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.x.clone()).collect()
    }
}

/// Something that may rewrite freshly varied offspring before evaluation.
pub trait OffspringHook {
    fn apply(&mut self, gen: usize, offspring: &mut [Individual]);
}

/// Leaves offspring untouched.
pub struct NoHook;

impl OffspringHook for NoHook {
    fn apply(&mut self, _gen: usize, _offspring: &mut [Individual]) {}
}

impl<F: FnMut(usize, &mut [Individual])> OffspringHook for F {
    fn apply(&mut self, gen: usize, offspring: &mut [Individual]) {
        self(gen, offspring)
    }
}

/// What happened to one generation's offspring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub tags: Vec<Option<RepairTag>>,
    pub survived: Vec<bool>,
    pub failed_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nsga2State {
    pub gen: usize,
    pub fe: u64,
    pub pop: Vec<Individual>,
    pub archive: Archive,
    pub rng: ChaCha8Rng,
}

fn evaluate_into(problem: &dyn Problem, ind: &mut Individual) -> bool {
    match problem.evaluate(&ind.x) {
        Ok(e) if e.f.iter().chain(&e.g).all(|v| !v.is_nan()) => {
            ind.set_values(e.f, e.g);
            true
        }
        Ok(_) | Err(_) => {
            ind.f = vec![f64::INFINITY; problem.n_obj()];
            ind.g = Vec::new();
            ind.cv = f64::INFINITY;
            false
        }
    }
}

fn assign_rank_and_crowding(pop: &mut [Individual], fronts: &[Vec<usize>]) {
    for (r, front) in fronts.iter().enumerate() {
        let objs: Vec<&[f64]> = front.iter().map(|&k| pop[k].f.as_slice()).collect();
        let d = crowding_distance(&objs);
        for (&k, dist) in front.iter().zip(d) {
            pop[k].nd_rank = r;
            pop[k].crowding = dist;
        }
    }
}

impl Nsga2State {
    /// Random initial population, evaluated.
    pub fn initialize(problem: &dyn Problem, cfg: &EvoConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let specs = problem.variables();
        let mut pop: Vec<Individual> = (0..cfg.pop_size)
            .map(|_| {
                let x = specs
                    .iter()
                    .map(|s| s.lower + rng.random::<f64>() * (s.upper - s.lower))
                    .collect();
                Individual::new(x, 0)
            })
            .collect();
        let mut archive = Archive::new(cfg.archive_cap);
        for ind in &mut pop {
            evaluate_into(problem, ind);
            archive.offer(ind);
        }
        let fronts = fast_nondominated_sort(&pop);
        assign_rank_and_crowding(&mut pop, &fronts);
        Self {
            gen: 0,
            fe: cfg.pop_size as u64,
            pop,
            archive,
            rng,
        }
    }

    /// One generation: tournament, SBX, mutation, hook, evaluation and
    /// (μ+λ) survival.
    pub fn step<H: OffspringHook + ?Sized>(
        &mut self,
        problem: &dyn Problem,
        cfg: &EvoConfig,
        hook: &mut H,
    ) -> StepReport {
        let specs = problem.variables();
        let n = self.pop.len();
        let p_m = cfg.mutation_probability(specs.len());
        let gen = self.gen + 1;
        let mut offspring = Vec::with_capacity(n);
        while offspring.len() < n {
            let a = binary_tournament(&self.pop, &mut self.rng).x.clone();
            let b = binary_tournament(&self.pop, &mut self.rng).x.clone();
            let (mut c1, mut c2) = sbx_crossover(&a, &b, specs, cfg.p_c, cfg.eta_c, &mut self.rng);
            polynomial_mutation(&mut c1, specs, p_m, cfg.eta_m, &mut self.rng);
            polynomial_mutation(&mut c2, specs, p_m, cfg.eta_m, &mut self.rng);
            offspring.push(Individual::new(c1, gen));
            if offspring.len() < n {
                offspring.push(Individual::new(c2, gen));
            }
        }
        hook.apply(gen, &mut offspring);
        let mut failed = 0;
        for ind in &mut offspring {
            if !evaluate_into(problem, ind) {
                failed += 1;
            }
            self.archive.offer(ind);
        }
        self.fe += offspring.len() as u64;
        let tags: Vec<Option<RepairTag>> = offspring.iter().map(|o| o.op_tag).collect();

        let mut combined = std::mem::take(&mut self.pop);
        combined.extend(offspring);
        let fronts = fast_nondominated_sort(&combined);
        assign_rank_and_crowding(&mut combined, &fronts);
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        for front in &fronts {
            if chosen.len() + front.len() <= n {
                chosen.extend(front);
            } else {
                let mut last = front.clone();
                last.sort_by(|&a, &b| combined[b].crowding.total_cmp(&combined[a].crowding));
                chosen.extend(&last[..n - chosen.len()]);
            }
            if chosen.len() == n {
                break;
            }
        }
        let mut survived = vec![false; tags.len()];
        for &k in &chosen {
            if k >= n {
                survived[k - n] = true;
            }
        }
        chosen.sort_unstable();
        let mut slots: Vec<Option<Individual>> = combined.into_iter().map(Some).collect();
        self.pop = chosen
            .iter()
            .map(|&k| slots[k].take().expect("chosen once"))
            .collect();
        self.gen = gen;
        StepReport {
            tags,
            survived,
            failed_evaluations: failed,
        }
    }

    /// FNV-1a over the population's decision and objective bits.
    pub fn population_hash(&self) -> u64 {
        population_hash(&self.pop)
    }

    /// Best feasible value of objective `k` in the population, if any.
    pub fn best_feasible(&self, k: usize) -> Option<f64> {
        self.pop
            .iter()
            .filter(|i| i.is_feasible())
            .map(|i| i.f[k])
            .min_by(f64::total_cmp)
    }
}

pub fn population_hash(pop: &[Individual]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |v: f64| {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    };
    for ind in pop {
        ind.x.iter().chain(&ind.f).for_each(|v| eat(*v));
        eat(ind.cv);
    }
    h
}

/// Plain NSGA-II; returns the population hash after every generation
/// (initial population first).
pub fn run_baseline(problem: &dyn Problem, cfg: &EvoConfig) -> (Nsga2State, Vec<u64>) {
    let mut state = Nsga2State::initialize(problem, cfg);
    let mut hashes = vec![state.population_hash()];
    while state.gen < cfg.max_gen && cfg.max_fe.is_none_or(|m| state.fe < m) {
        state.step(problem, cfg, &mut NoHook);
        hashes.push(state.population_hash());
    }
    (state, hashes)
}
