//! Variable relation graphs.
//!
//! A VRG starts as the complete graph over one variable group. Rule selection
//! keeps one qualifying rule per edge and pulls constant variables out of the
//! graph. Each offspring then gets its own orientation (a random permutation of
//! the group turned into a DAG), a per-kind transitive reduction, the user's
//! feedback, and finally a rank-by-rank depth-first traversal that repairs the
//! far end of every traversed edge from the current node.

use std::collections::{BTreeMap, BTreeSet};

use log::{trace, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::ser::{Serialize, Serializer};
use thiserror::Error;

use crate::feedback::UserFeedback;
use crate::repair::{RepairDispatch, RepairOutcome};
use crate::rule::{Rule, RuleKind, VariableGroup};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VrgError {
    #[error("orientation for group {group} is not a permutation of its members")]
    BadOrientation { group: String },
    #[error("graph for group {group} has a directed cycle")]
    Cycle { group: String },
    #[error("operation needs a directed graph")]
    Undirected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrgEdge {
    pub start: usize,
    pub end: usize,
    /// The rule the edge stands for; `None` only before rule selection.
    pub rule: Option<Rule>,
    pub edge_rank: u32,
}

impl VrgEdge {
    fn kind(&self) -> Option<RuleKind> {
        self.rule.as_ref().map(|r| r.kind)
    }

    fn touches(&self, v: usize) -> bool {
        self.start == v || self.end == v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vrg {
    pub group: VariableGroup,
    pub nodes: BTreeSet<usize>,
    pub edges: Vec<VrgEdge>,
    /// Constant rules of the variables removed from the graph.
    pub constant_rules: Vec<Rule>,
    pub directed: bool,
}

/// A permutation of a group's members; earlier members point at later ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientationSequence {
    pub group: String,
    pub order: Vec<usize>,
}

impl OrientationSequence {
    pub fn random<R: Rng + ?Sized>(group: &VariableGroup, rng: &mut R) -> Self {
        let mut order = group.members.clone();
        order.shuffle(rng);
        Self {
            group: group.id.clone(),
            order,
        }
    }
}

impl Vrg {
    pub fn constant_nodes(&self) -> BTreeSet<usize> {
        self.constant_rules.iter().map(|r| r.i).collect()
    }

    /// Distinct edge ranks, ascending.
    pub fn ranks(&self) -> Vec<u32> {
        self.edges
            .iter()
            .map(|e| e.edge_rank)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.iter().any(|e| e.start == a && e.end == b)
    }
}

/// Complete undirected graph over the group.
pub fn build_complete(group: &VariableGroup) -> Vrg {
    let mut members = group.members.clone();
    members.sort_unstable();
    members.dedup();
    let mut edges = Vec::with_capacity(members.len() * members.len().saturating_sub(1) / 2);
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            edges.push(VrgEdge {
                start: i,
                end: j,
                rule: None,
                edge_rank: 1,
            });
        }
    }
    Vrg {
        group: group.clone(),
        nodes: members.into_iter().collect(),
        edges,
        constant_rules: Vec::new(),
        directed: false,
    }
}

fn prefer(a: &Rule, b: &Rule) -> std::cmp::Ordering {
    a.rank
        .cmp(&b.rank)
        .then_with(|| b.score.total_cmp(&a.score))
        .then_with(|| a.key().cmp(&b.key()))
}

/// Keeps, per edge, the best rule scoring at least `s_min`; removes nodes with
/// a qualifying constant rule and edges with no qualifying rule.
///
/// Edge ranks are the dense ranking of the chosen rules' hierarchy ranks, so
/// the most preferred two-variable kind present gets edge rank 1.
pub fn select_rules(vrg: &Vrg, rules: &[Rule], s_min: f64) -> Vrg {
    let qualifies = |r: &&Rule| !r.excluded && r.score >= s_min;
    let mut out = vrg.clone();
    for rule in rules
        .iter()
        .filter(qualifies)
        .filter(|r| r.kind == RuleKind::Constant)
    {
        if out.nodes.remove(&rule.i) {
            out.constant_rules.push(rule.clone());
        }
    }
    let mut by_pair: BTreeMap<(usize, usize), Vec<&Rule>> = BTreeMap::new();
    for rule in rules.iter().filter(qualifies) {
        if let Some(j) = rule.j {
            by_pair
                .entry((rule.i.min(j), rule.i.max(j)))
                .or_default()
                .push(rule);
        }
    }
    let nodes = out.nodes.clone();
    out.edges = vrg
        .edges
        .iter()
        .filter(|e| nodes.contains(&e.start) && nodes.contains(&e.end))
        .filter_map(|e| {
            let key = (e.start.min(e.end), e.start.max(e.end));
            let best = by_pair.get(&key)?.iter().min_by(|a, b| prefer(a, b))?;
            Some(VrgEdge {
                start: key.0,
                end: key.1,
                rule: Some((*best).clone()),
                edge_rank: best.rank,
            })
        })
        .collect();
    let dense: BTreeMap<u32, u32> = out
        .edges
        .iter()
        .map(|e| e.edge_rank)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .zip(1..)
        .collect();
    for e in &mut out.edges {
        e.edge_rank = dense[&e.edge_rank];
    }
    out
}

/// Directs every edge from the endpoint appearing first in `seq`.
pub fn orient(vrg: &Vrg, seq: &OrientationSequence) -> Result<Vrg, VrgError> {
    let bad = || VrgError::BadOrientation {
        group: vrg.group.id.clone(),
    };
    let mut expected = vrg.group.members.clone();
    expected.sort_unstable();
    let mut got = seq.order.clone();
    got.sort_unstable();
    if expected != got {
        return Err(bad());
    }
    let pos: BTreeMap<usize, usize> = seq.order.iter().enumerate().map(|(p, &v)| (v, p)).collect();
    let mut out = vrg.clone();
    for e in &mut out.edges {
        let (a, b) = (e.start, e.end);
        if pos[&a] > pos[&b] {
            e.start = b;
            e.end = a;
        }
    }
    out.directed = true;
    Ok(out)
}

/// Dense index over the graph's nodes plus adjacency for a subset of edges.
struct Index {
    nodes: Vec<usize>,
    slot: BTreeMap<usize, usize>,
}

impl Index {
    fn new(vrg: &Vrg) -> Self {
        let mut nodes: BTreeSet<usize> = vrg.nodes.clone();
        for e in &vrg.edges {
            nodes.insert(e.start);
            nodes.insert(e.end);
        }
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let slot = nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        Self { nodes, slot }
    }
}

/// Kahn topological order of the edge subset, or `None` on a cycle.
fn topo_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &out[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                stack.push(w);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Transitive reduction of a DAG given as slot pairs; returns the mask of
/// edges to keep.
fn reduce_dag(n: usize, edges: &[(usize, usize)]) -> Option<Vec<bool>> {
    let order = topo_order(n, edges)?;
    let mut children = vec![Vec::new(); n];
    for &(a, b) in edges {
        children[a].push(b);
    }
    // reach[v] = nodes reachable from v by a path of length >= 1
    let words = n.div_ceil(64);
    let mut reach = vec![vec![0u64; words]; n];
    for &v in order.iter().rev() {
        let mut acc = vec![0u64; words];
        for &w in &children[v] {
            acc[w / 64] |= 1 << (w % 64);
            for (dst, src) in acc.iter_mut().zip(&reach[w]) {
                *dst |= *src;
            }
        }
        reach[v] = acc;
    }
    Some(
        edges
            .iter()
            .map(|&(a, b)| {
                !children[a]
                    .iter()
                    .any(|&w| w != b && reach[w][b / 64] & (1 << (b % 64)) != 0)
            })
            .collect(),
    )
}

/// Removes every edge implied by a longer path made of edges of the same rule
/// kind. Reachability inside each kind's subgraph is unchanged.
pub fn transitive_reduce(vrg: &Vrg) -> Result<Vrg, VrgError> {
    if !vrg.directed {
        return Err(VrgError::Undirected);
    }
    let idx = Index::new(vrg);
    let n = idx.nodes.len();
    let mut keep = vec![true; vrg.edges.len()];
    let kinds: BTreeSet<Option<RuleKind>> = vrg.edges.iter().map(VrgEdge::kind).collect();
    for kind in kinds {
        let members: Vec<usize> = (0..vrg.edges.len())
            .filter(|&k| vrg.edges[k].kind() == kind)
            .collect();
        let pairs: Vec<(usize, usize)> = members
            .iter()
            .map(|&k| (idx.slot[&vrg.edges[k].start], idx.slot[&vrg.edges[k].end]))
            .collect();
        let mask = reduce_dag(n, &pairs).ok_or_else(|| VrgError::Cycle {
            group: vrg.group.id.clone(),
        })?;
        for (k, m) in members.iter().zip(mask) {
            keep[*k] = m;
        }
    }
    let mut out = vrg.clone();
    out.edges = vrg
        .edges
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect();
    Ok(out)
}

/// Applies user feedback: excluded rules lose their edges (or constant
/// slot), ranked rules take the user's rank.
pub fn apply_feedback(vrg: &Vrg, feedback: &UserFeedback) -> Vrg {
    if feedback.is_empty() {
        return vrg.clone();
    }
    let present: BTreeSet<String> = vrg
        .edges
        .iter()
        .filter_map(|e| e.rule.as_ref().map(Rule::id))
        .chain(vrg.constant_rules.iter().map(Rule::id))
        .collect();
    for id in feedback.rankings.keys().chain(feedback.exclusions.iter()) {
        if !present.contains(id) {
            trace!(
                "feedback references rule {id}, which is not in group {}",
                vrg.group.id
            );
        }
    }
    let mut out = vrg.clone();
    out.edges = vrg
        .edges
        .iter()
        .filter_map(|e| {
            let rule = e.rule.as_ref()?;
            let rank = feedback.verdict(rule)?;
            let mut e = e.clone();
            if let Some(r) = rank {
                e.edge_rank = r;
            }
            Some(e)
        })
        .collect();
    out.constant_rules
        .retain(|r| !feedback.exclusions.contains(&r.id()));
    out
}

/// Anything that can repair one edge of a traversal.
pub trait EdgeRepairer {
    fn repair_edge<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        base: usize,
        target: usize,
        rule: &Rule,
        rng: &mut R,
    ) -> RepairOutcome;

    fn repair_constant(&mut self, x: &mut [f64], rule: &Rule) -> RepairOutcome;
}

impl EdgeRepairer for RepairDispatch<'_> {
    fn repair_edge<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        base: usize,
        target: usize,
        rule: &Rule,
        rng: &mut R,
    ) -> RepairOutcome {
        self.repair(x, base, target, rule, rng).unwrap_or_else(|e| {
            warn!("skipping edge {base}->{target}: {e}");
            RepairOutcome::Skipped
        })
    }

    fn repair_constant(&mut self, x: &mut [f64], rule: &Rule) -> RepairOutcome {
        if self.tag.is_no_repair() {
            return RepairOutcome::Skipped;
        }
        RepairDispatch::repair_constant(self, x, rule).unwrap_or(RepairOutcome::Skipped)
    }
}

impl<T: EdgeRepairer + ?Sized> EdgeRepairer for &mut T {
    fn repair_edge<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        base: usize,
        target: usize,
        rule: &Rule,
        rng: &mut R,
    ) -> RepairOutcome {
        (**self).repair_edge(x, base, target, rule, rng)
    }

    fn repair_constant(&mut self, x: &mut [f64], rule: &Rule) -> RepairOutcome {
        (**self).repair_constant(x, rule)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairRecord {
    pub rank: u32,
    pub base: usize,
    pub target: usize,
    pub rule: Rule,
    pub outcome: RepairOutcome,
}

/// What a traversal did, pass by pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraversalReport {
    /// `(rank, nodes in visiting order)` for every rank pass.
    pub passes: Vec<(u32, Vec<usize>)>,
    pub repairs: Vec<RepairRecord>,
    pub constants: Vec<(usize, RepairOutcome)>,
    /// Rank-matching edges left alone because their far node was already
    /// fixed by a more preferred rank.
    pub settled_skips: usize,
}

struct Traversal<'g, E, R: ?Sized> {
    graph: &'g Vrg,
    outgoing: BTreeMap<usize, Vec<usize>>,
    incoming: BTreeMap<usize, Vec<usize>>,
    visited: BTreeSet<usize>,
    settled: BTreeSet<usize>,
    touched: Vec<usize>,
    rank: u32,
    repairer: E,
    rng: &'g mut R,
    report: TraversalReport,
}

impl<E: EdgeRepairer, R: Rng + ?Sized> Traversal<'_, E, R> {
    fn step(&mut self, x: &mut [f64], current: usize, next: usize, edge: usize) {
        let e = &self.graph.edges[edge];
        if e.edge_rank != self.rank {
            return;
        }
        let Some(rule) = e.rule.as_ref() else { return };
        if self.settled.contains(&next) {
            self.report.settled_skips += 1;
            return;
        }
        let outcome = self.repairer.repair_edge(x, current, next, rule, self.rng);
        if outcome != RepairOutcome::Skipped {
            self.touched.extend([current, next]);
        }
        self.report.repairs.push(RepairRecord {
            rank: self.rank,
            base: current,
            target: next,
            rule: rule.clone(),
            outcome,
        });
    }

    fn visit(&mut self, x: &mut [f64], current: usize, previous: Option<usize>) {
        if !self.visited.insert(current) {
            return;
        }
        if let Some((_, order)) = self.report.passes.last_mut() {
            order.push(current);
        }
        let outs = self.outgoing.get(&current).cloned().unwrap_or_default();
        for edge in outs {
            let next = self.graph.edges[edge].end;
            if !self.visited.contains(&next) {
                self.step(x, current, next, edge);
                self.visit(x, next, Some(current));
            }
        }
        let ins = self.incoming.get(&current).cloned().unwrap_or_default();
        for edge in ins {
            let next = self.graph.edges[edge].start;
            if !self.visited.contains(&next) && Some(next) != previous {
                self.step(x, current, next, edge);
                self.visit(x, next, Some(current));
            }
        }
    }
}

/// Repairs `x` by walking a directed VRG rank by rank.
///
/// Constant rules are applied first. For each rank a random node with an edge
/// of that rank starts a depth-first walk: outgoing edges first, then incoming
/// ones, repairing the far node from the current node whenever the edge has the
/// current rank. Visited marks are reset per rank; more random starts are drawn
/// until every node with an edge of the rank has been visited. A node fixed in
/// an earlier (more preferred) rank pass is never rewritten by a later pass.
pub fn traverse_and_repair<E: EdgeRepairer, R: Rng + ?Sized>(
    x: &mut [f64],
    vrg: &Vrg,
    mut repairer: E,
    rng: &mut R,
) -> Result<TraversalReport, VrgError> {
    if !vrg.directed {
        return Err(VrgError::Undirected);
    }
    let mut report = TraversalReport::default();
    for rule in &vrg.constant_rules {
        let outcome = repairer.repair_constant(x, rule);
        report.constants.push((rule.i, outcome));
    }
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut incoming: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, e) in vrg.edges.iter().enumerate() {
        outgoing.entry(e.start).or_default().push(k);
        incoming.entry(e.end).or_default().push(k);
    }
    let mut t = Traversal {
        graph: vrg,
        outgoing,
        incoming,
        visited: BTreeSet::new(),
        settled: BTreeSet::new(),
        touched: Vec::new(),
        rank: 0,
        repairer,
        rng,
        report,
    };
    for rank in vrg.ranks() {
        t.rank = rank;
        t.visited.clear();
        t.report.passes.push((rank, Vec::new()));
        let starts: Vec<usize> = vrg
            .edges
            .iter()
            .filter(|e| e.edge_rank == rank)
            .flat_map(|e| [e.start, e.end])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        loop {
            let open: Vec<usize> = starts
                .iter()
                .copied()
                .filter(|v| !t.visited.contains(v))
                .collect();
            let Some(&start) = open.choose(t.rng) else {
                break;
            };
            t.visit(x, start, None);
        }
        let touched = std::mem::take(&mut t.touched);
        t.settled.extend(touched);
    }
    Ok(t.report)
}

/// Edges of `vrg` as `(start, end)` pairs; handy in tests and reports.
pub fn edge_pairs(vrg: &Vrg) -> Vec<(usize, usize)> {
    vrg.edges.iter().map(|e| (e.start, e.end)).collect()
}

impl Vrg {
    pub fn edges_touching(&self, v: usize) -> impl Iterator<Item = &VrgEdge> {
        self.edges.iter().filter(move |e| e.touches(v))
    }
}

#[derive(serde::Serialize)]
struct EdgeView {
    start: usize,
    end: usize,
    kind: Option<RuleKind>,
    rank: u32,
    score: Option<f64>,
}

#[derive(serde::Serialize)]
struct VrgView<'a> {
    group: &'a VariableGroup,
    constant_nodes: BTreeSet<usize>,
    edges: Vec<EdgeView>,
}

impl Serialize for Vrg {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VrgView {
            group: &self.group,
            constant_nodes: self.constant_nodes(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeView {
                    start: e.start,
                    end: e.end,
                    kind: e.kind(),
                    rank: e.edge_rank,
                    score: e.rule.as_ref().map(|r| r.score),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}
