//! Problem interface and the built-in problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::HvConfig;
use crate::rule::{LearningConfig, VariableGroup, VariableSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem {0:?}")]
    Unknown(String),
    #[error("invalid parameters for {problem}: {message}")]
    Params { problem: String, message: String },
    #[error("stiffness matrix is singular")]
    Singular,
    #[error("expected {expected} variables, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Objectives and constraint values of one solution. `g[k] <= 0` is feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn variables(&self) -> &[VariableSpec];
    fn n_obj(&self) -> usize {
        2
    }
    fn n_constraints(&self) -> usize;
    fn groups(&self) -> Vec<VariableGroup> {
        vec![VariableGroup::all(self.variables().len())]
    }
    /// Must be deterministic and free of side effects.
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, ProblemError>;
    fn learning_config(&self) -> LearningConfig {
        LearningConfig::default()
    }
    fn hv_config(&self) -> HvConfig;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamParams {
    pub n_seg: usize,
    /// Midspan load (N).
    pub load: f64,
    /// Allowed bending stress (Pa).
    pub sigma_max: f64,
    /// Allowed deflection (m).
    pub delta_max: f64,
    pub width: [f64; 2],
    pub height: [f64; 2],
    pub aspect: [f64; 2],
    /// Elastic modulus (Pa).
    pub elastic_modulus: f64,
    /// Length of every segment (m).
    pub segment_length: f64,
    /// Metres per unit of `b` and `h`.
    pub unit_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hv: Option<HvConfig>,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self::segments(39)
    }
}

impl BeamParams {
    /// Standard 39- or 59-segment configuration; other counts reuse the
    /// 39-segment limits.
    pub fn segments(n_seg: usize) -> Self {
        let (delta_max, upper) = if n_seg == 59 {
            (0.06, 60.0)
        } else {
            (0.04, 40.0)
        };
        Self {
            n_seg,
            load: 2_000.0,
            sigma_max: 20e6,
            delta_max,
            width: [0.1, upper],
            height: [0.1, upper],
            aspect: [0.5, 2.0],
            elastic_modulus: 30e9,
            segment_length: 0.5,
            unit_scale: 0.01,
            hv: None,
        }
    }

    pub fn span(&self) -> f64 {
        self.n_seg as f64 * self.segment_length
    }

    fn validate(&self) -> Result<(), String> {
        let positive = [
            ("load", self.load),
            ("sigma_max", self.sigma_max),
            ("delta_max", self.delta_max),
            ("elastic_modulus", self.elastic_modulus),
            ("segment_length", self.segment_length),
            ("unit_scale", self.unit_scale),
            ("width[0]", self.width[0]),
            ("height[0]", self.height[0]),
            ("aspect[0]", self.aspect[0]),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("{name} must be positive"));
        }
        if self.n_seg == 0 {
            return Err("n_seg must be at least 1".into());
        }
        for (name, r) in [
            ("width", self.width),
            ("height", self.height),
            ("aspect", self.aspect),
        ] {
            if r[0] >= r[1] {
                return Err(format!("{name} lower bound must be below the upper bound"));
            }
        }
        Ok(())
    }
}

/// Response of a beam solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResponse {
    pub volume: f64,
    /// Vertical displacement per node, left to right (m, positive down).
    pub deflection: Vec<f64>,
    /// Largest bending stress per segment (Pa).
    pub stress: Vec<f64>,
}

impl BeamResponse {
    pub fn max_deflection(&self) -> f64 {
        self.deflection.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn max_stress(&self) -> f64 {
        self.stress.iter().fold(0.0, |m, s| m.max(*s))
    }
}

/// Simply supported beam of rectangular segments with a point load at midspan.
/// Variables are `(b_1..b_n, h_1..h_n)`; objectives are volume and maximum
/// deflection.
#[derive(Debug, Clone)]
pub struct SteppedBeam {
    name: String,
    params: BeamParams,
    vars: Vec<VariableSpec>,
    hv: HvConfig,
}

impl SteppedBeam {
    pub fn new(params: BeamParams) -> Result<Self, ProblemError> {
        let name = format!("stepped_beam_{}", params.n_seg);
        params.validate().map_err(|message| ProblemError::Params {
            problem: name.clone(),
            message,
        })?;
        let n = params.n_seg;
        let mut vars = Vec::with_capacity(2 * n);
        for i in 0..n {
            vars.push(VariableSpec::new(
                i,
                params.width[0],
                params.width[1],
                format!("b{}", i + 1),
            ));
        }
        for i in 0..n {
            vars.push(VariableSpec::new(
                n + i,
                params.height[0],
                params.height[1],
                format!("h{}", i + 1),
            ));
        }
        let hv = match &params.hv {
            Some(hv) => hv.clone(),
            None => {
                let s = params.unit_scale;
                let full = params.width[1] * params.height[1] * s * s * params.span();
                HvConfig::new([0.0, 0.0], [0.5 * full, params.delta_max]).expect("positive anchors")
            }
        };
        hv.validate().map_err(|e| ProblemError::Params {
            problem: name.clone(),
            message: e.to_string(),
        })?;
        Ok(Self {
            name,
            params,
            vars,
            hv,
        })
    }

    pub fn params(&self) -> &BeamParams {
        &self.params
    }

    /// Direct-stiffness solve with one Euler-Bernoulli element per segment.
    /// A segment holding the midspan is split so the load sits on a node.
    pub fn solve(&self, x: &[f64]) -> Result<BeamResponse, ProblemError> {
        let p = &self.params;
        let n = p.n_seg;
        if x.len() != 2 * n {
            return Err(ProblemError::Dimension {
                expected: 2 * n,
                got: x.len(),
            });
        }
        let s = p.unit_scale;
        let l = p.segment_length;
        let volume = (0..n).map(|i| x[i] * s * x[n + i] * s * l).sum();

        // elements: (segment, length)
        let mut elems: Vec<(usize, f64)> = Vec::with_capacity(n + 1);
        let load_node = if n.is_multiple_of(2) {
            elems.extend((0..n).map(|i| (i, l)));
            n / 2
        } else {
            let mid = n / 2;
            for i in 0..n {
                if i == mid {
                    elems.push((i, l / 2.0));
                    elems.push((i, l / 2.0));
                } else {
                    elems.push((i, l));
                }
            }
            mid + 1
        };
        let n_nodes = elems.len() + 1;
        let ndof = 2 * n_nodes;
        let mut band = BandMatrix::new(ndof, 3);
        let mut force = vec![0.0; ndof];
        force[2 * load_node] = p.load;

        let stiffness: Vec<[[f64; 4]; 4]> = elems
            .iter()
            .map(|&(seg, le)| {
                let (b, h) = (x[seg] * s, x[n + seg] * s);
                element_stiffness(p.elastic_modulus * b * h.powi(3) / 12.0, le)
            })
            .collect();
        for (e, k) in stiffness.iter().enumerate() {
            let dofs = [2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3];
            for a in 0..4 {
                for c in a..4 {
                    band.add(dofs[a], dofs[c], k[a][c]);
                }
            }
        }
        // pinned ends: vertical displacement fixed
        for d in [0, 2 * (n_nodes - 1)] {
            band.fix(d);
            force[d] = 0.0;
        }
        band.factor()?;
        let mut u = force.clone();
        band.substitute(&mut u);
        // soft segments next to stiff ones lose digits in the assembled
        // matrix; a few refinement sweeps recover them
        for _ in 0..REFINEMENT_SWEEPS {
            let mut r = residual(&stiffness, &u, &force);
            band.substitute(&mut r);
            u.iter_mut().zip(&r).for_each(|(v, dv)| *v += dv);
        }

        let mut stress = vec![0.0f64; n];
        for (e, &(seg, _)) in elems.iter().enumerate() {
            let ue = [u[2 * e], u[2 * e + 1], u[2 * e + 2], u[2 * e + 3]];
            let k = &stiffness[e];
            let end_moment = |row: usize| (0..4).map(|c| k[row][c] * ue[c]).sum::<f64>().abs();
            let m = end_moment(1).max(end_moment(3));
            let (b, h) = (x[seg] * s, x[n + seg] * s);
            stress[seg] = stress[seg].max(6.0 * m / (b * h * h));
        }
        let deflection = (0..n_nodes).map(|v| u[2 * v]).collect();
        Ok(BeamResponse {
            volume,
            deflection,
            stress,
        })
    }
}

fn element_stiffness(ei: f64, l: f64) -> [[f64; 4]; 4] {
    let k = ei / l.powi(3);
    let (l2, l6, l12) = (l * l, 6.0 * l, 12.0);
    [
        [l12 * k, l6 * k, -l12 * k, l6 * k],
        [l6 * k, 4.0 * l2 * k, -l6 * k, 2.0 * l2 * k],
        [-l12 * k, -l6 * k, l12 * k, -l6 * k],
        [l6 * k, 2.0 * l2 * k, -l6 * k, 4.0 * l2 * k],
    ]
}

const REFINEMENT_SWEEPS: usize = 3;

/// Symmetric banded matrix stored as upper bands; solved by Cholesky.
struct BandMatrix {
    n: usize,
    bw: usize,
    /// `data[i][d]` holds entry `(i, i + d)`.
    data: Vec<Vec<f64>>,
    fixed: Vec<bool>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![vec![0.0; bw + 1]; n],
            fixed: vec![false; n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[i][j - i] += v;
    }

    fn fix(&mut self, d: usize) {
        self.fixed[d] = true;
    }

    fn factor(&mut self) -> Result<(), ProblemError> {
        let (n, bw) = (self.n, self.bw);
        for d in 0..n {
            if self.fixed[d] {
                for k in 1..=bw.min(d) {
                    self.data[d - k][k] = 0.0;
                }
                self.data[d].iter_mut().for_each(|v| *v = 0.0);
                self.data[d][0] = 1.0;
            }
        }
        // in-place banded Cholesky: A = U^T U
        for i in 0..n {
            let mut diag = self.data[i][0];
            for k in 1..=bw.min(i) {
                diag -= self.data[i - k][k].powi(2);
            }
            if !(diag.is_finite() && diag > 0.0) {
                return Err(ProblemError::Singular);
            }
            let diag = diag.sqrt();
            self.data[i][0] = diag;
            for d in 1..=bw.min(n - 1 - i) {
                let mut v = self.data[i][d];
                for k in 1..=bw.min(i) {
                    if k + d <= bw {
                        v -= self.data[i - k][k] * self.data[i - k][k + d];
                    }
                }
                self.data[i][d] = v / diag;
            }
        }
        Ok(())
    }

    fn substitute(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for (d, fixed) in self.fixed.iter().enumerate() {
            if *fixed {
                rhs[d] = 0.0;
            }
        }
        // U^T y = rhs
        for i in 0..n {
            let mut v = rhs[i];
            for k in 1..=bw.min(i) {
                v -= self.data[i - k][k] * rhs[i - k];
            }
            rhs[i] = v / self.data[i][0];
        }
        // U x = y
        for i in (0..n).rev() {
            let mut v = rhs[i];
            for d in 1..=bw.min(n - 1 - i) {
                v -= self.data[i][d] * rhs[i + d];
            }
            rhs[i] = v / self.data[i][0];
        }
    }
}

/// `f - K u` from the unassembled element matrices, accumulated with
/// error-free transformations.
fn residual(stiffness: &[[[f64; 4]; 4]], u: &[f64], f: &[f64]) -> Vec<f64> {
    let mut hi = f.to_vec();
    let mut lo = vec![0.0; f.len()];
    for (e, k) in stiffness.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for a in 0..4 {
            let d = 2 * e + a;
            for c in 0..4 {
                let p = -k[a][c] * u[2 * e + c];
                let p_err = (-k[a][c]).mul_add(u[2 * e + c], -p);
                let s = hi[d] + p;
                let bb = s - hi[d];
                let s_err = (hi[d] - (s - bb)) + (p - bb);
                hi[d] = s;
                lo[d] += s_err + p_err;
            }
        }
    }
    hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
}

impl Problem for SteppedBeam {
    fn name(&self) -> &str {
        &self.name
    }

    fn variables(&self) -> &[VariableSpec] {
        &self.vars
    }

    fn n_constraints(&self) -> usize {
        self.params.n_seg + 2
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, ProblemError> {
        let r = self.solve(x)?;
        let p = &self.params;
        let n = p.n_seg;
        let delta = r.max_deflection();
        let mut g = Vec::with_capacity(n + 2);
        for i in 0..n {
            let a = x[n + i] / x[i];
            g.push((p.aspect[0] - a).max(a - p.aspect[1]).max(0.0));
        }
        g.push(r.max_stress() / p.sigma_max - 1.0);
        g.push(delta / p.delta_max - 1.0);
        Ok(Evaluation {
            f: vec![r.volume, delta],
            g,
        })
    }

    fn hv_config(&self) -> HvConfig {
        self.hv.clone()
    }
}

/// Bi-objective problem whose Pareto set is `x_k = x_1` for every `k`.
#[derive(Debug, Clone)]
pub struct PlantedEquality {
    name: String,
    vars: Vec<VariableSpec>,
}

impl PlantedEquality {
    pub fn new(n_var: usize) -> Result<Self, ProblemError> {
        let name = format!("planted_eq_{n_var}");
        if n_var < 3 {
            return Err(ProblemError::Params {
                problem: name,
                message: "needs at least 3 variables".into(),
            });
        }
        let vars = (0..n_var)
            .map(|i| VariableSpec::new(i, 0.0, 1.0, format!("x{}", i + 1)))
            .collect();
        Ok(Self { name, vars })
    }
}

impl Problem for PlantedEquality {
    fn name(&self) -> &str {
        &self.name
    }

    fn variables(&self) -> &[VariableSpec] {
        &self.vars
    }

    fn n_constraints(&self) -> usize {
        0
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, ProblemError> {
        let n = self.vars.len();
        if x.len() != n {
            return Err(ProblemError::Dimension {
                expected: n,
                got: x.len(),
            });
        }
        let f1 = x[0];
        let spread: f64 = x[1..].iter().map(|v| (v - x[0]).powi(2)).sum();
        let g = 1.0 + 9.0 / (n - 1) as f64 * spread;
        let f2 = g * (1.0 - (f1 / g).sqrt());
        Ok(Evaluation {
            f: vec![f1, f2],
            g: Vec::new(),
        })
    }

    fn hv_config(&self) -> HvConfig {
        HvConfig::new([0.0, 0.0], [1.0, 1.0]).expect("unit anchors")
    }
}

pub type ProblemFactory =
    Arc<dyn Fn(&Value) -> Result<Arc<dyn Problem>, ProblemError> + Send + Sync>;

/// Problems by name. `planted_eq_<n>` is resolved for any `n`.
#[derive(Clone)]
pub struct ProblemRegistry {
    factories: BTreeMap<String, ProblemFactory>,
}

fn params_error(problem: &str, e: impl ToString) -> ProblemError {
    ProblemError::Params {
        problem: problem.to_string(),
        message: e.to_string(),
    }
}

fn beam_factory(n_seg: usize) -> ProblemFactory {
    Arc::new(move |params: &Value| {
        let name = format!("stepped_beam_{n_seg}");
        let mut base = serde_json::to_value(BeamParams::segments(n_seg)).expect("serializable");
        if let (Some(dst), Some(src)) = (base.as_object_mut(), params.as_object()) {
            for (k, v) in src {
                dst.insert(k.clone(), v.clone());
            }
        } else if !params.is_null() {
            return Err(params_error(&name, "params must be an object"));
        }
        let p: BeamParams = serde_json::from_value(base).map_err(|e| params_error(&name, e))?;
        if p.n_seg != n_seg {
            return Err(params_error(&name, "n_seg is fixed by the problem name"));
        }
        Ok(Arc::new(SteppedBeam::new(p)?) as Arc<dyn Problem>)
    })
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("stepped_beam_39", beam_factory(39));
        r.register("stepped_beam_59", beam_factory(59));
        r
    }
}

impl ProblemRegistry {
    pub fn register(&mut self, name: impl Into<String>, factory: ProblemFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.factories.keys().cloned().collect();
        v.push("planted_eq_<n>".into());
        v
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Arc<dyn Problem>, ProblemError> {
        if let Some(f) = self.factories.get(name) {
            return f(params);
        }
        if let Some(n) = name.strip_prefix("planted_eq_") {
            let n: usize = n
                .parse()
                .map_err(|_| ProblemError::Unknown(name.to_string()))?;
            if !(params.is_null() || params.as_object().is_some_and(|o| o.is_empty())) {
                return Err(params_error(name, "takes no parameters"));
            }
            return Ok(Arc::new(PlantedEquality::new(n)?));
        }
        Err(ProblemError::Unknown(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_beam(n_seg: usize, b: f64, h: f64) -> (SteppedBeam, Vec<f64>) {
        let beam = SteppedBeam::new(BeamParams::segments(n_seg)).unwrap();
        let mut x = vec![b; n_seg];
        x.extend(vec![h; n_seg]);
        (beam, x)
    }

    /// Midspan deflection by virtual work: the integral of M m / EI, with
    /// Simpson's rule exact on each piece where M m is quadratic.
    fn unit_load_deflection(p: &BeamParams, x: &[f64]) -> f64 {
        let (n, l, span, s) = (p.n_seg, p.segment_length, p.span(), p.unit_scale);
        let m = |z: f64| p.load * z.min(span - z) / 2.0;
        let mut total = 0.0;
        for i in 0..n {
            let ei = p.elastic_modulus * x[i] * s * (x[n + i] * s).powi(3) / 12.0;
            let (a, b) = (i as f64 * l, (i + 1) as f64 * l);
            let cuts = if a < span / 2.0 && span / 2.0 < b {
                vec![a, span / 2.0, b]
            } else {
                vec![a, b]
            };
            for w in cuts.windows(2) {
                let (u, v) = (w[0], w[1]);
                let c = 0.5 * (u + v);
                let mm = |z: f64| m(z) * m(z) / p.load;
                total += (v - u) / 6.0 * (mm(u) + 4.0 * mm(c) + mm(v)) / ei;
            }
        }
        total
    }

    #[test]
    fn extreme_section_contrast_stays_accurate() {
        let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
        let x: Vec<f64> = (0..78)
            .map(|k| if k % 3 == 0 { 0.1 } else { 40.0 })
            .collect();
        let mid = beam.solve(&x).unwrap().deflection[20];
        let rel = (mid / unit_load_deflection(beam.params(), &x) - 1.0).abs();
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn volume_sum() {
        let mut p = BeamParams::segments(5);
        p.segment_length = 1.0;
        p.unit_scale = 1.0;
        let beam = SteppedBeam::new(p).unwrap();
        let e = beam.evaluate(&[1.0; 10]).unwrap();
        assert!((e.f[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_counts() {
        for (n, c) in [(39, 41), (59, 61)] {
            let (beam, x) = uniform_beam(n, 20.0, 20.0);
            assert_eq!(beam.n_constraints(), c);
            assert_eq!(beam.variables().len(), 2 * n);
            assert_eq!(beam.evaluate(&x).unwrap().g.len(), c);
        }
    }

    #[test]
    fn uniform_beam_matches_closed_form() {
        for n in [8, 9, 39, 59] {
            let (beam, x) = uniform_beam(n, 20.0, 30.0);
            let p = beam.params();
            let (b, h) = (0.2, 0.3);
            let i = b * h * h * h / 12.0;
            let l = p.span();
            let r = beam.solve(&x).unwrap();
            let delta = p.load * l.powi(3) / (48.0 * p.elastic_modulus * i);
            assert!((r.max_deflection() / delta - 1.0).abs() < 1e-9, "n={n}");
            let sigma = p.load * l / 4.0 * (h / 2.0) / i;
            assert!((r.max_stress() / sigma - 1.0).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn aspect_fold() {
        let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
        let mut x = vec![10.0; 39];
        x.extend(vec![10.0; 39]);
        x[39] = 30.0; // h/b = 3
        x[40] = 4.0; // h/b = 0.4
        let g = beam.evaluate(&x).unwrap().g;
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!((g[1] - 0.1).abs() < 1e-12);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn wrong_length_is_an_error() {
        let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
        assert!(matches!(
            beam.evaluate(&[1.0; 3]),
            Err(ProblemError::Dimension { .. })
        ));
    }

    #[test]
    fn planted_examples() {
        let p = PlantedEquality::new(10).unwrap();
        let e = p.evaluate(&[0.3; 10]).unwrap();
        assert!((e.f[0] - 0.3).abs() < 1e-15);
        assert!((e.f[1] - (1.0 - 0.3f64.sqrt())).abs() < 1e-15);
        assert_eq!(p.evaluate(&[0.0; 10]).unwrap().f, vec![0.0, 1.0]);
        assert!(PlantedEquality::new(2).is_err());
    }

    #[test]
    fn registry_resolves_names() {
        let r = ProblemRegistry::default();
        assert_eq!(
            r.build("stepped_beam_59", &Value::Null)
                .unwrap()
                .variables()
                .len(),
            118
        );
        assert_eq!(
            r.build("planted_eq_7", &Value::Null)
                .unwrap()
                .variables()
                .len(),
            7
        );
        let beam = r
            .build(
                "stepped_beam_39",
                &serde_json::json!({"elastic_modulus": 200e9}),
            )
            .unwrap();
        assert_eq!(beam.name(), "stepped_beam_39");
        assert!(matches!(
            r.build("nope", &Value::Null),
            Err(ProblemError::Unknown(_))
        ));
        assert!(r
            .build("stepped_beam_39", &serde_json::json!({"typo": 1}))
            .is_err());
        assert!(r
            .build("stepped_beam_39", &serde_json::json!({"load": -1.0}))
            .is_err());
    }

    proptest! {
        #[test]
        fn volume_is_linear_in_widths(x in prop::collection::vec(1.0f64..20.0, 78)) {
            let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
            let v = beam.evaluate(&x).unwrap().f[0];
            let mut doubled = x.clone();
            doubled[..39].iter_mut().for_each(|b| *b *= 2.0);
            let v2 = beam.evaluate(&doubled).unwrap().f[0];
            prop_assert!((v2 / v - 2.0).abs() < 1e-12);
        }

        #[test]
        fn symmetric_layout_gives_symmetric_deflection(half in prop::collection::vec((5.0f64..40.0, 5.0f64..40.0), 20)) {
            let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
            let mut b: Vec<f64> = half.iter().map(|s| s.0).collect();
            let mut h: Vec<f64> = half.iter().map(|s| s.1).collect();
            for k in (0..19).rev() {
                b.push(b[k]);
                h.push(h[k]);
            }
            b.extend(h);
            let d = beam.solve(&b).unwrap().deflection;
            let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..d.len() {
                prop_assert!((d[k] - d[d.len() - 1 - k]).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn taller_sections_never_deflect_more(
            x in prop::collection::vec(5.0f64..40.0, 78),
            seg in 0usize..39,
            grow in 1.0f64..10.0,
        ) {
            let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
            let before = beam.solve(&x).unwrap();
            let mut y = x.clone();
            y[39 + seg] += grow;
            let after = beam.solve(&y).unwrap();
            let mid = before.deflection.len() / 2;
            prop_assert!(after.deflection[mid].abs() <= before.deflection[mid].abs() * (1.0 + 1e-10));
        }

        #[test]
        fn stepped_deflection_matches_virtual_work(x in prop::collection::vec(5.0f64..40.0, 78)) {
            let beam = SteppedBeam::new(BeamParams::segments(39)).unwrap();
            let r = beam.solve(&x).unwrap();
            let mid = r.deflection[r.deflection.len() / 2];
            prop_assert!((mid / unit_load_deflection(beam.params(), &x) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn off_diagonal_points_are_dominated(x in prop::collection::vec(0.0f64..1.0, 5)) {
            let p = PlantedEquality::new(5).unwrap();
            let mut proj = x.clone();
            proj[1..].iter_mut().for_each(|v| *v = x[0]);
            let a = p.evaluate(&x).unwrap().f;
            let b = p.evaluate(&proj).unwrap().f;
            prop_assert!(b[0] <= a[0] && b[1] <= a[1]);
            if x[1..].iter().any(|v| (v - x[0]).abs() > 1e-6) {
                prop_assert!(b[1] < a[1]);
            }
        }
    }
}
