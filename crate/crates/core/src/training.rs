//! Residual losses and the ADAM → L-BFGS training pipeline.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Mutex;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{PincError, Result};
use crate::net::{eval_batch, forward_batch, objective_gradient, Jet, NetworkArchitecture, NetworkModel};
use crate::physics::{LocalFields, Physics, Regime};
use crate::sampling::{build_training_sets, SampleBatch, SampleSizes, TrainingSets};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pde: 1.0, bc: 1.0, ic: 1.0, data: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { epochs: 0, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 50, max_iters: 20000, grad_tol: 1e-9, c1: 1e-4, c2: 0.9, max_line_evals: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_f: usize,
    pub n_b: usize,
    #[serde(default)]
    pub n_i: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    #[serde(default)]
    pub weights: LossWeights,
    pub weight_seed: u64,
    pub sampling_seed: u64,
    pub validation_seed: u64,
    /// Validation losses are recorded every this many epochs and at the end.
    pub validation_every: usize,
}

impl TrainingConfig {
    pub fn new(n_f: usize, n_b: usize, n_i: usize, adam_epochs: usize) -> Self {
        Self {
            n_f,
            n_b,
            n_i,
            adam: AdamConfig { epochs: adam_epochs, ..AdamConfig::default() },
            lbfgs: LbfgsConfig::default(),
            weights: LossWeights::default(),
            weight_seed: 0,
            sampling_seed: 0,
            validation_seed: 0x5eed_0000_0000_0001,
            validation_every: 10,
        }
        .with_seed(0)
    }

    pub fn table1_steady() -> Self {
        Self::new(1000, 200, 0, 200)
    }

    pub fn table1_transient() -> Self {
        Self::new(10000, 2000, 1000, 300)
    }

    pub fn table2_steady() -> Self {
        Self::new(8723, 434, 0, 1095)
    }

    pub fn table2_transient() -> Self {
        Self::new(4608, 1449, 1213, 699)
    }

    /// Use one seed for weights and sampling, and a derived one for validation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.weight_seed = seed;
        self.sampling_seed = seed;
        self.validation_seed = seed ^ 0x5eed_0000_0000_0001;
        self
    }

    pub fn sizes(&self) -> SampleSizes {
        SampleSizes { n_f: self.n_f, n_b: self.n_b, n_i: self.n_i }
    }

    pub fn validate(&self, regime: Regime) -> Result<()> {
        let bad = |m: &str| Err(PincError::InvalidParameter(m.to_string()));
        if self.n_f == 0 || self.n_b < 2 {
            return bad("n_f must be positive and n_b at least 2");
        }
        if regime == Regime::Transient && self.n_i == 0 {
            return bad("transient training needs n_i > 0");
        }
        if !(self.adam.learning_rate > 0.0) || self.lbfgs.memory == 0 {
            return bad("learning_rate must be positive and memory at least 1");
        }
        let w = self.weights;
        if [w.pde, w.bc, w.ic, w.data].iter().any(|&x| !(x >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if self.validation_every == 0 {
            return bad("validation_every must be at least 1");
        }
        Ok(())
    }
}

/// Mean squared residuals per term (not yet halved or weighted).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub mass: f64,
    pub momentum: f64,
    pub bc_up: f64,
    pub bc_down: f64,
    pub ic_p: f64,
    pub ic_v: f64,
}

impl LossTerms {
    pub fn pde(&self) -> f64 {
        0.5 * (self.mass + self.momentum)
    }

    pub fn bc(&self) -> f64 {
        0.5 * (self.bc_up + self.bc_down)
    }

    pub fn ic(&self) -> f64 {
        0.5 * (self.ic_p + self.ic_v)
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        w.pde * self.pde() + w.bc * self.bc() + w.ic * self.ic()
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("mass", self.mass),
            ("momentum", self.momentum),
            ("bc_up", self.bc_up),
            ("bc_down", self.bc_down),
            ("ic", self.ic()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train: LossTerms,
    pub train_total: f64,
    pub validation: Option<(LossTerms, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub records: Vec<EpochRecord>,
}

impl LossReport {
    pub fn final_validation(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.validation.map(|v| v.1))
    }

    pub fn final_validation_terms(&self) -> Option<LossTerms> {
        self.records.iter().rev().find_map(|r| r.validation.map(|v| v.0))
    }

    pub fn final_train(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_total)
    }

    /// Long-format CSV: `epoch,term,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,term,value\n");
        for r in &self.records {
            let mut rows = |prefix: &str, t: &LossTerms, total: f64| {
                for (name, v) in t.named() {
                    let _ = writeln!(out, "{},{prefix}_{name},{v:.16e}", r.epoch);
                }
                let _ = writeln!(out, "{},{prefix}_total,{total:.16e}", r.epoch);
            };
            rows("train", &r.train, r.train_total);
            if let Some((t, total)) = &r.validation {
                rows("val", t, *total);
            }
        }
        out
    }
}

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Called once per optimizer iteration with the iterate the loss was taken at.
    fn accept(&mut self, _iteration: usize, _x: &[f64], _f: f64) -> Result<()> {
        Ok(())
    }
}

/// Plain ADAM with bias correction on full-batch gradients.
pub fn adam_run<O: Objective>(obj: &mut O, x0: &[f64], cfg: &AdamConfig) -> Result<Vec<f64>> {
    adam_run_from(obj, x0, cfg, 0)
}

fn adam_run_from<O: Objective>(obj: &mut O, x0: &[f64], cfg: &AdamConfig, first_epoch: usize) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    for t in 1..=cfg.epochs {
        let (f, g) = obj.value_grad(&x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(PincError::NonFiniteLoss { iteration: t, detail: format!("ADAM loss {f}") });
        }
        obj.accept(first_epoch + t, &x, f)?;
        let b1 = 1.0 - cfg.beta1.powi(t as i32);
        let b2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..x.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= cfg.learning_rate * (m[i] / b1) / ((v[i] / b2).sqrt() + cfg.eps);
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

enum Search {
    Found(Trial),
    Failed(Option<Trial>),
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

/// Strong-Wolfe line search with bracketing and cubic zoom.
fn strong_wolfe<O: Objective>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Result<Search> {
    let mut evals = 0;
    let mut best: Option<Trial> = None;
    let probe = |obj: &mut O, alpha: f64, evals: &mut usize| -> Result<Trial> {
        *evals += 1;
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = obj.value_grad(&xt)?;
        let f = if f.is_finite() && g.iter().all(|v| v.is_finite()) { f } else { f64::INFINITY };
        let slope = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        Ok(Trial { alpha, f, g, slope })
    };
    let keep_best = |best: &mut Option<Trial>, t: &Trial| {
        if t.f < f0 && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial { alpha: t.alpha, f: t.f, g: t.g.clone(), slope: t.slope });
        }
    };
    let armijo = |t: &Trial| t.f <= f0 + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * slope0;

    let mut prev = Trial { alpha: 0.0, f: f0, g: Vec::new(), slope: slope0 };
    let mut alpha = alpha0;
    let (mut lo, mut hi);
    loop {
        let t = probe(obj, alpha, &mut evals)?;
        keep_best(&mut best, &t);
        if !armijo(&t) || (prev.alpha > 0.0 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return Ok(Search::Found(t));
        }
        if t.slope >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if evals >= cfg.max_line_evals {
            return Ok(Search::Failed(best));
        }
        alpha = t.alpha * 2.0;
        prev = t;
    }
    while evals < cfg.max_line_evals {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width <= 1e-16 * a.abs().max(b.abs()) {
            break;
        }
        let mut trial = if hi.f.is_finite() && hi.slope.is_finite() {
            cubic_min(a, lo.f, lo.slope, b, hi.f, hi.slope)
        } else {
            f64::NAN
        };
        let (left, right) = (a.min(b) + 0.1 * width, a.max(b) - 0.1 * width);
        if !trial.is_finite() || trial < left || trial > right {
            trial = 0.5 * (a + b);
        }
        let t = probe(obj, trial, &mut evals)?;
        keep_best(&mut best, &t);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(Search::Found(t));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Ok(Search::Failed(best))
}

/// Limited-memory BFGS with a strong-Wolfe line search.
pub fn lbfgs_run<O: Objective>(obj: &mut O, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsOutcome> {
    lbfgs_run_from(obj, x0, cfg, 0)
}

fn lbfgs_run_from<O: Objective>(obj: &mut O, x0: &[f64], cfg: &LbfgsConfig, first_iter: usize) -> Result<LbfgsOutcome> {
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.value_grad(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(PincError::NonFiniteLoss { iteration: 0, detail: format!("L-BFGS start loss {f}") });
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let done = |x: Vec<f64>, f: f64, iterations: usize, status: LbfgsStatus| Ok(LbfgsOutcome { x, f, iterations, status });
    loop {
        if inf_norm(&g) <= cfg.grad_tol {
            return done(x, f, iterations, LbfgsStatus::Converged);
        }
        if iterations >= cfg.max_iters {
            return done(x, f, iterations, LbfgsStatus::MaxIters);
        }
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d = q;
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if hist.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        let trial = match strong_wolfe(obj, &x, f, &d, slope, alpha0, cfg)? {
            Search::Found(t) => t,
            Search::Failed(Some(t)) => {
                hist.clear();
                t
            }
            Search::Failed(None) => return done(x, f, iterations, LbfgsStatus::LineSearchFailed),
        };
        let s: Vec<f64> = d.iter().map(|v| trial.alpha * v).collect();
        let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        f = trial.f;
        g = trial.g;
        iterations += 1;
        obj.accept(first_iter + iterations, &x, f)?;
    }
}

/// One training regime: sample sets, targets and weights, ready to evaluate.
pub struct TrainingProblem {
    pub physics: Physics,
    pub regime: Regime,
    pub arch: NetworkArchitecture,
    pub weights: LossWeights,
    pub sets: TrainingSets,
    /// Frozen steady-state outputs at the initial-condition points.
    pub ic_targets: Option<Array2<f64>>,
}

#[derive(Clone, Copy)]
enum Term {
    Pde,
    BcUp,
    BcDown,
    Ic,
}

impl TrainingProblem {
    pub fn new(
        physics: Physics,
        arch: NetworkArchitecture,
        weights: LossWeights,
        sets: TrainingSets,
        frozen_steady: Option<&NetworkModel>,
    ) -> Result<Self> {
        arch.validate()?;
        let regime = if arch.is_transient() { Regime::Transient } else { Regime::Steady };
        if sets.pde.points.ncols() != arch.input_dim {
            return Err(PincError::DimensionMismatch { expected: arch.input_dim, got: sets.pde.points.ncols() });
        }
        let ic_targets = match (regime, &sets.ic, frozen_steady) {
            (Regime::Steady, _, _) => None,
            (Regime::Transient, Some(ic), Some(ss)) => Some(steady_targets(ss, ic)?),
            _ => {
                return Err(PincError::InvalidParameter(
                    "transient training needs initial-condition points and a steady-state model".into(),
                ))
            }
        };
        Ok(Self { physics, regime, arch, weights, sets, ic_targets })
    }

    fn pde_dirs(&self) -> Vec<usize> {
        match self.regime {
            Regime::Steady => vec![0],
            Regime::Transient => vec![0, 1],
        }
    }

    /// Per-chunk weighted loss, adjoint and raw squared-residual sums.
    fn pointwise(&self, term: Term, n: usize, start: usize, jet: &Jet) -> (f64, Jet, [f64; 2]) {
        let m = jet.len();
        let mut adj = Jet::zeros(m, jet.ndirs());
        let mut sums = [0.0; 2];
        let w = &self.weights;
        let ph = &self.physics;
        let inv = 1.0 / n as f64;
        match term {
            Term::Pde => {
                let scale = w.pde * 0.5 * inv;
                let transient = self.regime == Regime::Transient;
                for i in 0..m {
                    let var = |v, k| Dual::<6>::variable(v, k);
                    let f = LocalFields {
                        p: var(jet.value(i, 0), 0),
                        v: var(jet.value(i, 1), 1),
                        p_x: var(jet.tangent(0, i, 0), 2),
                        v_x: var(jet.tangent(0, i, 1), 3),
                        p_t: if transient { var(jet.tangent(1, i, 0), 4) } else { Dual::constant(0.0) },
                        v_t: if transient { var(jet.tangent(1, i, 1), 5) } else { Dual::constant(0.0) },
                    };
                    let r = ph.pde_residual(self.regime, &f);
                    sums[0] += r[0].v * r[0].v;
                    sums[1] += r[1].v * r[1].v;
                    let da = |k: usize| 2.0 * scale * (r[0].v * r[0].d[k] + r[1].v * r[1].d[k]);
                    *adj.value_mut(i, 0) = da(0);
                    *adj.value_mut(i, 1) = da(1);
                    *adj.tangent_mut(0, i, 0) = da(2);
                    *adj.tangent_mut(0, i, 1) = da(3);
                    if transient {
                        *adj.tangent_mut(1, i, 0) = da(4);
                        *adj.tangent_mut(1, i, 1) = da(5);
                    }
                }
                (scale * (sums[0] + sums[1]), adj, sums)
            }
            Term::BcUp => {
                let scale = w.bc * 0.5 * inv;
                for i in 0..m {
                    let r = ph.bc_upstream(Dual::<2>::variable(jet.value(i, 0), 0), Dual::variable(jet.value(i, 1), 1));
                    sums[0] += r.v * r.v;
                    *adj.value_mut(i, 0) = 2.0 * scale * r.v * r.d[0];
                    *adj.value_mut(i, 1) = 2.0 * scale * r.v * r.d[1];
                }
                (scale * sums[0], adj, sums)
            }
            Term::BcDown => {
                let scale = w.bc * 0.5 * inv;
                let pts = &self.sets.bc_down.points;
                let uc = pts.ncols() - 1;
                for i in 0..m {
                    let r = ph.bc_downstream(jet.value(i, 0), pts[[start + i, uc]]);
                    sums[0] += r * r;
                    *adj.value_mut(i, 0) = 2.0 * scale * r;
                }
                (scale * sums[0], adj, sums)
            }
            Term::Ic => {
                let scale = w.ic * 0.5 * inv;
                let tgt = self.ic_targets.as_ref().expect("initial-condition targets");
                for i in 0..m {
                    for o in 0..2 {
                        let r = jet.value(i, o) - tgt[[start + i, o]];
                        sums[o] += r * r;
                        *adj.value_mut(i, o) = 2.0 * scale * r;
                    }
                }
                (scale * (sums[0] + sums[1]), adj, sums)
            }
        }
    }

    fn batches(&self) -> Vec<(Term, &SampleBatch, Vec<usize>)> {
        let mut v = vec![
            (Term::Pde, &self.sets.pde, self.pde_dirs()),
            (Term::BcUp, &self.sets.bc_up, vec![]),
            (Term::BcDown, &self.sets.bc_down, vec![]),
        ];
        if let Some(ic) = &self.sets.ic {
            v.push((Term::Ic, ic, vec![]));
        }
        v
    }

    fn record(terms: &mut LossTerms, term: Term, n: usize, sums: [f64; 2]) {
        let n = n as f64;
        match term {
            Term::Pde => {
                terms.mass = sums[0] / n;
                terms.momentum = sums[1] / n;
            }
            Term::BcUp => terms.bc_up = sums[0] / n,
            Term::BcDown => terms.bc_down = sums[0] / n,
            Term::Ic => {
                terms.ic_p = sums[0] / n;
                terms.ic_v = sums[1] / n;
            }
        }
    }

    /// Loss terms without the gradient.
    pub fn loss_terms(&self, params: &[f64]) -> Result<LossTerms> {
        let mut terms = LossTerms::default();
        for (term, batch, dirs) in self.batches() {
            let jet = eval_batch(&self.arch, params, batch.points.view(), &dirs)?;
            let (_, _, sums) = self.pointwise(term, batch.len(), 0, &jet);
            Self::record(&mut terms, term, batch.len(), sums);
        }
        Ok(terms)
    }

    /// Weighted total, per-term breakdown and exact parameter gradient.
    pub fn loss_and_gradient(&self, params: &[f64]) -> Result<(f64, LossTerms, Vec<f64>)> {
        let mut terms = LossTerms::default();
        let mut total = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (term, batch, dirs) in self.batches() {
            let n = batch.len();
            let parts = Mutex::new(Vec::new());
            let (value, g) = objective_gradient(&self.arch, params, batch.points.view(), &dirs, |start, jet| {
                let (v, adj, sums) = self.pointwise(term, n, start, jet);
                parts.lock().unwrap().push((start, sums));
                (v, adj)
            })?;
            let mut parts = parts.into_inner().unwrap();
            parts.sort_by_key(|p| p.0);
            let sums = parts.iter().fold([0.0; 2], |acc, p| [acc[0] + p.1[0], acc[1] + p.1[1]]);
            Self::record(&mut terms, term, n, sums);
            total += value;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total, terms, grad))
    }
}

fn steady_targets(ss: &NetworkModel, ic: &SampleBatch) -> Result<Array2<f64>> {
    if ss.arch.input_dim != 2 {
        return Err(PincError::InvalidParameter("frozen model must be a steady-state network".into()));
    }
    let mut x = Array2::zeros((ic.len(), 2));
    x.column_mut(0).assign(&ic.points.column(0));
    x.column_mut(1).assign(&ic.points.column(2));
    forward_batch(&ss.arch, &ss.params, x.view())
}

/// The training problem as an optimizer objective, logging each iteration.
struct Monitored<'a> {
    train: &'a TrainingProblem,
    validation: &'a TrainingProblem,
    every: usize,
    phase: Phase,
    report: LossReport,
    recent: VecDeque<(Vec<f64>, LossTerms)>,
}

impl Monitored<'_> {
    fn validation_at(&self, x: &[f64]) -> Result<(LossTerms, f64)> {
        let t = self.validation.loss_terms(x)?;
        Ok((t, t.total(&self.validation.weights)))
    }

    fn finish(&mut self, x: &[f64], epoch: usize) -> Result<()> {
        let v = self.validation_at(x)?;
        let train = self.train.loss_terms(x)?;
        let total = train.total(&self.train.weights);
        match self.report.records.last_mut() {
            Some(r) if r.epoch == epoch => {
                r.train = train;
                r.train_total = total;
                r.validation = Some(v);
            }
            _ => self.report.records.push(EpochRecord {
                epoch,
                phase: self.phase,
                train,
                train_total: total,
                validation: Some(v),
            }),
        }
        Ok(())
    }
}

impl Objective for Monitored<'_> {
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, terms, g) = self.train.loss_and_gradient(x)?;
        if self.recent.len() == 8 {
            self.recent.pop_front();
        }
        self.recent.push_back((x.to_vec(), terms));
        Ok((f, g))
    }

    fn accept(&mut self, epoch: usize, x: &[f64], f: f64) -> Result<()> {
        let train = match self.recent.iter().rev().find(|(p, _)| p.as_slice() == x) {
            Some((_, t)) => *t,
            None => self.train.loss_terms(x)?,
        };
        let validation = if epoch % self.every == 0 { Some(self.validation_at(x)?) } else { None };
        self.report.records.push(EpochRecord { epoch, phase: self.phase, train, train_total: f, validation });
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: NetworkModel,
    pub report: LossReport,
    pub lbfgs: Option<LbfgsStatus>,
}

fn train(physics: &Physics, arch: &NetworkArchitecture, cfg: &TrainingConfig, frozen: Option<&NetworkModel>) -> Result<TrainedModel> {
    let regime = if arch.is_transient() { Regime::Transient } else { Regime::Steady };
    cfg.validate(regime)?;
    let sizes = cfg.sizes();
    let train_p = TrainingProblem::new(
        physics.clone(),
        arch.clone(),
        cfg.weights,
        build_training_sets(regime, sizes, cfg.sampling_seed),
        frozen,
    )?;
    let val_p = TrainingProblem::new(
        physics.clone(),
        arch.clone(),
        cfg.weights,
        build_training_sets(regime, sizes, cfg.validation_seed),
        frozen,
    )?;
    let mut model = NetworkModel::init(arch.clone(), physics.norm, cfg.weight_seed)?;
    let mut mon = Monitored {
        train: &train_p,
        validation: &val_p,
        every: cfg.validation_every,
        phase: Phase::Adam,
        report: LossReport::default(),
        recent: VecDeque::new(),
    };
    let x = adam_run_from(&mut mon, &model.params, &cfg.adam, 0)?;
    mon.phase = Phase::Lbfgs;
    let (x, status) = if cfg.lbfgs.max_iters > 0 {
        let out = lbfgs_run_from(&mut mon, &x, &cfg.lbfgs, cfg.adam.epochs)?;
        (out.x, Some(out.status))
    } else {
        (x, None)
    };
    let last = mon.report.records.last().map_or(0, |r| r.epoch);
    mon.finish(&x, last)?;
    model.params = x;
    Ok(TrainedModel { model, report: mon.report, lbfgs: status })
}

/// Two-stage optimization of a steady-state network (inputs x̃, ũ).
pub fn train_steady(physics: &Physics, arch: &NetworkArchitecture, cfg: &TrainingConfig) -> Result<TrainedModel> {
    if arch.input_dim != 2 {
        return Err(PincError::InvalidArchitecture("steady-state network needs input_dim 2".into()));
    }
    train(physics, arch, cfg, None)
}

/// Two-stage optimization of a transient network with IC targets from `frozen_ss`.
pub fn train_transient(
    physics: &Physics,
    arch: &NetworkArchitecture,
    cfg: &TrainingConfig,
    frozen_ss: &NetworkModel,
) -> Result<TrainedModel> {
    if arch.input_dim != 4 {
        return Err(PincError::InvalidArchitecture("transient network needs input_dim 4".into()));
    }
    if frozen_ss.norm != physics.norm {
        return Err(PincError::InvalidParameter("steady-state model uses a different normalization".into()));
    }
    train(physics, arch, cfg, Some(frozen_ss))
}

/// Run `train_one` for each seed and keep the lowest final validation loss.
pub fn best_of_seeds<F>(seeds: &[u64], mut train_one: F) -> Result<(u64, TrainedModel)>
where
    F: FnMut(u64) -> Result<TrainedModel>,
{
    let mut best: Option<(u64, TrainedModel, f64)> = None;
    for &seed in seeds {
        let t = train_one(seed)?;
        let v = t.report.final_validation().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| v < b.2) {
            best = Some((seed, t, v));
        }
    }
    best.map(|(s, t, _)| (s, t)).ok_or_else(|| PincError::InvalidParameter("no seeds given".into()))
}

/// Mean squared IC mismatch between a transient and a steady network on `points`
/// (columns x̃, ũ₀, ũ).
pub fn ic_mismatch(transient: &NetworkModel, steady: &NetworkModel, points: &Array2<f64>) -> Result<f64> {
    let n = points.nrows();
    let mut tr = Array2::zeros((n, 4));
    tr.column_mut(0).assign(&points.column(0));
    tr.column_mut(2).assign(&points.column(1));
    tr.column_mut(3).assign(&points.column(2));
    let a = transient.forward_batch(tr.view())?;
    let b = steady.forward_batch(points.slice(s![.., 0..2]))?;
    Ok((&a - &b).mapv(|v| v * v).sum() / (2 * n) as f64)
}
