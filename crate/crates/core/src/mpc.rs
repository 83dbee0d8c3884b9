//! Constrained finite-horizon control with a learned or simulated predictor.
//!
//! Decision variables are ũ₁..ũ_{N_c}; later moves repeat ũ_{N_c}. The
//! horizon problem is solved by an augmented Lagrangian over the inequality
//! constraints with projected BFGS inner solves on the box [0,1]. Several
//! starting points are tried (holding ũ₀ and the best points of a coarse grid)
//! and the best feasible result wins.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PincError, Result};
use crate::net::NetworkModel;
use crate::plant::Plant;

/// Rate limit of 4 bar/min expressed per sample in units of `p_ref`.
pub fn rate_limit(ts: f64, p_ref: f64) -> f64 {
    4e5 * (ts / 60.0) / p_ref
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub n_p: usize,
    pub n_c: usize,
    /// Sampling time, s.
    pub ts: f64,
    /// Move penalty λ.
    pub lambda: f64,
    /// Output rate bound per sample (normalized); none disables it.
    pub dy_max: Option<f64>,
    /// Control rate bound per sample; none disables it.
    pub du_max: Option<f64>,
    pub y_target: f64,
    pub y_min: Option<f64>,
    /// Normalized position of the controlled pressure.
    pub probe_x: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl MpcConfig {
    /// N_p = 10, N_c = 2, T_s = 1 s, PDG at x̃ = 0.1.
    pub fn table1() -> Self {
        let ts = 1.0;
        Self {
            n_p: 10,
            n_c: 2,
            ts,
            lambda: 1e-2,
            dy_max: Some(rate_limit(ts, 1e5)),
            du_max: None,
            y_target: 0.0,
            y_min: None,
            probe_x: 0.1,
            tol: 1e-6,
            max_outer: 30,
            max_inner: 200,
        }
    }

    /// N_p = 10, N_c = 2, T_s = 10 s, PDG at x̃ = 0.075, control moves rate-limited too.
    pub fn table2() -> Self {
        let ts = 10.0;
        let dy = rate_limit(ts, 5e6);
        Self { ts, dy_max: Some(dy), du_max: Some(dy), probe_x: 0.075, ..Self::table1() }
    }

    pub fn validate(&self, t_ref: f64) -> Result<()> {
        let bad = |m: &str| Err(PincError::InvalidParameter(m.into()));
        if self.n_c < 1 || self.n_c > self.n_p {
            return bad("need 1 <= n_c <= n_p");
        }
        let ts = self.ts / t_ref;
        if !(ts > 0.0 && ts <= 1.0) {
            return bad("sampling time must lie in (0, t_ref]");
        }
        if self.dy_max.is_some_and(|d| !(d >= 0.0)) || self.du_max.is_some_and(|d| !(d >= 0.0)) {
            return bad("rate bounds must be non-negative");
        }
        if !(self.lambda >= 0.0) || !(self.tol > 0.0) || !(0.0..=1.0).contains(&self.probe_x) {
            return bad("lambda, tol or probe_x out of range");
        }
        Ok(())
    }

    fn index(&self, i: usize) -> usize {
        i.min(self.n_c) - 1
    }
}

/// Output predictions over a horizon, in units of `p_ref`.
pub trait HorizonModel {
    /// ŷᵢ after applying `controls[i−1]` for one sample, starting from control `u0`.
    fn predict(&self, u0: f64, controls: &[f64]) -> Result<Vec<f64>>;

    /// Predictions and ∂ŷᵢ/∂controlsₘ (row i, column m).
    fn predict_with_jacobian(&self, u0: f64, controls: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
        let y = self.predict(u0, controls)?;
        let n = controls.len();
        let mut jac = Array2::zeros((y.len(), n));
        for m in 0..n {
            let h = 1e-6;
            let (lo, hi) = ((controls[m] - h).max(0.0), (controls[m] + h).min(1.0));
            let mut a = controls.to_vec();
            let mut b = controls.to_vec();
            a[m] = lo;
            b[m] = hi;
            let (ya, yb) = (self.predict(u0, &a)?, self.predict(u0, &b)?);
            for i in 0..y.len() {
                jac[[i, m]] = (yb[i] - ya[i]) / (hi - lo);
            }
        }
        Ok((y, jac))
    }

    /// Called with the plant before every solve.
    fn observe(&mut self, _plant: &Plant) {}
}

/// ŷᵢ = f(x̄, T̃_s, ũᵢ₋₁, ũᵢ) from a transient network.
#[derive(Clone, Debug)]
pub struct PincPredictor {
    pub model: NetworkModel,
    pub probe_x: f64,
    pub ts_tilde: f64,
}

impl PincPredictor {
    pub fn new(model: NetworkModel, cfg: &MpcConfig) -> Result<Self> {
        if model.arch.input_dim != 4 {
            return Err(PincError::InvalidArchitecture("the predictor needs a transient network".into()));
        }
        let ts_tilde = cfg.ts / model.norm.t_ref;
        Ok(Self { model, probe_x: cfg.probe_x, ts_tilde })
    }

    fn inputs(&self, u0: f64, controls: &[f64]) -> Array2<f64> {
        let mut x = Array2::zeros((controls.len(), 4));
        let mut prev = u0;
        for (i, &u) in controls.iter().enumerate() {
            x[[i, 0]] = self.probe_x;
            x[[i, 1]] = self.ts_tilde;
            x[[i, 2]] = prev;
            x[[i, 3]] = u;
            prev = u;
        }
        x
    }
}

impl HorizonModel for PincPredictor {
    fn predict(&self, u0: f64, controls: &[f64]) -> Result<Vec<f64>> {
        let out = self.model.forward_batch(self.inputs(u0, controls).view())?;
        Ok(out.column(0).to_vec())
    }

    fn predict_with_jacobian(&self, u0: f64, controls: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
        let jet = self.model.eval_batch(self.inputs(u0, controls).view(), &[2, 3])?;
        let n = controls.len();
        let mut jac = Array2::zeros((n, n));
        let y = (0..n).map(|i| jet.value(i, 0)).collect();
        for i in 0..n {
            jac[[i, i]] = jet.tangent(1, i, 0);
            if i > 0 {
                jac[[i, i - 1]] = jet.tangent(0, i, 0);
            }
        }
        Ok((y, jac))
    }
}

/// Predicts by simulating a copy of the plant from its current state.
#[derive(Clone, Debug)]
pub struct PlantPredictor {
    plant: Plant,
    pub probe_x: f64,
    pub ts: f64,
}

impl PlantPredictor {
    pub fn new(plant: &Plant, cfg: &MpcConfig) -> Self {
        Self { plant: plant.clone(), probe_x: cfg.probe_x, ts: cfg.ts }
    }
}

impl HorizonModel for PlantPredictor {
    fn predict(&self, _u0: f64, controls: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.plant.clone();
        let p_ref = p.physics.norm.p_ref;
        controls
            .iter()
            .map(|&u| {
                p.advance(u, self.ts)?;
                Ok(p.probe(self.probe_x).p / p_ref)
            })
            .collect()
    }

    fn observe(&mut self, plant: &Plant) {
        self.plant.state = plant.state.clone();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    /// The solve failed outright and the previous control was held.
    Held,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Held => "held",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    pub controls: Vec<f64>,
    /// Model predictions ŷ₁..ŷ_{N_p} without the bias.
    pub predictions: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub projected_gradient: f64,
    pub status: SolveStatus,
    /// Exact-penalty merit after each accepted outer iteration of the winning start.
    pub merit_history: Vec<f64>,
}

struct Horizon<'a> {
    model: &'a dyn HorizonModel,
    cfg: &'a MpcConfig,
    u0: f64,
    y0: f64,
    bias: f64,
}

struct Eval {
    y: Vec<f64>,
    objective: f64,
    grad: Vec<f64>,
    cons: Vec<f64>,
    cons_grad: Vec<Vec<f64>>,
}

impl Horizon<'_> {
    fn expand(&self, z: &[f64]) -> Vec<f64> {
        (1..=self.cfg.n_p).map(|i| z[self.cfg.index(i)]).collect()
    }

    fn eval(&self, z: &[f64]) -> Result<Eval> {
        let cfg = self.cfg;
        let nc = cfg.n_c;
        let controls = self.expand(z);
        let (y, jf) = self.model.predict_with_jacobian(self.u0, &controls)?;
        if y.len() != cfg.n_p || y.iter().any(|v| !v.is_finite()) {
            return Err(PincError::SolverFailure("predictor returned invalid outputs".into()));
        }
        let mut jy = vec![vec![0.0; nc]; cfg.n_p];
        for (i, row) in jy.iter_mut().enumerate() {
            for m in 0..cfg.n_p {
                row[cfg.index(m + 1)] += jf[[i, m]];
            }
        }
        let mut objective = 0.0;
        let mut grad = vec![0.0; nc];
        for i in 0..cfg.n_p {
            let e = y[i] + self.bias - cfg.y_target;
            objective += e * e;
            for k in 0..nc {
                grad[k] += 2.0 * e * jy[i][k];
            }
        }
        let mut prev = self.u0;
        for k in 0..nc {
            let d = z[k] - prev;
            objective += cfg.lambda * d * d;
            grad[k] += 2.0 * cfg.lambda * d;
            if k > 0 {
                grad[k - 1] -= 2.0 * cfg.lambda * d;
            }
            prev = z[k];
        }
        let mut cons = Vec::new();
        let mut cons_grad = Vec::new();
        let mut push_pair = |value: f64, g: Vec<f64>, bound: f64| {
            cons.push(value - bound);
            cons_grad.push(g.clone());
            cons.push(-value - bound);
            cons_grad.push(g.iter().map(|v| -v).collect());
        };
        if let Some(dy) = cfg.dy_max {
            push_pair(y[0] + self.bias - self.y0, jy[0].clone(), dy);
            for i in 1..cfg.n_p {
                let g = (0..nc).map(|k| jy[i][k] - jy[i - 1][k]).collect();
                push_pair(y[i] - y[i - 1], g, dy);
            }
        }
        if let Some(du) = cfg.du_max {
            for k in 0..nc {
                let mut g = vec![0.0; nc];
                g[k] = 1.0;
                let prev = if k == 0 { self.u0 } else { z[k - 1] };
                if k > 0 {
                    g[k - 1] = -1.0;
                }
                push_pair(z[k] - prev, g, du);
            }
        }
        if let Some(ymin) = cfg.y_min {
            for i in 0..cfg.n_p {
                cons.push(ymin - y[i] - self.bias);
                cons_grad.push(jy[i].iter().map(|v| -v).collect());
            }
        }
        Ok(Eval { y, objective, grad, cons, cons_grad })
    }
}

fn violation(cons: &[f64]) -> f64 {
    cons.iter().fold(0.0_f64, |m, &c| m.max(c))
}

fn projected_gradient(z: &[f64], g: &[f64]) -> f64 {
    z.iter().zip(g).map(|(&zi, &gi)| ((zi - gi).clamp(0.0, 1.0) - zi).abs()).fold(0.0, f64::max)
}

/// Augmented Lagrangian value and gradient for multipliers μ and penalty ρ.
fn al_value(e: &Eval, mu: &[f64], rho: f64) -> (f64, Vec<f64>) {
    let mut v = e.objective;
    let mut g = e.grad.clone();
    for (j, &c) in e.cons.iter().enumerate() {
        let s = (mu[j] + rho * c).max(0.0);
        v += (s * s - mu[j] * mu[j]) / (2.0 * rho);
        for (gk, dk) in g.iter_mut().zip(&e.cons_grad[j]) {
            *gk += s * dk;
        }
    }
    (v, g)
}

fn inner_solve(h: &Horizon<'_>, z0: &[f64], mu: &[f64], rho: f64, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = z0.len();
    let mut z = z0.to_vec();
    let (mut f, mut g) = al_value(&h.eval(&z)?, mu, rho);
    let mut hinv = vec![vec![0.0; n]; n];
    for (k, row) in hinv.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    for _ in 0..max_iters {
        if projected_gradient(&z, &g) <= tol {
            break;
        }
        let free: Vec<bool> = (0..n).map(|k| !((z[k] <= 0.0 && g[k] > 0.0) || (z[k] >= 1.0 && g[k] < 0.0))).collect();
        let mut d: Vec<f64> = (0..n)
            .map(|a| if free[a] { -(0..n).filter(|&b| free[b]).map(|b| hinv[a][b] * g[b]).sum::<f64>() } else { 0.0 })
            .collect();
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            d = (0..n).map(|k| if free[k] { -g[k] } else { 0.0 }).collect();
            for (k, row) in hinv.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[k] = 1.0;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let zt: Vec<f64> = (0..n).map(|k| (z[k] + alpha * d[k]).clamp(0.0, 1.0)).collect();
            let (ft, gt) = al_value(&h.eval(&zt)?, mu, rho);
            let dec: f64 = g.iter().zip(zt.iter().zip(&z)).map(|(gk, (a, b))| gk * (a - b)).sum();
            if ft <= f + 1e-4 * dec {
                accepted = Some((zt, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((zt, ft, gt)) = accepted else { break };
        let s: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-14 {
            let hy: Vec<f64> = (0..n).map(|a| (0..n).map(|b| hinv[a][b] * y[b]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for a in 0..n {
                for b in 0..n {
                    hinv[a][b] += ((sy + yhy) * s[a] * s[b]) / (sy * sy) - (hy[a] * s[b] + s[a] * hy[b]) / sy;
                }
            }
        }
        let moved = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        z = zt;
        f = ft;
        g = gt;
        if moved <= 1e-14 {
            break;
        }
    }
    Ok(z)
}

struct Candidate {
    z: Vec<f64>,
    eval: Eval,
    pg: f64,
    converged: bool,
    history: Vec<f64>,
}

fn merit(e: &Eval, nu: f64) -> f64 {
    e.objective + nu * violation(&e.cons)
}

fn al_solve(h: &Horizon<'_>, z0: Vec<f64>) -> Result<Candidate> {
    let cfg = h.cfg;
    let first = h.eval(&z0)?;
    let mut mu = vec![0.0; first.cons.len()];
    let mut rho = 10.0;
    let nu = 1e4;
    let mut best = Candidate { pg: f64::INFINITY, converged: false, history: vec![merit(&first, nu)], z: z0, eval: first };
    let mut z = best.z.clone();
    let mut last_violation = violation(&best.eval.cons);
    for _ in 0..cfg.max_outer {
        z = inner_solve(h, &z, &mu, rho, 0.1 * cfg.tol, cfg.max_inner)?;
        let e = h.eval(&z)?;
        let viol = violation(&e.cons);
        let (_, gl) = al_value(&e, &mu, rho);
        let pg = projected_gradient(&z, &gl);
        let m = merit(&e, nu);
        for (j, c) in e.cons.iter().enumerate() {
            mu[j] = (mu[j] + rho * c).max(0.0);
        }
        if m <= *best.history.last().unwrap() {
            best.history.push(m);
            best.z = z.clone();
            best.pg = pg;
            best.eval = e;
        }
        if viol <= cfg.tol && pg <= cfg.tol {
            best.converged = violation(&best.eval.cons) <= cfg.tol;
            break;
        }
        if viol > 0.25 * last_violation {
            rho = (rho * 10.0).min(1e10);
        }
        last_violation = viol;
    }
    Ok(best)
}

fn grid_starts(h: &Horizon<'_>, count: usize) -> Result<Vec<Vec<f64>>> {
    let nc = h.cfg.n_c;
    let per: usize = match nc {
        1 => 41,
        2 => 11,
        3 => 5,
        _ => 3,
    };
    let total = per.pow(nc.min(6) as u32);
    let mut scored = Vec::with_capacity(total);
    for idx in 0..total {
        let mut r = idx;
        let z: Vec<f64> = (0..nc)
            .map(|k| {
                if k >= 6 {
                    return 0.5;
                }
                let v = (r % per) as f64 / (per - 1) as f64;
                r /= per;
                v
            })
            .collect();
        let e = h.eval(&z)?;
        scored.push((merit(&e, 1e4), z));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().take(count).map(|s| s.1).collect())
}

/// Solve one horizon problem from control ũ₀, measurement y₀ and output bias.
pub fn solve_horizon(model: &dyn HorizonModel, cfg: &MpcConfig, u0: f64, y0: f64, bias: f64) -> Result<MpcSolution> {
    if !(0.0..=1.0).contains(&u0) || !y0.is_finite() || !bias.is_finite() {
        return Err(PincError::InvalidParameter("u0 must lie in [0,1] and y0, bias must be finite".into()));
    }
    let h = Horizon { model, cfg, u0, y0, bias };
    let mut starts = vec![vec![u0; cfg.n_c]];
    starts.extend(grid_starts(&h, 2)?);
    let mut cands = Vec::new();
    for z in starts {
        let hold = z.iter().all(|&v| v == u0);
        if hold {
            let e = h.eval(&z)?;
            let (_, g) = al_value(&e, &vec![0.0; e.cons.len()], 1.0);
            let pg = projected_gradient(&z, &g);
            let m = merit(&e, 1e4);
            cands.push(Candidate { z: z.clone(), pg, converged: false, history: vec![m], eval: e });
        }
        cands.push(al_solve(&h, z)?);
    }
    let tol = cfg.tol;
    let feasible = cands.iter().filter(|c| violation(&c.eval.cons) <= tol).min_by(|a, b| a.eval.objective.total_cmp(&b.eval.objective));
    let (best, status) = match feasible {
        Some(c) => {
            let status = if c.converged || c.pg <= tol { SolveStatus::Converged } else { SolveStatus::MaxIterations };
            (c, status)
        }
        None => {
            let c = cands.iter().min_by(|a, b| violation(&a.eval.cons).total_cmp(&violation(&b.eval.cons))).unwrap();
            (c, SolveStatus::Infeasible)
        }
    };
    Ok(MpcSolution {
        controls: best.z.clone(),
        predictions: best.eval.y.clone(),
        objective: best.eval.objective,
        max_violation: violation(&best.eval.cons),
        projected_gradient: best.pg,
        status,
        merit_history: best.history.clone(),
    })
}

/// One closed-loop sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRecord {
    pub t: f64,
    pub u_applied: f64,
    /// Pressure measured at the probe at time t, Pa.
    pub y_measured: f64,
    /// Predicted pressure for t + T_s including the bias, Pa.
    pub y_predicted: f64,
    pub bias: f64,
    pub status: SolveStatus,
    pub objective: f64,
    /// Lower bound active for this solve, normalized.
    pub y_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosedLoopHistory {
    pub records: Vec<ClosedLoopRecord>,
}

impl ClosedLoopHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_seconds,u_applied,y_measured_pa,y_pred_pa,bias_pa,solve_status,objective\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                r.t,
                r.u_applied,
                r.y_measured,
                r.y_predicted,
                r.bias,
                r.status.name(),
                r.objective
            );
        }
        s
    }

    /// Number of consecutive measurements whose change exceeds `limit` (Pa).
    pub fn rate_violations(&self, limit: f64) -> usize {
        self.records.windows(2).filter(|w| (w[1].y_measured - w[0].y_measured).abs() > limit).count()
    }
}

/// Piecewise-constant lower bound: each entry (t, y_min) applies from t on.
pub fn y_min_at(schedule: &[(f64, Option<f64>)], t: f64, default: Option<f64>) -> Option<f64> {
    schedule.iter().rev().find(|(ts, _)| *ts <= t + 1e-9).map_or(default, |s| s.1)
}

/// Run the loop for `duration` seconds: measure, update the bias, solve, apply ũ₁.
pub fn closed_loop(
    predictor: &mut dyn HorizonModel,
    plant: &mut Plant,
    cfg: &MpcConfig,
    u_init: f64,
    duration: f64,
    y_min_schedule: &[(f64, Option<f64>)],
) -> Result<ClosedLoopHistory> {
    cfg.validate(plant.physics.norm.t_ref)?;
    let p_ref = plant.physics.norm.p_ref;
    let steps = (duration / cfg.ts + 1e-9).floor() as usize;
    let mut u0 = u_init;
    let mut last_prediction: Option<f64> = None;
    let mut history = ClosedLoopHistory::default();
    let mut step_cfg = cfg.clone();
    for k in 0..steps {
        let t = k as f64 * cfg.ts;
        let y = plant.probe(cfg.probe_x).p / p_ref;
        let bias = last_prediction.map_or(0.0, |p| y - p);
        predictor.observe(plant);
        step_cfg.y_min = y_min_at(y_min_schedule, t, cfg.y_min);
        let (u1, predicted, status, objective) = match solve_horizon(&*predictor, &step_cfg, u0, y, bias) {
            Ok(sol) => (sol.controls[0], sol.predictions[0], sol.status, sol.objective),
            Err(_) => {
                let p = predictor.predict(u0, &[u0])?[0];
                (u0, p, SolveStatus::Held, f64::NAN)
            }
        };
        history.records.push(ClosedLoopRecord {
            t,
            u_applied: u1,
            y_measured: y * p_ref,
            y_predicted: (predicted + bias) * p_ref,
            bias: bias * p_ref,
            status,
            objective,
            y_min: step_cfg.y_min,
        });
        plant.advance(u1, cfg.ts)?;
        last_prediction = Some(predicted);
        u0 = u1;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Physics;
    use crate::plant::PlantConfig;

    /// f(a, b) = c + 0.4 b + 0.2 a + 0.1 b², independent of history.
    struct Toy(f64);

    impl HorizonModel for Toy {
        fn predict(&self, u0: f64, controls: &[f64]) -> Result<Vec<f64>> {
            let mut prev = u0;
            Ok(controls
                .iter()
                .map(|&u| {
                    let y = self.0 + 0.4 * u + 0.2 * prev + 0.1 * u * u;
                    prev = u;
                    y
                })
                .collect())
        }
    }

    fn toy_cfg() -> MpcConfig {
        MpcConfig { dy_max: None, ..MpcConfig::table1() }
    }

    #[test]
    fn rate_limit_conversion() {
        assert!((rate_limit(1.0, 1e5) - 0.0667).abs() < 1e-4);
        assert!((rate_limit(10.0, 5e6) - 0.01333).abs() < 1e-5);
    }

    #[test]
    fn holding_is_stationary_at_the_target() {
        let m = Toy(0.0);
        let u0 = 0.5;
        let y = 0.4 * u0 + 0.2 * u0 + 0.1 * u0 * u0;
        let cfg = MpcConfig { y_target: y, dy_max: Some(0.05), ..MpcConfig::table1() };
        let s = solve_horizon(&m, &cfg, u0, y, 0.0).unwrap();
        assert!(s.controls.iter().all(|&u| (u - u0).abs() < 1e-6), "{:?}", s.controls);
        assert!(s.objective < 1e-10);
        assert_eq!(s.status, SolveStatus::Converged);
    }

    #[test]
    fn single_move_beats_a_fine_grid() {
        let m = Toy(-0.3);
        let cfg = MpcConfig { n_c: 1, ..toy_cfg() };
        for &(u0, bias) in &[(0.2, 0.0), (0.9, 0.05), (0.0, -0.1)] {
            let s = solve_horizon(&m, &cfg, u0, 0.5, bias).unwrap();
            let h = Horizon { model: &m, cfg: &cfg, u0, y0: 0.5, bias };
            let grid = (0..=1000).map(|i| h.eval(&[i as f64 / 1000.0]).unwrap().objective).fold(f64::INFINITY, f64::min);
            assert!(s.objective <= grid + 1e-6);
        }
    }

    #[test]
    fn zero_rate_bound_forces_a_hold() {
        let m = Toy(0.0);
        let u0 = 0.3;
        let y0 = 0.6 * u0 + 0.1 * u0 * u0;
        let cfg = MpcConfig { dy_max: Some(0.0), ..MpcConfig::table1() };
        let s = solve_horizon(&m, &cfg, u0, y0, 0.0).unwrap();
        assert!(s.controls.iter().all(|&u| (u - u0).abs() < 1e-6), "{:?}", s.controls);
        assert!(s.max_violation <= 1e-6);
    }

    #[test]
    fn constraints_are_respected() {
        let m = Toy(0.0);
        let cfg = MpcConfig { dy_max: Some(0.02), du_max: Some(0.05), y_min: Some(0.2), ..MpcConfig::table1() };
        let s = solve_horizon(&m, &cfg, 0.8, 0.6 * 0.8 + 0.064, 0.0).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert!((s.controls[0] - 0.8).abs() <= 0.05 + 1e-6);
        let y = m.predict(0.8, &[s.controls[0]]).unwrap()[0];
        assert!((y - (0.6 * 0.8 + 0.064)).abs() <= 0.02 + 1e-6);
        assert!(s.merit_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.controls.iter().all(|u| (0.0..=1.0).contains(u)));
    }

    #[test]
    fn unreachable_bound_returns_least_infeasible() {
        let m = Toy(0.0);
        let cfg = MpcConfig { y_min: Some(5.0), ..toy_cfg() };
        let s = solve_horizon(&m, &cfg, 0.5, 0.3, 0.0).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.controls.iter().all(|&u| (u - 1.0).abs() < 1e-6));
    }

    #[test]
    fn perfect_predictor_has_zero_bias() {
        let ph = Physics::table1();
        let cfg = MpcConfig { n_p: 3, y_min: Some(0.6), ..MpcConfig::table1() };
        let mut plant = Plant::at_steady_state(ph, PlantConfig { n_cells: 10, dt: 0.1 }, 0.8).unwrap();
        let mut pred = PlantPredictor::new(&plant, &cfg);
        let h = closed_loop(&mut pred, &mut plant, &cfg, 0.8, 6.0, &[]).unwrap();
        assert_eq!(h.records.len(), 6);
        for r in &h.records {
            assert!(r.bias.abs() <= 1e-9 * 1e5);
            assert!((0.0..=1.0).contains(&r.u_applied));
        }
        let dy = (cfg.dy_max.unwrap() + cfg.tol) * 1e5;
        for w in h.records.windows(2) {
            assert!(w[1].y_measured - w[0].y_measured <= dy);
            assert!(w[0].y_measured - w[1].y_measured <= dy);
        }
        assert!(h.records.last().unwrap().y_measured < h.records[0].y_measured);
    }

    #[test]
    fn y_min_schedule_lookup() {
        let s = [(0.0, Some(0.6)), (15.0, Some(0.4))];
        assert_eq!(y_min_at(&s, 3.0, None), Some(0.6));
        assert_eq!(y_min_at(&s, 15.0, None), Some(0.4));
        assert_eq!(y_min_at(&[], 1.0, Some(0.2)), Some(0.2));
    }
}
