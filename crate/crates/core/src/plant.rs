//! Finite-difference reference solver on a staggered grid.
//!
//! Pressure and density live at cell centers, velocities on faces. Face 0 is
//! the inlet, where the mass flux follows the inflow law evaluated at a
//! pressure extrapolated from the first two cells; face n is the outlet, half
//! a cell from the last center, where the pressure is the control. Time
//! stepping is backward Euler with first-order upwind convection. The
//! incompressible case collapses to one ODE for the uniform velocity.

use nalgebra::{DMatrix, DVector};

use crate::dual::{Dual, Real};
use crate::error::{PincError, Result};
use crate::forwardsim::{ControlSchedule, Trajectory, TrajectoryRow};
use crate::physics::{FluidKind, Physics, G};

const NEWTON_MAX_ITERS: usize = 60;
const STEADY_TOL: f64 = 1e-10;
const TRANSIENT_TOL: f64 = 1e-8;
const MAX_HALVINGS: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantConfig {
    pub n_cells: usize,
    /// Time step, s.
    pub dt: f64,
}

impl PlantConfig {
    /// 50 cells and Δt = t_ref/100.
    pub fn default_for(physics: &Physics) -> Self {
        Self { n_cells: 50, dt: physics.norm.t_ref / 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 2 || !(self.dt > 0.0) {
            return Err(PincError::InvalidParameter("plant needs n_cells >= 2 and dt > 0".into()));
        }
        Ok(())
    }
}

/// Grid fields at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    /// Pressure at cell centers, Pa.
    pub p: Vec<f64>,
    /// Density at cell centers, kg/m³.
    pub rho: Vec<f64>,
    /// Velocity at faces 0..=n, m/s.
    pub v: Vec<f64>,
    /// Outlet pressure, Pa.
    pub p_out: f64,
    pub t: f64,
}

impl PlantState {
    pub fn n_cells(&self) -> usize {
        self.p.len()
    }
}

/// Steady incompressible solution: uniform velocity and a linear pressure profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncSteady {
    pub v: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl IncSteady {
    pub fn pressure_at(&self, x_norm: f64) -> f64 {
        self.p_in + (self.p_out - self.p_in) * x_norm
    }
}

/// Right-hand side of ρ dV/dt = (P(0) − P_out)/L − ρ g sinθ − ½ ρ f |V| V / D.
fn inc_rhs<T: Real>(ph: &Physics, v: T, p_out: f64) -> T {
    let s = &ph.sys;
    let p_in = T::cst(s.p_reservoir) - v / s.k_ipr;
    let re = s.reynolds(T::cst(s.density), v);
    let f = s.friction(re);
    (p_in - p_out) / s.length - s.density * G * s.sin_theta() - f * v.abs() * v * (0.5 * s.density / s.diameter)
}

/// Scalar Newton with halving on `h(V) = 0`, where `h` is evaluated on duals.
fn scalar_newton(h: impl Fn(Dual<1>) -> Dual<1>, v0: f64, tol: f64, max_iters: usize) -> Result<f64> {
    let mut v = v0;
    for _ in 0..max_iters {
        let r = h(Dual::variable(v, 0));
        if r.d[0] == 0.0 || !r.v.is_finite() {
            return Err(PincError::SolverFailure("degenerate scalar Newton step".into()));
        }
        let step = -r.v / r.d[0];
        let mut lambda = 1.0;
        let mut next = v + step;
        while h(Dual::constant(next)).v.abs() > r.v.abs() && lambda > 1e-6 {
            lambda *= 0.5;
            next = v + lambda * step;
        }
        if (next - v).abs() <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        v = next;
    }
    Err(PincError::SolverFailure(format!("scalar Newton did not converge in {max_iters} iterations")))
}

/// Fixed point V = k(P_res − P_out − (ρ g sinθ + ½ρ f V|V|/D)L), P(0) = P_res − V/k.
pub fn steady_solve_inc(physics: &Physics, u: f64) -> Result<IncSteady> {
    expect(physics, FluidKind::Incompressible)?;
    let s = &physics.sys;
    let p_out = u * physics.norm.p_ref;
    let g = |v: Dual<1>| -> Dual<1> {
        let re = s.reynolds(Dual::constant(s.density), v);
        let loss = (v.abs() * v * s.friction(re) * (0.5 * s.density / s.diameter) + s.density * G * s.sin_theta()) * s.length;
        (Dual::constant(s.p_reservoir - p_out) - loss) * s.k_ipr
    };
    let v0 = s.k_ipr * (s.p_reservoir - p_out);
    let v = scalar_newton(|v| v - g(v), v0, 1e-15, 10000)?;
    Ok(IncSteady { v, p_in: s.p_reservoir - v / s.k_ipr, p_out })
}

fn inc_state(physics: &Physics, n: usize, v: f64, p_out: f64, t: f64) -> PlantState {
    let s = &physics.sys;
    let p_in = s.p_reservoir - v / s.k_ipr;
    let p = (0..n).map(|i| p_in + (p_out - p_in) * (i as f64 + 0.5) / n as f64).collect();
    PlantState { p, rho: vec![s.density; n], v: vec![v; n + 1], p_out, t }
}

fn expect(physics: &Physics, kind: FluidKind) -> Result<()> {
    if physics.sys.fluid == kind {
        Ok(())
    } else {
        Err(PincError::InvalidParameter(format!("operation requires a {kind:?} system")))
    }
}

/// Staggered-grid residual for the gas system, scaled to order one.
///
/// Unknowns are [P₀..P_{n−1}]/P_ref followed by [V₁..V_n]/V_ref.
struct GasGrid<'a> {
    ph: &'a Physics,
    n: usize,
    p_out: f64,
    old: Option<(&'a PlantState, f64)>,
}

impl GasGrid<'_> {
    fn c_eos(&self) -> f64 {
        self.ph.sys.molar_mass / (crate::physics::R_GAS * self.ph.sys.temperature)
    }

    fn inlet(&self, p0: f64, p1: f64) -> (f64, f64, f64) {
        let s = &self.ph.sys;
        let p_in = 1.5 * p0 - 0.5 * p1;
        let mdot = s.productivity_index * (s.p_reservoir - p_in);
        let rho_in = self.c_eos() * p_in;
        (p_in, mdot, mdot / (rho_in * s.area()))
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nr = &self.ph.norm;
        let p: Vec<f64> = x[..self.n].iter().map(|v| v * nr.p_ref).collect();
        let mut v = vec![0.0; self.n + 1];
        for j in 1..=self.n {
            v[j] = x[self.n + j - 1] * nr.v_ref;
        }
        v[0] = self.inlet(p[0], p[1]).2;
        (p, v)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let s = &self.ph.sys;
        let nr = &self.ph.norm;
        let dx = s.length / n as f64;
        let c = self.c_eos();
        let (p, v) = self.unpack(x);
        if p.iter().any(|&pi| !(pi > 0.0)) {
            return vec![f64::NAN; 2 * n];
        }
        let rho: Vec<f64> = p.iter().map(|pi| c * pi).collect();
        let rho_out = c * self.p_out;
        let rho_cell = |i: usize| if i < n { rho[i] } else { rho_out };
        let (_, mdot_in, _) = self.inlet(p[0], p[1]);
        let mut flux = vec![0.0; n + 1];
        flux[0] = mdot_in / s.area();
        for j in 1..=n {
            let up = if v[j] >= 0.0 { rho[j - 1] } else { rho_cell(j) };
            flux[j] = up * v[j];
        }
        let cell_mom: Vec<f64> = (0..n)
            .map(|i| {
                let fbar = 0.5 * (flux[i] + flux[i + 1]);
                fbar * if fbar >= 0.0 { v[i] } else { v[i + 1] }
            })
            .collect();
        let mut r = vec![0.0; 2 * n];
        for i in 0..n {
            let mut m = flux[i + 1] - flux[i];
            if let Some((old, dt)) = self.old {
                m += (rho[i] - old.rho[i]) * dx / dt;
            }
            r[i] = m / (nr.rho_ref * nr.v_ref);
        }
        for j in 1..=n {
            let last = j == n;
            let h = if last { 0.5 * dx } else { dx };
            let rho_f = 0.5 * (rho[j - 1] + rho_cell(j));
            let p_right = if last { self.p_out } else { p[j] };
            let conv = if last { flux[n] * v[n] - cell_mom[n - 1] } else { cell_mom[j] - cell_mom[j - 1] } / h;
            let re = s.reynolds(rho_f, v[j]);
            let f = s.friction(re);
            let mut mom = conv + (p_right - p[j - 1]) / h + rho_f * G * s.sin_theta() + 0.5 * f * rho_f * v[j].abs() * v[j] / s.diameter;
            if let Some((old, dt)) = self.old {
                let old_rho_f = 0.5 * (old.rho[j - 1] + if last { c * old.p_out } else { old.rho[j] });
                mom += (rho_f * v[j] - old_rho_f * old.v[j]) / dt;
            }
            r[n + j - 1] = mom * dx / nr.p_ref;
        }
        r
    }

    fn pack(&self, state: &PlantState) -> Vec<f64> {
        let nr = &self.ph.norm;
        state
            .p
            .iter()
            .map(|p| p / nr.p_ref)
            .chain(state.v[1..].iter().map(|v| v / nr.v_ref))
            .collect()
    }

    fn state(&self, x: &[f64], t: f64) -> PlantState {
        let (p, v) = self.unpack(x);
        let c = self.c_eos();
        PlantState { rho: p.iter().map(|pi| c * pi).collect(), p, v, p_out: self.p_out, t }
    }
}

fn inf_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0_f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

/// Damped Newton with a forward-difference Jacobian and dense LU.
fn newton(res: impl Fn(&[f64]) -> Vec<f64>, mut x: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let mut r = res(&x);
    let mut norm = inf_norm(&r);
    for _ in 0..NEWTON_MAX_ITERS {
        if norm <= tol {
            return Ok(x);
        }
        if !norm.is_finite() {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-7 * x[k].abs().max(1e-2);
            let mut xp = x.clone();
            xp[k] += h;
            let rp = res(&xp);
            for i in 0..n {
                jac[(i, k)] = (rp[i] - r[i]) / h;
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PincError::SolverFailure("singular Newton Jacobian".into()))?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + lambda * b).collect();
            let rt = res(&trial);
            let nt = inf_norm(&rt);
            if nt < (1.0 - 1e-4 * lambda) * norm || (nt <= tol) {
                x = trial;
                r = rt;
                norm = nt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-8 {
                return Err(PincError::SolverFailure(format!("Newton line search stalled at residual {norm:e}")));
            }
        }
    }
    if norm <= tol {
        Ok(x)
    } else {
        Err(PincError::SolverFailure(format!("Newton did not converge (residual {norm:e})")))
    }
}

/// Isothermal, acceleration-free profile used to start the steady Newton solve.
fn gas_initial_guess(ph: &Physics, n: usize, p_out: f64) -> PlantState {
    let s = &ph.sys;
    let c = s.molar_mass / (crate::physics::R_GAS * s.temperature);
    let a = s.area();
    let p_in_of = |g: f64| s.p_reservoir - g * a / s.productivity_index;
    let drop = |g: f64| {
        let f = s.friction(s.reynolds(1.0, g));
        (p_out * p_out + f * s.length * g * g / (s.diameter * c)).sqrt()
    };
    let (mut lo, mut hi) = (0.0, s.productivity_index * (s.p_reservoir - p_out).max(0.0) / a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p_in_of(mid) > drop(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    let p_in = p_in_of(g);
    let p_at = |x: f64| (p_in * p_in - (p_in * p_in - p_out * p_out) * x).max(p_out * p_out).sqrt();
    let p: Vec<f64> = (0..n).map(|i| p_at((i as f64 + 0.5) / n as f64)).collect();
    let rho: Vec<f64> = p.iter().map(|pi| c * pi).collect();
    let v = (0..=n).map(|j| g / (c * p_at(j as f64 / n as f64))).collect();
    PlantState { p, rho, v, p_out, t: 0.0 }
}

/// Discrete steady state of the gas system for outlet pressure u·P_ref.
pub fn steady_solve_comp(physics: &Physics, n_cells: usize, u: f64) -> Result<PlantState> {
    expect(physics, FluidKind::IdealGas)?;
    if !(u > 0.0 && u <= 1.0) {
        return Err(PincError::InvalidParameter(format!("compressible steady solve needs u in (0, 1], got {u}")));
    }
    if n_cells < 2 {
        return Err(PincError::InvalidParameter("n_cells must be at least 2".into()));
    }
    let p_out = u * physics.norm.p_ref;
    let grid = GasGrid { ph: physics, n: n_cells, p_out, old: None };
    let guess = gas_initial_guess(physics, n_cells, p_out);
    let x = newton(|x| grid.residual(x), grid.pack(&guess), STEADY_TOL)
        .map_err(|e| PincError::SolverFailure(format!("steady gas solve at u = {u}: {e}")))?;
    Ok(grid.state(&x, f64::INFINITY))
}

/// Steady state for either fluid, laid out on the grid.
pub fn steady_state(physics: &Physics, n_cells: usize, u: f64) -> Result<PlantState> {
    match physics.sys.fluid {
        FluidKind::Incompressible => {
            let s = steady_solve_inc(physics, u)?;
            Ok(inc_state(physics, n_cells, s.v, s.p_out, 0.0))
        }
        FluidKind::IdealGas => {
            let mut s = steady_solve_comp(physics, n_cells, u)?;
            s.t = 0.0;
            Ok(s)
        }
    }
}

fn step_once(physics: &Physics, state: &PlantState, u: f64, dt: f64) -> Result<PlantState> {
    let n = state.n_cells();
    let p_out = u * physics.norm.p_ref;
    match physics.sys.fluid {
        FluidKind::Incompressible => {
            let rho = physics.sys.density;
            let v_old = state.v[0];
            let v = scalar_newton(|v| (v - v_old) * (rho / dt) - inc_rhs(physics, v, p_out), v_old, 1e-15, NEWTON_MAX_ITERS)?;
            Ok(inc_state(physics, n, v, p_out, state.t + dt))
        }
        FluidKind::IdealGas => {
            let grid = GasGrid { ph: physics, n, p_out, old: Some((state, dt)) };
            let x = newton(|x| grid.residual(x), grid.pack(state), TRANSIENT_TOL)?;
            Ok(grid.state(&x, state.t + dt))
        }
    }
}

fn step_halving(physics: &Physics, state: &PlantState, u: f64, dt: f64, depth: u32) -> Result<PlantState> {
    match step_once(physics, state, u, dt) {
        Ok(s) => Ok(s),
        Err(e) if depth >= MAX_HALVINGS => Err(e),
        Err(_) => {
            let half = step_halving(physics, state, u, 0.5 * dt, depth + 1)?;
            step_halving(physics, &half, u, 0.5 * dt, depth + 1)
        }
    }
}

/// One backward-Euler step with outlet pressure u·P_ref; Δt is halved on failure.
pub fn step_transient(physics: &Physics, state: &PlantState, u: f64, dt: f64) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(PincError::InvalidParameter("dt must be positive".into()));
    }
    step_halving(physics, state, u, dt, 0)
}

/// Probe values at normalized position x̃, interpolated linearly between nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSample {
    pub p: f64,
    pub v: f64,
    pub rho: f64,
    pub mdot: f64,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&xi| xi <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    ys[k - 1] + (ys[k] - ys[k - 1]) * (x - x0) / (x1 - x0)
}

pub fn probe(physics: &Physics, state: &PlantState, x_norm: f64) -> ProbeSample {
    let n = state.n_cells();
    let s = &physics.sys;
    let area = s.area();
    match s.fluid {
        FluidKind::Incompressible => {
            let v = state.v[0];
            let p_in = s.p_reservoir - v / s.k_ipr;
            ProbeSample { p: p_in + (state.p_out - p_in) * x_norm, v, rho: s.density, mdot: s.density * v * area }
        }
        FluidKind::IdealGas => {
            let c = s.molar_mass / (crate::physics::R_GAS * s.temperature);
            let p_in = 1.5 * state.p[0] - 0.5 * state.p[1];
            let mut xs = vec![0.0];
            let mut ps = vec![p_in];
            for i in 0..n {
                xs.push((i as f64 + 0.5) / n as f64);
                ps.push(state.p[i]);
            }
            xs.push(1.0);
            ps.push(state.p_out);
            let p = interp(&xs, &ps, x_norm);
            let faces: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
            let v = interp(&faces, &state.v, x_norm);
            let mass: Vec<f64> = (0..=n)
                .map(|j| {
                    let rho = if j == 0 {
                        c * p_in
                    } else if state.v[j] >= 0.0 {
                        state.rho[j - 1]
                    } else if j < n {
                        state.rho[j]
                    } else {
                        c * state.p_out
                    };
                    rho * state.v[j] * area
                })
                .collect();
            ProbeSample { p, v, rho: c * p, mdot: interp(&faces, &mass, x_norm) }
        }
    }
}

/// Face mass flows ρ_face·V·A, kg/s (upwind densities, inlet from the inflow law).
pub fn face_mass_flows(physics: &Physics, state: &PlantState) -> Vec<f64> {
    let n = state.n_cells();
    let s = &physics.sys;
    match s.fluid {
        FluidKind::Incompressible => vec![s.density * state.v[0] * s.area(); n + 1],
        FluidKind::IdealGas => {
            let grid = GasGrid { ph: physics, n, p_out: state.p_out, old: None };
            let x = grid.pack(state);
            let (p, v) = grid.unpack(&x);
            let c = grid.c_eos();
            let mut m = vec![grid.inlet(p[0], p[1]).1];
            for j in 1..=n {
                let rho = if v[j] >= 0.0 { c * p[j - 1] } else if j < n { c * p[j] } else { c * state.p_out };
                m.push(rho * v[j] * s.area());
            }
            m
        }
    }
}

/// A plant that can be advanced in time; used as the controlled system.
#[derive(Clone, Debug)]
pub struct Plant {
    pub physics: Physics,
    pub cfg: PlantConfig,
    pub state: PlantState,
}

impl Plant {
    pub fn at_steady_state(physics: Physics, cfg: PlantConfig, u: f64) -> Result<Self> {
        cfg.validate()?;
        let state = steady_state(&physics, cfg.n_cells, u)?;
        Ok(Self { physics, cfg, state })
    }

    /// Hold u for `duration` seconds using the largest step ≤ cfg.dt that divides it.
    pub fn advance(&mut self, u: f64, duration: f64) -> Result<()> {
        let steps = (duration / self.cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        for _ in 0..steps {
            self.state = step_transient(&self.physics, &self.state, u, dt)?;
        }
        Ok(())
    }

    pub fn probe(&self, x_norm: f64) -> ProbeSample {
        probe(&self.physics, &self.state, x_norm)
    }
}

/// Plant response to a schedule, sampled like the forward simulation.
pub fn simulate_plant(physics: &Physics, cfg: &PlantConfig, schedule: &ControlSchedule, probes: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    schedule.validate()?;
    let m = schedule.steps_per_window;
    let per_window = (schedule.window_length / cfg.dt).round() as usize;
    if per_window == 0 || ((per_window as f64) * cfg.dt - schedule.window_length).abs() > 1e-9 * schedule.window_length {
        return Err(PincError::InvalidParameter("dt must divide the window length".into()));
    }
    if per_window % (m - 1) != 0 {
        return Err(PincError::InvalidParameter("time steps per window must be a multiple of steps_per_window − 1".into()));
    }
    let stride = per_window / (m - 1);
    let comp = physics.sys.fluid == FluidKind::IdealGas;
    let mut state = steady_state(physics, cfg.n_cells, schedule.u0)?;
    let mut rows = Vec::new();
    for (k, &u) in schedule.windows.iter().enumerate() {
        let k = k + 1;
        for j in 0..m {
            if j > 0 {
                for _ in 0..stride {
                    state = step_transient(physics, &state, u, cfg.dt)?;
                }
            }
            for &x in probes {
                let s = probe(physics, &state, x);
                rows.push(TrajectoryRow {
                    t: schedule.time(k, j),
                    window: k,
                    u,
                    probe_x: x,
                    p: s.p,
                    v: s.v,
                    rho: comp.then_some(s.rho),
                    mdot: comp.then_some(s.mdot),
                });
            }
        }
    }
    Ok(Trajectory { rows })
}
