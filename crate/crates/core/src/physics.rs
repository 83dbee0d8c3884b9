//! Pipe-flow closures and the normalized residuals minimized during training.

use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{PincError, Result};
use crate::net::{EvalResult, NetworkModel};

pub const G: f64 = 9.81;
pub const R_GAS: f64 = 8.314;
pub const RE_MIN: f64 = 100.0;
pub const RE_MAX: f64 = 1e8;
const COLEBROOK_MAX_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidKind {
    Incompressible,
    IdealGas,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionModel {
    Laminar,
    Blasius,
    SwameeJain,
    Colebrook,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Steady,
    Transient,
}

/// Physical description of the pipe, the fluid and the boundary laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSystem {
    pub fluid: FluidKind,
    /// Pipe diameter, m.
    pub diameter: f64,
    /// Pipe length, m.
    pub length: f64,
    /// Dynamic viscosity, Pa·s.
    pub viscosity: f64,
    /// Inclination, rad.
    pub inclination: f64,
    /// Absolute roughness, m.
    pub roughness: f64,
    /// Liquid density, kg/m³ (incompressible only).
    pub density: f64,
    /// Molar mass, kg/mol (ideal gas only).
    pub molar_mass: f64,
    /// Temperature, K (ideal gas only).
    pub temperature: f64,
    /// Reservoir pressure, Pa.
    pub p_reservoir: f64,
    /// Velocity IPR constant, (m/s)/Pa (incompressible only).
    pub k_ipr: f64,
    /// Productivity index, kg/(s·Pa) (ideal gas only).
    pub productivity_index: f64,
    pub friction: FrictionModel,
}

impl FluidSystem {
    /// Horizontal water flow of the incompressible case study.
    pub fn table1() -> Self {
        Self {
            fluid: FluidKind::Incompressible,
            diameter: 0.1,
            length: 100.0,
            viscosity: 1e-3,
            inclination: 0.0,
            roughness: 0.0,
            density: 1000.0,
            molar_mass: 0.0,
            temperature: 0.0,
            p_reservoir: 2e5,
            k_ipr: 1e-5,
            productivity_index: 0.0,
            friction: FrictionModel::Blasius,
        }
    }

    /// Horizontal isothermal gas flow of the compressible case study.
    pub fn table2() -> Self {
        Self {
            fluid: FluidKind::IdealGas,
            diameter: 0.2,
            length: 2000.0,
            viscosity: 5e-5,
            inclination: 0.0,
            roughness: 0.0,
            density: 0.0,
            molar_mass: 0.03,
            temperature: 300.0,
            p_reservoir: 5e6,
            k_ipr: 0.0,
            productivity_index: 5e-4,
            friction: FrictionModel::SwameeJain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(PincError::InvalidParameter(what.to_string()));
        if !(self.diameter > 0.0 && self.length > 0.0 && self.viscosity > 0.0) {
            return bad("diameter, length and viscosity must be positive");
        }
        if !(self.p_reservoir > 0.0) {
            return bad("reservoir pressure must be positive");
        }
        if !(self.roughness >= 0.0) {
            return bad("roughness must be non-negative");
        }
        match self.fluid {
            FluidKind::Incompressible if !(self.density > 0.0 && self.k_ipr > 0.0) => {
                bad("incompressible fluid needs positive density and k_ipr")
            }
            FluidKind::IdealGas
                if !(self.molar_mass > 0.0 && self.temperature > 0.0 && self.productivity_index > 0.0) =>
            {
                bad("ideal gas needs positive molar mass, temperature and productivity index")
            }
            _ => Ok(()),
        }
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }

    pub fn sin_theta(&self) -> f64 {
        self.inclination.sin()
    }

    /// Re = ρ|V|D/μ clamped to [100, 1e8].
    pub fn reynolds<T: Real>(&self, rho: T, v: T) -> T {
        (rho * v.abs() * (self.diameter / self.viscosity)).clamp(RE_MIN, RE_MAX)
    }

    /// Darcy friction factor for the configured correlation.
    pub fn friction<T: Real>(&self, re: T) -> T {
        match self.friction {
            FrictionModel::Laminar => T::cst(64.0) / re,
            FrictionModel::Blasius => re.powf(-0.25) * 0.316,
            FrictionModel::SwameeJain => {
                let l = (re.powf(-0.9) * 5.74 + self.roughness / (3.7 * self.diameter)).log10();
                T::cst(0.25) / (l * l)
            }
            FrictionModel::Colebrook => {
                let r = re.value();
                let (f, _) = colebrook(r, self.roughness / self.diameter);
                let a = self.roughness / (3.7 * self.diameter);
                let sf = f.sqrt();
                let s = a + 2.51 / (r * sf);
                let k = 2.0 / (s * std::f64::consts::LN_10);
                let g_f = -0.5 * f.powf(-1.5) - k * 2.51 / r * 0.5 * f.powf(-1.5);
                let g_re = -k * 2.51 / (r * r * sf);
                re.lift(f, -g_re / g_f)
            }
        }
    }

    /// Friction factor with Colebrook convergence reported as an error.
    pub fn friction_factor(&self, re: f64) -> Result<f64> {
        if !(re > 0.0) {
            return Err(PincError::InvalidParameter(format!("Reynolds number must be positive, got {re}")));
        }
        if self.friction == FrictionModel::Colebrook {
            let (f, converged) = colebrook(re, self.roughness / self.diameter);
            if !converged {
                return Err(PincError::ColebrookNonConvergence(COLEBROOK_MAX_ITERS));
            }
            return Ok(f);
        }
        Ok(self.friction(re))
    }

    /// ρ = PM/(RT) for a gas, the constant liquid density otherwise.
    pub fn eos_density(&self, p: f64) -> Result<f64> {
        match self.fluid {
            FluidKind::Incompressible => Ok(self.density),
            FluidKind::IdealGas => {
                if !(p > 0.0) {
                    return Err(PincError::NonPositivePressure(p));
                }
                Ok(p * self.molar_mass / (R_GAS * self.temperature))
            }
        }
    }
}

/// Solve 1/√f = −2 log10(ε/(3.7D) + 2.51/(Re√f)); returns (f, converged).
pub fn colebrook(re: f64, relative_roughness: f64) -> (f64, bool) {
    let a = relative_roughness / 3.7;
    let mut f = 0.02;
    for _ in 0..COLEBROOK_MAX_ITERS {
        let x = -2.0 * (a + 2.51 / (re * f.sqrt())).log10();
        let next = 1.0 / (x * x);
        if (next - f).abs() < 1e-12 {
            return (next, true);
        }
        f = next;
    }
    (f, false)
}

/// Reference scales used to normalize the network inputs and outputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRefs {
    pub t_ref: f64,
    pub x_ref: f64,
    #[serde(rename = "P_ref")]
    pub p_ref: f64,
    #[serde(rename = "V_ref")]
    pub v_ref: f64,
    pub rho_ref: f64,
}

impl NormalizationRefs {
    pub fn table1() -> Self {
        Self { t_ref: 10.0, x_ref: 100.0, p_ref: 1e5, v_ref: 1.0, rho_ref: 1000.0 }
    }

    pub fn table2() -> Self {
        Self { t_ref: 100.0, x_ref: 2000.0, p_ref: 5e6, v_ref: 50.0, rho_ref: 60.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.t_ref, self.x_ref, self.p_ref, self.v_ref, self.rho_ref];
        if all.iter().all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(PincError::InvalidParameter("normalization references must be positive".into()))
        }
    }
}

/// Network outputs and their first derivatives at one point, all normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFields<T> {
    pub p: T,
    pub v: T,
    pub p_x: T,
    pub v_x: T,
    pub p_t: T,
    pub v_t: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualVector {
    pub mass: f64,
    pub momentum: f64,
}

/// A fluid system paired with its normalization; builds every residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Physics {
    pub sys: FluidSystem,
    pub norm: NormalizationRefs,
}

impl Physics {
    pub fn new(sys: FluidSystem, norm: NormalizationRefs) -> Result<Self> {
        sys.validate()?;
        norm.validate()?;
        Ok(Self { sys, norm })
    }

    pub fn table1() -> Self {
        Self { sys: FluidSystem::table1(), norm: NormalizationRefs::table1() }
    }

    pub fn table2() -> Self {
        Self { sys: FluidSystem::table2(), norm: NormalizationRefs::table2() }
    }

    /// ρ̃/P̃ for the ideal gas: P_ref·M/(R·T·ρ_ref).
    pub fn density_ratio(&self) -> f64 {
        self.norm.p_ref * self.sys.molar_mass / (R_GAS * self.sys.temperature * self.norm.rho_ref)
    }

    /// Normalized density; no positivity check.
    pub fn rho_tilde<T: Real>(&self, p: T) -> T {
        match self.sys.fluid {
            FluidKind::Incompressible => T::cst(self.sys.density / self.norm.rho_ref),
            FluidKind::IdealGas => p * self.density_ratio(),
        }
    }

    /// Friction factor evaluated on normalized density and velocity.
    fn friction_at<T: Real>(&self, rho_t: T, v: T) -> T {
        let re = self.sys.reynolds(rho_t * self.norm.rho_ref, v * self.norm.v_ref);
        self.sys.friction(re)
    }

    /// Steady momentum terms, shared by the transient forms after scaling by t_ref.
    fn steady_momentum<T: Real>(&self, f: &LocalFields<T>) -> T {
        let n = &self.norm;
        let s = &self.sys;
        let grav = G * s.sin_theta() / n.v_ref;
        let fric_scale = 0.5 * n.v_ref / s.diameter;
        match s.fluid {
            FluidKind::Incompressible => {
                let fr = self.friction_at(T::cst(s.density / n.rho_ref), f.v);
                f.p_x * (n.p_ref / (s.density * n.v_ref * n.x_ref)) + grav + fr * f.v.abs() * f.v * fric_scale
            }
            FluidKind::IdealGas => {
                let c = self.density_ratio();
                let rho = f.p * c;
                let rho_x = f.p_x * c;
                let fr = self.friction_at(rho, f.v);
                let conv = (f.v * f.v * rho_x + rho * f.v * f.v_x * 2.0) * (n.v_ref / n.x_ref);
                conv + f.p_x * (n.p_ref / (n.rho_ref * n.v_ref * n.x_ref))
                    + rho * grav
                    + fr * rho * f.v.abs() * f.v * fric_scale
            }
        }
    }

    /// Mass and momentum residuals from local fields.
    pub fn pde_residual<T: Real>(&self, regime: Regime, f: &LocalFields<T>) -> [T; 2] {
        let n = &self.norm;
        let mom = self.steady_momentum(f);
        match (self.sys.fluid, regime) {
            (FluidKind::Incompressible, Regime::Steady) => [f.v_x, mom],
            (FluidKind::Incompressible, Regime::Transient) => [f.v_x, f.v_t + mom * n.t_ref],
            (FluidKind::IdealGas, regime) => {
                let c = self.density_ratio();
                let rho = f.p * c;
                let flux_x = rho * f.v_x + f.v * f.p_x * c;
                match regime {
                    Regime::Steady => [flux_x, mom],
                    Regime::Transient => {
                        let rho_t = f.p_t * c;
                        [
                            rho_t + flux_x * (n.v_ref * n.t_ref / n.x_ref),
                            rho_t * f.v + rho * f.v_t + mom * n.t_ref,
                        ]
                    }
                }
            }
        }
    }

    /// Inflow law at x̃ = 0.
    pub fn bc_upstream<T: Real>(&self, p: T, v: T) -> T {
        let s = &self.sys;
        let n = &self.norm;
        match s.fluid {
            FluidKind::Incompressible => v - (T::cst(s.p_reservoir) - p * n.p_ref) * (s.k_ipr / n.v_ref),
            FluidKind::IdealGas => {
                self.rho_tilde(p) * v
                    - (T::cst(s.p_reservoir) - p * n.p_ref) * (s.productivity_index / (n.rho_ref * n.v_ref * s.area()))
            }
        }
    }

    /// Outlet pressure law at x̃ = 1: P̃ − ũ.
    pub fn bc_downstream<T: Real>(&self, p: T, u: f64) -> T {
        p - u
    }

    fn check_pressure(&self, p: f64) -> Result<()> {
        if self.sys.fluid == FluidKind::IdealGas {
            self.sys.eos_density(p * self.norm.p_ref)?;
        }
        Ok(())
    }

    fn local(&self, r: &EvalResult, t_col: Option<usize>) -> LocalFields<f64> {
        let j = &r.input_jacobian;
        let (p_t, v_t) = t_col.map_or((0.0, 0.0), |c| (j[[0, c]], j[[1, c]]));
        LocalFields { p: r.outputs[0], v: r.outputs[1], p_x: j[[0, 0]], v_x: j[[1, 0]], p_t, v_t }
    }

    fn residual_at(&self, model: &dyn FieldModel, input: &[f64], regime: Regime) -> Result<ResidualVector> {
        let r = model.eval(input)?;
        self.check_pressure(r.outputs[0])?;
        let t_col = (regime == Regime::Transient).then_some(1);
        let [mass, momentum] = self.pde_residual(regime, &self.local(&r, t_col));
        Ok(ResidualVector { mass, momentum })
    }

    pub fn residual_inc_steady(&self, model: &dyn FieldModel, x: f64, u: f64) -> Result<ResidualVector> {
        self.expect(FluidKind::Incompressible)?;
        self.residual_at(model, &[x, u], Regime::Steady)
    }

    pub fn residual_inc_transient(&self, model: &dyn FieldModel, x: f64, t: f64, u0: f64, u: f64) -> Result<ResidualVector> {
        self.expect(FluidKind::Incompressible)?;
        self.residual_at(model, &[x, t, u0, u], Regime::Transient)
    }

    pub fn residual_comp_steady(&self, model: &dyn FieldModel, x: f64, u: f64) -> Result<ResidualVector> {
        self.expect(FluidKind::IdealGas)?;
        self.residual_at(model, &[x, u], Regime::Steady)
    }

    pub fn residual_comp_transient(&self, model: &dyn FieldModel, x: f64, t: f64, u0: f64, u: f64) -> Result<ResidualVector> {
        self.expect(FluidKind::IdealGas)?;
        self.residual_at(model, &[x, t, u0, u], Regime::Transient)
    }

    /// Boundary residuals; `t` is `None` for a steady-state model.
    pub fn bc_residuals(&self, model: &dyn FieldModel, t: Option<f64>, u0: f64, u: f64) -> Result<(f64, f64)> {
        let at = |x: f64| -> Vec<f64> {
            match t {
                Some(t) => vec![x, t, u0, u],
                None => vec![x, u],
            }
        };
        let up = model.eval(&at(0.0))?.outputs;
        let down = model.eval(&at(1.0))?.outputs;
        self.check_pressure(up[0])?;
        Ok((self.bc_upstream(up[0], up[1]), self.bc_downstream(down[0], u)))
    }

    fn expect(&self, kind: FluidKind) -> Result<()> {
        if self.sys.fluid == kind {
            Ok(())
        } else {
            Err(PincError::InvalidParameter(format!("residual requires a {kind:?} system")))
        }
    }
}

/// Transient output at t̃ = 0 minus the frozen steady-state output for ũ₀.
pub fn ic_residual(transient: &dyn FieldModel, steady: &dyn FieldModel, x: f64, u0: f64, u: f64) -> Result<(f64, f64)> {
    let a = transient.eval(&[x, 0.0, u0, u])?.outputs;
    let b = steady.eval(&[x, u0])?.outputs;
    Ok((a[0] - b[0], a[1] - b[1]))
}

/// Anything that yields normalized (P̃, Ṽ) and their input Jacobian.
pub trait FieldModel {
    fn eval(&self, input: &[f64]) -> Result<EvalResult>;
}

impl FieldModel for NetworkModel {
    fn eval(&self, input: &[f64]) -> Result<EvalResult> {
        self.eval_with_input_derivatives(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual;
    use crate::net::{ActivationKind, NetworkArchitecture};
    use ndarray::Array2;

    /// Analytic test field: closure returning values and Jacobian columns.
    struct Field<F: Fn(&[f64]) -> ([f64; 2], Vec<[f64; 2]>)>(F);

    impl<F: Fn(&[f64]) -> ([f64; 2], Vec<[f64; 2]>)> FieldModel for Field<F> {
        fn eval(&self, input: &[f64]) -> Result<EvalResult> {
            let (y, cols) = (self.0)(input);
            let mut j = Array2::zeros((2, input.len()));
            for (c, col) in cols.iter().enumerate() {
                j[[0, c]] = col[0];
                j[[1, c]] = col[1];
            }
            Ok(EvalResult { outputs: y, input_jacobian: j })
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn reynolds_examples() {
        let s1 = FluidSystem::table1();
        assert!(close(s1.reynolds(1000.0, 1.0), 1e5, 1e-12));
        assert_eq!(s1.reynolds(1000.0, 0.0), 100.0);
        let s2 = FluidSystem::table2();
        assert!(close(s2.reynolds(60.0, 50.0), 1.2e7, 1e-12));
        assert_eq!(s2.reynolds(60.0, 1e9), RE_MAX);
    }

    #[test]
    fn friction_examples() {
        let mut s = FluidSystem::table1();
        s.friction = FrictionModel::Laminar;
        assert_eq!(s.friction_factor(64.0).unwrap(), 1.0);
        s.friction = FrictionModel::Blasius;
        assert!(close(s.friction_factor(1e4).unwrap(), 0.0316, 1e-12));
        assert!(close(s.friction_factor(1e5).unwrap(), 0.316 / 1e5f64.powf(0.25), 1e-12));
        let s2 = FluidSystem::table2();
        let oracle = 0.25 / (5.74f64 / 1e6f64.powf(0.9)).log10().powi(2);
        assert!(close(s2.friction_factor(1e6).unwrap(), oracle, 1e-12));
        assert!((s2.friction_factor(1e6).unwrap() - 0.011607).abs() < 5e-6);
        assert!(s2.friction_factor(0.0).is_err());
    }

    #[test]
    fn swamee_jain_tracks_colebrook_on_smooth_pipe() {
        let mut sj = FluidSystem::table2();
        let mut cb = sj.clone();
        cb.friction = FrictionModel::Colebrook;
        sj.friction = FrictionModel::SwameeJain;
        for i in 0..=30 {
            let re = 10f64.powf(4.0 + 3.0 * i as f64 / 30.0);
            let a = sj.friction_factor(re).unwrap();
            let b = cb.friction_factor(re).unwrap();
            assert!((a - b).abs() / b <= 0.03, "Re={re}: {a} vs {b}");
            let x = 1.0 / b.sqrt();
            assert!((x + 2.0 * (2.51 / (re * b.sqrt())).log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn friction_derivatives_are_exact() {
        for model in [FrictionModel::Laminar, FrictionModel::Blasius, FrictionModel::SwameeJain, FrictionModel::Colebrook] {
            let mut s = FluidSystem::table2();
            s.roughness = 4.5e-5;
            s.friction = model;
            let re = 3.3e5;
            let d = s.friction(Dual::<1>::variable(re, 0)).d[0];
            let h = re * 1e-6;
            let fd = (s.friction(re + h) - s.friction(re - h)) / (2.0 * h);
            assert!(close(d, fd, 1e-5), "{model:?}: {d} vs {fd}");
        }
    }

    #[test]
    fn eos_examples() {
        let s1 = FluidSystem::table1();
        assert_eq!(s1.eos_density(123.0).unwrap(), 1000.0);
        let s2 = FluidSystem::table2();
        let rho = s2.eos_density(5e6).unwrap();
        assert!(close(rho, 5e6 * 0.03 / (8.314 * 300.0), 1e-14));
        assert!((rho - 60.14).abs() < 5e-3);
        assert_eq!(s2.eos_density(1e6).unwrap() * 2.0, s2.eos_density(2e6).unwrap());
        assert!(matches!(s2.eos_density(0.0), Err(PincError::NonPositivePressure(_))));
    }

    fn uniform(p: f64, p_x: f64, v: f64) -> impl Fn(&[f64]) -> ([f64; 2], Vec<[f64; 2]>) {
        move |x: &[f64]| {
            let mut cols = vec![[0.0, 0.0]; x.len()];
            cols[0] = [p_x, 0.0];
            ([p + p_x * x[0], v], cols)
        }
    }

    #[test]
    fn zero_flow_gives_zero_residuals_everywhere() {
        for ph in [Physics::table1(), Physics::table2()] {
            let f = Field(uniform(0.6, 0.0, 0.0));
            let (s, t) = if ph.sys.fluid == FluidKind::Incompressible {
                (ph.residual_inc_steady(&f, 0.3, 0.6).unwrap(), ph.residual_inc_transient(&f, 0.3, 0.2, 0.6, 0.6).unwrap())
            } else {
                (ph.residual_comp_steady(&f, 0.3, 0.6).unwrap(), ph.residual_comp_transient(&f, 0.3, 0.2, 0.6, 0.6).unwrap())
            };
            for r in [s, t] {
                assert_eq!((r.mass, r.momentum), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn incompressible_momentum_balance() {
        let ph = Physics::table1();
        let f_blasius = 0.316 / 1e5f64.powf(0.25);
        let slope = -0.5 * 1000.0 * f_blasius / 0.1 * 100.0 / 1e5;
        let r = ph.residual_inc_steady(&Field(uniform(1.0, slope, 1.0)), 0.5, 0.5).unwrap();
        assert!(r.momentum.abs() < 1e-14);
        let flat = ph.residual_inc_steady(&Field(uniform(1.0, 0.0, 1.0)), 0.5, 0.5).unwrap();
        assert!(close(flat.momentum, 0.5 * f_blasius / 0.1, 1e-14));
        assert!((flat.momentum - 0.08885).abs() < 1e-5);
        let tr = ph.residual_inc_transient(&Field(uniform(1.0, 0.0, 1.0)), 0.5, 0.5, 0.5, 0.5).unwrap();
        assert!((tr.momentum - 0.8885).abs() < 1e-4);
        let ramp = Field(|x: &[f64]| ([1.0, x[1] - 0.4], vec![[0.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]));
        let r = ph.residual_inc_transient(&ramp, 0.5, 0.4, 0.5, 0.5).unwrap();
        assert_eq!((r.mass, r.momentum), (0.0, 1.0));
    }

    #[test]
    fn compressible_product_rule_and_time_ramp() {
        let ph = Physics::table2();
        let c = ph.density_ratio();
        let s = 0.2;
        let f = Field(move |x: &[f64]| ([0.6 + s / c * x[0], 0.3], vec![[s / c, 0.0], [0.0, 0.0]]));
        let r = ph.residual_comp_steady(&f, 0.5, 0.5).unwrap();
        assert!(close(r.mass, 0.3 * s, 1e-14));
        let ramp = Field(|x: &[f64]| ([0.5 + x[1], 0.0], vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]));
        let r = ph.residual_comp_transient(&ramp, 0.5, 0.2, 0.5, 0.5).unwrap();
        assert!(close(r.mass, 5e6 * 0.03 / (8.314 * 300.0 * 60.0), 1e-14));
        let neg = Field(uniform(-0.1, 0.0, 0.0));
        assert!(matches!(ph.residual_comp_steady(&neg, 0.5, 0.5), Err(PincError::NonPositivePressure(_))));
    }

    fn random_net(input_dim: usize) -> NetworkModel {
        let arch = NetworkArchitecture::new(input_dim, 2, 6, ActivationKind::Tanh, false).unwrap();
        let mut m = NetworkModel::init(arch, NormalizationRefs::table2(), 3).unwrap();
        let b = m.layout().block(crate::net::LayerId::Output, crate::net::ParamRole::Bias).unwrap().offset;
        m.params[b] = 0.8;
        m.params[b + 1] = 0.4;
        m
    }

    /// The same expressions with spatial and temporal derivatives replaced by
    /// central differences of the network outputs, written out long-hand.
    fn fd_comp_residual(ph: &Physics, net: &NetworkModel, x: &[f64], transient: bool) -> (f64, f64) {
        let h = 1e-5;
        let shift = |k: usize, d: f64| {
            let mut y = x.to_vec();
            y[k] += d;
            net.forward(&y).unwrap()
        };
        let y = net.forward(x).unwrap();
        let (p, v) = (y[0], y[1]);
        let c = ph.density_ratio();
        let n = ph.norm;
        let s = &ph.sys;
        let (xp, xm) = (shift(0, h), shift(0, -h));
        let rhov_x = (c * xp[0] * xp[1] - c * xm[0] * xm[1]) / (2.0 * h);
        let rhov2_x = (c * xp[0] * xp[1].powi(2) - c * xm[0] * xm[1].powi(2)) / (2.0 * h);
        let p_x = (xp[0] - xm[0]) / (2.0 * h);
        let rho = c * p;
        let re = (rho * n.rho_ref * (v * n.v_ref).abs() * s.diameter / s.viscosity).clamp(RE_MIN, RE_MAX);
        let f = 0.25 / (5.74 / re.powf(0.9)).log10().powi(2);
        let mom = n.v_ref / n.x_ref * rhov2_x
            + n.p_ref / (n.rho_ref * n.v_ref * n.x_ref) * p_x
            + 0.5 * f * n.v_ref / s.diameter * rho * v.abs() * v;
        if !transient {
            return (rhov_x, mom);
        }
        let (tp, tm) = (shift(1, h), shift(1, -h));
        let rho_t = c * (tp[0] - tm[0]) / (2.0 * h);
        let rhov_t = (c * tp[0] * tp[1] - c * tm[0] * tm[1]) / (2.0 * h);
        (rho_t + n.v_ref * n.t_ref / n.x_ref * rhov_x, rhov_t + n.t_ref * mom)
    }

    #[test]
    fn compressible_residuals_match_finite_difference_oracle() {
        let ph = Physics::table2();
        for (dim, transient) in [(2, false), (4, true)] {
            let net = random_net(dim);
            for k in 0..10 {
                let a = 0.05 + 0.09 * k as f64;
                let x: Vec<f64> = if transient { vec![a, 1.0 - a, 0.4, 0.6] } else { vec![a, 0.5] };
                let got = if transient {
                    ph.residual_comp_transient(&net, x[0], x[1], x[2], x[3]).unwrap()
                } else {
                    ph.residual_comp_steady(&net, x[0], x[1]).unwrap()
                };
                let (m, mo) = fd_comp_residual(&ph, &net, &x, transient);
                assert!((got.mass - m).abs() <= 1e-4 * m.abs().max(1e-2), "{} vs {m}", got.mass);
                assert!((got.momentum - mo).abs() <= 1e-4 * mo.abs().max(1e-2), "{} vs {mo}", got.momentum);
            }
        }
    }

    #[test]
    fn boundary_residual_examples() {
        let ph2 = Physics::table2();
        let c = ph2.density_ratio();
        let target = 5e-4 * (5e6 - 3.5e6) / (60.0 * 50.0 * std::f64::consts::PI * 0.01);
        assert!((target - 7.9577).abs() < 1e-4);
        assert!(ph2.bc_upstream(0.7, target / (0.7 * c)).abs() < 1e-12);
        let ph1 = Physics::table1();
        assert_eq!(ph1.bc_upstream(2.0, 0.0), 0.0);
        let f = Field(|x: &[f64]| ([0.3 + 0.2 * x[0], 0.0], vec![[0.2, 0.0]; x.len()]));
        let (_, down) = ph1.bc_residuals(&f, None, 0.5, 0.5).unwrap();
        assert!(down.abs() < 1e-15);
        let (_, down) = ph1.bc_residuals(&f, Some(0.3), 0.1, 0.5).unwrap();
        assert!(down.abs() < 1e-15);
    }

    #[test]
    fn ic_residual_is_direct_difference_and_ignores_u() {
        let ss = random_net(2);
        let tr = random_net(4);
        let (rp, rv) = ic_residual(&tr, &ss, 0.3, 0.6, 0.2).unwrap();
        let a = tr.forward(&[0.3, 0.0, 0.6, 0.2]).unwrap();
        let b = ss.forward(&[0.3, 0.6]).unwrap();
        assert_eq!((rp, rv), (a[0] - b[0], a[1] - b[1]));
        let copy = Field(|x: &[f64]| ([0.5 + x[0] * x[2], x[2]], vec![]));
        let base = Field(|x: &[f64]| ([0.5 + x[0] * x[1], x[1]], vec![]));
        assert_eq!(ic_residual(&copy, &base, 0.3, 0.6, 0.9).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dual_residual_partials_match_differences() {
        for ph in [Physics::table1(), Physics::table2()] {
            let base = [0.7, 0.6, -0.1, 0.05, 0.02, -0.03];
            let mk = |v: [f64; 6]| LocalFields { p: v[0], v: v[1], p_x: v[2], v_x: v[3], p_t: v[4], v_t: v[5] };
            let d: [Dual<6>; 6] = std::array::from_fn(|k| Dual::variable(base[k], k));
            let dual = ph.pde_residual(Regime::Transient, &LocalFields { p: d[0], v: d[1], p_x: d[2], v_x: d[3], p_t: d[4], v_t: d[5] });
            for k in 0..6 {
                let h = 1e-6;
                let mut up = base;
                let mut dn = base;
                up[k] += h;
                dn[k] -= h;
                let (ru, rd) = (ph.pde_residual(Regime::Transient, &mk(up)), ph.pde_residual(Regime::Transient, &mk(dn)));
                for e in 0..2 {
                    let fd = (ru[e] - rd[e]) / (2.0 * h);
                    assert!((dual[e].d[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }
}
