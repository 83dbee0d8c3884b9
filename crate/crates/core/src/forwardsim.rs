//! Window-by-window PINC inference and the trajectory format shared with the plant.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{PincError, Result};
use crate::net::NetworkModel;
use crate::physics::{FluidKind, Physics};

pub const DEFAULT_STEPS_PER_WINDOW: usize = 21;

/// Piecewise-constant controls, one per window, plus the control before window 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    pub u0: f64,
    pub windows: Vec<f64>,
    /// Window length T in seconds.
    pub window_length: f64,
    /// Output samples per window, both ends included.
    pub steps_per_window: usize,
}

impl ControlSchedule {
    pub fn new(u0: f64, windows: Vec<f64>, window_length: f64) -> Result<Self> {
        let s = Self { u0, windows, window_length, steps_per_window: DEFAULT_STEPS_PER_WINDOW };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |u: f64| (0.0..=1.0).contains(&u);
        if !in_range(self.u0) || !self.windows.iter().all(|&u| in_range(u)) {
            return Err(PincError::InvalidParameter("controls must lie in [0, 1]".into()));
        }
        if self.steps_per_window < 2 {
            return Err(PincError::InvalidParameter("steps_per_window must be at least 2".into()));
        }
        if !(self.window_length > 0.0) {
            return Err(PincError::InvalidParameter("window length must be positive".into()));
        }
        Ok(())
    }

    /// Control applied before window `k` (1-based): ũ₀ for k = 1, else window k−1.
    pub fn previous(&self, k: usize) -> f64 {
        if k <= 1 {
            self.u0
        } else {
            self.windows[k - 2]
        }
    }

    /// Sample time in seconds of step `j` of window `k` (1-based).
    pub fn time(&self, k: usize, j: usize) -> f64 {
        ((k - 1) as f64 + j as f64 / (self.steps_per_window - 1) as f64) * self.window_length
    }

    /// Parse the text format: first value ũ₀, then one control per line.
    pub fn parse(text: &str, window_length: f64) -> Result<Self> {
        let vals = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.parse::<f64>().map_err(|e| PincError::Schema(format!("bad control `{l}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let (first, rest) = vals.split_first().ok_or_else(|| PincError::Schema("empty schedule".into()))?;
        Self::new(*first, rest.to_vec(), window_length)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for u in std::iter::once(&self.u0).chain(&self.windows) {
            let _ = writeln!(s, "{u:.16e}");
        }
        s
    }
}

/// One probe sample. Pressure in Pa, velocity in m/s; density and mass flow
/// are only filled for compressible runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub window: usize,
    pub u: f64,
    pub probe_x: f64,
    pub p: f64,
    pub v: f64,
    pub rho: Option<f64>,
    pub mdot: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

const BASE_HEADER: &str = "t_seconds,window_index,u,probe_x,P_pa,V_ms";

impl Trajectory {
    pub fn compressible(&self) -> bool {
        self.rows.first().is_some_and(|r| r.rho.is_some())
    }

    pub fn probes(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !xs.contains(&r.probe_x) {
                xs.push(r.probe_x);
            }
        }
        xs
    }

    /// Rows recorded at probe `x`, in time order.
    pub fn at_probe(&self, x: f64) -> Vec<TrajectoryRow> {
        self.rows.iter().filter(|r| r.probe_x == x).copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let comp = self.compressible();
        let mut s = String::from(BASE_HEADER);
        s.push_str(if comp { ",rho_kgm3,mdot_kgs\n" } else { "\n" });
        for r in &self.rows {
            let _ = write!(s, "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.window, r.u, r.probe_x, r.p, r.v);
            if comp {
                let _ = write!(s, ",{:.16e},{:.16e}", r.rho.unwrap_or(f64::NAN), r.mdot.unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let base: Vec<&str> = BASE_HEADER.split(',').collect();
        let comp = match headers.len() {
            6 => false,
            8 => true,
            _ => return Err(PincError::Schema(format!("unexpected trajectory columns {headers:?}"))),
        };
        if headers[..6] != base[..] || (comp && headers[6..] != ["rho_kgm3", "mdot_kgs"]) {
            return Err(PincError::Schema(format!("unexpected trajectory columns {headers:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| PincError::Schema(format!("column {i}: {e}")))
            };
            rows.push(TrajectoryRow {
                t: num(0)?,
                window: rec[1].trim().parse().map_err(|e| PincError::Schema(format!("window_index: {e}")))?,
                u: num(2)?,
                probe_x: num(3)?,
                p: num(4)?,
                v: num(5)?,
                rho: if comp { Some(num(6)?) } else { None },
                mdot: if comp { Some(num(7)?) } else { None },
            });
        }
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Normalized network inputs for every (window, step, probe), in row order.
fn inputs(model: &NetworkModel, schedule: &ControlSchedule, positions: &[f64]) -> Array2<f64> {
    let m = schedule.steps_per_window;
    let span = schedule.window_length / model.norm.t_ref;
    let n = schedule.windows.len() * m * positions.len();
    let mut x = Array2::zeros((n, 4));
    let mut row = 0;
    for k in 1..=schedule.windows.len() {
        for j in 0..m {
            for &p in positions {
                x[[row, 0]] = p;
                x[[row, 1]] = j as f64 / (m - 1) as f64 * span;
                x[[row, 2]] = schedule.previous(k);
                x[[row, 3]] = schedule.windows[k - 1];
                row += 1;
            }
        }
    }
    x
}

/// Cascaded inference: window k is f(x̃, t̃, ũ^(k−1), ũ^(k)) with no state carried over.
pub fn pinc_forward(model: &NetworkModel, physics: &Physics, schedule: &ControlSchedule, positions: &[f64]) -> Result<Trajectory> {
    if !model.arch.is_transient() {
        return Err(PincError::InvalidArchitecture("forward simulation needs a transient network".into()));
    }
    if model.norm != physics.norm {
        return Err(PincError::InvalidParameter("model normalization differs from the physics".into()));
    }
    schedule.validate()?;
    let x = inputs(model, schedule, positions);
    let y = model.forward_batch(x.view())?;
    let n = &physics.norm;
    let comp = physics.sys.fluid == FluidKind::IdealGas;
    let area = physics.sys.area();
    let mut rows = Vec::with_capacity(x.nrows());
    let m = schedule.steps_per_window;
    let mut r = 0;
    for k in 1..=schedule.windows.len() {
        for j in 0..m {
            for &probe_x in positions {
                let (p, v) = (y[[r, 0]] * n.p_ref, y[[r, 1]] * n.v_ref);
                let rho = comp.then(|| physics.rho_tilde(y[[r, 0]]) * n.rho_ref);
                rows.push(TrajectoryRow {
                    t: schedule.time(k, j),
                    window: k,
                    u: schedule.windows[k - 1],
                    probe_x,
                    p,
                    v,
                    rho,
                    mdot: rho.map(|d| d * v * area),
                });
                r += 1;
            }
        }
    }
    Ok(Trajectory { rows })
}

/// Normalized |y^(k, M−1) − y^(k+1, 0)| for (P̃, Ṽ) at each of the K−1 seams.
pub fn window_seam_gap(model: &NetworkModel, schedule: &ControlSchedule, x: f64) -> Result<Vec<[f64; 2]>> {
    if schedule.windows.len() < 2 {
        return Err(PincError::InvalidParameter("seam gaps need at least two windows".into()));
    }
    let span = schedule.window_length / model.norm.t_ref;
    (1..schedule.windows.len())
        .map(|k| {
            let end = model.forward(&[x, span, schedule.previous(k), schedule.windows[k - 1]])?;
            let start = model.forward(&[x, 0.0, schedule.windows[k - 1], schedule.windows[k]])?;
            Ok([(end[0] - start[0]).abs(), (end[1] - start[1]).abs()])
        })
        .collect()
}
