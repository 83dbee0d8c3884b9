//! MAPE, Fit Compare and wall-clock speed ratios.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{PincError, Result};
use crate::forwardsim::{Trajectory, TrajectoryRow};

fn check_pair(y_true: &[f64], y_est: &[f64]) -> Result<()> {
    if y_true.len() != y_est.len() {
        return Err(PincError::DimensionMismatch { expected: y_true.len(), got: y_est.len() });
    }
    if y_true.is_empty() {
        return Err(PincError::MetricDomain("empty series".into()));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y_true: &[f64], y_est: &[f64]) -> Result<f64> {
    check_pair(y_true, y_est)?;
    let mut acc = 0.0;
    for (&t, &e) in y_true.iter().zip(y_est) {
        if t == 0.0 {
            return Err(PincError::MetricDomain("MAPE undefined for a zero true value".into()));
        }
        acc += ((t - e) / t).abs();
    }
    Ok(100.0 * acc / y_true.len() as f64)
}

/// Fit Compare, (1 − ‖y − ŷ‖ / ‖y − ȳ‖)·100, in percent.
pub fn fit_compare(y_true: &[f64], y_est: &[f64]) -> Result<f64> {
    check_pair(y_true, y_est)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let num: f64 = y_true.iter().zip(y_est).map(|(t, e)| (t - e) * (t - e)).sum::<f64>().sqrt();
    let den: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(PincError::MetricDomain("Fit undefined for a constant true series".into()));
    }
    Ok(100.0 * (1.0 - num / den))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedReport {
    pub model_median: Duration,
    pub plant_median: Duration,
    /// plant / model.
    pub ratio: f64,
}

fn median_time(reps: usize, mut run: impl FnMut() -> Result<()>) -> Result<Duration> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        run()?;
        times.push(t0.elapsed());
    }
    times.sort();
    Ok(times[reps / 2])
}

/// Median wall time of each run over `reps` (at least 5) repetitions.
pub fn speed_ratio(reps: usize, model_run: impl FnMut() -> Result<()>, plant_run: impl FnMut() -> Result<()>) -> Result<SpeedReport> {
    let reps = reps.max(5);
    let model_median = median_time(reps, model_run)?;
    let plant_median = median_time(reps, plant_run)?;
    let ratio = plant_median.as_secs_f64() / model_median.as_secs_f64().max(1e-12);
    Ok(SpeedReport { model_median, plant_median, ratio })
}

/// One row of the metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub variable: String,
    pub regime: String,
    pub value_percent: f64,
}

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric,variable,regime,value_percent\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.16e}", r.metric, r.variable, r.regime, r.value_percent);
    }
    s
}

type Getter = fn(&TrajectoryRow) -> Option<f64>;

fn variables(compressible: bool) -> Vec<(&'static str, Getter)> {
    let mut v: Vec<(&'static str, Getter)> = vec![("P", |r| Some(r.p)), ("V", |r| Some(r.v))];
    if compressible {
        v.push(("rho", |r| r.rho));
        v.push(("mdot", |r| r.mdot));
    }
    v
}

/// Per-probe MAPE and Fit for every variable, plus the mean over probes.
///
/// Fit is omitted for probes whose true series is constant.
pub fn compare_trajectories(truth: &Trajectory, est: &Trajectory, regime: &str) -> Result<Vec<MetricRow>> {
    if truth.rows.len() != est.rows.len() {
        return Err(PincError::Schema(format!("row counts differ: {} vs {}", truth.rows.len(), est.rows.len())));
    }
    if truth.compressible() != est.compressible() {
        return Err(PincError::Schema("column sets differ".into()));
    }
    for (a, b) in truth.rows.iter().zip(&est.rows) {
        if a.window != b.window || a.probe_x != b.probe_x || (a.t - b.t).abs() > 1e-9 * a.t.abs().max(1.0) {
            return Err(PincError::Schema(format!("rows are misaligned at t = {}", a.t)));
        }
    }
    let probes = truth.probes();
    let mut rows = Vec::new();
    for (name, get) in variables(truth.compressible()) {
        let mut fits = Vec::new();
        let mut mapes = Vec::new();
        for &x in &probes {
            let yt: Vec<f64> = truth.at_probe(x).iter().filter_map(get).collect();
            let ye: Vec<f64> = est.at_probe(x).iter().filter_map(get).collect();
            let label = format!("{name}@{x}");
            if let Ok(m) = mape(&yt, &ye) {
                mapes.push(m);
                rows.push(MetricRow { metric: "mape".into(), variable: label.clone(), regime: regime.into(), value_percent: m });
            }
            match fit_compare(&yt, &ye) {
                Ok(f) => {
                    fits.push(f);
                    rows.push(MetricRow { metric: "fit".into(), variable: label, regime: regime.into(), value_percent: f });
                }
                Err(PincError::MetricDomain(_)) => {}
                Err(e) => return Err(e),
            }
        }
        for (metric, vals) in [("mape", &mapes), ("fit", &fits)] {
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                rows.push(MetricRow { metric: metric.into(), variable: name.into(), regime: regime.into(), value_percent: mean });
            }
        }
    }
    Ok(rows)
}
