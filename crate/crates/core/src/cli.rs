//! Command-line front end: argument parsing and the five commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{PincError, Result};
use crate::forwardsim::{pinc_forward, ControlSchedule, Trajectory};
use crate::metrics::{compare_trajectories, metrics_to_csv};
use crate::mpc::{closed_loop, HorizonModel, PincPredictor, PlantPredictor};
use crate::net::NetworkModel;
use crate::plant::{simulate_plant, Plant};
use crate::training::{train_steady, train_transient};

#[derive(Debug, Parser)]
#[command(name = "pinc", version, about = "Physics-informed networks for pipe-flow simulation and control")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ConfigSource {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in parameter set.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    pub fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::from_toml(&read(path)?),
            (None, Some(name)) => RunConfig::preset(name),
            (None, None) => Err(PincError::Config("either --config or --preset is required".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Steady,
    Transient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Plant,
    Pinc,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a preset as a TOML configuration.
    Config {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a steady-state or transient network.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Frozen steady-state model providing initial conditions (transient only).
        #[arg(long)]
        ss_model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Produce a trajectory from the plant or a transient network.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long = "source", value_enum)]
        from: SourceArg,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed loop against the plant.
    Mpc {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, required_unless_present = "perfect_model")]
        model: Option<PathBuf>,
        /// Use the plant itself as the predictor.
        #[arg(long)]
        perfect_model: bool,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two trajectory files.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long, default_value = "transient")]
        regime: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 1 for configuration and input problems, 2 for numerical failures.
pub fn exit_code(err: &PincError) -> i32 {
    match err {
        PincError::NonPositivePressure(_)
        | PincError::ColebrookNonConvergence(_)
        | PincError::NonFiniteLoss { .. }
        | PincError::SolverFailure(_)
        | PincError::MetricDomain(_) => 2,
        _ => 1,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PincError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<NetworkModel> {
    NetworkModel::from_document(&read(path)?)
}

/// Execute one command; returns a one-line summary.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Config { preset, out } => {
            let text = RunConfig::preset(preset)?.to_toml()?;
            match out {
                Some(p) => {
                    write(p, &text)?;
                    Ok(format!("wrote {}", p.display()))
                }
                None => Ok(text),
            }
        }
        Command::Train { source, regime, ss_model, seed, out, loss_csv } => {
            let mut cfg = source.load()?;
            if seed.is_some() {
                cfg.run.seed = *seed;
            }
            let physics = cfg.physics()?;
            let trained = match regime {
                RegimeArg::Steady => train_steady(&physics, &cfg.network.steady.architecture(2)?, &cfg.training_for(false))?,
                RegimeArg::Transient => {
                    let path = ss_model
                        .as_ref()
                        .ok_or_else(|| PincError::Config("transient training needs --ss-model".into()))?;
                    let ss = load_model(path)?;
                    train_transient(&physics, &cfg.network.transient.architecture(4)?, &cfg.training_for(true), &ss)?
                }
            };
            write(out, &trained.model.to_document())?;
            if let Some(p) = loss_csv {
                write(p, &trained.report.to_csv())?;
            }
            let v = trained.report.final_validation().unwrap_or(f64::NAN);
            Ok(format!("wrote {} (final validation loss {v:.6e})", out.display()))
        }
        Command::Simulate { source, from, model, schedule, out } => {
            let cfg = source.load()?;
            let physics = cfg.physics()?;
            let mut sched = ControlSchedule::parse(&read(schedule)?, physics.norm.t_ref)?;
            sched.steps_per_window = cfg.run.steps_per_window;
            let traj = match from {
                SourceArg::Plant => simulate_plant(&physics, &cfg.plant_config(), &sched, &cfg.run.probes)?,
                SourceArg::Pinc => {
                    let path = model.as_ref().ok_or_else(|| PincError::Config("--source pinc needs --model".into()))?;
                    let m = load_model(path)?;
                    if !m.arch.is_transient() {
                        return Err(PincError::Config("simulation needs a transient model".into()));
                    }
                    pinc_forward(&m, &physics, &sched, &cfg.run.probes)?
                }
            };
            write(out, &traj.to_csv())?;
            Ok(format!("wrote {} ({} rows)", out.display(), traj.rows.len()))
        }
        Command::Mpc { source, model, perfect_model, duration, out } => {
            let cfg = source.load()?;
            let physics = cfg.physics()?;
            let mut plant = Plant::at_steady_state(physics, cfg.plant_config(), cfg.run.u_init)?;
            let mut predictor: Box<dyn HorizonModel> = if *perfect_model {
                Box::new(PlantPredictor::new(&plant, &cfg.mpc))
            } else {
                let path = model.as_ref().ok_or_else(|| PincError::Config("--model is required".into()))?;
                Box::new(PincPredictor::new(load_model(path)?, &cfg.mpc)?)
            };
            let duration = duration.unwrap_or(cfg.run.duration);
            let hist = closed_loop(predictor.as_mut(), &mut plant, &cfg.mpc, cfg.run.u_init, duration, &cfg.y_min_schedule())?;
            write(out, &hist.to_csv())?;
            let limit = 1.25 * cfg.mpc.dy_max.unwrap_or(f64::INFINITY) * cfg.normalization.p_ref;
            Ok(format!("wrote {} ({} samples, {} rate violations)", out.display(), hist.records.len(), hist.rate_violations(limit)))
        }
        Command::Evaluate { truth, est, regime, out } => {
            let a = Trajectory::from_csv(&read(truth)?)?;
            let b = Trajectory::from_csv(&read(est)?)?;
            let rows = compare_trajectories(&a, &b, regime)?;
            write(out, &metrics_to_csv(&rows))?;
            Ok(format!("wrote {} ({} metrics)", out.display(), rows.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&PincError::Config("x".into())), 1);
        assert_eq!(exit_code(&PincError::SolverFailure("x".into())), 2);
    }
}
