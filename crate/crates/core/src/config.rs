//! Run configuration: TOML sections and the two published presets.

use serde::{Deserialize, Serialize};

use crate::error::{PincError, Result};
use crate::forwardsim::DEFAULT_STEPS_PER_WINDOW;
use crate::mpc::MpcConfig;
use crate::net::{ActivationKind, NetworkArchitecture};
use crate::physics::{FluidKind, FluidSystem, NormalizationRefs, Physics};
use crate::plant::PlantConfig;
use crate::training::TrainingConfig;

pub const PRESETS: [&str; 2] = ["table1-incompressible", "table2-compressible"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub activation: String,
    pub skip_connections: bool,
}

impl NetworkSpec {
    pub fn architecture(&self, input_dim: usize) -> Result<NetworkArchitecture> {
        NetworkArchitecture::new(input_dim, self.n_layers, self.hidden_size, ActivationKind::parse(&self.activation)?, self.skip_connections)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub steady: NetworkSpec,
    pub transient: NetworkSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub steady: TrainingConfig,
    pub transient: TrainingConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub n_cells: usize,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YMinStep {
    pub t: f64,
    pub y_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Overrides the training seeds when set.
    pub seed: Option<u64>,
    pub output_dir: String,
    /// Normalized probe positions for trajectories.
    pub probes: Vec<f64>,
    pub steps_per_window: usize,
    /// Closed-loop start control and length, s.
    pub u_init: f64,
    pub duration: f64,
    #[serde(default)]
    pub y_min_schedule: Vec<YMinStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: FluidSystem,
    pub normalization: NormalizationRefs,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub plant: PlantSection,
    pub mpc: MpcConfig,
    pub run: RunSection,
}

fn spec(n_layers: usize, hidden_size: usize, activation: &str, skip_connections: bool) -> NetworkSpec {
    NetworkSpec { n_layers, hidden_size, activation: activation.into(), skip_connections }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table1-incompressible" => Ok(Self::table1()),
            "table2-compressible" => Ok(Self::table2()),
            other => Err(PincError::Config(format!("unknown preset `{other}`; expected one of {PRESETS:?}"))),
        }
    }

    pub fn table1() -> Self {
        let norm = NormalizationRefs::table1();
        Self {
            system: FluidSystem::table1(),
            normalization: norm,
            network: NetworkSection { steady: spec(4, 20, "tanh", false), transient: spec(4, 20, "tanh", false) },
            training: TrainingSection { steady: TrainingConfig::table1_steady(), transient: TrainingConfig::table1_transient() },
            plant: PlantSection { n_cells: 50, dt: norm.t_ref / 100.0 },
            mpc: MpcConfig::table1(),
            run: RunSection {
                seed: None,
                output_dir: "out".into(),
                probes: vec![0.1],
                steps_per_window: DEFAULT_STEPS_PER_WINDOW,
                u_init: 0.8,
                duration: 30.0,
                y_min_schedule: vec![YMinStep { t: 0.0, y_min: 0.6 }, YMinStep { t: 15.0, y_min: 0.4 }],
            },
        }
    }

    pub fn table2() -> Self {
        let norm = NormalizationRefs::table2();
        Self {
            system: FluidSystem::table2(),
            normalization: norm,
            network: NetworkSection { steady: spec(8, 43, "tanh", false), transient: spec(8, 93, "swish", true) },
            training: TrainingSection { steady: TrainingConfig::table2_steady(), transient: TrainingConfig::table2_transient() },
            plant: PlantSection { n_cells: 50, dt: norm.t_ref / 100.0 },
            mpc: MpcConfig::table2(),
            run: RunSection {
                seed: None,
                output_dir: "out".into(),
                probes: vec![0.075, 0.25, 0.5, 0.75],
                steps_per_window: DEFAULT_STEPS_PER_WINDOW,
                u_init: 0.8,
                duration: 600.0,
                y_min_schedule: vec![
                    YMinStep { t: 0.0, y_min: 0.962 },
                    YMinStep { t: 200.0, y_min: 0.955 },
                    YMinStep { t: 400.0, y_min: 0.948 },
                ],
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PincError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PincError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let physics = self.physics()?;
        self.network.steady.architecture(2)?;
        self.network.transient.architecture(4)?;
        self.training.steady.validate(crate::physics::Regime::Steady)?;
        self.training.transient.validate(crate::physics::Regime::Transient)?;
        self.plant_config().validate()?;
        self.mpc.validate(physics.norm.t_ref)?;
        if self.run.probes.is_empty() || self.run.probes.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(PincError::Config("run.probes must be non-empty and within [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.run.u_init) || !(self.run.duration > 0.0) || self.run.steps_per_window < 2 {
            return Err(PincError::Config("run.u_init, run.duration or run.steps_per_window out of range".into()));
        }
        Ok(())
    }

    pub fn physics(&self) -> Result<Physics> {
        Physics::new(self.system.clone(), self.normalization)
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig { n_cells: self.plant.n_cells, dt: self.plant.dt }
    }

    pub fn compressible(&self) -> bool {
        self.system.fluid == FluidKind::IdealGas
    }

    /// Training configuration for a regime with the run seed applied.
    pub fn training_for(&self, transient: bool) -> TrainingConfig {
        let t = if transient { &self.training.transient } else { &self.training.steady };
        match self.run.seed {
            Some(s) => t.clone().with_seed(s),
            None => t.clone(),
        }
    }

    pub fn y_min_schedule(&self) -> Vec<(f64, Option<f64>)> {
        self.run.y_min_schedule.iter().map(|s| (s.t, Some(s.y_min))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
        assert!(RunConfig::preset("table3").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = RunConfig::table1().to_toml().unwrap().replacen("[plant]\n", "[plant]\ncells = 3\n", 1);
        assert!(matches!(RunConfig::from_toml(&text), Err(PincError::Config(_))));
    }

    #[test]
    fn presets_carry_the_published_values() {
        let c = RunConfig::table2();
        let t = c.network.transient.architecture(4).unwrap();
        assert_eq!((t.n_layers, t.hidden_size, t.activation, t.skip_connections), (8, 93, ActivationKind::Swish, true));
        assert_eq!((c.training.transient.n_f, c.training.transient.n_b, c.training.transient.n_i), (4608, 1449, 1213));
        assert_eq!(c.training.steady.adam.epochs, 1095);
        assert_eq!((c.mpc.n_c, c.mpc.n_p, c.mpc.ts), (2, 10, 10.0));
        let i = RunConfig::table1();
        assert_eq!(i.training.transient.adam.epochs, 300);
        assert_eq!(i.system.p_reservoir, 2e5);
        assert_eq!(i.plant.dt, 0.1);
    }
}
