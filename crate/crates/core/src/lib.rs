pub mod dual;
pub mod error;
pub mod net;
pub mod physics;
pub mod sampling;
pub mod training;
pub mod forwardsim;
pub mod plant;
pub mod mpc;
pub mod metrics;
pub mod config;
pub mod cli;

pub use error::{PincError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/physics.md")]
    mod physics {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/plant.md")]
    mod plant {}
    #[doc = include_str!("../../../book/src/forward-simulation.md")]
    mod forward_simulation {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
