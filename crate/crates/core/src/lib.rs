//! Discrete-round simulator and online optimizer for model-switching
//! federated fine-tuning over an interference-limited cellular uplink.
//!
//! The crate is organized around the round loop: `channel` and `energy`
//! model the physical layer, `fedsim` runs the learning system, `bound`
//! monitors the generalization-gap bound, `switching` and `radio` hold the
//! per-round optimizers, and `orchestrator` ties them together. `config` and
//! `metrics` are the experiment-facing surface used by the CLI.

pub mod bound;
pub mod channel;
pub mod config;
pub mod energy;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod numeric;
pub mod orchestrator;
pub mod radio;
pub mod rng;
pub mod switching;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use metrics::{MetricsRow, MetricsTable};
pub use orchestrator::{run_experiment, Strategy};
