//! Experiment harness: configuration, training loop, evaluation and reports.

pub mod config;
pub mod evaluate;
pub mod optim;
pub mod runner;
pub mod train;

pub use config::{load_config, ExperimentConfig, Task};
pub use runner::{run_experiment, run_in_memory};
pub use train::{train, RunHistory, TrainOutcome};
