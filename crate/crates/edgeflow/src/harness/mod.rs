//! Data ingestion, weight persistence, the baseline trainer, and the
//! experiment runner behind the CLI.

pub mod experiment;
pub mod mnist;
pub mod synth;
pub mod train;
pub mod weights;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentError, ResourceRow, RunReport, TimeBreakdown,
    Topology,
};
pub use mnist::{load_mnist, DataError, Dataset};
pub use train::{evaluate, init_params, train_baseline, TrainConfig, TrainError, TrainOutcome};
pub use weights::{load_weights, save_weights, WeightsError};
