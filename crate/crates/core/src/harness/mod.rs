//! Experiment driver: configuration, synthetic data, the training loop,
//! sweeps and the built-in verification suite.

pub mod config;
pub mod data;
pub mod sweep;
pub mod train;
pub mod verify;

pub use config::{load_config, parse_config, ExperimentConfig, ModelSpec, OutputConfig};
pub use data::{accelerator_batches, make_dataset, DataConfig, Dataset, DatasetKind};
pub use sweep::{sweep, SweepAxis, SweepPoint, SweepReport};
pub use train::{
    learning_rate_at, run_experiment, train, train_on, RunOutput, RunSummary, StepMetrics,
};
pub use verify::{verify, Check, VerifyReport};
