//! Dataset generation, training orchestration, evaluation and reporting.

pub mod dataset;
pub mod report;
pub mod training;

pub use dataset::{
    gen_dataset, load_dataset, write_dataset, Dataset, DatasetSpec, ForceSpec, HoleGridSpec,
    PlateSpec, Sample, SampleDescriptor, SecondHoleSpec, Splits,
};
pub use report::{metrics_to_csv, report};
pub use training::{
    ablate, evaluate, prepare_sample, rmse, train, EvalReport, PropagationMode, RunConfig,
    RunMetrics, SamplingMode, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset spec invalid: {0}")]
    Spec(String),
    #[error("{0} failed: {1}")]
    Sample(String, String),
    #[error("io error on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("non-finite loss at training step {step}; last good checkpoint kept")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    HierarchyIo(#[from] crate::hierarchy::io::HierarchyIoError),
}
