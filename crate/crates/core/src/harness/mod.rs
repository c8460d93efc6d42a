//! Synthetic-data training harness: dataset generation, class-balanced
//! sampling, free-table and MLP embedding models, the training loop, and
//! retrieval/clustering metrics. Everything here runs in `f64` and is fully
//! deterministic given the run seed.

mod data;
mod gradcheck;
mod metrics;
mod model;
mod train;

pub use data::{
    dataset_from_csv, dataset_to_csv, gen_synthetic, sample_batch, BatchSpec, DatasetConfig,
    SyntheticDataset,
};
pub use gradcheck::finite_diff_check;
pub use metrics::{nmi_f1, recall_at_k};
pub use model::{Model, ModelConfig, ModelKind};
pub use train::{
    metric_loss, train, IterRecord, MetricRecord, NormSummary, RunConfig, RunLog, WindowRecord,
};
