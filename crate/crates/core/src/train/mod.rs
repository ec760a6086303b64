//! Datasets, the SGD loop, checkpoints and the convergence comparison.

mod checkpoint;
mod compare;
mod config;
mod data;
mod trainer;

pub use checkpoint::{Checkpoint, MAGIC};
pub use compare::{compare_convergence, quantization_mse, ComparisonReport, VariantResult, SEGMENTATION_TARGET};
pub use config::{lr_schedule, LossForm, TrainConfig};
pub use data::{dataset_stems, load_dataset, save_dataset, synthesize_dataset, synthetic_sigma, TrainingSample};
pub use trainer::{
    dataset_accuracy, dataset_weights, predict, read_loss_csv, resume, save_run, train, write_loss_csv, LogRow,
    TrainOutcome,
};
