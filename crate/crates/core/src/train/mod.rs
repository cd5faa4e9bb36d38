//! Toy dataset, optimizer, adversarial training loop and checkpoints.

mod adam;
pub mod checkpoint;
pub mod dataset;
mod metrics;
pub mod probe;
pub(crate) mod trainer;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use dataset::{generate_dataset, generate_record, load_dataset, save_dataset, Grammar, Outfit, ToyRecord};
pub use probe::{controllability_probe, ProbeReport, ProbeResult};
pub use metrics::{psnr, MetricsLog, StepMetrics, METRICS_HEADER};
pub use trainer::{dataset_for, rig_for, train, train_camera, vocab_for, Trainer};
