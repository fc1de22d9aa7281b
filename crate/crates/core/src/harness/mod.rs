//! Training harness: configuration, synthetic data, batching, optimizer,
//! schedule, checkpoints, metrics and self-checks.

pub mod adam;
pub mod batching;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod metrics;
pub mod schedule;
pub mod synth;
pub mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use batching::{batch_dataset, collate, make_batches, LabelledBatch};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint};
pub use config::{ScheduleMetric, SyntheticTask, TrainConfig};
pub use metrics::{MetricsRow, MetricsWriter};
pub use schedule::{lr_schedule, LrAction, Thresholds};
pub use synth::{synth_generate, Utterance};
pub use train::{evaluate, train, TrainOutcome};
