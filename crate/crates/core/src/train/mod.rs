//! Joint training of the shared network and per-series smoothing parameters.

mod batch;
mod benchmark;
mod config;
mod model;
mod optim;
mod trainer;

pub use batch::{epoch_seed, make_batches, pinball_loss, WindowBatch, WindowRef};
pub use benchmark::{
    benchmark_batched_vs_looped, benchmark_repeated, gradient_epoch, losses_equivalent, BenchmarkReport, GradientEpoch,
    EQUIVALENCE_TOLERANCE,
};
pub use config::{TrainConfig, MAX_BATCH_SIZE};
pub use model::{
    Checkpoint, ForecastRequest, Model, SeriesParamsEntry, TrainingSeries, TrainingSet, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use optim::{clip_global_norm, AdamMoments};
pub use trainer::{
    batch_gradients, early_stop_check, validate, windows_on_tape, BatchGradients, EpochRecord, FitOutcome,
    StopDecision, TapeWindows, Trainer, ValidationReport,
};
