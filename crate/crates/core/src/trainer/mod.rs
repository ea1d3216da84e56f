//! Pretraining loop: Adam, warmup-stable-decay schedule, evenly spaced
//! checkpoints and routing traces on a fixed validation batch.

mod adam;
mod config;
pub mod corpus;
mod run;
mod schedule;
pub mod trace;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use config::TrainConfig;
pub use corpus::{load_corpus, synthetic_corpus, write_corpus, Corpus};
pub use run::{
    checkpoint_dir, read_loss_log, step_name, trace_from_checkpoint, trace_path, train, LossRow,
    RunManifest, StepFile, TrainSpec, TrainSummary, LOSS_HEADER, LOSS_LOG, RUN_MANIFEST,
};
pub use schedule::wsd_lr;
pub use trace::{read_trace, routing_trace, write_trace, RouteRecord, ValidationBatch};
