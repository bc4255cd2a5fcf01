//! Optimization loop for EPVT and the ERM baseline.
//!
//! Randomness comes from separate streams of the run seed (initialization,
//! batching, mixup, augmentation), so changing one consumer never shifts the
//! draws of another.

pub mod augment;
pub mod batching;
mod checkpoint;
mod config;
mod fit;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{AugmentConfig, Method, TrainConfig};
pub(crate) use config::{parse_bool, parse_num};
pub use fit::{fit, fit_with_hooks, EpochLog, FitHooks, FitOutcome, Trainer, TRAIN_LOG_HEADER};
