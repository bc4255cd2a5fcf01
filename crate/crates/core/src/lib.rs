//! Environment-aware prompt vision transformer (EPVT) for domain
//! generalization, together with a synthetic benchmark of lesion-like images
//! whose artifact overlays define the domains.
//!
//! - [`synth`] renders images, domain-labelled datasets and bias "trap" splits.
//! - [`vit`] is a small vision transformer that accepts prompt tokens.
//! - [`prompt`] holds the shared prompt, the rank-one domain factors, and the
//!   adapter that mixes domain prompts for unseen images.
//! - [`objectives`] implements the domain-mixup and adapted-prompt losses.
//! - [`train`] runs optimization, early stopping and checkpointing.
//! - [`eval`] provides ROC-AUC, Fréchet distance, weight reports and sweeps.

pub mod config;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod prompt;
pub mod rng;
pub mod synth;
pub mod train;
pub mod vit;

pub use error::{EpvtError, Result};
