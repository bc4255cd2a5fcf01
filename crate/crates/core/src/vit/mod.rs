//! A small vision transformer whose input sequence can carry prompt tokens
//! between the class token and the patch tokens.

mod config;
pub mod layers;
mod model;
pub mod ops;

pub use config::{FactorInit, ModelConfig};
pub use layers::{EncoderBlock, LayerNorm, Linear};
pub use model::{EpvtModel, ForwardOptions, NamedVar, ParamGroup, PIXEL_MEAN, PIXEL_STD};
