//! The hybrid backbone: stem, four patch-embedded stages of Conv and Trans
//! blocks, and the pooled classification head.

pub mod blocks;
pub mod config;
pub mod model;
pub mod params;
pub mod stack;

use thiserror::Error;

pub use config::ModelConfig;
pub use model::{ForwardOutput, Model};
pub use stack::{parse_stack_spec, parse_stack_spec_for, ParseError, StackSpec, Variant};

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid model config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
