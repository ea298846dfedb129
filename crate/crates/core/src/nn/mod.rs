//! Small dense/convolutional/recurrent network toolkit with cached-activation
//! backward passes and an Adam optimizer.
//!
//! Everything operates on row-major `f64` buffers. Layers are a closed enum so
//! networks stay `Clone` and can be copied into per-worker replicas.

mod adam;
mod gradcheck;
mod layers;
pub(crate) mod linalg;
mod lstm;
mod network;
mod param;
mod serialize;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, max_relative_error, numeric_gradient, relative_error, GRAD_CHECK_FLOOR};
pub use layers::{Activation, Conv2d, Dense, Layer, LayerSpec};
pub use lstm::{Lstm, LstmState};
pub use network::{concat_columns, split_columns, Sequential};
pub use param::{Param, Parameterized};
pub use serialize::{load_params, read_params, read_raw, save_params, write_params, write_raw, ModelHeader, FORMAT_VERSION, MAGIC};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("backward called on {0} before forward")]
    NoForwardCache(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
