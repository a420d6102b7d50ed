//! Output and error types shared by every receiver.

use crate::channel::ChannelError;
use crate::gf2code::CodeError;
use crate::linalg::{CMat, LinalgError};
use crate::modem::ModemError;
use crate::params::ParamError;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput {
    /// Hard decisions on the stacked coded bits.
    pub bits: Vec<u8>,
    /// Stacked effective channel estimate (`N_r × N_str`).
    pub g_hat: CMat,
    /// True only when `bits` satisfies every parity check.
    pub converged: bool,
    /// Iterations, layers or turbo rounds actually run.
    pub iterations: usize,
    /// Relaxed bits after each iteration, when recording was requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("layer {layer}, bit {bit}: denominator {value:.3e} <= 0; concave penalty {penalty} is too large for this layer")]
    Denominator { layer: usize, bit: usize, penalty: f64, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}
