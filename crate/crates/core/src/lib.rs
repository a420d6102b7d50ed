//! Joint channel estimation, detection and decoding for short LDPC-coded
//! MIMO frames.
//!
//! LLR convention: `log P(b=0)/P(b=1)`, so a positive value favours bit 0.
//! SNR convention: `SNR = 1/σ²` with unit-energy symbols.

pub mod admm;
pub mod baselines;
pub mod channel;
pub mod exec;
pub mod gf2code;
pub mod harness;
pub mod jcdd_gaussian;
pub mod jcdd_sparse;
pub mod linalg;
pub mod modem;
pub mod params;
pub mod receiver;
pub mod tuner;

pub use receiver::{ReceiverOutput, SolverError};
