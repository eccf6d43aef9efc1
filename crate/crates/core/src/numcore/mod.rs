//! Dense tensor kernels, LSTM cell, Adam and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod linear;
pub mod lstm;
pub mod ops;
pub mod param;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use linear::{embed_rows, scatter_rows, Linear};
pub use lstm::{lstm_cell, CellCache, LstmParams};
pub use param::{Module, Parameter};
pub use tensor::{matmul_backward, Tensor};
