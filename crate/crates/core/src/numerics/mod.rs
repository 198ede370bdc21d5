//! Minimal dense-tensor numerics with explicit per-layer forward/backward
//! passes, Adam, and finite-difference gradient verification.
//!
//! There is no computation graph: each layer exposes a `*_forward` that
//! returns whatever cache its `*_backward` needs, and models compose them by
//! hand. All math is 64-bit.

mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use layers::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, dense_backward, dense_forward,
    dropout_backward, dropout_forward, stable_sigmoid, tanh_backward, tanh_forward,
    BatchNormCache, BatchNormState, Mode,
};
pub use loss::mse_loss;
pub use lstm::{
    lstm_cell_backward, lstm_cell_forward, LstmCache, LstmCellRefs, LstmGradAcc,
    LSTM_PARAM_SUFFIXES,
};
pub use params::{adam_step, Param, ParamStore};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
