//! Double-precision dense tensors with a reverse-mode autodiff tape, plus
//! the training utilities built on them: label-smoothed cross-entropy,
//! AdamW, the inverse-square-root schedule and finite-difference checking.

pub mod check;
pub mod graph;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use check::{finite_diff_check, CheckError, CheckOptions, CheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use loss::{label_smoothed_ce, masked_ls_ce_row, CeTarget, LossError, MASKED};
pub use optim::{inv_sqrt_lr, AdamW, AdamWConfig, ShapeMismatch};
pub use params::{CheckpointError, Gradients, ParamId, ParamStore};
pub use tensor::{unfold, ShapeError, Tensor};
