//! Small dense numeric core: row-major `f64` matrices, a reverse-mode
//! autodiff tape, batch normalisation, Adam and a finite-difference
//! gradient checker.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use error::{NumError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use nn::{uniform_init, BatchNorm, NormMode};
pub use params::{ParamStore, ParamVars};
pub use tape::{masked_softmax, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;
