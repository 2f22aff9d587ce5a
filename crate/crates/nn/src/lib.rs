//! A small reverse-mode differentiation engine for convolutional regression
//! on fixed-size 2-D grids.
//!
//! Everything runs on `f64` with fixed, left-to-right reduction order, so a
//! forward or backward pass is bit-reproducible for identical inputs.
//!
//! The main entry point is [`Graph`]: build a forward computation out of
//! parameter and input leaves, call [`Graph::backward`] on a scalar loss and
//! fold the resulting gradients into a [`ParamSet`]. [`Adam`] then consumes
//! those gradients.

mod adam;
mod error;
mod graph;
mod gradcheck;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, AdamState};
pub use error::NnError;
pub use gradcheck::{grad_check, grad_check_with_kinks, GradCheckReport, Probe};
pub use graph::{Activation, BatchNormState, BatchStats, Gradients, Graph, Mode, Var};
pub use params::{Param, ParamId, ParamSet};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NnError>;
