//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! The engine records an eager tape ([`Graph`]) of NHWC convolution,
//! 1×1 convolution, activation, normalization and reduction ops, and
//! supports caller-defined ops through [`CustomOp`]. It carries just
//! enough machinery to train a small dense-descriptor encoder on a CPU:
//! [`adamw_step`] with decoupled weight decay, [`cosine_lr`], a
//! finite-difference [`grad_check`], and a raw tensor [`store`].

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod store;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, ConvGeometry, CustomOp, Graph, Var};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
pub use params::ParamSet;
pub use scalar::Scalar;
pub use tensor::Tensor;
