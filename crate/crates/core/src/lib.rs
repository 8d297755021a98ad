//! Tabular classification with prior-fitted networks.
//!
//! A small transformer is trained offline on synthetic tasks drawn from a
//! prior and then performs approximate Bayesian inference on a new dataset in
//! one forward pass. Around it sit the pieces needed to evaluate it as a
//! disease-forecasting model: preprocessing, gradient-boosted baselines,
//! TreeSHAP attribution, imbalanced-classification metrics and per-pixel
//! probability maps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod baselines;
pub mod error;
pub mod eval;
pub mod explain;
pub mod geomap;
pub mod numerics;
pub mod pfn;
pub mod preprocess;
pub mod prior;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Graph64 = numerics::Graph<f64>;
