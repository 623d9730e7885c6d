//! Functional Bayesian Tucker and CP decomposition for tensors whose modes are
//! indexed by continuous values.
//!
//! Every mode carries a vector of latent functions with a Matérn Gaussian
//! process prior, represented as a linear state-space model so that inference
//! along each mode is a Kalman filter / RTS smoother pass. Observations are
//! coupled through a Tucker core (or the CP diagonal core) and a Gamma noise
//! precision; conditional expectation propagation turns each likelihood term
//! into Gaussian/Gamma message factors.
//!
//! The numerics are generic over [`Scalar`] (`f32` or `f64`). Aliases for the
//! common `f64` case live at the crate root.

// `!(x > 0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cep;
pub mod chain;
pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type GaussianBelief = linalg::GaussianBelief<f64>;
pub type GaussianNat = linalg::GaussianNat<f64>;
pub type TuckerCore = linalg::TuckerCore<f64>;
pub type MaternHyper = kernel::MaternHyper<f64>;
pub type MaternSsm = kernel::MaternSsm<f64>;
pub type ModeChain = chain::ModeChain<f64>;
pub type Dataset = data::Dataset<f64>;
pub type FitConfig = model::FitConfig<f64>;
pub type FittedModel = model::FittedModel<f64>;
