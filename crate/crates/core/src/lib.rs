//! Sparse Bayesian learning with a noise-conditioned Bayesian-Lasso prior.
//!
//! The crate provides a greedy fast marginal likelihood engine ([`sbl`]) with
//! three prior rules, kernel design construction ([`kernels`]), predictive
//! distributions ([`predict`]), Sinc simulation studies ([`simbench`]) and
//! tabular data handling for variable selection ([`dataio`]).

pub mod dataio;
pub mod error;
pub mod kernels;
pub mod predict;
pub mod sbl;
pub mod simbench;

pub use error::{Result, SblError};
pub use kernels::{build_design, kernel_eval, DesignMatrix, KernelSpec};
pub use sbl::{fit, FitConfig, FitResult, Hyperpriors, LambdaCount, PriorRule};
