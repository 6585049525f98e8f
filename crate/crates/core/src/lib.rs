//! Wasserstein-robust CVaR portfolio selection with a shift-aware,
//! dependence-robust Gaussian-supremum validator.
//!
//! The pipeline has two phases. [`solver`] generates a menu of candidate
//! portfolios by solving the weighted Wasserstein–CVaR reformulation over a
//! grid of radii. [`validator`] then reweights a time-ordered validation fold
//! toward the deployment regime ([`shift`]), calibrates a simultaneous upper
//! band with a block multiplier bootstrap, and picks the least conservative
//! candidate whose band stays under the budget (or abstains).
//!
//! [`sim`] and [`bench`] provide the synthetic AR(1) market and the Monte
//! Carlo harness used to compare the validator against its baselines.

pub mod bench;
pub mod error;
pub mod risk;
pub mod seed;
pub mod shift;
pub mod sim;
pub mod solver;
pub mod validator;

pub use error::{Error, Result};
