//! Gaussian mixtures on incomplete data.
//!
//! EM training of full-covariance mixtures where every sample may have its own
//! set of missing variables. The per-pattern matrix work (a Cholesky factor of
//! the observed block and the conditional covariance of the missing block) is
//! chained along a minimum spanning tree over the distinct missing patterns,
//! so each pattern only pays for the variables in which it differs from its
//! parent. A naive engine recomputes everything per pattern and serves as the
//! reference; both engines produce the same parameters up to rounding.

#[cfg(test)]
mod test_oracles;

pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod gmm;
pub mod impute;
pub mod linalg;
pub mod patterns;

pub use data::Dataset;
pub use error::{Error, Result};
pub use gmm::{fit, Engine, MixtureModel, TrainConfig};
