//! Regularized vector autoregressive hidden semi-Markov models (VAR(p)-HSMM).
//!
//! A VAR(p)-HSMM switches between M latent regimes. Each regime holds for an
//! explicitly modeled duration (a nonparametric density on 1..=D rather than
//! the geometric dwell time a Markov chain implies), emits observations from
//! its own Gaussian vector autoregression, and then hands over to a different
//! regime. The crate provides:
//!
//! - simulation from the generative process, with ground-truth paths
//!   ([`simulate`](crate::simulate::simulate));
//! - explicit-duration forward-backward inference in the log domain
//!   ([`inference`]);
//! - penalized EM estimation ([`em::fit`]) embedding two regularized
//!   estimators in the M-step: trace-matched shrinkage of the state
//!   covariances and an l1 (LASSO) penalty on the autoregression matrices
//!   ([`mstep`]);
//! - duration-explicit Viterbi decoding and posterior-predictive-mean
//!   one-step forecasting ([`decode`]);
//! - cross-validated selection of the two regularization strengths by rolling
//!   one-step mean squared forecast error, and MSFE-ranked model comparison
//!   ([`selection`]);
//! - log-return and lagged-correlation screening utilities ([`analysis`]).
//!
//! # Quick start
//!
//! Simulate a two-regime series, fit it back, and decode the regimes:
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use varhsmm::{ModelParams, ModelSpec};
//! use varhsmm::decode::viterbi_decode;
//! use varhsmm::em::{fit, FitConfig};
//! use varhsmm::simulate::{match_states, simulate};
//!
//! let spec = ModelSpec::new(2, 1, 0, 4)?;
//! let truth = ModelParams {
//!     initial: DVector::from_vec(vec![0.5, 0.5]),
//!     transition: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
//!     duration: DMatrix::from_row_slice(2, 4, &[0.4, 0.3, 0.2, 0.1,
//!                                               0.1, 0.2, 0.3, 0.4]),
//!     means: vec![DVector::from_vec(vec![-2.0]), DVector::from_vec(vec![2.0])],
//!     covariances: vec![DMatrix::from_row_slice(1, 1, &[0.5]),
//!                       DMatrix::from_row_slice(1, 1, &[1.0])],
//!     ar_coeffs: vec![vec![], vec![]],
//! };
//!
//! let sim = simulate(&spec, &truth, 300, 7)?;
//! let result = fit(&sim.series, &spec, &FitConfig::default(), None)?;
//! assert!(result.converged);
//!
//! let path = viterbi_decode(&sim.series, &result.params, &spec)?;
//! let (_, misclassification) = match_states(&path.states, &sim.true_states, 2)?;
//! assert!(misclassification < 0.05);
//! # Ok::<(), varhsmm::Error>(())
//! ```
//!
//! Model documents serialize to a JSON interchange format
//! ([`model::model_to_json`]) shared with the `varhsmm` command-line tool;
//! the book under `book/` walks through the full workflow.

// Dense index arithmetic reads better as explicit loops here.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod decode;
pub mod em;
pub mod error;
pub mod gaussian;
pub mod inference;
mod math;
pub mod model;
pub mod mstep;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    check_irreducibility, model_from_json, model_to_json, validate_params, ModelParams, ModelSpec,
    TimeSeries,
};
