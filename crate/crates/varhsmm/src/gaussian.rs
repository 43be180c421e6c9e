//! State-dependent conditional Gaussian densities for the VAR(p) emission
//! process.
//!
//! Each density is evaluated through a Cholesky factorization Sigma = L L^T,
//! so a log density is one triangular solve instead of an explicit inverse.
//! Autoregressive conditioning always uses the raw observed history: the lag
//! vectors entering the conditional mean are the observations themselves, no
//! matter which state generated them. For the first few observations the lag
//! window shrinks (t-1 lags are used when fewer than p exist), which is the
//! conditional-likelihood treatment of the series start; it keeps T identical
//! across models during cross-validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::model::{ModelParams, ModelSpec, TimeSeries, SYMMETRY_TOL};

/// Lower-triangular Cholesky factor of a covariance matrix, with its log
/// determinant cached.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    /// Factorizes a symmetric positive definite matrix.
    ///
    /// Asymmetric (beyond 1e-12) or non-PD input is a hard error; estimation
    /// code is expected to hand well-formed covariances here, and silently
    /// repairing one would mask estimation bugs. `state` only labels the error.
    pub fn from_covariance(sigma: &DMatrix<f64>, state: usize) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::DimensionMismatch {
                context: "covariance matrix".into(),
                expected: sigma.nrows(),
                actual: sigma.ncols(),
            });
        }
        let asym = (sigma - sigma.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidParams(format!(
                "covariance for state {state} is asymmetric (max deviation {asym:e})"
            )));
        }
        let chol = nalgebra::Cholesky::new(sigma.clone())
            .ok_or(Error::NotPositiveDefinite { state })?;
        let lower = chol.unpack();
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { lower, log_det })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// log |Sigma| = 2 sum_k log L_kk.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves L z = v by forward substitution.
    pub fn solve_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a strictly positive diagonal")
    }

    /// Dimension d of the underlying covariance.
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }
}

/// Conditional mean mu_i + sum_k A_{k,i} y_{t-k} for the given state.
///
/// `history` holds the most recent observations first (`history[0]` = y_{t-1});
/// lags beyond the available history are omitted, shrinking the window at the
/// start of a series.
pub fn conditional_mean(
    state: usize,
    history: &[DVector<f64>],
    params: &ModelParams,
) -> Result<DVector<f64>> {
    let n_states = params.means.len();
    if state >= n_states {
        return Err(Error::StateOutOfRange { state, n_states });
    }
    let mut mean = params.means[state].clone();
    let lags = params.ar_coeffs[state].len().min(history.len());
    for k in 0..lags {
        mean += &params.ar_coeffs[state][k] * &history[k];
    }
    Ok(mean)
}

/// Gaussian log density at `y` with the given mean and Cholesky-factorized
/// covariance: -(d/2) log 2pi - (1/2) log|Sigma| - (1/2) ||L^{-1}(y - mean)||^2.
pub fn log_density(y: &DVector<f64>, mean: &DVector<f64>, chol: &CholeskyFactor) -> f64 {
    let diff = y - mean;
    let z = chol.solve_lower(&diff);
    -0.5 * (chol.dim() as f64) * LN_2PI - 0.5 * chol.log_det() - 0.5 * z.norm_squared()
}

/// Log density of a duration block: the sum of the per-time conditional log
/// densities of `n` consecutive observations starting at `t_start` (0-based),
/// all attributed to `state`. AR lags cross the segment boundary into whatever
/// was observed before it.
pub fn segment_log_density(
    state: usize,
    t_start: usize,
    n: usize,
    series: &TimeSeries,
    params: &ModelParams,
) -> Result<f64> {
    let t_len = series.len();
    if n == 0 || t_start + n > t_len {
        return Err(Error::TimeOutOfRange(format!(
            "segment [{t_start}, {}) of a series of length {t_len}",
            t_start + n
        )));
    }
    let n_states = params.means.len();
    if state >= n_states {
        return Err(Error::StateOutOfRange { state, n_states });
    }
    let chol = CholeskyFactor::from_covariance(&params.covariances[state], state)?;
    let p = params.ar_coeffs[state].len();
    let mut total = 0.0;
    for t in t_start..t_start + n {
        let lags: Vec<DVector<f64>> = (1..=p.min(t)).map(|k| series.row(t - k)).collect();
        let mean = conditional_mean(state, &lags, params)?;
        total += log_density(&series.row(t), &mean, &chol);
    }
    Ok(total)
}

/// Per-time, per-state conditional log densities for a whole series: entry
/// (t, j) is log f(y_t | y_{t-1..t-p}, state j). One Cholesky per state.
pub(crate) fn emission_log_densities(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    if series.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            context: "series dimension vs model".into(),
            expected: spec.dim,
            actual: series.dim(),
        });
    }
    let t_len = series.len();
    let m = spec.n_states;
    let p = spec.ar_order;
    let chols: Vec<CholeskyFactor> = (0..m)
        .map(|j| CholeskyFactor::from_covariance(&params.covariances[j], j))
        .collect::<Result<Vec<_>>>()?;
    let rows = series.rows_as_vectors();
    let mut logf = DMatrix::zeros(t_len, m);
    let mut mean = DVector::zeros(spec.dim);
    for t in 0..t_len {
        let lags = p.min(t);
        for j in 0..m {
            mean.copy_from(&params.means[j]);
            for k in 0..lags {
                mean.gemv(1.0, &params.ar_coeffs[j][k], &rows[t - 1 - k], 1.0);
            }
            logf[(t, j)] = log_density(&rows[t], &mean, &chols[j]);
        }
    }
    Ok(logf)
}
