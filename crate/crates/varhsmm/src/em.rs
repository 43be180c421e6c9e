//! Penalized EM: initialization, E/M alternation, convergence, diagnostics.
//!
//! Each iteration computes the posterior summaries (E-step), then updates the
//! initial distribution, transition matrix, and duration table in closed
//! form, and per state the intercept/AR matrices by weighted LASSO followed
//! by the shrinkage covariance of the fresh residuals. Convergence is judged
//! on the penalized objective: the data log-likelihood minus
//! `lambda_a * sum_j ||A_j||_1`. The shrinkage regularizer acts through the
//! M-step estimator only and adds no term to the objective.
//!
//! Without shrinkage (`lambda_sigma = 0`) every M-step block is an exact
//! conditional maximizer and the reported trace is non-decreasing up to
//! floating-point slack. With shrinkage active the covariance update is an
//! estimator rather than the surrogate maximizer, so once per-iteration
//! likelihood gains fall below the shrinkage-induced loss the trace descends
//! toward the regularized fixed point; convergence detection handles both
//! regimes because it watches the magnitude of the change.
//!
//! A state whose posterior mass collapses below `1e-6 * T` keeps its emission
//! parameters for that iteration and is flagged, so transient degeneracy
//! cannot abort an otherwise healthy fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{log_density, CholeskyFactor};
use crate::inference::e_step;
use crate::model::{ModelParams, ModelSpec, TimeSeries};
use crate::mstep::{
    update_covariance, update_delta, update_duration, update_regression_warm, update_transition,
    RegularizationConfig,
};
use crate::simulate::GaussianSource;

/// How [`fit`] obtains its starting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// Deterministic segmented-moments start; see [`initialize`].
    SegmentedMoments,
    /// The caller passes starting parameters to [`fit`].
    UserSupplied,
}

/// Tuning for a single EM fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub reg: RegularizationConfig,
    pub max_iterations: usize,
    /// Relative change of the penalized objective below which EM stops.
    pub tolerance: f64,
    pub init_policy: InitPolicy,
    /// Seed for the optional initialization jitter (and recorded in manifests).
    pub seed: u64,
    /// Scale of the optional mean jitter at initialization, as a multiple of
    /// each coordinate's standard deviation. Zero (the default) keeps the
    /// segmented-moments start exactly deterministic.
    pub init_jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            reg: RegularizationConfig::none(),
            max_iterations: 200,
            tolerance: 1e-6,
            init_policy: InitPolicy::SegmentedMoments,
            seed: 0,
            init_jitter: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if !self.init_jitter.is_finite() || self.init_jitter < 0.0 {
            return Err(Error::InvalidConfig("init_jitter must be >= 0".into()));
        }
        RegularizationConfig::new(self.reg.lambda_sigma, self.reg.lambda_a)?;
        Ok(())
    }
}

/// Degeneracies observed during a fit. None of these abort the fit; they are
/// reported so a caller (or the CLI's --strict mode) can decide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitDiagnostic {
    /// A state had zero transition outflow mass; its row fell back to uniform.
    ZeroTransitionOutflow { state: usize, iteration: usize },
    /// A state had zero duration mass; its duration row fell back to uniform.
    ZeroDurationMass { state: usize, iteration: usize },
    /// A state's posterior mass dropped below 1e-6 * T; emission parameters
    /// were frozen for the iteration.
    LowStateMass { state: usize, iteration: usize },
    /// A state's residual covariance had (numerically) zero trace and was
    /// floored at 1e-12 * I.
    CovarianceFloored { state: usize, iteration: usize },
}

impl std::fmt::Display for FitDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::ZeroTransitionOutflow { state, iteration } => write!(
                f,
                "iteration {iteration}: state {} had zero transition outflow; uniform fallback",
                state + 1
            ),
            Self::ZeroDurationMass { state, iteration } => write!(
                f,
                "iteration {iteration}: state {} had zero duration mass; uniform fallback",
                state + 1
            ),
            Self::LowStateMass { state, iteration } => write!(
                f,
                "iteration {iteration}: state {} posterior mass below 1e-6*T; emissions frozen",
                state + 1
            ),
            Self::CovarianceFloored { state, iteration } => write!(
                f,
                "iteration {iteration}: state {} residual covariance floored at 1e-12*I",
                state + 1
            ),
        }
    }
}

/// Outcome of an EM fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Penalized objective after each E-step. Non-decreasing (up to tiny
    /// slack) when `lambda_sigma` is zero; see the module docs for the
    /// shrinkage-active behavior.
    pub penalized_loglik_trace: Vec<f64>,
    /// Number of EM iterations performed (= trace length).
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<FitDiagnostic>,
}

impl FitResult {
    /// Final penalized objective value.
    pub fn objective(&self) -> f64 {
        *self
            .penalized_loglik_trace
            .last()
            .expect("a fit runs at least one iteration")
    }
}

/// Moments of the rows listed in `rows`, with a deterministic diagonal ridge
/// applied until the covariance factorizes (short groups at high dimension
/// can be singular).
fn group_moments(
    series: &TimeSeries,
    rows: &[usize],
    d: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for &t in rows {
        mean += series.row(t);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for &t in rows {
        let diff = series.row(t) - &mean;
        cov.ger(1.0, &diff, &diff, 1.0);
    }
    cov /= n;
    let mut ridge = (cov.trace() / d as f64).max(1e-8) * 1e-6 + 1e-12;
    let mut tries = 0;
    while nalgebra::Cholesky::new(cov.clone()).is_none() {
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        ridge *= 10.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Degenerate(
                "initial group covariance cannot be regularized".into(),
            ));
        }
    }
    Ok((mean, cov))
}

/// Deterministic segmented-moments initialization.
///
/// The series is cut into short contiguous segments (about half the maximum
/// duration) and each segment is scored by its average log density under the
/// pooled Gaussian fit of the whole series. Segments are grouped into M
/// score quantiles, and a few rounds of hard reassignment against the group
/// Gaussians (scores smoothed over the segment length) sharpen the grouping.
/// Pooled group moments, ordered by covariance trace (ascending), become the
/// state emission parameters. States that differ in level or scale separate
/// through the score directly; states that differ only in covariance shape
/// separate through the reassignment rounds, which plain contiguous-block
/// moments provably cannot do (equal-trace regimes average out to the same
/// block covariance). AR matrices start at zero, the initial and duration
/// distributions uniform, and the transition matrix uniform off the diagonal.
/// With M = 1 this reduces to the exact sample mean and covariance. When
/// `init_jitter > 0` the means are perturbed by seeded Gaussian noise of that
/// relative scale; otherwise the result is a pure function of the data.
pub fn initialize(
    series: &TimeSeries,
    spec: &ModelSpec,
    config: &FitConfig,
) -> Result<ModelParams> {
    let t_len = series.len();
    let m = spec.n_states;
    let d = spec.dim;
    let needed = m * (spec.ar_order + 2);
    if t_len < needed {
        return Err(Error::SeriesTooShort {
            needed,
            got: t_len,
        });
    }
    if series.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "series dimension vs model".into(),
            expected: d,
            actual: series.dim(),
        });
    }

    // Assignment of time steps to groups.
    let all_rows: Vec<usize> = (0..t_len).collect();
    let mut assign: Vec<usize> = vec![0; t_len];
    if m > 1 {
        let (global_mean, global_cov) = group_moments(series, &all_rows, d)?;
        let global_chol = CholeskyFactor::from_covariance(&global_cov, 0)?;

        // Window length: comparable to typical dwell times, never shorter
        // than a lag window, never so long that fewer than M windows exist.
        let window = (spec.max_duration / 2)
            .max(spec.ar_order + 2)
            .min(t_len / m)
            .max(1);
        let n_windows = t_len / window;
        let mut scored: Vec<(f64, usize)> = (0..n_windows)
            .map(|b| {
                let start = b * window;
                let end = if b + 1 == n_windows { t_len } else { start + window };
                let score = (start..end)
                    .map(|t| log_density(&series.row(t), &global_mean, &global_chol))
                    .sum::<f64>()
                    / (end - start) as f64;
                (score, b)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores").then(a.1.cmp(&b.1)));
        for (rank, &(_, b)) in scored.iter().enumerate() {
            let group = rank * m / n_windows;
            let start = b * window;
            let end = if b + 1 == n_windows { t_len } else { start + window };
            for slot in assign[start..end].iter_mut() {
                *slot = group.min(m - 1);
            }
        }

        // Hard reassignment rounds against the group Gaussians.
        for _ in 0..2 {
            let mut group_stats = Vec::with_capacity(m);
            let mut healthy = true;
            for g in 0..m {
                let rows: Vec<usize> = (0..t_len).filter(|&t| assign[t] == g).collect();
                if rows.len() < d + 2 {
                    healthy = false;
                    break;
                }
                let (mean, cov) = group_moments(series, &rows, d)?;
                let chol = CholeskyFactor::from_covariance(&cov, g)?;
                group_stats.push((mean, chol));
            }
            if !healthy {
                break;
            }
            let log_densities: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    let y = series.row(t);
                    group_stats
                        .iter()
                        .map(|(mean, chol)| log_density(&y, mean, chol))
                        .collect()
                })
                .collect();
            let half = window / 2;
            for t in 0..t_len {
                let lo = t.saturating_sub(half);
                let hi = (t + half + 1).min(t_len);
                let mut best_group = assign[t];
                let mut best_score = f64::NEG_INFINITY;
                for g in 0..m {
                    let s: f64 = (lo..hi).map(|u| log_densities[u][g]).sum();
                    if s > best_score {
                        best_score = s;
                        best_group = g;
                    }
                }
                assign[t] = best_group;
            }
        }
    }

    // Pooled group moments, ordered by covariance trace. A collapsed group
    // falls back to the global moments.
    let mut stats: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(m);
    for g in 0..m {
        let rows: Vec<usize> = (0..t_len).filter(|&t| assign[t] == g).collect();
        let use_rows = if rows.len() >= 2 { rows } else { all_rows.clone() };
        stats.push(group_moments(series, &use_rows, d)?);
    }
    stats.sort_by(|a, b| {
        a.1.trace()
            .partial_cmp(&b.1.trace())
            .expect("finite traces")
    });
    let mut means: Vec<DVector<f64>> = stats.iter().map(|s| s.0.clone()).collect();
    let covariances: Vec<DMatrix<f64>> = stats.into_iter().map(|s| s.1).collect();

    if config.init_jitter > 0.0 {
        let mut source = GaussianSource::new(config.seed);
        let mut sd = DVector::zeros(d);
        for c in 0..d {
            let col = series.values().column(c);
            let mean = col.iter().sum::<f64>() / t_len as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t_len as f64;
            sd[c] = var.sqrt();
        }
        for mean in means.iter_mut() {
            for c in 0..d {
                *mean.get_mut(c).unwrap() += config.init_jitter * sd[c] * source.standard_normal();
            }
        }
    }

    let transition = if m == 1 {
        DMatrix::zeros(1, 1)
    } else {
        let off = 1.0 / (m - 1) as f64;
        DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { off })
    };
    Ok(ModelParams {
        initial: DVector::from_element(m, 1.0 / m as f64),
        transition,
        duration: DMatrix::from_element(m, spec.max_duration, 1.0 / spec.max_duration as f64),
        means,
        covariances,
        ar_coeffs: vec![vec![DMatrix::zeros(d, d); spec.ar_order]; m],
    })
}

fn l1_penalty(params: &ModelParams, lambda_a: f64) -> f64 {
    if lambda_a == 0.0 {
        return 0.0;
    }
    lambda_a
        * params
            .ar_coeffs
            .iter()
            .flat_map(|mats| mats.iter())
            .map(|a| a.iter().map(|v| v.abs()).sum::<f64>())
            .sum::<f64>()
}

/// Residuals of the state's VAR given fitted intercept and AR matrices,
/// with zero-padded lags at the series start.
fn state_residuals(
    series: &TimeSeries,
    intercept: &DVector<f64>,
    ar_coeffs: &[DMatrix<f64>],
) -> Vec<DVector<f64>> {
    let t_len = series.len();
    let p = ar_coeffs.len();
    (0..t_len)
        .map(|t| {
            let mut fitted = intercept.clone();
            for k in 1..=p.min(t) {
                fitted += &ar_coeffs[k - 1] * series.row(t - k);
            }
            series.row(t) - fitted
        })
        .collect()
}

/// Runs penalized EM. `initial` overrides the configured initialization
/// policy; with `InitPolicy::UserSupplied` it is required.
pub fn fit(
    series: &TimeSeries,
    spec: &ModelSpec,
    config: &FitConfig,
    initial: Option<&ModelParams>,
) -> Result<FitResult> {
    config.validate()?;
    let mut params = match (initial, config.init_policy) {
        (Some(p), _) => {
            p.ensure_valid(spec)?;
            p.clone()
        }
        (None, InitPolicy::UserSupplied) => {
            return Err(Error::InvalidConfig(
                "init_policy is user-supplied but no initial parameters were given".into(),
            ));
        }
        (None, InitPolicy::SegmentedMoments) => initialize(series, spec, config)?,
    };

    let m = spec.n_states;
    let t_len = series.len();
    let lambda_a = config.reg.lambda_a;
    let lambda_sigma = config.reg.lambda_sigma;

    let mut trace: Vec<f64> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let stats = e_step(series, &params, spec).map_err(|e| match e {
            Error::Degenerate(_) => Error::NonFiniteLikelihood { iteration },
            other => other,
        })?;
        let objective = stats.posterior.log_likelihood - l1_penalty(&params, lambda_a);
        if !objective.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration });
        }
        trace.push(objective);
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            let rel = (objective - prev).abs() / prev.abs().max(1.0);
            if rel < config.tolerance {
                converged = true;
                break;
            }
        }
        if iteration == config.max_iterations {
            break;
        }

        // Chain parameter updates.
        params.initial = update_delta(&stats.posterior.gamma.row(0).transpose())?;
        if m > 1 {
            let up = update_transition(&stats.transition_totals);
            for &state in &up.degenerate_states {
                diagnostics.push(FitDiagnostic::ZeroTransitionOutflow { state, iteration });
            }
            params.transition = up.matrix;
        }
        let up = update_duration(&stats.duration_totals);
        for &state in &up.degenerate_states {
            diagnostics.push(FitDiagnostic::ZeroDurationMass { state, iteration });
        }
        params.duration = up.matrix;

        // Emission updates, per state.
        for j in 0..m {
            let weights: DVector<f64> = stats.posterior.gamma.column(j).into_owned();
            let mass: f64 = weights.iter().sum();
            if mass < 1e-6 * t_len as f64 {
                diagnostics.push(FitDiagnostic::LowStateMass {
                    state: j,
                    iteration,
                });
                continue;
            }
            let reg_fit = update_regression_warm(
                series,
                &weights,
                spec,
                lambda_a,
                Some((&params.means[j], &params.ar_coeffs[j])),
            )?;
            let residuals = state_residuals(series, &reg_fit.intercept, &reg_fit.ar_coeffs);
            let mut sigma = update_covariance(&residuals, &weights, lambda_sigma)?;
            if sigma.trace() < 1e-24 {
                sigma = DMatrix::identity(spec.dim, spec.dim) * 1e-12;
                diagnostics.push(FitDiagnostic::CovarianceFloored {
                    state: j,
                    iteration,
                });
            } else if nalgebra::Cholesky::new(sigma.clone()).is_none() {
                // Only reachable with lambda_sigma ~ 0 and a singular residual
                // covariance; a hard error is the honest outcome.
                return Err(Error::NotPositiveDefinite { state: j });
            }
            params.means[j] = reg_fit.intercept;
            params.ar_coeffs[j] = reg_fit.ar_coeffs;
            params.covariances[j] = sigma;
        }
    }

    Ok(FitResult {
        params,
        iterations: trace.len(),
        penalized_loglik_trace: trace,
        converged,
        diagnostics,
    })
}
