//! Explicit-duration forward-backward recursions and posterior summaries
//! (the E-step).
//!
//! Everything runs in the log domain; at realistic dimensions the raw segment
//! densities underflow long before T = 500.
//!
//! # Table semantics
//!
//! The tables tile every time step with the *ongoing* segment, so combining
//! them at any single t reproduces the data log-likelihood:
//!
//! - `log_alpha[t][j][n-1]` = log P(y_{1:t}, the segment covering t has state
//!   j, began at t-n+1, and has duration >= n). The duration factor carried by
//!   an entry is the survival mass S_j(n) = sum_{m >= n} r_j(m); when a
//!   segment *ends* strictly inside the series the recursion replaces that
//!   survival mass by the exact duration probability r_j(n) before the
//!   transition. At t = T nothing is replaced, which right-censors the final
//!   segment: a segment cut off by the end of the series contributes its
//!   survival mass, not an exact duration term.
//! - `log_beta[t][j][n-1]` = log P(y_{t+1:T} | segment of state j began at
//!   t-n+1 with duration >= n, y_{1:t}).
//!
//! The log-likelihood is the log-sum-exp of the terminal forward entries, and
//! for every t, logsumexp over (j, n) of `log_alpha[t] + log_beta[t]` equals
//! it too.
//!
//! Posterior summaries are stored normalized (conditional on y_{1:T}): the
//! joint quantities underflow, and every M-step update is a ratio in which the
//! normalizer cancels anyway. `eta[t][j][n-1]` is the posterior probability
//! that the segment covering t has state j and elapsed duration n, so
//! `gamma[t][j] = sum_n eta[t][j][n-1]` is the exact state marginal and each
//! gamma row sums to one. The duration update instead needs *completed*
//! segments; [`duration_sufficient_stats`] accumulates those, redistributing
//! the final censored segment's mass over full durations m >= observed span
//! proportionally to r_j(m), which keeps the EM update exact under censoring.
//!
//! With one state the chain is degenerate: the end-of-segment "transition" is
//! a probability-one self-return, durations marginalize out, and the
//! likelihood reduces to the plain VAR(p) Gaussian likelihood.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::emission_log_densities;
use crate::math::log_add_exp;
use crate::model::{ModelParams, ModelSpec, TimeSeries};

/// Forward/backward tables in the log domain. Entries are finite or negative
/// infinity (structural zeros, e.g. an elapsed duration n > t).
#[derive(Debug, Clone)]
pub struct ForwardBackwardTables {
    /// `log_alpha[t]` is M x D; column n-1 holds elapsed duration n.
    pub log_alpha: Vec<DMatrix<f64>>,
    /// `log_beta[t]` is M x D, aligned with `log_alpha`.
    pub log_beta: Vec<DMatrix<f64>>,
    /// log P(y_{1:T} | theta), right-censored at the series end.
    pub log_likelihood: f64,
}

/// Result of the forward recursion alone.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub log_alpha: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Normalized posterior summaries of the latent segmentation.
#[derive(Debug, Clone)]
pub struct PosteriorSummaries {
    /// T x M; `gamma[(t, j)]` = P(S_t = j | y_{1:T}).
    pub gamma: DMatrix<f64>,
    /// Length T-1; `xi[t][(i, j)]` = P(S_t = i, S_{t+1} = j | y_{1:T}), the
    /// posterior probability of a segment boundary with that transition.
    /// Diagonals are structurally zero for M >= 2; at M = 1 the single entry
    /// carries the segment-renewal posterior instead.
    pub xi: Vec<DMatrix<f64>>,
    /// Length T; `eta[t][(j, n-1)]` = P(S_t = j, elapsed duration n | y_{1:T}).
    pub eta: Vec<DMatrix<f64>>,
    /// log P(y_{1:T} | theta).
    pub log_likelihood: f64,
}

/// Log-domain views of the chain parameters, precomputed once per E-step.
pub(crate) struct LogChain {
    pub(crate) n_states: usize,
    pub(crate) max_duration: usize,
    pub(crate) log_init: Vec<f64>,
    /// log Q with a negative-infinity diagonal; at M = 1 the single entry is
    /// log 1 = 0 (the vacuous self-return).
    pub(crate) log_trans: DMatrix<f64>,
    /// log r, M x D.
    pub(crate) log_dur: DMatrix<f64>,
    /// log survival: column n-1 holds log sum_{m >= n} r_j(m), with an extra
    /// column D that is always negative infinity (no duration exceeds D).
    pub(crate) log_surv: DMatrix<f64>,
}

impl LogChain {
    pub(crate) fn new(params: &ModelParams, spec: &ModelSpec) -> Self {
        let m = spec.n_states;
        let dur = spec.max_duration;
        let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
        let log_init = params.initial.iter().map(|&v| ln(v)).collect();
        let mut log_trans = DMatrix::from_element(m, m, f64::NEG_INFINITY);
        if m == 1 {
            log_trans[(0, 0)] = 0.0;
        } else {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        log_trans[(i, j)] = ln(params.transition[(i, j)]);
                    }
                }
            }
        }
        let mut log_dur = DMatrix::from_element(m, dur, f64::NEG_INFINITY);
        let mut log_surv = DMatrix::from_element(m, dur + 1, f64::NEG_INFINITY);
        for j in 0..m {
            let mut tail = 0.0;
            for n in (0..dur).rev() {
                log_dur[(j, n)] = ln(params.duration[(j, n)]);
                tail += params.duration[(j, n)];
                log_surv[(j, n)] = ln(tail);
            }
        }
        Self {
            n_states: m,
            max_duration: dur,
            log_init,
            log_trans,
            log_dur,
            log_surv,
        }
    }

    /// log sum over origin states i of end_mass[i] + log q_{i -> j}.
    fn log_enter(&self, end_mass: &[f64], j: usize) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for i in 0..self.n_states {
            let lq = self.log_trans[(i, j)];
            if lq != f64::NEG_INFINITY {
                acc = log_add_exp(acc, end_mass[i] + lq);
            }
        }
        acc
    }

    /// log sum over destination states i of log q_{j -> i} + x[i].
    fn log_leave(&self, j: usize, x: &[f64]) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for i in 0..self.n_states {
            let lq = self.log_trans[(j, i)];
            if lq != f64::NEG_INFINITY {
                acc = log_add_exp(acc, lq + x[i]);
            }
        }
        acc
    }
}

pub(crate) fn check_shapes(series: &TimeSeries, params: &ModelParams, spec: &ModelSpec) -> Result<()> {
    if series.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            context: "series dimension vs model".into(),
            expected: spec.dim,
            actual: series.dim(),
        });
    }
    let m = spec.n_states;
    if params.initial.len() != m
        || params.transition.nrows() != m
        || params.transition.ncols() != m
        || params.duration.nrows() != m
        || params.duration.ncols() != spec.max_duration
        || params.means.len() != m
        || params.covariances.len() != m
        || params.ar_coeffs.len() != m
    {
        return Err(Error::InvalidParams(
            "parameter shapes do not match the model spec".into(),
        ));
    }
    for mats in &params.ar_coeffs {
        if mats.len() != spec.ar_order {
            return Err(Error::InvalidParams(
                "autoregression lag count does not match the model spec".into(),
            ));
        }
    }
    Ok(())
}

/// Forward recursion on bare segment masses (no duration factor attached):
/// `bare[t][(j, n-1)]` = log P(y_{1:t}, segment of j began at t-n+1) with the
/// end-time unresolved. Returns the per-t tables and the log-likelihood.
pub(crate) fn forward_bare(logf: &DMatrix<f64>, chain: &LogChain) -> (Vec<DMatrix<f64>>, f64) {
    let t_len = logf.nrows();
    let m = chain.n_states;
    let dur = chain.max_duration;
    let mut bare: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut end_mass = vec![f64::NEG_INFINITY; m];

    for t in 0..t_len {
        let mut table = DMatrix::from_element(m, dur, f64::NEG_INFINITY);
        for j in 0..m {
            let enter = if t == 0 {
                chain.log_init[j]
            } else {
                chain.log_enter(&end_mass, j)
            };
            table[(j, 0)] = enter + logf[(t, j)];
            let reach = dur.min(t + 1);
            for n in 1..reach {
                table[(j, n)] = bare[t - 1][(j, n - 1)] + logf[(t, j)];
            }
        }
        for (i, slot) in end_mass.iter_mut().enumerate() {
            let mut acc = f64::NEG_INFINITY;
            for n in 0..dur.min(t + 1) {
                let ld = chain.log_dur[(i, n)];
                if ld != f64::NEG_INFINITY {
                    acc = log_add_exp(acc, table[(i, n)] + ld);
                }
            }
            *slot = acc;
        }
        bare.push(table);
    }

    let last = &bare[t_len - 1];
    let mut ll = f64::NEG_INFINITY;
    for j in 0..m {
        for n in 0..dur {
            let ls = chain.log_surv[(j, n)];
            if ls != f64::NEG_INFINITY {
                ll = log_add_exp(ll, last[(j, n)] + ls);
            }
        }
    }
    (bare, ll)
}

/// Backward recursion conditioned on the ongoing segment; see module docs.
pub(crate) fn backward_tables(logf: &DMatrix<f64>, chain: &LogChain) -> Vec<DMatrix<f64>> {
    let t_len = logf.nrows();
    let m = chain.n_states;
    let dur = chain.max_duration;
    let mut beta = vec![DMatrix::from_element(m, dur, f64::NEG_INFINITY); t_len];

    for j in 0..m {
        for n in 0..dur.min(t_len) {
            beta[t_len - 1][(j, n)] = 0.0;
        }
    }

    let mut x = vec![f64::NEG_INFINITY; m];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for (i, slot) in x.iter_mut().enumerate() {
            *slot = logf[(t + 1, i)] + beta[t + 1][(i, 0)];
        }
        for j in 0..m {
            let leave = chain.log_leave(j, &x);
            for n in 0..dur.min(t + 1) {
                let ls = chain.log_surv[(j, n)];
                if ls == f64::NEG_INFINITY {
                    continue;
                }
                let end_part = chain.log_dur[(j, n)] - ls + leave;
                let cont_part = if n + 1 < dur {
                    chain.log_surv[(j, n + 1)] - ls + logf[(t + 1, j)] + beta[t + 1][(j, n + 1)]
                } else {
                    f64::NEG_INFINITY
                };
                beta[t][(j, n)] = log_add_exp(end_part, cont_part);
            }
        }
    }
    beta
}

fn bare_to_alpha(bare: &[DMatrix<f64>], chain: &LogChain) -> Vec<DMatrix<f64>> {
    bare.iter()
        .map(|table| {
            let mut out = table.clone();
            for j in 0..chain.n_states {
                for n in 0..chain.max_duration {
                    out[(j, n)] += chain.log_surv[(j, n)];
                }
            }
            out
        })
        .collect()
}

/// Forward pass: log alpha tables and the data log-likelihood.
pub fn forward(series: &TimeSeries, params: &ModelParams, spec: &ModelSpec) -> Result<ForwardPass> {
    check_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    let chain = LogChain::new(params, spec);
    let (bare, ll) = forward_bare(&logf, &chain);
    Ok(ForwardPass {
        log_alpha: bare_to_alpha(&bare, &chain),
        log_likelihood: ll,
    })
}

/// Backward pass: log beta tables.
pub fn backward(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    let chain = LogChain::new(params, spec);
    Ok(backward_tables(&logf, &chain))
}

/// Both passes plus the log-likelihood.
pub fn forward_backward(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<ForwardBackwardTables> {
    check_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    let chain = LogChain::new(params, spec);
    let (bare, ll) = forward_bare(&logf, &chain);
    Ok(ForwardBackwardTables {
        log_alpha: bare_to_alpha(&bare, &chain),
        log_beta: backward_tables(&logf, &chain),
        log_likelihood: ll,
    })
}

/// Everything the M-step consumes, computed in one pass.
pub(crate) struct EStepStats {
    pub(crate) posterior: PosteriorSummaries,
    /// M x D censor-aware completed-segment expectations (Eq-11 input).
    pub(crate) duration_totals: DMatrix<f64>,
    /// M x M summed transition posteriors (Eq-10 input).
    pub(crate) transition_totals: DMatrix<f64>,
}

pub(crate) fn e_step_from_log_densities(
    logf: &DMatrix<f64>,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<EStepStats> {
    let chain = LogChain::new(params, spec);
    let t_len = logf.nrows();
    let m = chain.n_states;
    let dur = chain.max_duration;

    let (bare, ll) = forward_bare(logf, &chain);
    if !ll.is_finite() {
        return Err(Error::Degenerate(format!(
            "data log-likelihood is {ll}; posteriors are undefined"
        )));
    }
    let beta = backward_tables(logf, &chain);

    let mut gamma = DMatrix::zeros(t_len, m);
    let mut eta: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut xi: Vec<DMatrix<f64>> = Vec::with_capacity(t_len.saturating_sub(1));
    let mut duration_totals = DMatrix::zeros(m, dur);
    let mut transition_totals = DMatrix::zeros(m, m);

    let mut x = vec![f64::NEG_INFINITY; m];
    let mut end_mass = vec![f64::NEG_INFINITY; m];
    for t in 0..t_len {
        // Occupancy decomposition: eta and gamma.
        let mut eta_t = DMatrix::zeros(m, dur);
        for j in 0..m {
            let mut row_sum = 0.0;
            for n in 0..dur {
                let ls = chain.log_surv[(j, n)];
                let le = bare[t][(j, n)] + ls + beta[t][(j, n)] - ll;
                if le != f64::NEG_INFINITY && ls != f64::NEG_INFINITY {
                    let v = le.exp();
                    eta_t[(j, n)] = v;
                    row_sum += v;
                }
            }
            gamma[(t, j)] = row_sum;
        }
        eta.push(eta_t);

        // End-of-segment masses at t.
        for (i, slot) in end_mass.iter_mut().enumerate() {
            let mut acc = f64::NEG_INFINITY;
            for n in 0..dur.min(t + 1) {
                let ld = chain.log_dur[(i, n)];
                if ld != f64::NEG_INFINITY {
                    acc = log_add_exp(acc, bare[t][(i, n)] + ld);
                }
            }
            *slot = acc;
        }

        if t + 1 < t_len {
            for (i, slot) in x.iter_mut().enumerate() {
                *slot = logf[(t + 1, i)] + beta[t + 1][(i, 0)];
            }
            // Transition-event posteriors.
            let mut xi_t = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let lq = chain.log_trans[(i, j)];
                    if lq == f64::NEG_INFINITY {
                        continue;
                    }
                    let lv = end_mass[i] + lq + x[j] - ll;
                    if lv != f64::NEG_INFINITY {
                        let v = lv.exp();
                        xi_t[(i, j)] = v;
                        transition_totals[(i, j)] += v;
                    }
                }
            }
            xi.push(xi_t);

            // Completed segments ending at t.
            for j in 0..m {
                let leave = chain.log_leave(j, &x);
                for n in 0..dur.min(t + 1) {
                    let ld = chain.log_dur[(j, n)];
                    if ld == f64::NEG_INFINITY {
                        continue;
                    }
                    let lv = bare[t][(j, n)] + ld + leave - ll;
                    if lv != f64::NEG_INFINITY {
                        duration_totals[(j, n)] += lv.exp();
                    }
                }
            }
        } else {
            // Final time step: the ongoing segment is right-censored. Its mass
            // is spread over the full durations m >= observed span in
            // proportion to r_j(m), the exact conditional of the latent
            // duration given survival so far.
            for j in 0..m {
                for n in 0..dur {
                    let ls = chain.log_surv[(j, n)];
                    if ls == f64::NEG_INFINITY {
                        continue;
                    }
                    let lmass = bare[t][(j, n)] + ls - ll;
                    if lmass == f64::NEG_INFINITY {
                        continue;
                    }
                    let mass = lmass.exp();
                    if mass == 0.0 {
                        continue;
                    }
                    let surv = ls.exp();
                    for m_full in n..dur {
                        let r = params.duration[(j, m_full)];
                        if r > 0.0 {
                            duration_totals[(j, m_full)] += mass * r / surv;
                        }
                    }
                }
            }
        }
    }

    Ok(EStepStats {
        posterior: PosteriorSummaries {
            gamma,
            xi,
            eta,
            log_likelihood: ll,
        },
        duration_totals,
        transition_totals,
    })
}

pub(crate) fn e_step(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<EStepStats> {
    check_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    e_step_from_log_densities(&logf, params, spec)
}

/// Posterior summaries (gamma, xi, eta, log-likelihood), normalized.
///
/// Every gamma row is a probability distribution over states, and decomposes
/// over the elapsed duration of the ongoing segment:
///
/// ```
/// use nalgebra::{DMatrix, DVector};
/// use varhsmm::{ModelParams, ModelSpec, TimeSeries};
/// use varhsmm::inference::posterior_summaries;
///
/// let spec = ModelSpec::new(2, 1, 0, 2)?;
/// let params = ModelParams {
///     initial: DVector::from_vec(vec![0.6, 0.4]),
///     transition: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
///     duration: DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.8, 0.2]),
///     means: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![2.0])],
///     covariances: vec![DMatrix::from_row_slice(1, 1, &[1.0]),
///                       DMatrix::from_row_slice(1, 1, &[0.5])],
///     ar_coeffs: vec![vec![], vec![]],
/// };
/// let series = TimeSeries::from_rows(&[vec![0.1], vec![1.9], vec![2.2], vec![-0.3]])?;
///
/// let post = posterior_summaries(&series, &params, &spec)?;
/// for t in 0..series.len() {
///     let row_sum: f64 = (0..2).map(|j| post.gamma[(t, j)]).sum();
///     assert!((row_sum - 1.0).abs() < 1e-8);
///     for j in 0..2 {
///         let eta_sum: f64 = (0..2).map(|n| post.eta[t][(j, n)]).sum();
///         assert!((post.gamma[(t, j)] - eta_sum).abs() < 1e-8);
///     }
/// }
/// # Ok::<(), varhsmm::Error>(())
/// ```
pub fn posterior_summaries(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<PosteriorSummaries> {
    Ok(e_step(series, params, spec)?.posterior)
}

/// Censor-aware completed-segment duration expectations: entry (j, n-1) is the
/// expected number of segments of state j with full duration n, given y_{1:T}.
/// This is the statistic the duration M-step normalizes.
pub fn duration_sufficient_stats(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    Ok(e_step(series, params, spec)?.duration_totals)
}

pub(crate) use check_shapes as check_model_shapes;
