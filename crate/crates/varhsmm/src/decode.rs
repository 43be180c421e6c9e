//! Most-likely state-sequence decoding and one-step-ahead forecasting.
//!
//! Decoding is the max-product analogue of the forward recursion: the same
//! segment extension and entered-state duration terms, with log-sum-exp
//! replaced by max and backpointers over (previous state, previous duration).
//! The final segment is right-censored exactly as in the forward pass, so the
//! decoded path score is a lower bound on the data log-likelihood. Ties break
//! toward the lower state index, then the shorter duration.
//!
//! Forecasts are posterior-predictive means: the one-step state distribution
//! from the forward table (ongoing segments persist with their survival odds,
//! ending segments hand mass to the transition row), weighted into the
//! state-conditional means. That is the minimum-MSE forecast under the model,
//! which is what MSFE-based selection wants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{conditional_mean, emission_log_densities};
use crate::inference::{check_model_shapes, forward_bare, LogChain};
use crate::math::{log_add_exp, log_sum_exp};
use crate::model::{ModelParams, ModelSpec, TimeSeries};

/// One decoded run of consecutive equal states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// 0-based state index.
    pub state: usize,
    /// 0-based index of the first time step of the run.
    pub start: usize,
    /// Run length; at most D (the final, censored run included).
    pub duration: usize,
}

/// Joint maximum-a-posteriori segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    /// 0-based state index per time step; the expansion of `segments`.
    pub states: Vec<usize>,
    pub segments: Vec<Segment>,
    /// log of the maximized joint density (path and data).
    pub path_log_score: f64,
}

/// Duration-explicit Viterbi decoding.
pub fn viterbi_decode(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<DecodedPath> {
    check_model_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    let chain = LogChain::new(params, spec);
    let t_len = series.len();
    let m = chain.n_states;
    let dur = chain.max_duration;

    // score[t][(j, n-1)]: best log score of a prefix ending with an ongoing
    // segment of state j that began at t-n+1 (duration factor not yet paid).
    let mut score: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    // Backpointer at a segment start: (previous state, previous duration - 1).
    let mut entry_from: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; m]; t_len];

    for t in 0..t_len {
        let mut table = DMatrix::from_element(m, dur, f64::NEG_INFINITY);
        for j in 0..m {
            let enter = if t == 0 {
                chain.log_init[j]
            } else {
                // Best completed predecessor segment.
                let mut best = f64::NEG_INFINITY;
                let mut arg = None;
                for i in 0..m {
                    let lq = chain.log_trans[(i, j)];
                    if lq == f64::NEG_INFINITY {
                        continue;
                    }
                    for n in 0..dur.min(t) {
                        let ld = chain.log_dur[(i, n)];
                        if ld == f64::NEG_INFINITY {
                            continue;
                        }
                        let cand = score[t - 1][(i, n)] + ld + lq;
                        if cand > best {
                            best = cand;
                            arg = Some((i, n));
                        }
                    }
                }
                entry_from[t][j] = arg;
                best
            };
            table[(j, 0)] = enter + logf[(t, j)];
            for n in 1..dur.min(t + 1) {
                table[(j, n)] = score[t - 1][(j, n - 1)] + logf[(t, j)];
            }
        }
        score.push(table);
    }

    // Censored terminal choice: survival mass instead of an exact duration.
    let last = &score[t_len - 1];
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0usize, 0usize);
    for j in 0..m {
        for n in 0..dur.min(t_len) {
            let ls = chain.log_surv[(j, n)];
            if ls == f64::NEG_INFINITY {
                continue;
            }
            let cand = last[(j, n)] + ls;
            if cand > best {
                best = cand;
                arg = (j, n);
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::Degenerate(
            "no admissible segmentation has positive probability".into(),
        ));
    }

    // Backtrack segment by segment.
    let mut segments_rev: Vec<Segment> = Vec::new();
    let (mut state, mut n) = arg;
    let mut end = t_len - 1;
    loop {
        let start = end + 1 - (n + 1);
        segments_rev.push(Segment {
            state,
            start,
            duration: n + 1,
        });
        if start == 0 {
            break;
        }
        let (prev_state, prev_n) = entry_from[start][state]
            .expect("finite path score implies a predecessor at every segment start");
        state = prev_state;
        n = prev_n;
        end = start - 1;
    }
    segments_rev.reverse();
    let mut states = Vec::with_capacity(t_len);
    for seg in &segments_rev {
        states.extend(std::iter::repeat_n(seg.state, seg.duration));
    }

    Ok(DecodedPath {
        states,
        segments: segments_rev,
        path_log_score: best,
    })
}

/// For each row t (0-based), the distribution of the state at row t+1 given
/// rows 0..=t. Row t depends only on the prefix through t, so one pass serves
/// every forecast origin.
pub fn one_step_state_probabilities(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    check_model_shapes(series, params, spec)?;
    let logf = emission_log_densities(series, params, spec)?;
    let chain = LogChain::new(params, spec);
    let (bare, _) = forward_bare(&logf, &chain);
    let t_len = series.len();
    let m = chain.n_states;
    let dur = chain.max_duration;
    let mut out = DMatrix::zeros(t_len, m);

    for t in 0..t_len {
        // Per-state masses for "segment survives past t" / "segment ends at t".
        let mut stay = vec![f64::NEG_INFINITY; m];
        let mut end = vec![f64::NEG_INFINITY; m];
        for i in 0..m {
            for n in 0..dur.min(t + 1) {
                let b = bare[t][(i, n)];
                if b == f64::NEG_INFINITY {
                    continue;
                }
                let ls = chain.log_surv[(i, n + 1)]; // survival beyond n+1 elapsed steps
                if ls != f64::NEG_INFINITY {
                    stay[i] = log_add_exp(stay[i], b + ls);
                }
                let ld = chain.log_dur[(i, n)];
                if ld != f64::NEG_INFINITY {
                    end[i] = log_add_exp(end[i], b + ld);
                }
            }
        }
        let mut logp = vec![f64::NEG_INFINITY; m];
        for j in 0..m {
            logp[j] = stay[j];
            for i in 0..m {
                let lq = chain.log_trans[(i, j)];
                if lq != f64::NEG_INFINITY {
                    logp[j] = log_add_exp(logp[j], end[i] + lq);
                }
            }
        }
        let norm = log_sum_exp(&logp);
        if !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "predictive state distribution undefined at row {t}"
            )));
        }
        for j in 0..m {
            out[(t, j)] = (logp[j] - norm).exp();
        }
    }
    Ok(out)
}

/// P(S_{t+1} = j | y_{1:t}) for a single prefix of `prefix_len` observed rows.
/// Runs a fresh forward pass over the prefix; use
/// [`one_step_state_probabilities`] when every origin is needed.
pub fn filtered_state_probabilities(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
    prefix_len: usize,
) -> Result<DVector<f64>> {
    if prefix_len == 0 || prefix_len > series.len() {
        return Err(Error::TimeOutOfRange(format!(
            "prefix length {prefix_len} of a series of length {}",
            series.len()
        )));
    }
    let prefix = series.slice_rows(0, prefix_len)?;
    let all = one_step_state_probabilities(&prefix, params, spec)?;
    Ok(all.row(prefix_len - 1).transpose())
}

/// Posterior-predictive mean of the next observation given the first
/// `prefix_len` rows: sum_j P(S = j | prefix) * (mu_j + sum_k A_{k,j} y_{-k}).
pub fn forecast_one_step(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
    prefix_len: usize,
) -> Result<DVector<f64>> {
    let probs = filtered_state_probabilities(series, params, spec, prefix_len)?;
    forecast_from_probabilities(series, params, spec, prefix_len, &probs)
}

fn forecast_from_probabilities(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
    prefix_len: usize,
    probs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let history: Vec<DVector<f64>> = (1..=spec.ar_order.min(prefix_len))
        .map(|k| series.row(prefix_len - k))
        .collect();
    let mut forecast = DVector::zeros(spec.dim);
    for j in 0..spec.n_states {
        let mean = conditional_mean(j, &history, params)?;
        forecast += probs[j] * mean;
    }
    Ok(forecast)
}

/// Rolling one-step forecasts for rows `from_row..to_row` (each forecast uses
/// only the rows before it). One forward pass serves all origins.
pub fn rolling_one_step_forecasts(
    series: &TimeSeries,
    params: &ModelParams,
    spec: &ModelSpec,
    from_row: usize,
    to_row: usize,
) -> Result<Vec<DVector<f64>>> {
    if from_row == 0 || from_row > to_row || to_row > series.len() {
        return Err(Error::TimeOutOfRange(format!(
            "forecast window {from_row}..{to_row} of a series of length {}",
            series.len()
        )));
    }
    let probs = one_step_state_probabilities(series, params, spec)?;
    (from_row..to_row)
        .map(|row| {
            let p = probs.row(row - 1).transpose();
            forecast_from_probabilities(series, params, spec, row, &p)
        })
        .collect()
}

/// Mean squared one-step forecast error: the average squared Euclidean norm
/// of the forecast error vectors.
///
/// ```
/// use nalgebra::DVector;
/// use varhsmm::decode::msfe;
///
/// let forecasts = vec![DVector::from_vec(vec![1.0, 0.0]),
///                      DVector::from_vec(vec![0.0, 2.0])];
/// let actuals = vec![DVector::zeros(2), DVector::zeros(2)];
/// assert_eq!(msfe(&forecasts, &actuals)?, 2.5); // (1 + 4) / 2
/// # Ok::<(), varhsmm::Error>(())
/// ```
pub fn msfe(forecasts: &[DVector<f64>], actuals: &[DVector<f64>]) -> Result<f64> {
    if forecasts.len() != actuals.len() {
        return Err(Error::DimensionMismatch {
            context: "forecasts vs actuals".into(),
            expected: actuals.len(),
            actual: forecasts.len(),
        });
    }
    if forecasts.is_empty() {
        return Err(Error::Degenerate("no forecasts to score".into()));
    }
    let total: f64 = forecasts
        .iter()
        .zip(actuals.iter())
        .map(|(f, a)| (f - a).norm_squared())
        .sum();
    Ok(total / forecasts.len() as f64)
}
