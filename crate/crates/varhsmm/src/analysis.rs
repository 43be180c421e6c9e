//! Descriptive statistics for return data: log-return transform, lagged
//! sample correlation matrices, and Fisher-z significance screening.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::normal_quantile;
use crate::model::TimeSeries;

/// Lag-k sample correlations with Fisher-z significance flags.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub lag: usize,
    /// d x d: entry (a, b) correlates column a at time t with column b at t+lag.
    pub corr: DMatrix<f64>,
    /// Two-sided Fisher-z significance at level `alpha`.
    pub significant: Vec<Vec<bool>>,
    /// Count of significant entries; the structural unit diagonal at lag 0 is
    /// excluded from the count.
    pub n_significant: usize,
    /// Entries whose correlation is undefined (a zero-variance window);
    /// reported as 0 and never significant.
    pub degenerate: Vec<(usize, usize)>,
    pub alpha: f64,
}

/// Elementwise log returns: row t of the output is
/// `log(prices[t+1]) - log(prices[t])`. Prices must be strictly positive.
pub fn log_returns(prices: &TimeSeries) -> Result<TimeSeries> {
    let t_len = prices.len();
    if t_len < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: t_len,
        });
    }
    let d = prices.dim();
    for t in 0..t_len {
        for c in 0..d {
            if prices.values()[(t, c)] <= 0.0 {
                return Err(Error::NonPositivePrice { row: t, col: c });
            }
        }
    }
    let mut out = DMatrix::zeros(t_len - 1, d);
    for t in 0..t_len - 1 {
        for c in 0..d {
            out[(t, c)] = prices.values()[(t + 1, c)].ln() - prices.values()[(t, c)].ln();
        }
    }
    TimeSeries::new(out)
}

/// Pearson correlation between y_t (column a) and y_{t+lag} (column b) over
/// the overlapping window, with per-window means, tested against zero by the
/// Fisher z-transformation (z = atanh(rho), se = 1/sqrt(n-3), two-sided).
pub fn lag_correlation(series: &TimeSeries, lag: usize, alpha: f64) -> Result<CorrelationReport> {
    let t_len = series.len();
    if t_len <= lag + 2 {
        return Err(Error::SeriesTooShort {
            needed: lag + 3,
            got: t_len,
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    let d = series.dim();
    let n = t_len - lag;
    let nf = n as f64;

    // Window moments: leading window (rows 0..n) and trailing (rows lag..T).
    let mut lead_mean = vec![0.0; d];
    let mut trail_mean = vec![0.0; d];
    for t in 0..n {
        for c in 0..d {
            lead_mean[c] += series.values()[(t, c)];
            trail_mean[c] += series.values()[(t + lag, c)];
        }
    }
    for c in 0..d {
        lead_mean[c] /= nf;
        trail_mean[c] /= nf;
    }
    let mut lead_var = vec![0.0; d];
    let mut trail_var = vec![0.0; d];
    for t in 0..n {
        for c in 0..d {
            let dl = series.values()[(t, c)] - lead_mean[c];
            let dt = series.values()[(t + lag, c)] - trail_mean[c];
            lead_var[c] += dl * dl;
            trail_var[c] += dt * dt;
        }
    }

    let crit = normal_quantile(1.0 - alpha / 2.0);
    let se = if n > 3 {
        1.0 / ((nf - 3.0).sqrt())
    } else {
        f64::INFINITY
    };

    let mut corr = DMatrix::zeros(d, d);
    let mut significant = vec![vec![false; d]; d];
    let mut degenerate = Vec::new();
    let mut n_significant = 0;
    for a in 0..d {
        for b in 0..d {
            let denom = (lead_var[a] * trail_var[b]).sqrt();
            if denom == 0.0 {
                degenerate.push((a, b));
                continue;
            }
            let mut cov = 0.0;
            for t in 0..n {
                cov += (series.values()[(t, a)] - lead_mean[a])
                    * (series.values()[(t + lag, b)] - trail_mean[b]);
            }
            let rho = (cov / denom).clamp(-1.0, 1.0);
            corr[(a, b)] = rho;
            let z = if rho.abs() >= 1.0 {
                f64::INFINITY
            } else {
                rho.atanh().abs()
            };
            let sig = z / se > crit;
            significant[a][b] = sig;
            if sig && !(lag == 0 && a == b) {
                n_significant += 1;
            }
        }
    }

    Ok(CorrelationReport {
        lag,
        corr,
        significant,
        n_significant,
        degenerate,
        alpha,
    })
}
