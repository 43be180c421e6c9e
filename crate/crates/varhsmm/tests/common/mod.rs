//! Shared test support: a self-contained brute-force oracle for small
//! explicit-duration semi-Markov instances, plus random instance generation.
//!
//! The oracle enumerates every admissible segmentation of 1..T (runs of
//! length <= D, consecutive runs in distinct states, the final run
//! right-censored through its survival mass) and scores each one with its own
//! Gaussian density code (explicit matrix inverse, no Cholesky, no shared
//! code with the crate's inference path). It is deliberately slow and direct.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use varhsmm::{ModelParams, ModelSpec, TimeSeries};

/// Plain-array model description used by the oracle.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub m: usize,
    pub d: usize,
    pub p: usize,
    pub dur: usize,
    pub delta: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    /// a[state][lag][row][col], lag 0 meaning lag-1.
    pub a: Vec<Vec<Vec<Vec<f64>>>>,
}

/// One enumerated segmentation: segments as (state, start, len), total weight.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub segments: Vec<(usize, usize, usize)>,
    pub log_weight: f64,
}

/// Exhaustive posterior summaries computed by enumeration.
#[derive(Debug)]
pub struct Enumeration {
    pub log_likelihood: f64,
    /// T x M state marginals, conditional.
    pub gamma: Vec<Vec<f64>>,
    /// (T-1) x M x M transition-event posteriors, conditional.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// T x M x D ongoing-segment occupancy (elapsed duration), conditional.
    pub eta: Vec<Vec<Vec<f64>>>,
    /// M x D expected completed-segment counts, censored tail redistributed
    /// over full durations proportional to r.
    pub duration_totals: Vec<Vec<f64>>,
    /// Highest-weight segmentation, expanded per time step.
    pub best_states: Vec<usize>,
    pub best_segments: Vec<(usize, usize, usize)>,
    pub best_log_score: f64,
    pub n_segmentations: usize,
}

// --- tiny self-contained linear algebra -------------------------------------

fn mat_inverse_and_det(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut work: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut det = 1.0;
    for col in 0..n {
        // Partial pivot.
        let mut piv = col;
        for row in col + 1..n {
            if work[row][col].abs() > work[piv][col].abs() {
                piv = row;
            }
        }
        if piv != col {
            work.swap(col, piv);
            inv.swap(col, piv);
            det = -det;
        }
        let diag = work[col][col];
        assert!(diag != 0.0, "oracle: singular covariance");
        det *= diag;
        for j in 0..n {
            work[col][j] /= diag;
            inv[col][j] /= diag;
        }
        for row in 0..n {
            if row != col {
                let factor = work[row][col];
                if factor != 0.0 {
                    for j in 0..n {
                        work[row][j] -= factor * work[col][j];
                        inv[row][j] -= factor * inv[col][j];
                    }
                }
            }
        }
    }
    (inv, det)
}

fn oracle_log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}

impl OracleModel {
    fn survival(&self, state: usize, n: usize) -> f64 {
        // sum_{m >= n} r_state(m), 1-based n.
        self.r[state][n - 1..].iter().sum()
    }

    /// Per-time, per-state conditional log densities via explicit inverses.
    fn log_densities(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t_len = y.len();
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let prepared: Vec<(Vec<Vec<f64>>, f64)> = self
            .sigma
            .iter()
            .map(|s| {
                let (inv, det) = mat_inverse_and_det(s);
                (inv, det.ln())
            })
            .collect();
        let mut out = vec![vec![0.0; self.m]; t_len];
        for t in 0..t_len {
            for j in 0..self.m {
                let mut mean = self.mu[j].clone();
                for k in 0..self.p.min(t) {
                    for row in 0..self.d {
                        for col in 0..self.d {
                            mean[row] += self.a[j][k][row][col] * y[t - 1 - k][col];
                        }
                    }
                }
                let (inv, log_det) = &prepared[j];
                let diff: Vec<f64> = (0..self.d).map(|i| y[t][i] - mean[i]).collect();
                let mut quad = 0.0;
                for row in 0..self.d {
                    for col in 0..self.d {
                        quad += diff[row] * inv[row][col] * diff[col];
                    }
                }
                out[t][j] = -0.5 * (self.d as f64) * ln_2pi - 0.5 * log_det - 0.5 * quad;
            }
        }
        out
    }

    /// Every admissible segmentation with its log weight.
    pub fn enumerate_segmentations(&self, y: &[Vec<f64>]) -> Vec<Segmentation> {
        let t_len = y.len();
        let logf = self.log_densities(y);
        let mut out = Vec::new();
        let mut segments: Vec<(usize, usize, usize)> = Vec::new();
        self.recurse(0, None, 0.0, &logf, t_len, &mut segments, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &self,
        pos: usize,
        prev: Option<usize>,
        log_w: f64,
        logf: &[Vec<f64>],
        t_len: usize,
        segments: &mut Vec<(usize, usize, usize)>,
        out: &mut Vec<Segmentation>,
    ) {
        for state in 0..self.m {
            let entry = match prev {
                None => self.delta[state],
                Some(p) if self.m == 1 => {
                    let _ = p;
                    1.0
                }
                Some(p) => {
                    if p == state {
                        continue;
                    }
                    self.q[p][state]
                }
            };
            if entry <= 0.0 {
                continue;
            }
            for n in 1..=self.dur.min(t_len - pos) {
                let duration_term = if pos + n == t_len {
                    self.survival(state, n)
                } else {
                    self.r[state][n - 1]
                };
                if duration_term <= 0.0 {
                    continue;
                }
                let emis: f64 = (pos..pos + n).map(|t| logf[t][state]).sum();
                let w = log_w + entry.ln() + duration_term.ln() + emis;
                segments.push((state, pos, n));
                if pos + n == t_len {
                    out.push(Segmentation {
                        segments: segments.clone(),
                        log_weight: w,
                    });
                } else {
                    self.recurse(pos + n, Some(state), w, logf, t_len, segments, out);
                }
                segments.pop();
            }
        }
    }

    /// Full enumeration summary for a series.
    pub fn enumerate(&self, y: &[Vec<f64>]) -> Enumeration {
        let t_len = y.len();
        let segmentations = self.enumerate_segmentations(y);
        assert!(!segmentations.is_empty(), "oracle: no admissible segmentation");
        let log_ws: Vec<f64> = segmentations.iter().map(|s| s.log_weight).collect();
        let ll = oracle_log_sum_exp(&log_ws);

        let mut gamma = vec![vec![0.0; self.m]; t_len];
        let mut xi = vec![vec![vec![0.0; self.m]; self.m]; t_len.saturating_sub(1)];
        let mut eta = vec![vec![vec![0.0; self.dur]; self.m]; t_len];
        let mut duration_totals = vec![vec![0.0; self.dur]; self.m];

        for seg in &segmentations {
            let w = (seg.log_weight - ll).exp();
            for (idx, &(state, start, len)) in seg.segments.iter().enumerate() {
                for offset in 0..len {
                    let t = start + offset;
                    gamma[t][state] += w;
                    eta[t][state][offset] += w;
                }
                let end = start + len - 1;
                if end + 1 < t_len {
                    let next_state = seg.segments[idx + 1].0;
                    xi[end][state][next_state] += w;
                    duration_totals[state][len - 1] += w;
                } else {
                    // Censored final segment: spread over full durations.
                    let surv = self.survival(state, len);
                    for m_full in len..=self.dur {
                        let r = self.r[state][m_full - 1];
                        if r > 0.0 {
                            duration_totals[state][m_full - 1] += w * r / surv;
                        }
                    }
                }
            }
        }

        let mut best = 0;
        for (i, s) in segmentations.iter().enumerate() {
            if s.log_weight > segmentations[best].log_weight {
                best = i;
            }
        }
        let mut best_states = vec![0usize; t_len];
        for &(state, start, len) in &segmentations[best].segments {
            for t in start..start + len {
                best_states[t] = state;
            }
        }

        Enumeration {
            log_likelihood: ll,
            gamma,
            xi,
            eta,
            duration_totals,
            best_states,
            best_segments: segmentations[best].segments.clone(),
            best_log_score: segmentations[best].log_weight,
            n_segmentations: segmentations.len(),
        }
    }

    /// The same model as crate types.
    pub fn to_lib(&self) -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::new(self.m, self.d, self.p, self.dur).unwrap();
        let params = ModelParams {
            initial: DVector::from_vec(self.delta.clone()),
            transition: DMatrix::from_fn(self.m, self.m, |i, j| self.q[i][j]),
            duration: DMatrix::from_fn(self.m, self.dur, |i, n| self.r[i][n]),
            means: vec_to_dvecs(&self.mu),
            covariances: self
                .sigma
                .iter()
                .map(|s| DMatrix::from_fn(self.d, self.d, |i, j| s[i][j]))
                .collect(),
            ar_coeffs: self
                .a
                .iter()
                .map(|mats| {
                    mats.iter()
                        .map(|m| DMatrix::from_fn(self.d, self.d, |i, j| m[i][j]))
                        .collect()
                })
                .collect(),
        };
        (spec, params)
    }
}

fn vec_to_dvecs(v: &[Vec<f64>]) -> Vec<DVector<f64>> {
    v.iter().map(|x| DVector::from_vec(x.clone())).collect()
}

pub fn to_series(y: &[Vec<f64>]) -> TimeSeries {
    TimeSeries::from_rows(y).unwrap()
}

// --- random instance generation ----------------------------------------------

fn random_simplex(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// A random small instance with the given structural dimensions. Parameters
/// are strictly positive probabilities except that roughly every third
/// instance zeroes one duration entry to exercise structural zeros.
pub fn random_instance(
    seed: u64,
    m: usize,
    d: usize,
    p: usize,
    dur: usize,
    t_len: usize,
) -> (OracleModel, Vec<Vec<f64>>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let delta = random_simplex(&mut rng, m);

    let q: Vec<Vec<f64>> = if m == 1 {
        vec![vec![0.0]]
    } else {
        (0..m)
            .map(|i| {
                let off = random_simplex(&mut rng, m - 1);
                let mut row = Vec::with_capacity(m);
                let mut it = off.into_iter();
                for j in 0..m {
                    row.push(if j == i { 0.0 } else { it.next().unwrap() });
                }
                row
            })
            .collect()
    };

    let mut r: Vec<Vec<f64>> = (0..m).map(|_| random_simplex(&mut rng, dur)).collect();
    if seed.is_multiple_of(3) && dur >= 2 {
        // Structural zero: state 0 never dwells exactly one step.
        let rest: f64 = r[0][1..].iter().sum();
        r[0][0] = 0.0;
        for v in r[0][1..].iter_mut() {
            *v /= rest;
        }
    }

    let uniform = |rng: &mut ChaCha12Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();

    let mu: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect())
        .collect();

    let sigma: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            let g: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
                .collect();
            let mut s = vec![vec![0.0; d]; d];
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        s[i][j] += g[i][k] * g[j][k];
                    }
                }
                s[i][i] += 0.3;
            }
            s
        })
        .collect();

    let a: Vec<Vec<Vec<Vec<f64>>>> = (0..m)
        .map(|_| {
            (0..p)
                .map(|_| {
                    (0..d)
                        .map(|_| (0..d).map(|_| uniform(&mut rng, -0.4, 0.4)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();

    let y: Vec<Vec<f64>> = (0..t_len)
        .map(|_| (0..d).map(|_| uniform(&mut rng, -2.5, 2.5)).collect())
        .collect();

    (
        OracleModel {
            m,
            d,
            p,
            dur,
            delta,
            q,
            r,
            mu,
            sigma,
            a,
        },
        y,
    )
}

/// The 50 randomized instance shapes used by the oracle-equivalence criteria:
/// M in {2,3}, d in {1,2}, p in {0,1}, D in {2,3}, T in 4..=8.
pub fn criterion_instances() -> Vec<(OracleModel, Vec<Vec<f64>>)> {
    let mut out = Vec::with_capacity(50);
    for idx in 0..50u64 {
        let m = 2 + (idx % 2) as usize;
        let d = 1 + ((idx / 2) % 2) as usize;
        let p = ((idx / 4) % 2) as usize;
        let dur = 2 + ((idx / 8) % 2) as usize;
        let t_len = 4 + (idx % 5) as usize;
        out.push(random_instance(1000 + idx, m, d, p, dur, t_len));
    }
    out
}

/// The sparse simulation setting at reduced dimension: banded covariances
/// exp(-c|i-j|) for |i-j| < 2 with decay rates (0.7, 2.6), state-1 AR matrix
/// tridiagonal (0.25 main, 0.12 off), state-2 AR zero, means zero, uniform
/// durations on 1..=30, forced two-state swap. The decay and AR magnitudes
/// are chosen so the per-segment state discriminability at this dimension
/// matches what the original setting has at full dimension (decoding with
/// the true parameters misclassifies ~4% here, ~2.3% at d=50).
pub fn sparse_setting(d: usize) -> (ModelSpec, ModelParams) {
    let (c1, c2, a_main, a_off) = if d >= 50 {
        (1.0, 2.0, 0.1, 0.05)
    } else {
        (0.7, 2.6, 0.25, 0.12)
    };
    let spec = ModelSpec::new(2, d, 1, 30).unwrap();
    let banded = |decay: f64| {
        DMatrix::from_fn(d, d, |i, j| {
            let diff = (i as f64 - j as f64).abs();
            if diff < 2.0 {
                (-decay * diff).exp()
            } else {
                0.0
            }
        })
    };
    let a1 = DMatrix::from_fn(d, d, |i, j| {
        let diff = (i as i64 - j as i64).abs();
        if diff == 0 {
            a_main
        } else if diff == 1 {
            a_off
        } else {
            0.0
        }
    });
    let params = ModelParams {
        initial: DVector::from_vec(vec![0.5, 0.5]),
        transition: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        duration: DMatrix::from_element(2, 30, 1.0 / 30.0),
        means: vec![DVector::zeros(d), DVector::zeros(d)],
        covariances: vec![banded(c1), banded(c2)],
        ar_coeffs: vec![vec![a1], vec![DMatrix::zeros(d, d)]],
    };
    (spec, params)
}
