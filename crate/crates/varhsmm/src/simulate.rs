//! Simulation from the generative process, with ground-truth paths.
//!
//! A draw starts a segment by sampling a state (from the initial distribution
//! the first time, from the transition row afterwards — never back into the
//! same state), samples that state's duration, and emits the segment from the
//! state's Gaussian VAR(p) using previously emitted values as lags (zero
//! vectors before the start of the series unless an explicit pre-sample
//! history is supplied). The final segment is truncated at the requested
//! length, mirroring the right-censoring convention used in inference.
//!
//! All randomness comes from a ChaCha12 stream seeded with the caller's seed,
//! with normals produced by the Box-Muller transform; the generator identifier
//! is exported as [`RNG_ALGORITHM`] so outputs can be pinned to it.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gaussian::CholeskyFactor;
use crate::model::{ModelParams, ModelSpec, TimeSeries};

/// Identifier of the random number generation scheme, recorded alongside
/// outputs so a simulation can be reproduced bit for bit across versions.
pub const RNG_ALGORITHM: &str = "chacha12-boxmuller";

/// Seeded source of uniforms, standard normals, and categorical draws.
pub(crate) struct GaussianSource {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    /// One N(0,1) draw via Box-Muller, caching the paired value.
    pub(crate) fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.uniform(); // (0, 1]
        let u2: f64 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        let (sin, cos) = angle.sin_cos();
        self.spare = Some(radius * sin);
        radius * cos
    }

    /// Index drawn from an unnormalized nonnegative mass vector.
    pub(crate) fn categorical(&mut self, mass: &[f64]) -> usize {
        let total: f64 = mass.iter().sum();
        debug_assert!(total > 0.0, "categorical draw over zero mass");
        let u = self.uniform() * total;
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &p) in mass.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
                cum += p;
                if u < cum {
                    return i;
                }
            }
        }
        last_positive
    }
}

/// A simulated series with its generating path.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub series: TimeSeries,
    /// State index (0-based) at every time step.
    pub true_states: Vec<usize>,
    /// Segments as (state, emitted length); the final one may be truncated.
    pub true_segments: Vec<(usize, usize)>,
}

/// Simulates `len` observations with zero pre-sample lags.
///
/// Deterministic given the seed:
///
/// ```
/// use nalgebra::{DMatrix, DVector};
/// use varhsmm::{ModelParams, ModelSpec};
/// use varhsmm::simulate::simulate;
///
/// let spec = ModelSpec::new(1, 1, 0, 2)?;
/// let params = ModelParams {
///     initial: DVector::from_vec(vec![1.0]),
///     transition: DMatrix::zeros(1, 1),
///     duration: DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
///     means: vec![DVector::from_vec(vec![0.0])],
///     covariances: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
///     ar_coeffs: vec![vec![]],
/// };
/// let a = simulate(&spec, &params, 100, 7)?;
/// let b = simulate(&spec, &params, 100, 7)?;
/// assert_eq!(a.series.values(), b.series.values());
/// assert_eq!(a.true_segments, b.true_segments);
/// # Ok::<(), varhsmm::Error>(())
/// ```
pub fn simulate(
    spec: &ModelSpec,
    params: &ModelParams,
    len: usize,
    seed: u64,
) -> Result<SimulationOutput> {
    simulate_with_history(spec, params, len, seed, &[])
}

/// Simulates `len` observations continuing from `history` (time-ordered rows
/// that precede t = 0; missing lags beyond it are zero vectors).
pub fn simulate_with_history(
    spec: &ModelSpec,
    params: &ModelParams,
    len: usize,
    seed: u64,
    history: &[DVector<f64>],
) -> Result<SimulationOutput> {
    if len == 0 {
        return Err(Error::InvalidConfig("simulation length must be >= 1".into()));
    }
    params.ensure_valid(spec)?;
    for (i, h) in history.iter().enumerate() {
        if h.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                context: format!("pre-sample history row {i}"),
                expected: spec.dim,
                actual: h.len(),
            });
        }
    }

    let m = spec.n_states;
    let d = spec.dim;
    let p = spec.ar_order;
    let chols: Vec<CholeskyFactor> = (0..m)
        .map(|j| CholeskyFactor::from_covariance(&params.covariances[j], j))
        .collect::<Result<Vec<_>>>()?;

    let mut source = GaussianSource::new(seed);
    let init_mass: Vec<f64> = params.initial.iter().copied().collect();
    let mut state = source.categorical(&init_mass);

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(len);
    let mut states = Vec::with_capacity(len);
    let mut segments = Vec::new();

    while rows.len() < len {
        let dur_mass: Vec<f64> = params.duration.row(state).iter().copied().collect();
        let duration = source.categorical(&dur_mass) + 1;
        let emit = duration.min(len - rows.len());
        for _ in 0..emit {
            let t = rows.len();
            let mut mean = params.means[state].clone();
            for k in 1..=p {
                if t >= k {
                    mean += &params.ar_coeffs[state][k - 1] * &rows[t - k];
                } else if history.len() + t >= k {
                    mean += &params.ar_coeffs[state][k - 1] * &history[history.len() + t - k];
                }
                // Otherwise the lag is a zero vector and contributes nothing.
            }
            let z = DVector::from_fn(d, |_, _| source.standard_normal());
            let noise = chols[state].lower() * z;
            rows.push(mean + noise);
            states.push(state);
        }
        segments.push((state, emit));
        if rows.len() >= len {
            break;
        }
        state = if m == 1 {
            0
        } else {
            let trans_mass: Vec<f64> = params.transition.row(state).iter().copied().collect();
            source.categorical(&trans_mass)
        };
    }

    let mut values = DMatrix::zeros(len, d);
    for (t, row) in rows.iter().enumerate() {
        values.set_row(t, &row.transpose());
    }
    Ok(SimulationOutput {
        series: TimeSeries::new(values)?,
        true_states: states,
        true_segments: segments,
    })
}

/// Searches all M! relabelings of `estimated` and returns the permutation
/// (as `perm[old_label] = new_label`) minimizing the fraction of mismatched
/// time points against `truth`, together with that fraction. Ties break
/// toward the lexicographically smallest permutation. M > 8 is rejected.
pub fn match_states(
    estimated: &[usize],
    truth: &[usize],
    n_states: usize,
) -> Result<(Vec<usize>, f64)> {
    if estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "state sequences".into(),
            expected: truth.len(),
            actual: estimated.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::Degenerate("empty state sequences".into()));
    }
    if n_states > 8 {
        return Err(Error::InvalidConfig(
            "state matching is exhaustive over permutations; M > 8 rejected".into(),
        ));
    }
    for &s in estimated.iter().chain(truth.iter()) {
        if s >= n_states {
            return Err(Error::StateOutOfRange {
                state: s,
                n_states,
            });
        }
    }

    // Mismatch counts per (estimated label, candidate relabel).
    let mut cost = vec![vec![0usize; n_states]; n_states];
    for (&e, &t) in estimated.iter().zip(truth.iter()) {
        for relabel in 0..n_states {
            if relabel != t {
                cost[e][relabel] += 1;
            }
        }
    }

    let mut best_perm: Option<Vec<usize>> = None;
    let mut best_cost = usize::MAX;
    let mut perm = Vec::with_capacity(n_states);
    let mut used = vec![false; n_states];
    fn rec(
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
        cost: &[Vec<usize>],
        n: usize,
        acc: usize,
        best_perm: &mut Option<Vec<usize>>,
        best_cost: &mut usize,
    ) {
        let level = perm.len();
        if level == n {
            if acc < *best_cost {
                *best_cost = acc;
                *best_perm = Some(perm.clone());
            }
            return;
        }
        for candidate in 0..n {
            if !used[candidate] {
                used[candidate] = true;
                perm.push(candidate);
                rec(perm, used, cost, n, acc + cost[level][candidate], best_perm, best_cost);
                perm.pop();
                used[candidate] = false;
            }
        }
    }
    rec(
        &mut perm,
        &mut used,
        &cost,
        n_states,
        0,
        &mut best_perm,
        &mut best_cost,
    );
    let perm = best_perm.expect("at least one permutation");
    Ok((perm, best_cost as f64 / truth.len() as f64))
}
