//! Model structure: specification, parameter set, observed series, validation.
//!
//! A VAR(p)-HSMM generates data in segments. A latent state is drawn from the
//! initial distribution, a duration for that state is drawn from its duration
//! density (supported on 1..=D), the state emits that many observations from a
//! state-dependent Gaussian vector autoregression
//!
//! ```text
//! y_t = mu_i + A_{1,i} y_{t-1} + ... + A_{p,i} y_{t-p} + e_t,   e_t ~ N(0, Sigma_i),
//! ```
//!
//! and the chain then moves to a *different* state according to the transition
//! matrix (the diagonal is structurally zero; with explicit durations a
//! self-transition would be indistinguishable from a longer stay). The process
//! repeats until T observations exist; the last segment is truncated at T.
//!
//! This module owns the parameter containers, their invariants, the free
//! parameter count, the irreducibility check used as an estimability sanity
//! check, and the JSON interchange format consumed by the CLI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability vectors and stochastic matrix rows summing to 1.
pub const PROB_SUM_TOL: f64 = 1e-10;
/// Tolerance for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Structural dimensions of a VAR(p)-HSMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    /// Number of latent states (M >= 1).
    pub n_states: usize,
    /// Observation dimension (d >= 1).
    pub dim: usize,
    /// Autoregression order (p >= 0).
    pub ar_order: usize,
    /// Maximum latent state duration (D >= 1).
    pub max_duration: usize,
}

impl ModelSpec {
    pub fn new(n_states: usize, dim: usize, ar_order: usize, max_duration: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidConfig("number of states must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("observation dimension must be >= 1".into()));
        }
        if max_duration == 0 {
            return Err(Error::InvalidConfig("maximum duration must be >= 1".into()));
        }
        Ok(Self {
            n_states,
            dim,
            ar_order,
            max_duration,
        })
    }

    /// Number of free parameters in the model.
    ///
    /// delta contributes M-1, the duration table M(D-1), the transition matrix
    /// M*max(M-2, 0) (each row has M-1 nonzero entries constrained to sum to 1;
    /// for M <= 2 every row is forced), the intercepts M*d, the covariances
    /// M*d(d+1)/2, and the autoregression matrices M*p*d^2.
    ///
    /// ```
    /// use varhsmm::ModelSpec;
    ///
    /// let spec = ModelSpec::new(2, 50, 1, 30)?;
    /// // 1 + 58 + 0 + 100 + 2550 + 5000
    /// assert_eq!(spec.count_free_parameters(), 7709);
    /// # Ok::<(), varhsmm::Error>(())
    /// ```
    pub fn count_free_parameters(&self) -> usize {
        let m = self.n_states;
        let d = self.dim;
        let p = self.ar_order;
        let dur = self.max_duration;
        (m - 1)
            + m * (dur - 1)
            + m * m.saturating_sub(2)
            + m * d
            + m * d * (d + 1) / 2
            + m * p * d * d
    }
}

/// Full parameter set of a VAR(p)-HSMM.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Initial state distribution, length M.
    pub initial: DVector<f64>,
    /// M x M transition matrix, row-stochastic with zero diagonal (vacuous at M=1).
    pub transition: DMatrix<f64>,
    /// M x D duration densities; row i is the pmf of state i's dwell time on 1..=D.
    pub duration: DMatrix<f64>,
    /// State-dependent intercepts, M vectors of length d.
    pub means: Vec<DVector<f64>>,
    /// State-dependent noise covariances, M symmetric positive definite d x d matrices.
    pub covariances: Vec<DMatrix<f64>>,
    /// Autoregression matrices: `ar_coeffs[state][k]` is the d x d matrix on lag k+1.
    pub ar_coeffs: Vec<Vec<DMatrix<f64>>>,
}

/// Observed multivariate series, T rows of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
}

impl TimeSeries {
    /// Wraps a T x d matrix of observations. All entries must be finite and T >= 1.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "a time series needs at least one row and one column".into(),
            ));
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() {
                // nalgebra iterates column-major.
                let row = idx % values.nrows();
                let col = idx / values.nrows();
                return Err(Error::NonFinite(format!(
                    "time series entry at row {row}, column {col}"
                )));
            }
        }
        Ok(Self { values })
    }

    /// Builds a series from time-ordered rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("empty series".into()));
        }
        let d = rows[0].len();
        for (t, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    context: format!("series row {t}"),
                    expected: d,
                    actual: row.len(),
                });
            }
        }
        let mut m = DMatrix::zeros(rows.len(), d);
        for (t, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(t, j)] = v;
            }
        }
        Self::new(m)
    }

    /// Number of observations T.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Observation dimension d.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Observation at time t (0-based) as a column vector.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    /// The observations as a vector of column vectors, time-ordered.
    pub(crate) fn rows_as_vectors(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|t| self.row(t)).collect()
    }

    /// A new series holding rows `range.start..range.end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::TimeOutOfRange(format!(
                "slice {start}..{end} of a series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values.rows(start, end - start).into_owned(),
        })
    }
}

fn is_within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Checks `params` against `spec` and returns every violation found.
///
/// The report is empty iff the parameters are a valid parameterization for the
/// spec. Dimension mismatches are reported as violations rather than errors so
/// a caller can show everything wrong with a document at once. State indices
/// in messages are 1-based to match the serialized format.
pub fn validate_params(spec: &ModelSpec, params: &ModelParams) -> Vec<String> {
    let mut report = Vec::new();
    let m = spec.n_states;
    let d = spec.dim;
    let p = spec.ar_order;
    let dur = spec.max_duration;

    if params.initial.len() != m {
        report.push(format!(
            "delta has length {}, expected {m}",
            params.initial.len()
        ));
    } else {
        let sum: f64 = params.initial.iter().sum();
        if !is_within(sum, 1.0, PROB_SUM_TOL) {
            report.push(format!("delta sums to {sum}, expected 1"));
        }
        for (j, &v) in params.initial.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                report.push(format!("delta[{}] = {v} is not a probability", j + 1));
            }
        }
    }

    if params.transition.nrows() != m || params.transition.ncols() != m {
        report.push(format!(
            "Q is {}x{}, expected {m}x{m}",
            params.transition.nrows(),
            params.transition.ncols()
        ));
    } else if m > 1 {
        for i in 0..m {
            let row_sum: f64 = params.transition.row(i).iter().sum();
            if !is_within(row_sum, 1.0, PROB_SUM_TOL) {
                report.push(format!("Q row {} sums to {row_sum}, expected 1", i + 1));
            }
            if params.transition[(i, i)] != 0.0 {
                report.push(format!("nonzero diagonal at state {}", i + 1));
            }
            for j in 0..m {
                let q = params.transition[(i, j)];
                if !q.is_finite() || q < 0.0 {
                    report.push(format!("Q[{},{}] = {q} is not a probability", i + 1, j + 1));
                }
            }
        }
    }

    if params.duration.nrows() != m || params.duration.ncols() != dur {
        report.push(format!(
            "r is {}x{}, expected {m}x{dur}",
            params.duration.nrows(),
            params.duration.ncols()
        ));
    } else {
        for i in 0..m {
            let row_sum: f64 = params.duration.row(i).iter().sum();
            if !is_within(row_sum, 1.0, PROB_SUM_TOL) {
                report.push(format!("r row {} sums to {row_sum}, expected 1", i + 1));
            }
            for n in 0..dur {
                let v = params.duration[(i, n)];
                if !v.is_finite() || v < 0.0 {
                    report.push(format!(
                        "r[{},{}] = {v} is not a probability",
                        i + 1,
                        n + 1
                    ));
                }
            }
        }
    }

    if params.means.len() != m {
        report.push(format!("mu has {} entries, expected {m}", params.means.len()));
    } else {
        for (i, mu) in params.means.iter().enumerate() {
            if mu.len() != d {
                report.push(format!(
                    "mu[{}] has length {}, expected {d}",
                    i + 1,
                    mu.len()
                ));
            } else if mu.iter().any(|v| !v.is_finite()) {
                report.push(format!("mu[{}] has a non-finite entry", i + 1));
            }
        }
    }

    if params.covariances.len() != m {
        report.push(format!(
            "Sigma has {} entries, expected {m}",
            params.covariances.len()
        ));
    } else {
        for (i, sigma) in params.covariances.iter().enumerate() {
            if sigma.nrows() != d || sigma.ncols() != d {
                report.push(format!(
                    "Sigma[{}] is {}x{}, expected {d}x{d}",
                    i + 1,
                    sigma.nrows(),
                    sigma.ncols()
                ));
                continue;
            }
            if sigma.iter().any(|v| !v.is_finite()) {
                report.push(format!("Sigma[{}] has a non-finite entry", i + 1));
                continue;
            }
            let asym = (sigma - sigma.transpose()).abs().max();
            if asym > SYMMETRY_TOL {
                report.push(format!(
                    "Sigma[{}] is asymmetric (max deviation {asym:e})",
                    i + 1
                ));
            }
            if nalgebra::Cholesky::new(sigma.clone()).is_none() {
                report.push(format!("Sigma[{}] not positive definite", i + 1));
            }
        }
    }

    if params.ar_coeffs.len() != m {
        report.push(format!(
            "A has {} state entries, expected {m}",
            params.ar_coeffs.len()
        ));
    } else {
        for (i, mats) in params.ar_coeffs.iter().enumerate() {
            if mats.len() != p {
                report.push(format!(
                    "A[{}] has {} lag matrices, expected {p}",
                    i + 1,
                    mats.len()
                ));
                continue;
            }
            for (k, a) in mats.iter().enumerate() {
                if a.nrows() != d || a.ncols() != d {
                    report.push(format!(
                        "A[{},{}] is {}x{}, expected {d}x{d}",
                        i + 1,
                        k + 1,
                        a.nrows(),
                        a.ncols()
                    ));
                } else if a.iter().any(|v| !v.is_finite()) {
                    report.push(format!("A[{},{}] has a non-finite entry", i + 1, k + 1));
                }
            }
        }
    }

    report
}

impl ModelParams {
    /// Validates against `spec`, converting a non-empty report into an error.
    pub fn ensure_valid(&self, spec: &ModelSpec) -> Result<()> {
        let report = validate_params(spec, self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(report.join("; ")))
        }
    }
}

/// True iff the directed graph with an edge i -> j wherever `Q[i][j] > 0` is
/// strongly connected (assumption for estimator consistency). A single state
/// is trivially irreducible.
pub fn check_irreducibility(transition: &DMatrix<f64>) -> bool {
    let m = transition.nrows();
    if m != transition.ncols() {
        return false;
    }
    if m <= 1 {
        return true;
    }
    let reaches_all = |forward: bool| -> bool {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let q = if forward {
                    transition[(i, j)]
                } else {
                    transition[(j, i)]
                };
                if q > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reaches_all(true) && reaches_all(false)
}

// --- JSON interchange -------------------------------------------------------
//
// Matrices are stored row-major as nested arrays of doubles:
//   { "spec": {"M":..,"d":..,"p":..,"D":..},
//     "delta": [..], "Q": [[..]], "r": [[..]],
//     "mu": [[..]], "Sigma": [[[..]]], "A": [[[[..]]]] }
// A is indexed [state][lag][row][col]. This document is the interchange
// contract for every CLI subcommand.

#[derive(Serialize, Deserialize)]
struct SpecDoc {
    #[serde(rename = "M")]
    m: usize,
    d: usize,
    p: usize,
    #[serde(rename = "D")]
    dur: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    spec: SpecDoc,
    delta: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<Vec<f64>>>>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::ModelFormat(format!("{what} is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::ModelFormat(format!("{what} has an empty row")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::ModelFormat(format!(
                "{what} row {} has length {}, expected {cols}",
                i + 1,
                row.len()
            )));
        }
    }
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Serializes a model to the JSON interchange document (pretty-printed).
pub fn model_to_json(spec: &ModelSpec, params: &ModelParams) -> String {
    let doc = ModelDoc {
        spec: SpecDoc {
            m: spec.n_states,
            d: spec.dim,
            p: spec.ar_order,
            dur: spec.max_duration,
        },
        delta: params.initial.iter().copied().collect(),
        q: matrix_to_rows(&params.transition),
        r: matrix_to_rows(&params.duration),
        mu: params.means.iter().map(|v| v.iter().copied().collect()).collect(),
        sigma: params.covariances.iter().map(matrix_to_rows).collect(),
        a: params
            .ar_coeffs
            .iter()
            .map(|mats| mats.iter().map(matrix_to_rows).collect())
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model document serializes");
    s.push('\n');
    s
}

/// Parses the JSON interchange document. Shapes are checked here; call
/// [`validate_params`] afterwards for the full invariant report.
pub fn model_from_json(text: &str) -> Result<(ModelSpec, ModelParams)> {
    let doc: ModelDoc =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let spec = ModelSpec::new(doc.spec.m, doc.spec.d, doc.spec.p, doc.spec.dur)?;

    let initial = DVector::from_vec(doc.delta);
    let transition = rows_to_matrix(&doc.q, "Q")?;
    let duration = rows_to_matrix(&doc.r, "r")?;
    let means: Vec<DVector<f64>> = doc.mu.into_iter().map(DVector::from_vec).collect();
    let covariances = doc
        .sigma
        .iter()
        .enumerate()
        .map(|(i, rows)| rows_to_matrix(rows, &format!("Sigma[{}]", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let ar_coeffs = doc
        .a
        .iter()
        .enumerate()
        .map(|(i, mats)| {
            mats.iter()
                .enumerate()
                .map(|(k, rows)| rows_to_matrix(rows, &format!("A[{},{}]", i + 1, k + 1)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((
        spec,
        ModelParams {
            initial,
            transition,
            duration,
            means,
            covariances,
            ar_coeffs,
        },
    ))
}
