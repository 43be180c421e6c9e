//! Regularization selection by rolling one-step MSFE over a two-dimensional
//! grid, and MSFE-ranked model comparison.
//!
//! The series is split into a training block (rows 0..T1), a validation block
//! (rows T1..T2), and a forecast block (rows T2..T). For each grid cell a
//! model is fitted on the training block and one-step forecasts roll through
//! the validation block; the cell's score is the mean squared forecast error.
//! The default policy fits once per cell and rolls forward by filtering
//! (refitting after every added observation is available behind
//! [`RefitPolicy::RefitEachStep`] for small-scale fidelity runs, at
//! (T2-T1)-fold cost). Cells whose fit fails or does not converge carry
//! infinite MSFE and can never win; ties break toward larger regularization
//! on both axes.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::decode::{msfe, rolling_one_step_forecasts};
use crate::em::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TimeSeries};
use crate::mstep::RegularizationConfig;

/// How validation-block forecasts are produced within one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitPolicy {
    /// Fit once on the training block, then roll forecasts forward by
    /// filtering. The default.
    FitOnceFilterForward,
    /// Refit from the deterministic initialization after every added
    /// observation.
    RefitEachStep,
}

/// Cross-validation plan: split points and regularization grids.
#[derive(Debug, Clone)]
pub struct CvPlan {
    /// End of the training block (exclusive row index, T1).
    pub train_end: usize,
    /// End of the validation block (exclusive row index, T2).
    pub valid_end: usize,
    /// Strictly increasing nonnegative lambda_sigma grid.
    pub grid_sigma: Vec<f64>,
    /// Strictly increasing nonnegative lambda_a grid.
    pub grid_a: Vec<f64>,
    pub refit_policy: RefitPolicy,
}

/// 15 log-spaced points from 1e-4 to 1 (lambda_sigma) and from 0.1 to 100
/// (lambda_a); the default two-dimensional grid.
pub fn default_grids() -> (Vec<f64>, Vec<f64>) {
    (log_spaced(1e-4, 1.0, 15), log_spaced(0.1, 100.0, 15))
}

/// `count` points equally spaced on the log scale, endpoints exact.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == count {
                hi
            } else {
                (ln_lo + (ln_hi - ln_lo) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

impl CvPlan {
    /// A plan with the default grids and filter-forward policy.
    pub fn with_default_grids(train_end: usize, valid_end: usize) -> Self {
        let (grid_sigma, grid_a) = default_grids();
        Self {
            train_end,
            valid_end,
            grid_sigma,
            grid_a,
            refit_policy: RefitPolicy::FitOnceFilterForward,
        }
    }

    pub fn validate(&self, series_len: usize) -> Result<()> {
        if !(1 <= self.train_end && self.train_end < self.valid_end && self.valid_end <= series_len)
        {
            return Err(Error::InvalidConfig(format!(
                "split points must satisfy 1 <= T1 < T2 <= T; got T1={}, T2={}, T={series_len}",
                self.train_end, self.valid_end
            )));
        }
        for (name, grid) in [("grid_sigma", &self.grid_sigma), ("grid_a", &self.grid_a)] {
            if grid.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
            if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be nonnegative and finite"
                )));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellStatus {
    Converged,
    /// The fit ran out of iterations; the cell carries infinite MSFE.
    NotConverged,
    /// The fit or the forecasting pass failed outright.
    Failed(String),
}

/// Grid-search result: the MSFE surface and the selected regularization.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// |grid_sigma| x |grid_a| surface; non-finite entries mark bad cells.
    pub msfe_surface: DMatrix<f64>,
    pub best_lambda_sigma: f64,
    pub best_lambda_a: f64,
    /// (sigma index, a index) of the winning cell.
    pub best_indices: (usize, usize),
    /// Row-major by sigma index, then a index.
    pub cell_status: Vec<Vec<CellStatus>>,
}

fn cell_msfe(
    series: &TimeSeries,
    spec: &ModelSpec,
    plan: &CvPlan,
    base: &FitConfig,
    lambda_sigma: f64,
    lambda_a: f64,
) -> (f64, CellStatus) {
    let mut config = base.clone();
    config.reg = RegularizationConfig {
        lambda_sigma,
        lambda_a,
    };
    let result: Result<(Vec<_>, bool)> = (|| {
        let window = series.slice_rows(0, plan.valid_end)?;
        match plan.refit_policy {
            RefitPolicy::FitOnceFilterForward => {
                let train = series.slice_rows(0, plan.train_end)?;
                let fitted = fit(&train, spec, &config, None)?;
                let forecasts = rolling_one_step_forecasts(
                    &window,
                    &fitted.params,
                    spec,
                    plan.train_end,
                    plan.valid_end,
                )?;
                Ok((forecasts, fitted.converged))
            }
            RefitPolicy::RefitEachStep => {
                let mut forecasts = Vec::with_capacity(plan.valid_end - plan.train_end);
                let mut all_converged = true;
                for row in plan.train_end..plan.valid_end {
                    let train = series.slice_rows(0, row)?;
                    let fitted = fit(&train, spec, &config, None)?;
                    all_converged &= fitted.converged;
                    forecasts.push(crate::decode::forecast_one_step(
                        &window,
                        &fitted.params,
                        spec,
                        row,
                    )?);
                }
                Ok((forecasts, all_converged))
            }
        }
    })();

    match result {
        Err(e) => (f64::INFINITY, CellStatus::Failed(e.to_string())),
        Ok((forecasts, converged)) => {
            let actuals: Vec<_> = (plan.train_end..plan.valid_end)
                .map(|row| series.row(row))
                .collect();
            match msfe(&forecasts, &actuals) {
                Err(e) => (f64::INFINITY, CellStatus::Failed(e.to_string())),
                Ok(_) if !converged => (f64::INFINITY, CellStatus::NotConverged),
                Ok(value) if !value.is_finite() => (
                    f64::INFINITY,
                    CellStatus::Failed("non-finite forecast error".into()),
                ),
                Ok(value) => (value, CellStatus::Converged),
            }
        }
    }
}

/// Two-dimensional grid search minimizing rolling one-step MSFE on the
/// validation block. Cells run in parallel and merge by index, so the surface
/// is deterministic. Errors only if the plan is invalid or no cell at all
/// produced a finite MSFE.
pub fn grid_search(
    series: &TimeSeries,
    spec: &ModelSpec,
    plan: &CvPlan,
    base: &FitConfig,
) -> Result<CvResult> {
    plan.validate(series.len())?;
    base.validate()?;

    let n_sigma = plan.grid_sigma.len();
    let n_a = plan.grid_a.len();
    let cells: Vec<(usize, usize)> = (0..n_sigma)
        .flat_map(|s| (0..n_a).map(move |a| (s, a)))
        .collect();
    let outcomes: Vec<(f64, CellStatus)> = cells
        .par_iter()
        .map(|&(s, a)| cell_msfe(series, spec, plan, base, plan.grid_sigma[s], plan.grid_a[a]))
        .collect();

    let mut surface = DMatrix::from_element(n_sigma, n_a, f64::INFINITY);
    let mut status = vec![vec![CellStatus::NotConverged; n_a]; n_sigma];
    for (&(s, a), (value, st)) in cells.iter().zip(outcomes) {
        surface[(s, a)] = value;
        status[s][a] = st;
    }

    // Argmin with ties broken toward larger lambda on both axes (sigma axis
    // first): scan from the large end and require strict improvement.
    let mut best: Option<(usize, usize, f64)> = None;
    for s in (0..n_sigma).rev() {
        for a in (0..n_a).rev() {
            let v = surface[(s, a)];
            if v.is_finite() && best.is_none_or(|(_, _, bv)| v < bv) {
                best = Some((s, a, v));
            }
        }
    }
    let (bs, ba, _) = best.ok_or_else(|| {
        Error::Degenerate("no grid cell produced a finite forecast error".into())
    })?;

    Ok(CvResult {
        msfe_surface: surface,
        best_lambda_sigma: plan.grid_sigma[bs],
        best_lambda_a: plan.grid_a[ba],
        best_indices: (bs, ba),
        cell_status: status,
    })
}

/// A candidate entry for [`compare_models`].
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub label: String,
    pub spec: ModelSpec,
    pub config: FitConfig,
}

/// One row of a model-comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub label: String,
    pub spec: ModelSpec,
    pub lambda_sigma: f64,
    pub lambda_a: f64,
    /// Held-out (forecast block) MSFE; infinite when the candidate failed.
    pub msfe: f64,
    pub free_parameters: usize,
    /// Empty on success, otherwise the failure reason.
    pub error: Option<String>,
}

/// Runs the grid search per candidate, refits each on rows 0..T2 at its
/// selected regularization, scores rolling one-step forecasts on the held-out
/// block T2..T, and ranks ascending by MSFE with ties broken toward fewer
/// free parameters. Per-candidate failures are isolated into their rows.
pub fn compare_models(
    series: &TimeSeries,
    candidates: &[CandidateModel],
    plan: &CvPlan,
) -> Result<Vec<ComparisonRow>> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate models".into()));
    }
    plan.validate(series.len())?;
    if plan.valid_end >= series.len() {
        return Err(Error::InvalidConfig(
            "compare_models needs a nonempty forecast block (T2 < T)".into(),
        ));
    }

    let mut rows: Vec<ComparisonRow> = candidates
        .par_iter()
        .map(|cand| {
            let free_parameters = cand.spec.count_free_parameters();
            let outcome: Result<(f64, f64, f64)> = (|| {
                let cv = grid_search(series, &cand.spec, plan, &cand.config)?;
                let mut config = cand.config.clone();
                config.reg = RegularizationConfig {
                    lambda_sigma: cv.best_lambda_sigma,
                    lambda_a: cv.best_lambda_a,
                };
                let refit_window = series.slice_rows(0, plan.valid_end)?;
                let fitted = fit(&refit_window, &cand.spec, &config, None)?;
                let forecasts = rolling_one_step_forecasts(
                    series,
                    &fitted.params,
                    &cand.spec,
                    plan.valid_end,
                    series.len(),
                )?;
                let actuals: Vec<_> = (plan.valid_end..series.len())
                    .map(|row| series.row(row))
                    .collect();
                Ok((
                    cv.best_lambda_sigma,
                    cv.best_lambda_a,
                    msfe(&forecasts, &actuals)?,
                ))
            })();
            match outcome {
                Ok((lambda_sigma, lambda_a, value)) => ComparisonRow {
                    label: cand.label.clone(),
                    spec: cand.spec,
                    lambda_sigma,
                    lambda_a,
                    msfe: value,
                    free_parameters,
                    error: None,
                },
                Err(e) => ComparisonRow {
                    label: cand.label.clone(),
                    spec: cand.spec,
                    lambda_sigma: f64::NAN,
                    lambda_a: f64::NAN,
                    msfe: f64::INFINITY,
                    free_parameters,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    rows.sort_by(|a, b| {
        a.msfe
            .partial_cmp(&b.msfe)
            .expect("MSFE is never NaN")
            .then(a.free_parameters.cmp(&b.free_parameters))
    });
    Ok(rows)
}
