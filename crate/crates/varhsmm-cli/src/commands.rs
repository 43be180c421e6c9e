//! Subcommand implementations.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde_json::json;
use varhsmm::decode::{msfe, rolling_one_step_forecasts, viterbi_decode};
use varhsmm::em::{fit, FitConfig, InitPolicy};
use varhsmm::model::{model_from_json, model_to_json, validate_params, ModelSpec, TimeSeries};
use varhsmm::mstep::RegularizationConfig;
use varhsmm::selection::{
    compare_models, default_grids, grid_search, CandidateModel, CellStatus, CvPlan, RefitPolicy,
};
use varhsmm::simulate::simulate;
use varhsmm::{analysis, ModelParams};

use crate::args::{CompareArgs, CorrelateArgs, DecodeArgs, FitArgs, ForecastArgs, ReturnsArgs, SimulateArgs, SplitArgs};
use crate::csvio::{read_numeric_csv, render_csv, write_atomic};
use crate::errors::{CliError, CliResult};
use crate::manifest::RunManifest;

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))
}

fn load_model(path: &Path) -> CliResult<(ModelSpec, ModelParams)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let (spec, params) = model_from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let report = validate_params(&spec, &params);
    if !report.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: invalid model: {}",
            path.display(),
            report.join("; ")
        )));
    }
    Ok((spec, params))
}

fn load_series(path: &Path) -> CliResult<(Vec<String>, TimeSeries)> {
    let (headers, rows) = read_numeric_csv(path)?;
    let series = TimeSeries::from_rows(&rows)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((headers, series))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, &text)
}

fn states_csv(states: &[usize]) -> String {
    let mut out = String::from("state\n");
    for &s in states {
        out.push_str(&format!("{}\n", s + 1));
    }
    out
}

fn segments_csv(segments: impl Iterator<Item = (usize, usize, usize)>) -> String {
    let mut out = String::from("state,start,duration\n");
    for (state, start, duration) in segments {
        out.push_str(&format!("{},{},{}\n", state + 1, start + 1, duration));
    }
    out
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let (spec, params) = load_model(&args.model)?;
    if args.length == 0 {
        return Err(CliError::Validation("--length must be >= 1".into()));
    }
    ensure_out_dir(&args.out)?;
    let output = simulate(&spec, &params, args.length, args.seed)?;

    let headers: Vec<String> = (1..=spec.dim).map(|c| format!("y{c}")).collect();
    let rows: Vec<Vec<f64>> = (0..output.series.len())
        .map(|t| output.series.values().row(t).iter().copied().collect())
        .collect();
    write_atomic(&args.out.join("series.csv"), &render_csv(&headers, &rows))?;
    write_atomic(&args.out.join("states.csv"), &states_csv(&output.true_states))?;
    let mut start = 0;
    let segs: Vec<(usize, usize, usize)> = output
        .true_segments
        .iter()
        .map(|&(state, len)| {
            let row = (state, start, len);
            start += len;
            row
        })
        .collect();
    write_atomic(&args.out.join("segments.csv"), &segments_csv(segs.into_iter()))?;
    write_atomic(&args.out.join("model.json"), &model_to_json(&spec, &params))?;

    let mut manifest = RunManifest::new(
        json!({
            "length": args.length,
            "model": args.model.display().to_string(),
        }),
        args.seed,
    );
    manifest.record_input(&args.model)?;
    manifest.write(&args.out)
}

fn resolve_splits(split: &SplitArgs, series_len: usize) -> CliResult<(usize, usize)> {
    let train_end = match split.train_end {
        Some(t) => t,
        None => ((series_len as f64) * split.train_frac).round() as usize,
    };
    let valid_end = match split.valid_end {
        Some(t) => t,
        None => {
            ((series_len as f64) * (split.train_frac + split.valid_frac)).round() as usize
        }
    };
    if !(1 <= train_end && train_end < valid_end && valid_end <= series_len) {
        return Err(CliError::Validation(format!(
            "splits must satisfy 1 <= train_end < valid_end <= {series_len}; got {train_end}, {valid_end}"
        )));
    }
    Ok((train_end, valid_end))
}

fn parse_grid(text: &str, name: &str) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{name}: '{v}' is not a number")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(values)
}

fn build_plan(args: &SplitArgs, series_len: usize) -> CliResult<CvPlan> {
    let (train_end, valid_end) = resolve_splits(args, series_len)?;
    let (mut grid_sigma, mut grid_a) = default_grids();
    if let Some(text) = &args.grid_sigma {
        grid_sigma = parse_grid(text, "--grid-sigma")?;
    }
    if let Some(text) = &args.grid_a {
        grid_a = parse_grid(text, "--grid-a")?;
    }
    Ok(CvPlan {
        train_end,
        valid_end,
        grid_sigma,
        grid_a,
        refit_policy: if args.refit_each_step {
            RefitPolicy::RefitEachStep
        } else {
            RefitPolicy::FitOnceFilterForward
        },
    })
}

fn fit_config(args: &FitArgs, reg: RegularizationConfig) -> FitConfig {
    FitConfig {
        reg,
        max_iterations: args.max_iter,
        tolerance: args.tol,
        init_policy: InitPolicy::SegmentedMoments,
        seed: args.seed,
        init_jitter: args.init_jitter,
    }
}

fn cv_surface_csv(plan: &CvPlan, result: &varhsmm::selection::CvResult) -> String {
    let mut out = String::from("lambda_sigma,lambda_a,msfe,converged\n");
    for (s, &ls) in plan.grid_sigma.iter().enumerate() {
        for (a, &la) in plan.grid_a.iter().enumerate() {
            let converged = matches!(result.cell_status[s][a], CellStatus::Converged);
            out.push_str(&format!(
                "{ls},{la},{},{}\n",
                result.msfe_surface[(s, a)],
                converged
            ));
        }
    }
    out
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let (_, series) = load_series(&args.data)?;
    let spec = ModelSpec::new(args.states, series.dim(), args.ar_order, args.max_duration)?;
    ensure_out_dir(&args.out)?;

    let mut cv_report = serde_json::Value::Null;
    let (reg, fit_window) = if args.cv {
        let plan = build_plan(&args.split, series.len())?;
        let base = fit_config(args, RegularizationConfig::none());
        let cv = grid_search(&series, &spec, &plan, &base)?;
        write_atomic(&args.out.join("cv_surface.csv"), &cv_surface_csv(&plan, &cv))?;
        cv_report = json!({
            "best_lambda_sigma": cv.best_lambda_sigma,
            "best_lambda_a": cv.best_lambda_a,
            "best_indices": [cv.best_indices.0, cv.best_indices.1],
            "train_end": plan.train_end,
            "valid_end": plan.valid_end,
        });
        write_json(&args.out.join("cv_summary.json"), &cv_report)?;
        (
            RegularizationConfig::new(cv.best_lambda_sigma, cv.best_lambda_a)?,
            series.slice_rows(0, plan.valid_end)?,
        )
    } else {
        (
            RegularizationConfig::new(args.lambda_sigma, args.lambda_a)?,
            series.clone(),
        )
    };

    let config = fit_config(args, reg);
    let result = fit(&fit_window, &spec, &config, None)?;

    write_atomic(
        &args.out.join("model.json"),
        &model_to_json(&spec, &result.params),
    )?;
    let mut trace = String::from("iteration,penalized_log_likelihood\n");
    for (i, v) in result.penalized_loglik_trace.iter().enumerate() {
        trace.push_str(&format!("{},{v}\n", i + 1));
    }
    write_atomic(&args.out.join("trace.csv"), &trace)?;

    let report = json!({
        "converged": result.converged,
        "iterations": result.iterations,
        "penalized_log_likelihood": result.objective(),
        "lambda_sigma": config.reg.lambda_sigma,
        "lambda_a": config.reg.lambda_a,
        "diagnostics": result
            .diagnostics
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>(),
        "cv": cv_report,
    });
    write_json(&args.out.join("fit_report.json"), &report)?;

    let mut manifest = RunManifest::new(
        json!({
            "data": args.data.display().to_string(),
            "states": args.states,
            "ar_order": args.ar_order,
            "max_duration": args.max_duration,
            "cv": args.cv,
            "lambda_sigma": config.reg.lambda_sigma,
            "lambda_a": config.reg.lambda_a,
            "max_iter": args.max_iter,
            "tol": args.tol,
            "init_jitter": args.init_jitter,
            "strict": args.strict,
        }),
        args.seed,
    );
    manifest.record_input(&args.data)?;
    manifest.write(&args.out)?;

    if args.strict && !result.converged {
        return Err(CliError::NonConvergence(format!(
            "EM did not converge within {} iterations (tolerance {})",
            args.max_iter, args.tol
        )));
    }
    Ok(())
}

pub fn cmd_decode(args: &DecodeArgs) -> CliResult<()> {
    let (_, series) = load_series(&args.data)?;
    let (spec, params) = load_model(&args.model)?;
    if spec.dim != series.dim() {
        return Err(CliError::Validation(format!(
            "model dimension {} does not match data dimension {}",
            spec.dim,
            series.dim()
        )));
    }
    ensure_out_dir(&args.out)?;
    let path = viterbi_decode(&series, &params, &spec)?;
    write_atomic(&args.out.join("states.csv"), &states_csv(&path.states))?;
    write_atomic(
        &args.out.join("segments.csv"),
        &segments_csv(path.segments.iter().map(|s| (s.state, s.start, s.duration))),
    )?;
    write_json(
        &args.out.join("decode_report.json"),
        &json!({
            "path_log_score": path.path_log_score,
            "n_segments": path.segments.len(),
        }),
    )?;

    let mut manifest = RunManifest::new(
        json!({
            "data": args.data.display().to_string(),
            "model": args.model.display().to_string(),
        }),
        0,
    );
    manifest.record_input(&args.data)?;
    manifest.record_input(&args.model)?;
    manifest.write(&args.out)
}

pub fn cmd_forecast(args: &ForecastArgs) -> CliResult<()> {
    let (_, series) = load_series(&args.data)?;
    let (spec, params) = load_model(&args.model)?;
    if spec.dim != series.dim() {
        return Err(CliError::Validation(format!(
            "model dimension {} does not match data dimension {}",
            spec.dim,
            series.dim()
        )));
    }
    let t_len = series.len();
    if args.window == 0 || args.window >= t_len {
        return Err(CliError::Validation(format!(
            "--window must be in 1..{} (each forecast needs a nonempty prefix)",
            t_len - 1
        )));
    }
    ensure_out_dir(&args.out)?;

    let from_row = t_len - args.window;
    let forecasts = rolling_one_step_forecasts(&series, &params, &spec, from_row, t_len)?;
    let actuals: Vec<DVector<f64>> = (from_row..t_len).map(|t| series.row(t)).collect();
    let error = msfe(&forecasts, &actuals)?;

    let mut headers = vec!["row".to_string()];
    headers.extend((1..=spec.dim).map(|c| format!("yhat{c}")));
    let rows: Vec<Vec<f64>> = forecasts
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut row = vec![(from_row + i + 1) as f64];
            row.extend(f.iter().copied());
            row
        })
        .collect();
    write_atomic(&args.out.join("forecasts.csv"), &render_csv(&headers, &rows))?;
    write_json(
        &args.out.join("forecast_report.json"),
        &json!({
            "window": args.window,
            "msfe": error,
        }),
    )?;

    let mut manifest = RunManifest::new(
        json!({
            "data": args.data.display().to_string(),
            "model": args.model.display().to_string(),
            "window": args.window,
        }),
        0,
    );
    manifest.record_input(&args.data)?;
    manifest.record_input(&args.model)?;
    manifest.write(&args.out)
}

pub fn cmd_returns(args: &ReturnsArgs) -> CliResult<()> {
    let (headers, prices) = load_series(&args.prices)?;
    ensure_out_dir(&args.out)?;
    let returns = analysis::log_returns(&prices).map_err(|e| match e {
        varhsmm::Error::NonPositivePrice { row, col } => CliError::Validation(format!(
            "{}: non-positive price at row {}, column {}",
            args.prices.display(),
            row + 1,
            col + 1
        )),
        other => CliError::from(other),
    })?;
    let rows: Vec<Vec<f64>> = (0..returns.len())
        .map(|t| returns.values().row(t).iter().copied().collect())
        .collect();
    write_atomic(&args.out.join("returns.csv"), &render_csv(&headers, &rows))?;

    let mut manifest = RunManifest::new(
        json!({ "prices": args.prices.display().to_string() }),
        0,
    );
    manifest.record_input(&args.prices)?;
    manifest.write(&args.out)
}

pub fn cmd_correlate(args: &CorrelateArgs) -> CliResult<()> {
    let (headers, series) = load_series(&args.data)?;
    ensure_out_dir(&args.out)?;
    let report = analysis::lag_correlation(&series, args.lag, args.alpha)?;
    let d = series.dim();
    let corr_rows: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| report.corr[(a, b)]).collect())
        .collect();
    write_atomic(
        &args.out.join("correlation.csv"),
        &render_csv(&headers, &corr_rows),
    )?;
    let sig_rows: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| if report.significant[a][b] { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    write_atomic(
        &args.out.join("significance.csv"),
        &render_csv(&headers, &sig_rows),
    )?;
    write_json(
        &args.out.join("correlate_report.json"),
        &json!({
            "lag": args.lag,
            "alpha": args.alpha,
            "n_significant": report.n_significant,
            "n_degenerate": report.degenerate.len(),
        }),
    )?;

    let mut manifest = RunManifest::new(
        json!({
            "data": args.data.display().to_string(),
            "lag": args.lag,
            "alpha": args.alpha,
        }),
        0,
    );
    manifest.record_input(&args.data)?;
    manifest.write(&args.out)
}

fn parse_candidate(text: &str, dim: usize) -> CliResult<CandidateModel> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() < 3 || parts.len() > 4 {
        return Err(CliError::Validation(format!(
            "--candidate '{text}': expected M,p,D or M,p,D,label"
        )));
    }
    let parse = |s: &str, what: &str| -> CliResult<usize> {
        s.trim().parse().map_err(|_| {
            CliError::Validation(format!("--candidate '{text}': {what} '{s}' is not an integer"))
        })
    };
    let m = parse(parts[0], "M")?;
    let p = parse(parts[1], "p")?;
    let dur = parse(parts[2], "D")?;
    let label = if parts.len() == 4 {
        parts[3].trim().to_string()
    } else {
        format!("VAR({p})-HSMM-M{m}-D{dur}")
    };
    Ok(CandidateModel {
        label,
        spec: ModelSpec::new(m, dim, p, dur)?,
        config: FitConfig::default(),
    })
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    let (_, series) = load_series(&args.data)?;
    ensure_out_dir(&args.out)?;
    let plan = build_plan(&args.split, series.len())?;
    if plan.valid_end >= series.len() {
        return Err(CliError::Validation(
            "compare needs a held-out forecast block: valid_end < series length".into(),
        ));
    }
    let mut candidates = Vec::new();
    for text in &args.candidate {
        let mut cand = parse_candidate(text, series.dim())?;
        cand.config.max_iterations = args.max_iter;
        cand.config.tolerance = args.tol;
        cand.config.seed = args.seed;
        candidates.push(cand);
    }
    let table = compare_models(&series, &candidates, &plan)?;

    let mut out = String::from(
        "rank,label,states,ar_order,max_duration,free_parameters,lambda_sigma,lambda_a,msfe,error\n",
    );
    for (rank, row) in table.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            row.label,
            row.spec.n_states,
            row.spec.ar_order,
            row.spec.max_duration,
            row.free_parameters,
            row.lambda_sigma,
            row.lambda_a,
            row.msfe,
            row.error.clone().unwrap_or_default()
        ));
    }
    write_atomic(&args.out.join("comparison.csv"), &out)?;

    let mut manifest = RunManifest::new(
        json!({
            "data": args.data.display().to_string(),
            "candidates": args.candidate,
            "train_end": plan.train_end,
            "valid_end": plan.valid_end,
            "max_iter": args.max_iter,
            "tol": args.tol,
        }),
        args.seed,
    );
    manifest.record_input(&args.data)?;
    manifest.write(&args.out)
}

/// Shared --threads handling: cap rayon's parallelism once, before any work.
pub fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}
