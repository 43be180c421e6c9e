//! Acceptance suite, command-line half: the full-pipeline workflow at the
//! published data shape, and byte-level determinism of every command.
#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_varhsmm")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir =
        std::env::temp_dir().join(format!("varhsmm-acc-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn count_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

/// A 504 x 50 positive price matrix from a simulated two-regime VAR(1)-HSMM
/// return series (banded covariances, tridiagonal state-1 AR, uniform
/// durations capped at 30), standing in for user-supplied market data.
fn write_price_matrix(dir: &Path) -> PathBuf {
    let d = 50;
    let banded = |decay: f64| {
        nalgebra::DMatrix::from_fn(d, d, |i, j| {
            let diff = (i as f64 - j as f64).abs();
            if diff < 2.0 {
                (-decay * diff).exp()
            } else {
                0.0
            }
        })
    };
    let a1 = nalgebra::DMatrix::from_fn(d, d, |i, j| {
        let diff = (i as i64 - j as i64).abs();
        if diff == 0 {
            0.1
        } else if diff == 1 {
            0.05
        } else {
            0.0
        }
    });
    let spec = varhsmm::ModelSpec::new(2, d, 1, 30).unwrap();
    let params = varhsmm::ModelParams {
        initial: nalgebra::DVector::from_vec(vec![0.5, 0.5]),
        transition: nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        duration: nalgebra::DMatrix::from_element(2, 30, 1.0 / 30.0),
        means: vec![nalgebra::DVector::zeros(d), nalgebra::DVector::zeros(d)],
        covariances: vec![banded(1.0), banded(2.0)],
        ar_coeffs: vec![vec![a1], vec![nalgebra::DMatrix::zeros(d, d)]],
    };
    // Returns at market scale, prices by cumulative exponentiation.
    let sim = varhsmm::simulate::simulate(&spec, &params, 503, 404).unwrap();
    let mut text = String::new();
    let headers: Vec<String> = (1..=d).map(|c| format!("p{c}")).collect();
    text.push_str(&headers.join(","));
    text.push('\n');
    let mut log_price = vec![0.0f64; d];
    let scale = 0.02; // tame the simulated returns to a few percent per step
    for t in 0..=503 {
        let row: Vec<String> = (0..d)
            .map(|c| format!("{}", 100.0 * log_price[c].exp()))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
        if t < 503 {
            for c in 0..d {
                log_price[c] += scale * sim.series.values()[(t, c)];
            }
        }
    }
    let path = dir.join("prices.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn acceptance_09_full_pipeline_at_published_shape() {
    let dir = tmp_dir("pipeline");
    let prices = write_price_matrix(&dir);
    assert_eq!(count_lines(&prices), 505, "header + 504 price rows");

    // returns: 504 prices -> 503 returns.
    let ret_dir = dir.join("returns");
    assert_ok(
        &run(&[
            "returns",
            "--prices",
            prices.to_str().unwrap(),
            "--out",
            ret_dir.to_str().unwrap(),
        ]),
        "returns",
    );
    let returns = ret_dir.join("returns.csv");
    assert_eq!(count_lines(&returns), 504, "header + 503 return rows");

    // Lag-1 correlation screen at the published significance level.
    let corr_dir = dir.join("correlate");
    assert_ok(
        &run(&[
            "correlate",
            "--data",
            returns.to_str().unwrap(),
            "--lag",
            "1",
            "--alpha",
            "0.05",
            "--out",
            corr_dir.to_str().unwrap(),
        ]),
        "correlate",
    );
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(corr_dir.join("correlate_report.json")).unwrap(),
    )
    .unwrap();
    let n_sig = report["n_significant"].as_u64().unwrap();
    assert!(n_sig > 0, "a regime-switching AR series shows lag-1 structure");

    // cv + fit with splits 303/100/100. The grid is reduced for runtime; the
    // default 15 x 15 grid shape is asserted separately at small dimension.
    let fit_dir = dir.join("fit");
    assert_ok(
        &run(&[
            "fit",
            "--data",
            returns.to_str().unwrap(),
            "--states",
            "2",
            "--ar-order",
            "1",
            "--max-duration",
            "30",
            "--cv",
            "--train-end",
            "303",
            "--valid-end",
            "403",
            "--grid-sigma",
            "0.01,0.3",
            "--grid-a",
            "0.05,0.5",
            "--max-iter",
            "60",
            "--tol",
            "1e-4",
            "--out",
            fit_dir.to_str().unwrap(),
        ]),
        "fit --cv",
    );
    assert_eq!(count_lines(&fit_dir.join("cv_surface.csv")), 5, "header + 4 cells");
    let model = fit_dir.join("model.json");
    assert!(model.exists());

    // decode over the full series.
    let dec_dir = dir.join("decode");
    assert_ok(
        &run(&[
            "decode",
            "--data",
            returns.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            dec_dir.to_str().unwrap(),
        ]),
        "decode",
    );
    assert_eq!(count_lines(&dec_dir.join("states.csv")), 504);

    // forecast block: the last 100 observations.
    let fc_dir = dir.join("forecast");
    assert_ok(
        &run(&[
            "forecast",
            "--data",
            returns.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--window",
            "100",
            "--out",
            fc_dir.to_str().unwrap(),
        ]),
        "forecast",
    );
    assert_eq!(count_lines(&fc_dir.join("forecasts.csv")), 101);
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(fc_dir.join("forecast_report.json")).unwrap(),
    )
    .unwrap();
    let msfe = report["msfe"].as_f64().unwrap();
    assert!(msfe.is_finite() && msfe > 0.0);

    println!(
        "ACCEPTANCE 9 (returns -> correlate -> cv/fit -> decode -> forecast on a 504x50 price \
         matrix, splits 303/100/100; {n_sig} significant lag-1 correlations; held-out MSFE {msfe:.4}): PASS"
    );
    let _ = fs::remove_dir_all(&dir);
}

/// Every regular file under a directory, relative path -> bytes.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_identical_dirs(a: &Path, b: &Path, what: &str) {
    let ca = dir_contents(a);
    let cb = dir_contents(b);
    let names_a: Vec<&String> = ca.iter().map(|(n, _)| n).collect();
    let names_b: Vec<&String> = cb.iter().map(|(n, _)| n).collect();
    assert_eq!(names_a, names_b, "{what}: file sets differ");
    for ((name, bytes_a), (_, bytes_b)) in ca.iter().zip(cb.iter()) {
        assert_eq!(
            bytes_a, bytes_b,
            "{what}: {name} differs between identical runs"
        );
    }
}

#[test]
fn acceptance_10_cli_determinism() {
    let dir = tmp_dir("determinism");
    let model = dir.join("model.json");
    fs::write(
        &model,
        r#"{
  "spec": {"M": 2, "d": 2, "p": 1, "D": 4},
  "delta": [0.5, 0.5],
  "Q": [[0.0, 1.0], [1.0, 0.0]],
  "r": [[0.25, 0.25, 0.25, 0.25], [0.4, 0.3, 0.2, 0.1]],
  "mu": [[-1.0, 0.5], [1.0, -0.5]],
  "Sigma": [[[0.5, 0.1], [0.1, 0.6]], [[1.0, -0.2], [-0.2, 0.8]]],
  "A": [[[[0.2, 0.0], [0.0, 0.2]]], [[[0.0, 0.1], [0.1, 0.0]]]]
}"#,
    )
    .unwrap();

    // The manifest records argv, so both runs of a pair must use identical
    // arguments except for the output directory... which is itself part of
    // argv. Run each command twice from per-run working directories with a
    // relative --out instead.
    let run_in = |cwd: &Path, args: &[&str]| -> Output {
        Command::new(bin())
            .args(args)
            .current_dir(cwd)
            .output()
            .expect("binary runs")
    };

    let mut pair_dirs = Vec::new();
    for which in ["a", "b"] {
        let root = dir.join(which);
        fs::create_dir_all(&root).unwrap();
        fs::copy(&model, root.join("model.json")).unwrap();

        let out = run_in(&root, &["simulate", "--model", "model.json", "--length", "160", "--seed", "99", "--out", "sim"]);
        assert_ok(&out, "simulate");
        let out = run_in(&root, &["fit", "--data", "sim/series.csv", "--states", "2", "--ar-order", "1", "--max-duration", "4", "--cv", "--train-end", "100", "--valid-end", "130", "--grid-sigma", "0.05,0.5", "--grid-a", "0.5,5", "--max-iter", "80", "--tol", "1e-5", "--seed", "99", "--init-jitter", "0.001", "--out", "fit"]);
        assert_ok(&out, "fit");
        let out = run_in(&root, &["decode", "--data", "sim/series.csv", "--model", "fit/model.json", "--out", "dec"]);
        assert_ok(&out, "decode");
        let out = run_in(&root, &["forecast", "--data", "sim/series.csv", "--model", "fit/model.json", "--window", "30", "--out", "fc"]);
        assert_ok(&out, "forecast");
        let out = run_in(&root, &["correlate", "--data", "sim/series.csv", "--lag", "1", "--alpha", "0.05", "--out", "corr"]);
        assert_ok(&out, "correlate");

        // Prices for the returns command.
        let mut text = String::from("p1,p2\n");
        for t in 0..50 {
            text.push_str(&format!("{},{}\n", 100.0 + t as f64, 90.0 + (t % 5) as f64));
        }
        fs::write(root.join("prices.csv"), text).unwrap();
        let out = run_in(&root, &["returns", "--prices", "prices.csv", "--out", "ret"]);
        assert_ok(&out, "returns");
        let out = run_in(&root, &["compare", "--data", "sim/series.csv", "--candidate", "2,1,4", "--candidate", "1,0,4", "--train-end", "100", "--valid-end", "130", "--grid-sigma", "0.1", "--grid-a", "1.0", "--max-iter", "60", "--tol", "1e-4", "--seed", "99", "--out", "cmp"]);
        assert_ok(&out, "compare");

        pair_dirs.push(root);
    }

    for sub in ["sim", "fit", "dec", "fc", "corr", "ret", "cmp"] {
        assert_identical_dirs(
            &pair_dirs[0].join(sub),
            &pair_dirs[1].join(sub),
            &format!("command output {sub}"),
        );
    }
    println!(
        "ACCEPTANCE 10 (byte-identical outputs across repeated runs of simulate, fit --cv, decode, \
         forecast, correlate, returns, compare with fixed seeds): PASS"
    );
    let _ = fs::remove_dir_all(&dir);
}
