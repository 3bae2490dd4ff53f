//! End-to-end checks of the command-line binary: artifact layout, exit
//! codes, determinism, and agreement between printed values and the CSVs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_panelmc")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) {
    let text: String =
        rows.iter().map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(",") + "\n").collect();
    fs::write(path, text).unwrap();
}

/// Small deterministic panel: additive effects, a mild wiggle, and a treated
/// corner block of the requested size.
fn demo_panel(dir: &Path, n: usize, t: usize, treated_units: usize, treated_periods: usize) {
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..n {
        let mut yr = Vec::new();
        let mut wr = Vec::new();
        for s in 0..t {
            let treated = i >= n - treated_units && s >= t - treated_periods;
            wr.push(if treated { 1.0 } else { 0.0 });
            let wiggle = 0.1 * ((5 * i + 3 * s) as f64).sin();
            yr.push(0.3 * i as f64 + 0.2 * s as f64 + wiggle + if treated { 0.7 } else { 0.0 });
        }
        y.push(yr);
        w.push(wr);
    }
    write_matrix(&dir.join("y.csv"), &y);
    write_matrix(&dir.join("w.csv"), &w);
}

#[test]
fn fit_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 8, 9, 2, 3);
    let out = run_in(
        dir.path(),
        &[
            "fit", "--y", "y.csv", "--w", "w.csv", "--mode", "imposed-null", "--lambda-l", "0.05",
            "--lambda-h", "0.1", "--lambda-beta", "0.1", "--out", "arts",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["l.csv", "h.csv", "beta.csv", "gamma.csv", "delta.csv", "fit.json", "manifest.json"]
    {
        assert!(dir.path().join("arts").join(name).exists(), "missing {name}");
    }
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("arts/fit.json")).unwrap())
            .unwrap();
    assert_eq!(fit["mode"], "imposed_null");
    assert_eq!(fit["converged"], true);
    assert!(fit["effect"]["atet"].is_number());
}

#[test]
fn missing_treatment_file_exits_two_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 5, 5, 1, 1);
    let out = run_in(dir.path(), &["fit", "--y", "y.csv", "--w", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.csv"), "stderr does not name the file: {stderr}");
}

#[test]
fn post_without_stage1_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 5, 5, 1, 1);
    let out = run_in(dir.path(), &["fit", "--y", "y.csv", "--w", "w.csv", "--post"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn post_refits_from_stage1_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 8, 9, 2, 3);
    let first = run_in(
        dir.path(),
        &["fit", "--y", "y.csv", "--w", "w.csv", "--lambda-l", "0.02", "--out", "stage1"],
    );
    assert_eq!(first.status.code(), Some(0));
    let second = run_in(
        dir.path(),
        &["fit", "--y", "y.csv", "--w", "w.csv", "--post", "--stage1", "stage1", "--out", "stage2"],
    );
    assert_eq!(
        second.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&second.stderr)
    );
    let s1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stage1/fit.json")).unwrap())
            .unwrap();
    let s2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stage2/fit.json")).unwrap())
            .unwrap();
    // The relaxed stage keeps the selected structure and re-estimates within
    // it, so the rank cannot grow.
    assert!(s2["rank_l"].as_u64().unwrap() <= s1["rank_l"].as_u64().unwrap());
    assert_eq!(s2["hard_rank_cap"], s1["rank_l"]);
}

#[test]
fn cv_reruns_are_identical_and_one_se_is_no_smaller() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 10, 12, 2, 3);
    let args = [
        "cv", "--y", "y.csv", "--w", "w.csv", "--grid-points", "2", "--folds", "3", "--seed", "7",
    ];
    let first = run_in(dir.path(), &[&args[..], &["--out", "cv_a"]].concat());
    assert_eq!(first.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let second = run_in(dir.path(), &[&args[..], &["--criterion", "1se", "--out", "cv_b"]].concat());
    assert_eq!(second.status.code(), Some(0));
    for name in ["cv_summary.csv", "cv_folds.csv"] {
        let a = fs::read(dir.path().join("cv_a").join(name)).unwrap();
        let b = fs::read(dir.path().join("cv_b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cv_b/selected.json")).unwrap())
            .unwrap();
    assert!(
        sel["one_se"]["lambda_h"].as_f64().unwrap() >= sel["mse"]["lambda_h"].as_f64().unwrap()
    );
    assert_eq!(sel["criterion"], "1se");
    assert_eq!(sel["selected"], sel["one_se"]);
}

#[test]
fn moving_block_emits_one_statistic_per_period() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 3, 105, 1, 10);
    let out = run_in(
        dir.path(),
        &["infer", "--y", "y.csv", "--w", "w.csv", "--lambda-l", "0.5", "--out", "mb"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("mb/infer.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "index,statistic");
    assert_eq!(rows.len() - 1, 105);

    // The printed p-value must be recomputable from the table as one minus
    // the empirical share of rearranged statistics strictly below the
    // observed one.
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("mb/infer.json")).unwrap())
            .unwrap();
    let observed = info["statistic"].as_f64().unwrap();
    let stats: Vec<f64> =
        rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let below = stats.iter().filter(|s| **s < observed).count();
    let p = 1.0 - below as f64 / stats.len() as f64;
    assert_eq!(info["p_value"].as_f64().unwrap(), p);
}

#[test]
fn iid_inference_counts_identity_among_statistics() {
    let dir = tempfile::tempdir().unwrap();
    demo_panel(dir.path(), 6, 8, 2, 2);
    let out = run_in(
        dir.path(),
        &[
            "infer", "--y", "y.csv", "--w", "w.csv", "--lambda-l", "0.5", "--family", "iid",
            "--n-perm", "99", "--seed", "3", "--out", "iid",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("iid/infer.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len() - 1, 100, "99 sampled rearrangements plus the identity");
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("iid/infer.json")).unwrap())
            .unwrap();
    let first: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first, info["statistic"].as_f64().unwrap(), "index 0 is the identity");
}

#[test]
fn simulate_honors_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sim.cfg"),
        "# desk-scale null experiment\n\
         n_units = 8\n\
         n_periods = 10\n\
         tau = 1.0\n\
         rank_l = 1\n\
         n_unit_covariates = 0\n\
         n_time_covariates = 0\n\
         n_cell_covariates = 0\n\
         runs = 2\n\
         grid_points = 2\n\
         folds = 3\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--config", "sim.cfg", "--tau", "0", "--seed", "5", "--out", "sim"],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("sim/runs.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    let header: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(rows.len() - 1, 12, "2 runs x 6 variants");
    let tau_col = header.iter().position(|c| *c == "tau_true").unwrap();
    let p_col = header.iter().position(|c| *c == "p_value").unwrap();
    let variant_col = header.iter().position(|c| *c == "variant").unwrap();
    for row in &rows[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[tau_col], "0", "flag must override the config file");
        // Every variant except the control-only one is an imposed-null fit
        // and therefore carries a permutation p-value.
        let has_p = !fields[p_col].is_empty();
        assert_eq!(has_p, fields[variant_col] != "not0", "p-values exactly for imposed-null fits");
    }
}

#[test]
fn replicate_rejects_unknown_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["replicate", "fig7"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fig7") && stderr.contains("fig10"), "unhelpful error: {stderr}");
}

#[test]
fn replicate_emits_variant_rows_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "replicate", "fig10", "--scale", "0.1", "--runs", "2", "--seed", "9",
            "--grid-points", "2", "--out", "rep",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read_to_string(dir.path().join("rep/runs.csv")).unwrap();
    assert_eq!(runs.lines().count() - 1, 4 * 2 * 6, "4 noise cells x 2 runs x 6 variants");
    let summary = fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    for variant in ["no_reg", "imp0", "imp0_1se", "not0"] {
        assert!(summary.contains(variant), "summary missing {variant}");
    }
    assert!(dir.path().join("rep/manifest.json").exists());
}
