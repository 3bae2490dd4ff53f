//! CSV and JSON artifact formats shared by the command-line tools.
//!
//! Conventions, chosen so desk-scale panels stay human-inspectable:
//! - outcomes, treatment indicators, and the low-rank component are dense
//!   numeric CSVs without headers;
//! - unit covariates carry a header row of covariate names; time covariates
//!   carry a leading name column (one row per covariate);
//! - cell covariates use a long format `unit,time,covariate,value` with
//!   1-based indices, avoiding a three-dimensional file;
//! - the interaction matrix is written as `row_name,col_name,value` triplets
//!   of its nonzero entries;
//! - floats are written with Rust's shortest round-trip formatting, so a
//!   file read back reproduces the exact bits and reruns with identical
//!   inputs produce byte-identical files.

use crate::effects::EffectEstimate;
use crate::error::{Error, Result};
use crate::estimator::{FitMode, FitResult};
use crate::inference::InferenceResult;
use crate::panel::{ModelParams, PanelData, PenaltyConfig};
use crate::selection::CvResult;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { context: path.display().to_string(), message: message.into() }
}

/// Shortest round-trip decimal form of `v` (Rust's default float display).
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Create `dir` and any missing parents.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

// ---------------------------------------------------------------------------
// Dense matrices (Y, W, L): numeric CSV without headers.
// ---------------------------------------------------------------------------

pub fn write_dense_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut text = String::new();
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    write_text(path, &text)
}

pub fn read_dense_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    parse_err(path, format!("line {}, column {}: not a number: {cell:?}", lineno + 1, col + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    format!("line {}: expected {} columns, got {}", lineno + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "matrix file is empty"));
    }
    let (n, t) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((n, t), |(i, j)| rows[i][j]))
}

// ---------------------------------------------------------------------------
// Unit covariates X: N rows, header row of covariate names.
// ---------------------------------------------------------------------------

pub fn write_unit_covariates(path: &Path, x: &Array2<f64>, names: &[String]) -> Result<()> {
    let mut text = names.join(",");
    text.push('\n');
    for row in x.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    write_text(path, &text)
}

pub fn read_unit_covariates(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err(path, "covariate file is empty"))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    parse_err(path, format!("data line {}: not a number: {cell:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(parse_err(
                path,
                format!("data line {}: expected {} columns, got {}", lineno + 1, names.len(), row.len()),
            ));
        }
        rows.push(row);
    }
    let n = rows.len();
    Ok((Array2::from_shape_fn((n, names.len()), |(i, j)| rows[i][j]), names))
}

// ---------------------------------------------------------------------------
// Time covariates Z: one row per covariate, leading name column, T values.
// ---------------------------------------------------------------------------

pub fn write_time_covariates(path: &Path, z: &Array2<f64>, names: &[String]) -> Result<()> {
    let mut text = String::new();
    for (name, row) in names.iter().zip(z.rows()) {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(text, "{name},{}", line.join(","));
    }
    write_text(path, &text)
}

pub fn read_time_covariates(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let text = read_text(path)?;
    let mut names = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or_default().trim().to_string();
        if name.is_empty() {
            return Err(parse_err(path, format!("line {}: empty covariate name", lineno + 1)));
        }
        let row: Vec<f64> = cells
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    parse_err(path, format!("line {}: not a number: {cell:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    format!("line {}: expected {} values, got {}", lineno + 1, first.len(), row.len()),
                ));
            }
        }
        names.push(name);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "covariate file is empty"));
    }
    let t = rows[0].len();
    Ok((Array2::from_shape_fn((names.len(), t), |(i, j)| rows[i][j]), names))
}

// ---------------------------------------------------------------------------
// Cell covariates V: long format `unit,time,covariate,value`, 1-based.
// ---------------------------------------------------------------------------

pub fn write_cell_covariates(path: &Path, v: &[Array2<f64>], names: &[String]) -> Result<()> {
    let mut text = String::from("unit,time,covariate,value\n");
    for (slice, name) in v.iter().zip(names) {
        for ((i, t), &val) in slice.indexed_iter() {
            let _ = writeln!(text, "{},{},{name},{}", i + 1, t + 1, fmt_f64(val));
        }
    }
    write_text(path, &text)
}

/// Read long-format cell covariates for an `n x t` panel. Covariates appear
/// in first-occurrence order; cells a covariate never mentions are zero.
pub fn read_cell_covariates(path: &Path, n: usize, t: usize) -> Result<(Vec<Array2<f64>>, Vec<String>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err(path, "cell covariate file is empty"))?;
    let expected = "unit,time,covariate,value";
    if header.trim().to_lowercase().replace(' ', "") != expected {
        return Err(parse_err(path, format!("expected header {expected:?}, got {header:?}")));
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut slices: Vec<Array2<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if cells.len() != 4 {
            return Err(parse_err(path, format!("data line {}: expected 4 fields", lineno + 1)));
        }
        let unit: usize = cells[0]
            .parse()
            .map_err(|_| parse_err(path, format!("data line {}: bad unit {:?}", lineno + 1, cells[0])))?;
        let time: usize = cells[1]
            .parse()
            .map_err(|_| parse_err(path, format!("data line {}: bad time {:?}", lineno + 1, cells[1])))?;
        if unit == 0 || unit > n || time == 0 || time > t {
            return Err(parse_err(
                path,
                format!("data line {}: cell ({unit}, {time}) outside 1..={n} x 1..={t}", lineno + 1),
            ));
        }
        let value: f64 = cells[3]
            .parse()
            .map_err(|_| parse_err(path, format!("data line {}: bad value {:?}", lineno + 1, cells[3])))?;
        let slot = *index.entry(cells[2].to_string()).or_insert_with(|| {
            names.push(cells[2].to_string());
            slices.push(Array2::zeros((n, t)));
            slices.len() - 1
        });
        slices[slot][(unit - 1, time - 1)] = value;
    }
    Ok((slices, names))
}

// ---------------------------------------------------------------------------
// Fitted parameters: sparse interaction triplets and named vectors.
// ---------------------------------------------------------------------------

/// Write nonzero entries of the interaction matrix as
/// `row_name,col_name,value` triplets in row-major order.
pub fn write_sparse_interactions(
    path: &Path,
    h: &Array2<f64>,
    row_names: &[String],
    col_names: &[String],
) -> Result<()> {
    let mut text = String::from("row_name,col_name,value\n");
    for ((p, q), &val) in h.indexed_iter() {
        if val != 0.0 {
            let _ = writeln!(text, "{},{},{}", row_names[p], col_names[q], fmt_f64(val));
        }
    }
    write_text(path, &text)
}

/// Write a `name,value` CSV, one row per entry.
pub fn write_named_vector(path: &Path, names: &[String], values: &Array1<f64>) -> Result<()> {
    let mut text = String::from("name,value\n");
    for (name, &val) in names.iter().zip(values.iter()) {
        let _ = writeln!(text, "{name},{}", fmt_f64(val));
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Fit summary JSON: everything needed to report a fit and to seed a
// relaxed (post) refit later, without serializing the dense parameters.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub mode: FitMode,
    pub penalties: PenaltyConfig,
    pub objective: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub rank_l: usize,
    pub support_h: Vec<(usize, usize)>,
    pub support_beta: Vec<usize>,
    pub warnings: Vec<String>,
    pub hard_rank_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub effect: Option<EffectEstimate>,
}

impl FitSummary {
    pub fn new(fit: &FitResult, effect: Option<EffectEstimate>) -> Self {
        FitSummary {
            mode: fit.mode,
            penalties: fit.penalties,
            objective: fit.objective(),
            converged: fit.converged,
            n_iterations: fit.n_iterations,
            rank_l: fit.rank_l,
            support_h: fit.support_h.clone(),
            support_beta: fit.support_beta.clone(),
            warnings: fit.warnings.clone(),
            hard_rank_cap: fit.hard_rank_cap,
            effect,
        }
    }

    /// Rebuild a skeleton `FitResult` carrying this summary's mode, supports,
    /// and rank, with zeroed parameters. Sufficient as the first stage of a
    /// relaxed refit, which re-estimates values on the recorded support.
    pub fn to_first_stage(&self, panel: &PanelData) -> FitResult {
        FitResult {
            params: ModelParams::zeros(panel),
            mode: self.mode,
            penalties: self.penalties,
            objective_trace: vec![self.objective],
            converged: self.converged,
            n_iterations: self.n_iterations,
            support_h: self.support_h.clone(),
            support_beta: self.support_beta.clone(),
            rank_l: self.rank_l,
            warnings: self.warnings.clone(),
            hard_rank_cap: self.hard_rank_cap,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Cross-validation tables.
// ---------------------------------------------------------------------------

/// Per-cell summary: one row per penalty triple with its aggregate error,
/// dispersion, average model sizes, and selection flags.
pub fn write_cv_summary(path: &Path, cv: &CvResult) -> Result<()> {
    let mut text = String::from(
        "lambda_l,lambda_h,lambda_beta,cv_error,cv_se,mean_support_h,mean_support_beta,mean_rank_l,selected_mse,selected_1se\n",
    );
    for (ix, triple) in cv.grid.iter().enumerate() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(triple.lambda_l),
            fmt_f64(triple.lambda_h),
            fmt_f64(triple.lambda_beta),
            fmt_f64(cv.cv_error[ix]),
            fmt_f64(cv.cv_se[ix]),
            fmt_f64(cv.mean_support_h[ix]),
            fmt_f64(cv.mean_support_beta[ix]),
            fmt_f64(cv.mean_rank_l[ix]),
            (ix == cv.best_mse) as u8,
            (ix == cv.best_1se) as u8,
        );
    }
    write_text(path, &text)
}

/// Per-fold detail: one row per (triple, fold) with that fold's held-out
/// mean squared error and convergence flag.
pub fn write_cv_folds(path: &Path, cv: &CvResult) -> Result<()> {
    let mut text = String::from("lambda_l,lambda_h,lambda_beta,fold,mse,converged\n");
    for (ix, triple) in cv.grid.iter().enumerate() {
        for fold in 0..cv.k {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                fmt_f64(triple.lambda_l),
                fmt_f64(triple.lambda_h),
                fmt_f64(triple.lambda_beta),
                fold + 1,
                fmt_f64(cv.fold_mse[ix][fold]),
                cv.converged[ix][fold] as u8,
            );
        }
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Inference table: the full randomization distribution, identity first.
// ---------------------------------------------------------------------------

pub fn write_inference_table(path: &Path, result: &InferenceResult) -> Result<()> {
    let mut text = String::from("index,statistic\n");
    for (ix, &stat) in result.permuted_statistics.iter().enumerate() {
        let _ = writeln!(text, "{ix},{}", fmt_f64(stat));
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Flat key=value configuration files.
// ---------------------------------------------------------------------------

/// Parsed configuration: ordered key → raw string value.
pub type ConfigMap = BTreeMap<String, String>;

/// Parse `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys may not repeat.
pub fn parse_config_text(path: &Path, text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(parse_err(path, format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(parse_err(path, format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<ConfigMap> {
    let text = read_text(path)?;
    parse_config_text(path, &text)
}

/// Typed getter for config values; `context` names the file for errors.
pub fn config_value<T: std::str::FromStr>(map: &ConfigMap, key: &str, context: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| Error::Parse {
            context: context.to_string(),
            message: format!("key {key:?}: cannot parse {raw:?}"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Run manifests.
// ---------------------------------------------------------------------------

/// Self-describing record of one command invocation, written alongside its
/// outputs. Identical configs and seeds reproduce identical numerical
/// artifacts; the timestamp documents the run and is the only field allowed
/// to differ between reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub version: String,
    pub unix_time_seconds: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        let unix_time_seconds = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            command: command.into(),
            config,
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            unix_time_seconds,
            outputs: Vec::new(),
        }
    }
}

/// Write `manifest.json` into `dir`, recording `outputs` (sorted for
/// stability).
pub fn write_manifest(dir: &Path, mut manifest: RunManifest) -> Result<PathBuf> {
    manifest.outputs.sort();
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use tempfile::tempdir;

    #[test]
    fn dense_matrix_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("y.csv");
        let m = arr2(&[[1.5, -2.25e-17, 3.0], [0.1 + 0.2, 4.0, -5.5]]);
        write_dense_matrix(&path, &m).unwrap();
        let back = read_dense_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        let err = read_dense_matrix(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn unit_covariates_round_trip_with_names() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let names = vec!["gdp".to_string(), "pop".to_string()];
        write_unit_covariates(&path, &x, &names).unwrap();
        let (back, back_names) = read_unit_covariates(&path).unwrap();
        assert_eq!(x, back);
        assert_eq!(names, back_names);
    }

    #[test]
    fn time_covariates_round_trip_with_leading_names() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.csv");
        let z = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let names = vec!["season".to_string(), "trend".to_string()];
        write_time_covariates(&path, &z, &names).unwrap();
        let (back, back_names) = read_time_covariates(&path).unwrap();
        assert_eq!(z, back);
        assert_eq!(names, back_names);
    }

    #[test]
    fn cell_covariates_round_trip_long_format() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let v = vec![arr2(&[[1.0, 0.0], [0.5, -1.0]]), arr2(&[[0.0, 2.0], [0.0, 0.0]])];
        let names = vec!["rain".to_string(), "temp".to_string()];
        write_cell_covariates(&path, &v, &names).unwrap();
        let (back, back_names) = read_cell_covariates(&path, 2, 2).unwrap();
        assert_eq!(names, back_names);
        assert_eq!(v[0], back[0]);
        assert_eq!(v[1], back[1]);
    }

    #[test]
    fn cell_covariates_reject_out_of_range_cells() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.csv");
        std::fs::write(&path, "unit,time,covariate,value\n3,1,rain,0.5\n").unwrap();
        assert!(read_cell_covariates(&path, 2, 2).is_err());
    }

    #[test]
    fn sparse_interactions_list_only_nonzeros() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let h = arr2(&[[0.0, 1.5], [0.0, 0.0], [-2.0, 0.0]]);
        let rows = vec!["a".into(), "b".into(), "c".into()];
        let cols = vec!["u".into(), "v".into()];
        write_sparse_interactions(&path, &h, &rows, &cols).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "row_name,col_name,value\na,v,1.5\nc,u,-2\n");
    }

    #[test]
    fn config_parser_handles_comments_and_rejects_duplicates() {
        let path = Path::new("inline.conf");
        let map = parse_config_text(
            path,
            "# top comment\nlambda_l = 0.5\nseed=7  # trailing\n\nmode = imposed-null\n",
        )
        .unwrap();
        assert_eq!(map.get("lambda_l").unwrap(), "0.5");
        assert_eq!(map.get("seed").unwrap(), "7");
        assert_eq!(map.get("mode").unwrap(), "imposed-null");
        assert_eq!(config_value::<f64>(&map, "lambda_l", "inline").unwrap(), Some(0.5));
        assert_eq!(config_value::<u64>(&map, "missing", "inline").unwrap(), None);
        assert!(config_value::<u64>(&map, "mode", "inline").is_err());
        assert!(parse_config_text(path, "a = 1\na = 2\n").is_err());
        assert!(parse_config_text(path, "just a line\n").is_err());
    }

    #[test]
    fn manifest_lands_in_the_output_directory() {
        let dir = tempdir().unwrap();
        let mut manifest = RunManifest::new("fit", serde_json::json!({"lambda_l": 1.0}), vec![7]);
        manifest.outputs = vec!["b.csv".into(), "a.csv".into()];
        let path = write_manifest(dir.path(), manifest).unwrap();
        let back: RunManifest = read_json(&path).unwrap();
        assert_eq!(back.command, "fit");
        assert_eq!(back.seeds, vec![7]);
        assert_eq!(back.outputs, vec!["a.csv".to_string(), "b.csv".to_string()]);
        assert!(!back.version.is_empty());
    }
}
