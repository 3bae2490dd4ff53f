//! Internal fit preparation: cell masks and covariate standardization.
//!
//! The solver never sees raw covariates. [`Design`] centers and rescales
//! every covariate (X columns, Z rows, V slices) to unit sample standard
//! deviation, drops constant covariates (they are collinear with the fixed
//! effects), and knows how to map fitted coefficients back to the original
//! scale, folding the absorbed centering shifts into the fixed effects.
//!
//! l1 penalties are scale-sensitive, so fitting on standardized covariates is
//! what makes one penalty weight meaningful across covariates of different
//! magnitudes.

use ndarray::{Array1, Array2};

use crate::panel::{ModelParams, PanelData};

/// Relative tolerance under which a covariate's sample SD counts as zero
/// (the covariate is constant and gets dropped).
const CONST_TOL: f64 = 1e-12;

/// A subset of panel cells over which the loss is evaluated, listed in
/// row-major order for deterministic iteration.
#[derive(Debug, Clone)]
pub(crate) struct CellMask {
    pub cells: Vec<(usize, usize)>,
}

impl CellMask {
    /// Mask covering every cell of an `n x t` panel.
    pub fn all(n: usize, t: usize) -> Self {
        let cells = (0..n).flat_map(|i| (0..t).map(move |tt| (i, tt))).collect();
        CellMask { cells }
    }

    /// Mask covering exactly `cells`; the list is sorted row-major.
    pub fn from_cells(cells: &[(usize, usize)]) -> Self {
        let mut sorted = cells.to_vec();
        sorted.sort_unstable();
        CellMask { cells: sorted }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }
}

/// Mean and sample SD (ddof = 1) of a sequence; SD is 0 when fewer than two
/// values are present.
fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn is_constant(sd: f64, mean: f64) -> bool {
    !(sd > CONST_TOL * (1.0 + mean.abs()))
}

/// Model parameters in the standardized coordinate system the solver works
/// in. `h` and `beta` are indexed over *kept* covariates only.
#[derive(Debug, Clone)]
pub(crate) struct StdParams {
    pub l: Array2<f64>,
    pub h: Array2<f64>,
    pub beta: Array1<f64>,
    pub gamma: Array1<f64>,
    pub delta: Array1<f64>,
}

/// Standardized covariates plus everything needed to undo the transform.
pub(crate) struct Design {
    /// Standardized unit covariates, `N x P_kept`.
    pub x: Array2<f64>,
    /// Standardized time covariates, `Q_kept x T`.
    pub z: Array2<f64>,
    /// Standardized cell covariate slices, `J_kept` matrices of `N x T`.
    pub v: Vec<Array2<f64>>,
    pub x_kept: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub z_kept: Vec<usize>,
    pub z_mean: Vec<f64>,
    pub z_scale: Vec<f64>,
    pub v_kept: Vec<usize>,
    pub v_mean: Vec<f64>,
    pub v_scale: Vec<f64>,
    /// Human-readable warnings about dropped (constant) covariates.
    pub dropped: Vec<String>,
    full_p: usize,
    full_q: usize,
    full_j: usize,
}

impl Design {
    pub fn new(panel: &PanelData) -> Self {
        let n = panel.n_units();
        let t = panel.n_periods();
        let mut dropped = Vec::new();

        let mut x_kept = Vec::new();
        let mut x_mean = Vec::new();
        let mut x_scale = Vec::new();
        for p in 0..panel.n_unit_covariates() {
            let col = panel.x().column(p);
            let (m, s) = mean_sd(col.iter().copied());
            if is_constant(s, m) {
                dropped.push(format!(
                    "unit covariate '{}' is constant and was dropped (collinear with fixed effects)",
                    panel.x_names()[p]
                ));
            } else {
                x_kept.push(p);
                x_mean.push(m);
                x_scale.push(s);
            }
        }
        let mut x = Array2::zeros((n, x_kept.len()));
        for (k, &p) in x_kept.iter().enumerate() {
            let (m, s) = (x_mean[k], x_scale[k]);
            for i in 0..n {
                x[(i, k)] = (panel.x()[(i, p)] - m) / s;
            }
        }

        let mut z_kept = Vec::new();
        let mut z_mean = Vec::new();
        let mut z_scale = Vec::new();
        for q in 0..panel.n_time_covariates() {
            let row = panel.z().row(q);
            let (m, s) = mean_sd(row.iter().copied());
            if is_constant(s, m) {
                dropped.push(format!(
                    "time covariate '{}' is constant and was dropped (collinear with fixed effects)",
                    panel.z_names()[q]
                ));
            } else {
                z_kept.push(q);
                z_mean.push(m);
                z_scale.push(s);
            }
        }
        let mut z = Array2::zeros((z_kept.len(), t));
        for (k, &q) in z_kept.iter().enumerate() {
            let (m, s) = (z_mean[k], z_scale[k]);
            for tt in 0..t {
                z[(k, tt)] = (panel.z()[(q, tt)] - m) / s;
            }
        }

        let mut v_kept = Vec::new();
        let mut v_mean = Vec::new();
        let mut v_scale = Vec::new();
        let mut v = Vec::new();
        for j in 0..panel.n_cell_covariates() {
            let slice = panel.v_slice(j);
            let (m, s) = mean_sd(slice.iter().copied());
            if is_constant(s, m) {
                dropped.push(format!(
                    "cell covariate '{}' is constant and was dropped (collinear with fixed effects)",
                    panel.v_names()[j]
                ));
            } else {
                v_kept.push(j);
                v_mean.push(m);
                v_scale.push(s);
                v.push(slice.mapv(|val| (val - m) / s));
            }
        }

        Design {
            x,
            z,
            v,
            x_kept,
            x_mean,
            x_scale,
            z_kept,
            z_mean,
            z_scale,
            v_kept,
            v_mean,
            v_scale,
            dropped,
            full_p: panel.n_unit_covariates(),
            full_q: panel.n_time_covariates(),
            full_j: panel.n_cell_covariates(),
        }
    }

    /// Number of kept unit covariates.
    pub fn p(&self) -> usize {
        self.x_kept.len()
    }

    /// Number of kept time covariates.
    pub fn q(&self) -> usize {
        self.z_kept.len()
    }

    /// Number of kept cell covariates.
    pub fn j(&self) -> usize {
        self.v_kept.len()
    }

    /// All-zero standardized parameters shaped for this design.
    pub fn zero_params(&self, n: usize, t: usize) -> StdParams {
        StdParams {
            l: Array2::zeros((n, t)),
            h: Array2::zeros((self.p(), self.q())),
            beta: Array1::zeros(self.j()),
            gamma: Array1::zeros(n),
            delta: Array1::zeros(t),
        }
    }

    /// Prediction surface of standardized parameters on every cell.
    pub fn predict(&self, params: &StdParams) -> Array2<f64> {
        let (n, t) = params.l.dim();
        let mut out = params.l.clone();
        if self.p() > 0 && self.q() > 0 {
            let xh = self.x.dot(&params.h);
            out += &xh.dot(&self.z);
        }
        for (k, slice) in self.v.iter().enumerate() {
            let b = params.beta[k];
            if b != 0.0 {
                out.scaled_add(b, slice);
            }
        }
        for i in 0..n {
            let g = params.gamma[i];
            let mut row = out.row_mut(i);
            for tt in 0..t {
                row[tt] += g + params.delta[tt];
            }
        }
        out
    }

    /// Map standardized parameters back to the original covariate scale.
    ///
    /// Coefficients are unscaled entrywise; the centering shifts they
    /// absorbed are pushed into the fixed effects so that the returned
    /// parameters reproduce the standardized model's prediction surface.
    pub fn restore(&self, std: &StdParams) -> ModelParams {
        let mut h = Array2::zeros((self.full_p, self.full_q));
        for (kp, &p) in self.x_kept.iter().enumerate() {
            for (kq, &q) in self.z_kept.iter().enumerate() {
                let hv = std.h[(kp, kq)];
                if hv != 0.0 {
                    h[(p, q)] = hv / (self.x_scale[kp] * self.z_scale[kq]);
                }
            }
        }
        let mut beta = Array1::zeros(self.full_j);
        for (kj, &j) in self.v_kept.iter().enumerate() {
            let b = std.beta[kj];
            if b != 0.0 {
                beta[j] = b / self.v_scale[kj];
            }
        }

        // Original-scale H restricted to kept rows/columns, as dense kept-space
        // matrices for the shift arithmetic below.
        let pk = self.p();
        let qk = self.q();
        let mut h_kept = Array2::zeros((pk, qk));
        for kp in 0..pk {
            for kq in 0..qk {
                h_kept[(kp, kq)] = std.h[(kp, kq)] / (self.x_scale[kp] * self.z_scale[kq]);
            }
        }
        let mu = Array1::from_vec(self.x_mean.clone()); // length pk
        let m = Array1::from_vec(self.z_mean.clone()); // length qk

        // Prediction identity:
        //   x̃ H̃ z̃ = x H z − [Xkept·H·m]_i − [µ'·H·Zkept]_t + µ'·H·m
        //   Σ β̃ ṽ  = Σ β v − Σ β c
        // so the constants and profiles move into Γ and Δ.
        let mut gamma = std.gamma.clone();
        let mut delta = std.delta.clone();
        if pk > 0 && qk > 0 {
            let hm = h_kept.dot(&m); // length pk
            let mu_h = mu.dot(&h_kept); // length qk
            let mu_h_m = mu.dot(&hm); // scalar
            // Xkept·(H·m): use original-scale kept columns.
            let n = gamma.len();
            for i in 0..n {
                let mut xi_hm = 0.0;
                for (kp, &p) in self.x_kept.iter().enumerate() {
                    // recover original x from the standardized copy
                    let orig = self.x[(i, kp)] * self.x_scale[kp] + self.x_mean[kp];
                    debug_assert!(p < self.full_p);
                    xi_hm += orig * hm[kp];
                }
                gamma[i] += mu_h_m - xi_hm;
            }
            let t = delta.len();
            for tt in 0..t {
                let mut mu_h_z = 0.0;
                for (kq, _q) in self.z_kept.iter().enumerate() {
                    let orig = self.z[(kq, tt)] * self.z_scale[kq] + self.z_mean[kq];
                    mu_h_z += mu_h[kq] * orig;
                }
                delta[tt] += -mu_h_z;
            }
        }
        let mut beta_shift = 0.0;
        for (kj, _) in self.v_kept.iter().enumerate() {
            let b = std.beta[kj] / self.v_scale[kj];
            beta_shift += b * self.v_mean[kj];
        }
        gamma -= beta_shift;

        ModelParams { l: std.l.clone(), h, beta, gamma, delta }
    }
}
