//! Panel containers, model parameters, and penalty settings.
//!
//! [`PanelData`] owns the outcome panel, the binary treatment indicator, and
//! up to three covariate blocks:
//!
//! * unit covariates `X` (`N x P`, constant over time),
//! * time covariates `Z` (`Q x T`, constant over units),
//! * cell covariates `V` (`J` matrices of shape `N x T`, varying over both).
//!
//! Cells with `w = 0` are *controls* (their untreated outcome is observed);
//! cells with `w = 1` are *treated*. [`ModelParams`] holds one fitted (or
//! synthetic) parameter set, and [`PanelData::predict_y0`] evaluates the
//! model's untreated-outcome surface on every cell.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `N x T` outcome panel with treatment indicator and covariates.
#[derive(Debug, Clone)]
pub struct PanelData {
    y: Array2<f64>,
    w: Array2<f64>,
    x: Array2<f64>,
    x_names: Vec<String>,
    z: Array2<f64>,
    z_names: Vec<String>,
    v: Vec<Array2<f64>>,
    v_names: Vec<String>,
    observed: Vec<(usize, usize)>,
    treated: Vec<(usize, usize)>,
}

fn check_finite(name: &'static str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: name })
    }
}

/// Generate placeholder covariate names `prefix1..prefixN`.
pub fn auto_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("{prefix}{k}")).collect()
}

impl PanelData {
    /// Build a panel from outcomes and treatment indicator, without
    /// covariates. `w` must be the same shape as `y` and contain only 0/1.
    pub fn from_outcomes(y: Array2<f64>, w: Array2<f64>) -> Result<Self> {
        let (n, t) = y.dim();
        if n == 0 || t == 0 {
            return Err(Error::config("panel must have at least one unit and one period"));
        }
        if w.dim() != (n, t) {
            return Err(Error::shape("treatment matrix", (n, t), w.dim()));
        }
        check_finite("outcome matrix", &y)?;
        let mut observed = Vec::new();
        let mut treated = Vec::new();
        for ((i, tt), &wit) in w.indexed_iter() {
            if wit == 0.0 {
                observed.push((i, tt));
            } else if wit == 1.0 {
                treated.push((i, tt));
            } else {
                return Err(Error::NotBinary { found: wit, row: i, col: tt });
            }
        }
        if observed.is_empty() {
            return Err(Error::NoControlCells { operation: "panel construction" });
        }
        Ok(PanelData {
            y,
            w,
            x: Array2::zeros((n, 0)),
            x_names: Vec::new(),
            z: Array2::zeros((0, t)),
            z_names: Vec::new(),
            v: Vec::new(),
            v_names: Vec::new(),
            observed,
            treated,
        })
    }

    /// Attach unit covariates (`N x P`, one row per unit).
    pub fn with_unit_covariates(mut self, x: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if x.nrows() != self.n_units() {
            return Err(Error::shape("unit covariates", (self.n_units(), x.ncols()), x.dim()));
        }
        if names.len() != x.ncols() {
            return Err(Error::config(format!(
                "unit covariate names: expected {} entries, got {}",
                x.ncols(),
                names.len()
            )));
        }
        check_finite("unit covariates", &x)?;
        self.x = x;
        self.x_names = names;
        Ok(self)
    }

    /// Attach time covariates (`Q x T`, one column per period).
    pub fn with_time_covariates(mut self, z: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if z.ncols() != self.n_periods() {
            return Err(Error::shape("time covariates", (z.nrows(), self.n_periods()), z.dim()));
        }
        if names.len() != z.nrows() {
            return Err(Error::config(format!(
                "time covariate names: expected {} entries, got {}",
                z.nrows(),
                names.len()
            )));
        }
        check_finite("time covariates", &z)?;
        self.z = z;
        self.z_names = names;
        Ok(self)
    }

    /// Attach cell covariates (one `N x T` matrix per covariate).
    pub fn with_cell_covariates(mut self, v: Vec<Array2<f64>>, names: Vec<String>) -> Result<Self> {
        let dim = (self.n_units(), self.n_periods());
        for slice in &v {
            if slice.dim() != dim {
                return Err(Error::shape("cell covariate slice", dim, slice.dim()));
            }
            check_finite("cell covariates", slice)?;
        }
        if names.len() != v.len() {
            return Err(Error::config(format!(
                "cell covariate names: expected {} entries, got {}",
                v.len(),
                names.len()
            )));
        }
        self.v = v;
        self.v_names = names;
        Ok(self)
    }

    /// Append identity blocks to the covariates: X becomes `[X | I_N]`
    /// (width `P + N`) and Z becomes `[Z; I_T]` (height `Q + T`), leaving Y,
    /// W, and the cell covariates unchanged.
    ///
    /// The identity columns let every unit load on every period pattern (and
    /// vice versa), so an interaction-matrix fit on the augmented panel can
    /// express unit-specific time trends alongside the measured covariates.
    ///
    /// Each application appends fresh identity blocks: applying it twice
    /// yields width `P + 2N` and height `Q + 2T`. It is *not* idempotent.
    pub fn augment_linear_terms(mut self) -> PanelData {
        let n = self.n_units();
        let t = self.n_periods();
        let p = self.x.ncols();
        let q = self.z.nrows();
        let mut x = Array2::zeros((n, p + n));
        x.slice_mut(ndarray::s![.., ..p]).assign(&self.x);
        for i in 0..n {
            x[(i, p + i)] = 1.0;
        }
        let mut z = Array2::zeros((q + t, t));
        z.slice_mut(ndarray::s![..q, ..]).assign(&self.z);
        for tt in 0..t {
            z[(q + tt, tt)] = 1.0;
        }
        self.x = x;
        self.x_names.extend(auto_names("unit_", n));
        self.z = z;
        self.z_names.extend(auto_names("period_", t));
        self
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    /// Number of unit covariates `P`.
    pub fn n_unit_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Number of time covariates `Q`.
    pub fn n_time_covariates(&self) -> usize {
        self.z.nrows()
    }

    /// Number of cell covariates `J`.
    pub fn n_cell_covariates(&self) -> usize {
        self.v.len()
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    /// The `j`-th cell covariate as an `N x T` matrix.
    pub fn v_slice(&self, j: usize) -> &Array2<f64> {
        &self.v[j]
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn v_names(&self) -> &[String] {
        &self.v_names
    }

    /// Control cells `(i, t)` with `w = 0`, in row-major order.
    pub fn observed_cells(&self) -> &[(usize, usize)] {
        &self.observed
    }

    /// Treated cells `(i, t)` with `w = 1`, in row-major order.
    pub fn treated_cells(&self) -> &[(usize, usize)] {
        &self.treated
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    /// Total number of cells `N·T`.
    pub fn n_cells(&self) -> usize {
        self.n_units() * self.n_periods()
    }

    /// True when every cell is a control (`|M| = 0`).
    pub fn is_fully_observed(&self) -> bool {
        self.treated.is_empty()
    }

    /// Evaluate the untreated-outcome surface
    /// `L + X H Z + [V'β] + Γ 1' + 1 Δ'` on every cell.
    pub fn predict_y0(&self, params: &ModelParams) -> Array2<f64> {
        let (n, t) = self.y.dim();
        let mut out = params.l.clone();
        if self.n_unit_covariates() > 0 && self.n_time_covariates() > 0 {
            let xh = self.x.dot(&params.h); // N x Q
            out += &xh.dot(&self.z); // N x T
        }
        for (j, slice) in self.v.iter().enumerate() {
            let b = params.beta[j];
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

    /// Residuals `Y − ŷ0` on every cell (treated cells included).
    pub fn residuals(&self, params: &ModelParams) -> Array2<f64> {
        let mut r = self.predict_y0(params);
        r.zip_mut_with(&self.y, |pred, &obs| *pred = obs - *pred);
        r
    }
}

/// One full set of model parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Low-rank component, `N x T`.
    pub l: Array2<f64>,
    /// Unit-by-time covariate interaction coefficients, `P x Q`.
    pub h: Array2<f64>,
    /// Cell covariate coefficients, length `J`.
    pub beta: Array1<f64>,
    /// Unit fixed effects, length `N`.
    pub gamma: Array1<f64>,
    /// Time fixed effects, length `T`.
    pub delta: Array1<f64>,
}

impl ModelParams {
    /// All-zero parameters shaped for `panel`.
    pub fn zeros(panel: &PanelData) -> Self {
        ModelParams {
            l: Array2::zeros((panel.n_units(), panel.n_periods())),
            h: Array2::zeros((panel.n_unit_covariates(), panel.n_time_covariates())),
            beta: Array1::zeros(panel.n_cell_covariates()),
            gamma: Array1::zeros(panel.n_units()),
            delta: Array1::zeros(panel.n_periods()),
        }
    }

    /// Indices `(p, q)` of exactly nonzero entries of `H`, row-major.
    pub fn h_support(&self) -> Vec<(usize, usize)> {
        self.h
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(idx, _)| idx)
            .collect()
    }

    /// Indices of exactly nonzero entries of `β`.
    pub fn beta_support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Penalty weights and solver controls.
///
/// The three penalty weights scale, respectively, the nuclear norm of `L`,
/// the entrywise l1 norm of `H`, and the l1 norm of `β`. Fixed effects are
/// never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub lambda_beta: f64,
    /// Hard cap on outer block-coordinate iterations.
    pub max_iterations: usize,
    /// Relative objective-decrease threshold that declares convergence.
    pub rel_tolerance: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda_l: 0.0,
            lambda_h: 0.0,
            lambda_beta: 0.0,
            max_iterations: 500,
            rel_tolerance: 1e-6,
        }
    }
}

impl PenaltyConfig {
    /// Penalty weights with default solver controls.
    pub fn new(lambda_l: f64, lambda_h: f64, lambda_beta: f64) -> Self {
        PenaltyConfig { lambda_l, lambda_h, lambda_beta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_l", self.lambda_l),
            ("lambda_h", self.lambda_h),
            ("lambda_beta", self.lambda_beta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance.is_finite()) {
            return Err(Error::config(format!(
                "rel_tolerance must be positive and finite, got {}",
                self.rel_tolerance
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_panel() -> PanelData {
        let y = array![[1.0, 2.0], [3.0, 4.0]];
        let w = array![[0.0, 1.0], [0.0, 0.0]];
        PanelData::from_outcomes(y, w)
            .unwrap()
            .with_unit_covariates(array![[2.0], [-1.0]], vec!["x1".into()])
            .unwrap()
            .with_time_covariates(array![[3.0, 0.5]], vec!["z1".into()])
            .unwrap()
            .with_cell_covariates(vec![array![[1.0, 2.0], [3.0, 4.0]]], vec!["v1".into()])
            .unwrap()
    }

    #[test]
    fn partitions_cells_by_treatment() {
        let p = small_panel();
        assert_eq!(p.observed_cells(), &[(0, 0), (1, 0), (1, 1)]);
        assert_eq!(p.treated_cells(), &[(0, 1)]);
        assert_eq!(p.n_observed() + p.n_treated(), p.n_cells());
        assert!(!p.is_fully_observed());
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = array![[1.0, 2.0], [3.0, 4.0]];
        let w_bad_shape = array![[0.0], [0.0]];
        assert!(matches!(
            PanelData::from_outcomes(y.clone(), w_bad_shape),
            Err(Error::DimensionMismatch { .. })
        ));

        let w_not_binary = array![[0.0, 0.5], [0.0, 0.0]];
        assert!(matches!(
            PanelData::from_outcomes(y.clone(), w_not_binary),
            Err(Error::NotBinary { found, row: 0, col: 1 }) if found == 0.5
        ));

        let y_nan = array![[f64::NAN, 2.0], [3.0, 4.0]];
        let w = Array2::zeros((2, 2));
        assert!(matches!(
            PanelData::from_outcomes(y_nan, w),
            Err(Error::NonFinite { .. })
        ));

        let all_treated = Array2::ones((2, 2));
        assert!(matches!(
            PanelData::from_outcomes(array![[1.0, 2.0], [3.0, 4.0]], all_treated),
            Err(Error::NoControlCells { .. })
        ));

        let p = PanelData::from_outcomes(array![[1.0, 2.0], [3.0, 4.0]], Array2::zeros((2, 2))).unwrap();
        assert!(p
            .with_unit_covariates(array![[1.0], [2.0]], vec!["a".into(), "extra".into()])
            .is_err());
    }

    #[test]
    fn predicts_hand_computed_surface() {
        let p = small_panel();
        let params = ModelParams {
            l: array![[0.0, 0.0], [0.0, 1.0]],
            h: array![[0.4]],
            beta: array![0.5],
            gamma: array![0.1, 0.2],
            delta: array![10.0, 20.0],
        };
        let pred = p.predict_y0(&params);
        assert_abs_diff_eq!(pred[(0, 0)], 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[(0, 1)], 21.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[(1, 0)], 10.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[(1, 1)], 23.0, epsilon = 1e-12);

        let resid = p.residuals(&params);
        assert_abs_diff_eq!(resid[(0, 0)], 1.0 - 13.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_is_linear_in_each_block() {
        let p = small_panel();
        let base = ModelParams {
            l: array![[0.3, -0.2], [0.1, 1.0]],
            h: array![[0.4]],
            beta: array![0.5],
            gamma: array![0.1, 0.2],
            delta: array![10.0, 20.0],
        };
        let zero = ModelParams::zeros(&p);
        let pred_base = p.predict_y0(&base);

        // Doubling a single block shifts the prediction by exactly that
        // block's standalone contribution.
        let mut only_l = zero.clone();
        only_l.l = base.l.clone();
        let contrib_l = p.predict_y0(&only_l);
        let mut doubled = base.clone();
        doubled.l *= 2.0;
        let pred_doubled = p.predict_y0(&doubled);
        for (a, (b, c)) in pred_doubled.iter().zip(pred_base.iter().zip(contrib_l.iter())) {
            assert_abs_diff_eq!(*a, b + c, epsilon = 1e-12);
        }

        let zeros_pred = p.predict_y0(&zero);
        assert!(zeros_pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supports_report_exact_nonzeros() {
        let p = small_panel();
        let mut params = ModelParams::zeros(&p);
        assert!(params.h_support().is_empty());
        assert!(params.beta_support().is_empty());
        params.h[(0, 0)] = -0.7;
        params.beta[0] = 1e-300;
        assert_eq!(params.h_support(), vec![(0, 0)]);
        assert_eq!(params.beta_support(), vec![0]);
    }

    #[test]
    fn penalty_config_validation() {
        assert!(PenaltyConfig::default().validate().is_ok());
        assert!(PenaltyConfig::new(-1.0, 0.0, 0.0).validate().is_err());
        assert!(PenaltyConfig::new(0.0, f64::NAN, 0.0).validate().is_err());
        let mut c = PenaltyConfig::default();
        c.max_iterations = 0;
        assert!(c.validate().is_err());
        c = PenaltyConfig::default();
        c.rel_tolerance = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn prediction_from_fixed_effects_alone() {
        let y = Array2::zeros((2, 2));
        let w = Array2::zeros((2, 2));
        let p = PanelData::from_outcomes(y, w).unwrap();
        let mut params = ModelParams::zeros(&p);
        params.gamma = ndarray::arr1(&[1.0, 2.0]);
        params.delta = ndarray::arr1(&[3.0, 4.0]);
        let pred = p.predict_y0(&params);
        assert_eq!(pred, ndarray::arr2(&[[4.0, 5.0], [5.0, 6.0]]));
    }

    #[test]
    fn prediction_from_scalar_interaction() {
        let y = Array2::zeros((1, 1));
        let w = Array2::zeros((1, 1));
        let p = PanelData::from_outcomes(y, w)
            .unwrap()
            .with_unit_covariates(ndarray::arr2(&[[2.0]]), auto_names("x", 1))
            .unwrap()
            .with_time_covariates(ndarray::arr2(&[[3.0]]), auto_names("z", 1))
            .unwrap();
        let mut params = ModelParams::zeros(&p);
        params.h[(0, 0)] = 0.5;
        let pred = p.predict_y0(&params);
        assert_eq!(pred[(0, 0)], 3.0);
    }

    #[test]
    fn augmentation_with_no_covariates_is_pure_identity() {
        let p = PanelData::from_outcomes(Array2::zeros((2, 3)), Array2::zeros((2, 3)))
            .unwrap()
            .augment_linear_terms();
        assert_eq!(p.x().dim(), (2, 2));
        assert_eq!(p.x(), &Array2::<f64>::eye(2));
        assert_eq!(p.z().dim(), (3, 3));
        assert_eq!(p.z(), &Array2::<f64>::eye(3));
    }

    #[test]
    fn augmentation_keeps_original_covariates_first() {
        let x = ndarray::arr2(&[[5.0], [7.0]]);
        let p = PanelData::from_outcomes(Array2::zeros((2, 2)), Array2::zeros((2, 2)))
            .unwrap()
            .with_unit_covariates(x.clone(), auto_names("x", 1))
            .unwrap()
            .augment_linear_terms();
        assert_eq!(p.x().dim(), (2, 3));
        assert_eq!(p.x().column(0).to_vec(), vec![5.0, 7.0]);
        assert_eq!(p.x().column(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(p.x().column(2).to_vec(), vec![0.0, 1.0]);
        assert_eq!(p.x_names()[0], "x1");
    }

    #[test]
    fn augmentation_is_not_idempotent() {
        let p = PanelData::from_outcomes(Array2::zeros((2, 3)), Array2::zeros((2, 3)))
            .unwrap()
            .augment_linear_terms()
            .augment_linear_terms();
        assert_eq!(p.x().dim(), (2, 4));
        assert_eq!(p.z().dim(), (6, 3));
        assert_eq!(p.y().dim(), (2, 3));
        assert_eq!(p.n_cell_covariates(), 0);
    }
}
