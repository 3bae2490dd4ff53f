//! Synthetic panel generator for simulation studies.
//!
//! Builds panels of the form
//! `Y = τW + L + XHZ + [Vᵢₜᵀβ]ᵢₜ + Γ1ᵀ + 1Δᵀ + U` with a low-rank baseline,
//! sparse covariate interactions, and iid normal shocks, returning the ground
//! truth alongside the observable data so simulations can score estimates.
//!
//! Generation is single-threaded per panel and consumes one seeded stream in
//! a fixed, documented order, so a seed pins the panel bit-for-bit across
//! runs and platforms. Concurrent experiments should generate distinct
//! panels from distinct seeds.

use crate::error::{Error, Result};
use crate::panel::{auto_names, ModelParams, PanelData};
use crate::prox;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

/// Eigenvalues of the covariate covariance below this are clipped up to it
/// before taking the matrix square root.
const EIGEN_CLIP: f64 = 1e-8;

/// Parameters of the synthetic panel.
///
/// `h_size` and `b_size` are the *variances* of the normal magnitudes behind
/// the sparse coefficients, while `sigma_eps` is the *standard deviation* of
/// the cell shock, matching how each appears in the defining equations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Treatment effect added to every treated cell.
    pub tau: f64,
    /// Rank of the low-rank baseline matrix.
    pub rank_l: usize,
    /// Probability that a cell is treated.
    pub treat_prob: f64,
    /// Upper bound of the uniform off-diagonal covariance draws.
    pub sigma_max: f64,
    /// Number of unit covariates (columns of X).
    pub n_unit_covariates: usize,
    /// Number of time covariates (rows of Z).
    pub n_time_covariates: usize,
    /// Variance of the normal magnitudes in the interaction matrix H.
    pub h_size: f64,
    /// Probability that an H entry is active.
    pub h_prob: f64,
    /// Number of cell covariates (slices of V).
    pub n_cell_covariates: usize,
    /// Variance of the normal magnitudes in β.
    pub b_size: f64,
    /// Probability that a β entry is active.
    pub b_prob: f64,
    /// Standard deviation of the iid cell shock U.
    pub sigma_eps: f64,
    /// Rate of the exponential law behind the baseline's singular values
    /// (mean singular value `1/zeta_l`).
    pub zeta_l: f64,
    pub seed: u64,
    /// Replace the three Bernoulli masks (treatment, H activity, β activity)
    /// with draws without replacement of exactly `round(prob · count)`
    /// entries, so every run has identical model sizes.
    pub exact_count_bernoulli: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_units: 100,
            n_periods: 80,
            tau: 1.0,
            rank_l: 5,
            treat_prob: 0.1,
            sigma_max: 0.8,
            n_unit_covariates: 50,
            n_time_covariates: 20,
            h_size: 1.0,
            h_prob: 0.025,
            n_cell_covariates: 1000,
            b_size: 1.0,
            b_prob: 0.02,
            sigma_eps: 1.0,
            zeta_l: 1.0,
            seed: 0,
            exact_count_bernoulli: false,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.n_periods == 0 {
            return Err(Error::config("panel dimensions must be positive"));
        }
        for (name, p) in
            [("treat_prob", self.treat_prob), ("h_prob", self.h_prob), ("b_prob", self.b_prob)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(0.0..1.0).contains(&self.sigma_max) {
            return Err(Error::config(format!(
                "sigma_max must lie in [0, 1), got {}",
                self.sigma_max
            )));
        }
        if self.rank_l > self.n_units.min(self.n_periods) {
            return Err(Error::config(format!(
                "rank_l = {} exceeds min(N, T) = {}",
                self.rank_l,
                self.n_units.min(self.n_periods)
            )));
        }
        for (name, s) in [
            ("h_size", self.h_size),
            ("b_size", self.b_size),
            ("sigma_eps", self.sigma_eps),
            ("zeta_l", self.zeta_l),
        ] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config(format!("{name} must be a positive scale, got {s}")));
            }
        }
        Ok(())
    }
}

/// A generated panel together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub panel: PanelData,
    /// The realized L, H, β, Γ, Δ — not estimates.
    pub truth: ModelParams,
    pub tau: f64,
}

/// Generate one synthetic panel from `config`.
///
/// All randomness flows through a single seeded stream consumed in this
/// fixed order, which is the compatibility contract for seeds:
///
/// 1. treatment mask (cell-wise Bernoulli row-major, or an exact-count
///    sample without replacement);
/// 2. the N·T standard normals behind the baseline (row-major), then the
///    `rank_l` exponential singular values that replace the leading ones;
/// 3. covariance of X (upper triangle row-major), then per unit its uniform
///    scale η and its normal vector;
/// 4. H magnitudes (row-major), then the H activity mask;
/// 5. covariance of Z, then per period its scale and normal vector;
/// 6. the cell covariate slices (slice-major, each row-major);
/// 7. β magnitudes, then the β activity mask;
/// 8. unit effects Γ, then time effects Δ;
/// 9. the shock matrix U (row-major).
///
/// Magnitudes are always drawn before activity masks, so toggling
/// `exact_count_bernoulli` changes which coefficients are active but not
/// their values.
pub fn generate(config: &DgpConfig) -> Result<GeneratedPanel> {
    config.validate()?;
    let (n, t) = (config.n_units, config.n_periods);
    let (p, q) = (config.n_unit_covariates, config.n_time_covariates);
    let b_count = config.n_cell_covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // 1. Treatment mask.
    let w_mask = activity_mask(&mut rng, n * t, config.treat_prob, config.exact_count_bernoulli);
    let mut w = Array2::zeros((n, t));
    for (flat, active) in w_mask.iter().enumerate() {
        if *active {
            w[(flat / t, flat % t)] = 1.0;
        }
    }

    // 2. Low-rank baseline: keep the singular directions of a noise matrix
    // but swap in exponential singular values for the leading rank_l slots.
    let raw = Array2::from_shape_simple_fn((n, t), || rng.sample::<f64, _>(StandardNormal));
    let factors = prox::thin_svd(&raw);
    let exp = Exp::new(config.zeta_l).expect("validated rate");
    let sigma_l: Vec<f64> = (0..config.rank_l).map(|_| exp.sample(&mut rng)).collect();
    let l = factors.reconstruct_with(config.rank_l, &sigma_l);

    // 3. Unit covariates: X_i = η_i · Σ_X^{1/2} g_i.
    let sqrt_x = correlation_matrix(&mut rng, p, config.sigma_max)?.1;
    let x = scaled_gaussian_rows(&mut rng, n, p, &sqrt_x);

    // 4. Interaction matrix.
    let h = sparse_normal_matrix(&mut rng, p, q, config.h_size, config.h_prob, config.exact_count_bernoulli);

    // 5. Time covariates: column t of Z is η_t · Σ_Z^{1/2} g_t.
    let sqrt_z = correlation_matrix(&mut rng, q, config.sigma_max)?.1;
    let z = scaled_gaussian_rows(&mut rng, t, q, &sqrt_z).t().to_owned();

    // 6. Cell covariates.
    let v: Vec<Array2<f64>> = (0..b_count)
        .map(|_| Array2::from_shape_simple_fn((n, t), || rng.sample::<f64, _>(StandardNormal)))
        .collect();

    // 7. Cell-covariate coefficients.
    let beta = sparse_normal_matrix(&mut rng, b_count, 1, config.b_size, config.b_prob, config.exact_count_bernoulli)
        .into_raw_vec_and_offset()
        .0;

    // 8. Fixed effects.
    let gamma: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let delta: Vec<f64> = (0..t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    // 9. Shocks.
    let u = Array2::from_shape_simple_fn((n, t), || {
        config.sigma_eps * rng.sample::<f64, _>(StandardNormal)
    });

    // Assemble the outcome.
    let truth = ModelParams {
        l,
        h,
        beta: ndarray::Array1::from_vec(beta),
        gamma: ndarray::Array1::from_vec(gamma),
        delta: ndarray::Array1::from_vec(delta),
    };
    // The treatment contribution is added last so that panels generated
    // from the same seed at different tau differ by exactly tau·W, with no
    // round-off leaking in from later additions.
    let mut y = u;
    y += &truth.l;
    if p > 0 && q > 0 {
        y += &x.dot(&truth.h).dot(&z);
    }
    for (slice, &coef) in v.iter().zip(truth.beta.iter()) {
        if coef != 0.0 {
            y.scaled_add(coef, slice);
        }
    }
    for ((i, tt), cell) in y.indexed_iter_mut() {
        *cell += truth.gamma[i] + truth.delta[tt];
    }
    y.scaled_add(config.tau, &w);
    let panel = PanelData::from_outcomes(y, w)?
        .with_unit_covariates(x, auto_names("x_", p))?
        .with_time_covariates(z, auto_names("z_", q))?
        .with_cell_covariates(v, auto_names("v_", b_count))?;
    Ok(GeneratedPanel { panel, truth, tau: config.tau })
}

/// Draw an activity mask of `count` flags: iid Bernoulli(prob), or exactly
/// `round(prob · count)` actives sampled without replacement.
fn activity_mask(rng: &mut ChaCha8Rng, count: usize, prob: f64, exact: bool) -> Vec<bool> {
    let mut mask = vec![false; count];
    if exact {
        let k = (prob * count as f64).round() as usize;
        for ix in sample_without_replacement(rng, count, k.min(count)) {
            mask[ix] = true;
        }
    } else {
        for flag in &mut mask {
            *flag = rng.random::<f64>() < prob;
        }
    }
    mask
}

/// Partial Fisher-Yates: the first `k` entries of a uniformly shuffled
/// `0..count`, drawn with `k` swaps.
fn sample_without_replacement(rng: &mut ChaCha8Rng, count: usize, k: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..count).collect();
    for step in 0..k {
        let other = step + rng.random_range(0..count - step);
        indices.swap(step, other);
    }
    indices.truncate(k);
    indices
}

/// `rows × dim` matrix whose i-th row is `η_i · sqrt_cov · g_i` with
/// `η_i ~ U(0,1)` and `g_i` standard normal; per row, the scale is drawn
/// before the normal vector.
fn scaled_gaussian_rows(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dim: usize,
    sqrt_cov: &Array2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows, dim));
    for i in 0..rows {
        let eta: f64 = rng.random();
        let g: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for a in 0..dim {
            let mut acc = 0.0;
            for c in 0..dim {
                acc += sqrt_cov[(a, c)] * g[c];
            }
            out[(i, a)] = eta * acc;
        }
    }
    out
}

/// `rows × cols` matrix of `N(0, variance) · Bernoulli(prob)` entries;
/// magnitudes first (row-major), then the activity mask.
fn sparse_normal_matrix(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    variance: f64,
    prob: f64,
    exact: bool,
) -> Array2<f64> {
    let sd = variance.sqrt();
    let magnitudes = Array2::from_shape_simple_fn((rows, cols), || {
        sd * rng.sample::<f64, _>(StandardNormal)
    });
    let mask = activity_mask(rng, rows * cols, prob, exact);
    let mut out = magnitudes;
    for (flat, keep) in mask.iter().enumerate() {
        if !*keep {
            out[(flat / cols.max(1), flat % cols.max(1))] = 0.0;
        }
    }
    out
}

/// Random correlation matrix with unit diagonal and U(0, sigma_max)
/// off-diagonals, repaired to be positive definite, plus its symmetric
/// square root. Returns `(sigma, sigma^{1/2})`.
///
/// The raw draw fills the upper triangle row-major and mirrors it, so
/// entries keep the uniform law exactly. Because off-diagonals near 1 can
/// break positive definiteness, eigenvalues below a small floor are clipped
/// up and the diagonal is rescaled back to 1 (a positive congruence, so
/// definiteness survives).
fn correlation_matrix(
    rng: &mut ChaCha8Rng,
    dim: usize,
    sigma_max: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if dim == 0 {
        return Ok((Array2::zeros((0, 0)), Array2::zeros((0, 0))));
    }
    let mut sigma = Array2::from_elem((dim, dim), 0.0);
    for a in 0..dim {
        sigma[(a, a)] = 1.0;
        for b in (a + 1)..dim {
            let val = rng.random::<f64>() * sigma_max;
            sigma[(a, b)] = val;
            sigma[(b, a)] = val;
        }
    }
    let m = nalgebra::DMatrix::from_fn(dim, dim, |r, c| sigma[(r, c)]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|lam| lam.max(EIGEN_CLIP));
    let repaired = &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&clipped)
        * eig.eigenvectors.transpose();
    let scales: Vec<f64> = (0..dim).map(|a| repaired[(a, a)].sqrt()).collect();
    // Round-off leaves the eigen reconstruction asymmetric in the last ulp;
    // mirror the upper triangle so symmetry holds exactly.
    let mut unit = Array2::zeros((dim, dim));
    for a in 0..dim {
        unit[(a, a)] = 1.0;
        for b in (a + 1)..dim {
            let val = repaired[(a, b)] / (scales[a] * scales[b]);
            unit[(a, b)] = val;
            unit[(b, a)] = val;
        }
    }
    let m2 = nalgebra::DMatrix::from_fn(dim, dim, |r, c| unit[(r, c)]);
    let eig2 = nalgebra::SymmetricEigen::new(m2);
    if eig2.eigenvalues.iter().any(|&lam| lam < -1e-10) {
        return Err(Error::config(format!(
            "covariance repair failed: negative eigenvalue {:?} in {unit:?}",
            eig2.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let roots = eig2.eigenvalues.map(|lam| lam.max(0.0).sqrt());
    let sqrt = &eig2.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&roots)
        * eig2.eigenvectors.transpose();
    let sqrt_nd = Array2::from_shape_fn((dim, dim), |(r, c)| sqrt[(r, c)]);
    Ok((unit, sqrt_nd))
}
