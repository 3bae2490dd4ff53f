//! Proximal operators used by the block coordinate descent solver.
//!
//! Two scalar/matrix shrinkage operations drive the whole estimator:
//!
//! * [`soft_threshold`] — the proximal operator of `t·|x|`, applied to
//!   covariate coefficients.
//! * [`svt`] — singular value thresholding, the proximal operator of the
//!   nuclear norm `t·‖A‖_*`, applied to the low-rank component.
//!
//! Both shrink toward zero; `svt` does so on the singular value spectrum,
//! which is what makes the low-rank update a closed-form step.

use ndarray::Array2;

/// Scalar soft-thresholding: `sign(x) · max(|x| − t, 0)`.
///
/// This is the proximal operator of `t·|x|`; `t` must be nonnegative.
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0, "threshold must be nonnegative");
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// A thin singular value decomposition `A = U Σ V'`.
///
/// `u` is `n x k`, `vt` is `k x t`, and `sigma` holds the `k = min(n, t)`
/// singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub vt: Array2<f64>,
}

impl SvdFactors {
    /// Number of singular values above `rel_tol · σ_max` (zero for a zero
    /// matrix). With the default tolerance this is the numerical rank.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let max = self.sigma.first().copied().unwrap_or(0.0);
        if max <= 0.0 {
            return 0;
        }
        let cut = rel_tol * max;
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    /// Reconstruct the matrix keeping only the leading `rank` singular
    /// triplets, with singular values replaced by `values` (must have length
    /// ≥ `rank`).
    pub fn reconstruct_with(&self, rank: usize, values: &[f64]) -> Array2<f64> {
        let (n, _) = self.u.dim();
        let (_, t) = self.vt.dim();
        let mut out = Array2::zeros((n, t));
        for r in 0..rank {
            let s = values[r];
            if s == 0.0 {
                continue;
            }
            let u_col = self.u.column(r);
            let v_row = self.vt.row(r);
            for (i, &ui) in u_col.iter().enumerate() {
                let scale = s * ui;
                if scale == 0.0 {
                    continue;
                }
                let mut row = out.row_mut(i);
                for (j, &vj) in v_row.iter().enumerate() {
                    row[j] += scale * vj;
                }
            }
        }
        out
    }
}

/// Relative cutoff under which singular values are treated as numerically
/// zero when reporting ranks.
pub const RANK_REL_TOL: f64 = 1e-12;

/// Column pairs whose normalized inner product falls below this are treated
/// as already orthogonal by the Jacobi sweep.
const JACOBI_ORTHO_TOL: f64 = 1e-14;

/// Upper bound on Jacobi sweeps; convergence is quadratic once pairs start
/// passing the orthogonality test, so typical matrices need well under ten.
const JACOBI_MAX_SWEEPS: usize = 64;

/// Thin SVD of a dense matrix with singular values in descending order.
///
/// Computed with one-sided Jacobi rotations: the columns of a working copy
/// `A·V` are rotated in cyclic sweeps until mutually orthogonal, at which
/// point the column norms are the singular values and the normalized columns
/// form `U`. Jacobi costs a small constant factor more than bidiagonalization
/// at panel sizes, but it stays accurate to machine precision when singular
/// values coincide — two-way-layout matrices produce exactly repeated values,
/// a regime where per-value vector pairing in faster algorithms can break
/// down.
pub fn thin_svd(a: &Array2<f64>) -> SvdFactors {
    let (n, t) = a.dim();
    if n < t {
        // Run on the tall orientation; the SVD of the transpose swaps the
        // roles of U and V.
        let f = thin_svd_tall(&a.t().to_owned());
        return SvdFactors { u: f.vt.t().to_owned(), sigma: f.sigma, vt: f.u.t().to_owned() };
    }
    thin_svd_tall(a)
}

/// One-sided Jacobi SVD for `n ≥ t`.
fn thin_svd_tall(a: &Array2<f64>) -> SvdFactors {
    let (n, t) = a.dim();
    // Contiguous column buffers: `w[p]` tracks the p-th column of `A·V` and
    // `v[p]` the p-th column of `V`.
    let mut w: Vec<Vec<f64>> = (0..t).map(|p| a.column(p).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..t)
        .map(|p| {
            let mut e = vec![0.0; t];
            e[p] = 1.0;
            e
        })
        .collect();
    // Cached squared column norms; refreshed incrementally after rotations.
    let mut norm2: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..t.saturating_sub(1) {
            for q in (p + 1)..t {
                let (alpha, beta) = (norm2[p], norm2[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (wp_ref, wq_ref) = {
                    let (lo, hi) = w.split_at_mut(q);
                    (&mut lo[p], &mut hi[0])
                };
                let gamma: f64 = wp_ref.iter().zip(wq_ref.iter()).map(|(x, y)| x * y).sum();
                if gamma.abs() <= JACOBI_ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotation angle that zeroes the (p, q) entry of the Gram
                // matrix of the working columns.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cos = 1.0 / (1.0 + tan * tan).sqrt();
                let sin = cos * tan;
                for (x, y) in wp_ref.iter_mut().zip(wq_ref.iter_mut()) {
                    let (wp, wq) = (*x, *y);
                    *x = cos * wp - sin * wq;
                    *y = sin * wp + cos * wq;
                }
                let (vp_ref, vq_ref) = {
                    let (lo, hi) = v.split_at_mut(q);
                    (&mut lo[p], &mut hi[0])
                };
                for (x, y) in vp_ref.iter_mut().zip(vq_ref.iter_mut()) {
                    let (vp, vq) = (*x, *y);
                    *x = cos * vp - sin * vq;
                    *y = sin * vp + cos * vq;
                }
                let cs2 = 2.0 * cos * sin * gamma;
                norm2[p] = cos * cos * alpha - cs2 + sin * sin * beta;
                norm2[q] = sin * sin * alpha + cs2 + cos * cos * beta;
            }
        }
        if !rotated {
            break;
        }
    }
    // Extract factors: exact column norms, sorted descending.
    let sigma_raw: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&i, &j| sigma_raw[j].partial_cmp(&sigma_raw[i]).unwrap());
    let mut u = Array2::zeros((n, t));
    let mut vt = Array2::zeros((t, t));
    let mut sigma = Vec::with_capacity(t);
    let mut zero_slots = Vec::new();
    for (slot, &src) in order.iter().enumerate() {
        let s = sigma_raw[src];
        sigma.push(s);
        for (i, &vi) in v[src].iter().enumerate() {
            vt[(slot, i)] = vi;
        }
        if s > 0.0 {
            for (i, &wi) in w[src].iter().enumerate() {
                u[(i, slot)] = wi / s;
            }
        } else {
            zero_slots.push(slot);
        }
    }
    // Zero singular values leave their left vectors unconstrained; fill the
    // slots with an orthonormal completion so U always has orthonormal
    // columns.
    for &slot in &zero_slots {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for cand in 0..n {
            let mut col = vec![0.0; n];
            col[cand] = 1.0;
            // Two Gram–Schmidt passes for stability; unfilled slots hold
            // zero columns, so projecting on them is a harmless no-op.
            for _ in 0..2 {
                for filled in 0..t {
                    let dot: f64 = (0..n).map(|i| col[i] * u[(i, filled)]).sum();
                    if dot != 0.0 {
                        for (i, c) in col.iter_mut().enumerate() {
                            *c -= dot * u[(i, filled)];
                        }
                    }
                }
            }
            let nrm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, col));
            }
        }
        let (nrm, col) = best.expect("n >= 1");
        for (i, &c) in col.iter().enumerate() {
            u[(i, slot)] = c / nrm;
        }
    }
    SvdFactors { u, sigma, vt }
}

/// Result of singular value thresholding.
#[derive(Debug, Clone)]
pub struct SvtResult {
    /// The thresholded matrix `U soft(Σ, t) V'`.
    pub value: Array2<f64>,
    /// Post-threshold singular values (descending, zeros kept).
    pub sigma: Vec<f64>,
    /// Number of strictly positive post-threshold singular values.
    pub rank: usize,
}

impl SvtResult {
    /// Nuclear norm of the thresholded matrix.
    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }
}

/// Singular value thresholding: `svt(A, t) = U soft(Σ, t) V'`.
///
/// This is the proximal operator of `t·‖·‖_*`: it is the unique minimizer of
/// `½‖A − B‖_F² + t‖B‖_*` over all matrices `B`. A threshold at or above the
/// largest singular value returns the zero matrix.
pub fn svt(a: &Array2<f64>, t: f64) -> SvtResult {
    debug_assert!(t >= 0.0, "threshold must be nonnegative");
    let factors = thin_svd(a);
    let sigma: Vec<f64> = factors.sigma.iter().map(|&s| soft_threshold(s, t)).collect();
    let rank = sigma.iter().filter(|&&s| s > 0.0).count();
    let value = if rank == 0 {
        Array2::zeros(a.dim())
    } else {
        factors.reconstruct_with(rank, &sigma)
    };
    SvtResult { value, sigma, rank }
}

/// Largest singular value of a dense matrix (0 for an empty matrix).
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    thin_svd(a).sigma.first().copied().unwrap_or(0.0)
}
