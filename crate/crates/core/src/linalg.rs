//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on the pivoted-QR diagonal below which a column set is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span of `u` via column-pivoted QR.
pub fn orthonormal_basis(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, r) = u.shape();
    if r == 0 || p < r {
        return Err(Error::InvalidArgument(format!(
            "cannot orthonormalize a {p}x{r} matrix"
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let qr = u.clone().col_piv_qr();
    let rmat = qr.r();
    let lead = rmat[(0, 0)].abs();
    let scale = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || lead == 0.0 {
        return Err(Error::RankDeficient(
            "zero matrix has no column span".into(),
        ));
    }
    for k in 0..r {
        if rmat[(k, k)].abs() <= RANK_TOL * lead {
            return Err(Error::RankDeficient(format!(
                "column span has rank {k} < {r}"
            )));
        }
    }
    Ok(qr.q().columns(0, r).into_owned())
}

/// `I - S Sᵀ` for a matrix `S` with orthonormal columns.
pub fn complement_projector(p: usize, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = DMatrix::identity(p, p);
    if s.ncols() > 0 {
        b -= s * s.transpose();
    }
    b
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Type-7 (linear interpolation) sample quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

/// Euclidean length of a slice.
#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `(QᵀQ) c = Qᵀ x` column-wise for every row of `x`, returning the
/// n×r coefficient matrix. Fails when Q is numerically rank deficient.
pub fn least_squares_scores(x: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = q.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin >= 1e8 {
        return Err(Error::RankDeficient(format!(
            "loading matrix condition number {:.3e} exceeds 1e8",
            if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            }
        )));
    }
    let gram = q.transpose() * q;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("QᵀQ is not positive definite".into()))?;
    let rhs = q.transpose() * x.transpose();
    Ok(chol.solve(&rhs).transpose())
}

pub fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

/// Raw varimax rotation of the columns of `u` (no row normalization).
///
/// Returns `u·T` for the orthogonal `T` that maximizes the summed column
/// variances of the squared entries, found with the usual SVD iteration.
pub fn varimax(u: &DMatrix<f64>, max_iter: usize, tol: f64) -> DMatrix<f64> {
    let (p, k) = u.shape();
    if k < 2 || p == 0 {
        return u.clone();
    }
    let mut rot = DMatrix::<f64>::identity(k, k);
    let mut crit = 0.0;
    for _ in 0..max_iter {
        let l = u * &rot;
        let mut grad = l.map(|x| x * x * x);
        for j in 0..k {
            let mean_sq = l.column(j).norm_squared() / p as f64;
            grad.column_mut(j).axpy(-mean_sq, &l.column(j), 1.0);
        }
        let svd = (u.transpose() * grad).svd(true, true);
        let (Some(left), Some(right)) = (svd.u, svd.v_t) else {
            break;
        };
        rot = left * right;
        let next = svd.singular_values.sum();
        if next <= crit * (1.0 + tol) {
            break;
        }
        crit = next;
    }
    u * rot
}
