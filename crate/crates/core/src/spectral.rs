//! Lagged autocovariances and the eigenvector basis of the loading space.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs};
use crate::panel::TimeSeriesPanel;

/// Leading eigenvectors of `M` with their eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// p×r, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Number of lags accumulated into `M`; 0 when the basis came from an
    /// arbitrary matrix.
    pub h0: usize,
}

impl SpectralBasis {
    pub fn r(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn p(&self) -> usize {
        self.vectors.nrows()
    }

    /// The projector `Ŝ Ŝᵀ` onto the estimated loading space.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.vectors * self.vectors.transpose()
    }

    /// Basis of the panel's loading space: `M̂` with `h0` lags, then its `r`
    /// leading eigenvectors.
    pub fn from_panel(panel: &TimeSeriesPanel, h0: usize, r: usize) -> Result<Self> {
        let m = build_m_hat(panel, h0)?;
        let mut basis = leading_eigvecs(&m, r)?;
        basis.h0 = h0;
        Ok(basis)
    }
}

/// Lag-`h` product moment `(n-h)⁻¹ Σ_t x_t x_{t+h}ᵀ`, without centering.
pub fn sample_autocov(panel: &TimeSeriesPanel, h: usize) -> Result<DMatrix<f64>> {
    let n = panel.n();
    if h == 0 || h >= n {
        return Err(Error::InvalidArgument(format!(
            "lag {h} outside 1..={}",
            n - 1
        )));
    }
    let x = panel.values();
    let len = n - h;
    let lead = x.rows(0, len);
    let lagged = x.rows(h, len);
    Ok(lead.transpose() * lagged / len as f64)
}

/// `M̂ = Σ_{h=1}^{h0} Σ̂(h) Σ̂(h)ᵀ`, accumulated in ascending `h` and then
/// symmetrized.
pub fn build_m_hat(panel: &TimeSeriesPanel, h0: usize) -> Result<DMatrix<f64>> {
    if h0 == 0 || h0 >= panel.n() {
        return Err(Error::InvalidArgument(format!(
            "h0 = {h0} outside 1..={}",
            panel.n() - 1
        )));
    }
    let p = panel.p();
    let mut m = DMatrix::zeros(p, p);
    for h in 1..=h0 {
        let sigma = sample_autocov(panel, h)?;
        m += &sigma * sigma.transpose();
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// The `r` leading eigenpairs of a symmetric matrix.
///
/// Each vector is signed so that its largest-magnitude entry is positive.
/// Equal eigenvalues are ordered by comparing their vectors coordinate by
/// coordinate, so the output is a function of the input bits.
pub fn leading_eigvecs(m: &DMatrix<f64>, r: usize) -> Result<SpectralBasis> {
    let (p, cols) = m.shape();
    if p != cols {
        return Err(Error::InvalidArgument(format!(
            "{p}x{cols} matrix is not square"
        )));
    }
    if r == 0 || r > p {
        return Err(Error::InvalidArgument(format!("r = {r} outside 1..={p}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let tol = 1e-8 * max_abs(m).max(1.0);
    let skew = asymmetry(m);
    if skew > tol {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {skew:.3e})"
        )));
    }
    let eig = m.clone().symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..p)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            fix_sign(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|(la, va), (lb, vb)| {
        lb.total_cmp(la).then_with(|| {
            va.iter()
                .zip(vb)
                .map(|(a, b)| b.total_cmp(a))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut vectors = DMatrix::zeros(p, r);
    for (k, (_, v)) in pairs.iter().take(r).enumerate() {
        vectors.column_mut(k).copy_from_slice(v);
    }
    Ok(SpectralBasis {
        vectors,
        eigenvalues: pairs.iter().take(r).map(|(l, _)| *l).collect(),
        h0: 0,
    })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_panel(n: usize, p: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        TimeSeriesPanel::from_matrix(m).unwrap()
    }

    #[test]
    fn zero_panel_gives_zero_matrices() {
        let p = TimeSeriesPanel::from_matrix(DMatrix::zeros(5, 3)).unwrap();
        assert_eq!(sample_autocov(&p, 2).unwrap(), DMatrix::zeros(3, 3));
        assert_eq!(build_m_hat(&p, 2).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn scalar_lag_one_by_hand() {
        let p = TimeSeriesPanel::from_matrix(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(sample_autocov(&p, 1).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn lag_out_of_range() {
        let p = random_panel(4, 2, 1);
        assert!(sample_autocov(&p, 4).is_err());
        assert!(sample_autocov(&p, 0).is_err());
        assert!(build_m_hat(&p, 4).is_err());
    }

    #[test]
    fn white_noise_autocov_is_small() {
        let n = 4000;
        let p = random_panel(n, 4, 2);
        let s = sample_autocov(&p, 1).unwrap();
        assert!(max_abs(&s) < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn m_hat_single_lag_and_brute_force_sum() {
        let p = random_panel(40, 5, 3);
        let s1 = sample_autocov(&p, 1).unwrap();
        let m1 = build_m_hat(&p, 1).unwrap();
        assert!((&m1 - &s1 * s1.transpose()).abs().max() < 1e-14);

        // independent triple loop over the defining sums
        let x = p.values();
        let (n, dim) = x.shape();
        let mut oracle = DMatrix::<f64>::zeros(dim, dim);
        for h in 1..=3 {
            let mut sig = DMatrix::<f64>::zeros(dim, dim);
            for t in 0..n - h {
                for i in 0..dim {
                    for j in 0..dim {
                        sig[(i, j)] += x[(t, i)] * x[(t + h, j)];
                    }
                }
            }
            sig /= (n - h) as f64;
            for i in 0..dim {
                for j in 0..dim {
                    oracle[(i, j)] += (0..dim).map(|k| sig[(i, k)] * sig[(j, k)]).sum::<f64>();
                }
            }
        }
        let m3 = build_m_hat(&p, 3).unwrap();
        assert!((&m3 - &oracle).abs().max() < 1e-12);
    }

    #[test]
    fn m_hat_is_psd() {
        for seed in 0..10 {
            let m = build_m_hat(&random_panel(30, 6, seed), 2).unwrap();
            let eig = m.symmetric_eigen();
            let top = eig.eigenvalues.max();
            assert!(eig.eigenvalues.min() >= -1e-8 * top);
        }
    }

    #[test]
    fn diagonal_matrix_eigvecs() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let b = leading_eigvecs(&m, 2).unwrap();
        assert_eq!(b.eigenvalues, vec![3.0, 2.0]);
        assert_eq!(
            b.vectors,
            DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        );
    }

    #[test]
    fn identity_has_unit_eigenvalue() {
        let b = leading_eigvecs(&DMatrix::identity(3, 3), 1).unwrap();
        assert!((b.eigenvalues[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(leading_eigvecs(&m, 1).is_err());
    }

    #[test]
    fn random_psd_residuals_trace_and_determinism() {
        for seed in 0..10 {
            let m = build_m_hat(&random_panel(50, 8, seed + 100), 1).unwrap();
            let b = leading_eigvecs(&m, 3).unwrap();
            for (k, &l) in b.eigenvalues.iter().enumerate() {
                let v = b.vectors.column(k);
                assert!((&m * v - v * l).norm() < 1e-8);
                assert!(l >= -1e-10);
            }
            assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let g = b.vectors.transpose() * &b.vectors;
            assert!((g - DMatrix::identity(3, 3)).abs().max() < 1e-10);
            let tr = (b.vectors.transpose() * &m * &b.vectors).trace();
            let sum: f64 = b.eigenvalues.iter().sum();
            assert!((tr - sum).abs() < 1e-8 * sum.max(1.0));
            assert_eq!(leading_eigvecs(&m, 3).unwrap(), b);
        }
    }
}
