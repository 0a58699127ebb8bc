//! Subspace distance, support-recovery counts and forecast errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{median, orthonormal_basis};

/// `√(1 − ‖H₁ᵀH₂‖²_F / r)` between the column spans of `u1` and `u2`, where
/// `H₁`, `H₂` are orthonormal bases of the spans.
pub fn subspace_distance(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<f64> {
    if u1.shape() != u2.shape() || u1.ncols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "shapes {:?} and {:?} must match with at least one column",
            u1.shape(),
            u2.shape()
        )));
    }
    let h1 = orthonormal_basis(u1)?;
    let h2 = orthonormal_basis(u2)?;
    let r = u1.ncols() as f64;
    // ‖(I − H₁H₁ᵀ)H₂‖²_F = r − ‖H₁ᵀH₂‖²_F, without the cancellation near 0
    let resid = &h2 - &h1 * (h1.transpose() * &h2);
    Ok((resid.norm_squared() / r).min(1.0).sqrt())
}

/// Recovery counts for one loading column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnConfusion {
    pub tp: usize,
    /// True nonzeros estimated as zero.
    pub fn_: usize,
    /// True zeros estimated as nonzero.
    pub fp: usize,
    pub tn: usize,
    pub f1: f64,
}

impl ColumnConfusion {
    fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        Self {
            tp,
            fn_,
            fp,
            tn,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    /// Column `i` of the estimate against column `i` of the sparsity-sorted truth.
    pub per_column: Vec<ColumnConfusion>,
    pub totals: ColumnConfusion,
    /// Mean F1 under the column matching that maximizes it; `None` for r > 7.
    pub best_permutation_f1: Option<f64>,
}

fn column_confusion(
    est: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    ei: usize,
    ti: usize,
) -> ColumnConfusion {
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for (e, t) in est.column(ei).iter().zip(truth.column(ti).iter()) {
        match (*e != 0.0, *t != 0.0) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    ColumnConfusion::from_counts(tp, fn_, fp, tn)
}

/// Zero/nonzero classification of `q_hat` against `q_true`, column by column.
///
/// Truth columns are first stably sorted by their nonzero count so column `i`
/// of the estimate meets the `i`-th sparsest true column.
pub fn sparsity_confusion(q_hat: &DMatrix<f64>, q_true: &DMatrix<f64>) -> Result<ConfusionSummary> {
    if q_hat.shape() != q_true.shape() {
        return Err(Error::InvalidArgument(format!(
            "estimate is {:?} but truth is {:?}",
            q_hat.shape(),
            q_true.shape()
        )));
    }
    let r = q_true.ncols();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by_key(|&j| q_true.column(j).iter().filter(|&&x| x != 0.0).count());

    let per_column: Vec<ColumnConfusion> = order
        .iter()
        .enumerate()
        .map(|(i, &t)| column_confusion(q_hat, q_true, i, t))
        .collect();
    let sum = |f: fn(&ColumnConfusion) -> usize| per_column.iter().map(f).sum::<usize>();
    let totals =
        ColumnConfusion::from_counts(sum(|c| c.tp), sum(|c| c.fn_), sum(|c| c.fp), sum(|c| c.tn));

    let best_permutation_f1 = (1..=7).contains(&r).then(|| {
        let f1: Vec<Vec<f64>> = (0..r)
            .map(|i| {
                (0..r)
                    .map(|t| column_confusion(q_hat, q_true, i, t).f1)
                    .collect()
            })
            .collect();
        let mut perm: Vec<usize> = (0..r).collect();
        let mut best = f64::NEG_INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(i, &t)| f1[i][t]).sum();
            best = best.max(total / r as f64);
        });
        best
    });

    Ok(ConfusionSummary {
        per_column,
        totals,
        best_permutation_f1,
    })
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// Per-series and aggregate forecast accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrors {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    pub median_rmse: f64,
    pub median_mae: f64,
}

/// RMSE and MAE of each column of `pred` against `actual`, with their
/// cross-series mean and median.
pub fn forecast_errors(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<ForecastErrors> {
    if pred.shape() != actual.shape() || pred.nrows() == 0 || pred.ncols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "prediction {:?} and actual {:?} must have the same non-empty shape",
            pred.shape(),
            actual.shape()
        )));
    }
    let n = pred.nrows() as f64;
    let mut rmse = Vec::with_capacity(pred.ncols());
    let mut mae = Vec::with_capacity(pred.ncols());
    for (pc, ac) in pred.column_iter().zip(actual.column_iter()) {
        let (mut sq, mut abs) = (0.0, 0.0);
        for (p, a) in pc.iter().zip(ac.iter()) {
            let e = p - a;
            sq += e * e;
            abs += e.abs();
        }
        rmse.push((sq / n).sqrt());
        mae.push(abs / n);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ForecastErrors {
        mean_rmse: mean(&rmse),
        mean_mae: mean(&mae),
        median_rmse: median(&rmse),
        median_mae: median(&mae),
        rmse,
        mae,
    })
}
