//! VAR(1) factor dynamics and rolling one-step-ahead panel prediction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    default_grid1, default_grid2, estimate_loadings, extract_factors, tune_lambdas,
    EstimateOptions, FactorSeries, TuneOptions,
};
use crate::metrics::{forecast_errors, ForecastErrors};
use crate::panel::{adjust_outliers, GroupStructure, TimeSeriesPanel};
use crate::penalty::PenaltyConfig;
use crate::simulation::Method;
use crate::spectral::SpectralBasis;

/// Singular-value ratio below which the VAR regressors count as collinear.
const VAR_RANK_RTOL: f64 = 1e-10;

/// `zₜ = intercept + coef·zₜ₋₁ + uₜ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Var1Model {
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Residual covariance with divisor `n − 1` (the number of fitted rows).
    pub residual_cov: DMatrix<f64>,
}

impl Var1Model {
    pub fn r(&self) -> usize {
        self.intercept.len()
    }

    pub fn predict(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.intercept + &self.coef * z
    }
}

/// Least-squares VAR(1) with intercept on an `n × r` factor series.
pub fn fit_var1(factors: &FactorSeries) -> Result<Var1Model> {
    let z = &factors.values;
    let (n, r) = z.shape();
    if r == 0 || n < r + 2 {
        return Err(Error::InvalidArgument(format!(
            "VAR(1) needs r ≥ 1 and n ≥ r + 2, got n = {n}, r = {r}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "factor series has non-finite values".into(),
        ));
    }
    let m = n - 1;
    let mut x = DMatrix::<f64>::zeros(m, r + 1);
    x.column_mut(0).fill(1.0);
    x.view_mut((0, 1), (m, r)).copy_from(&z.rows(0, m));
    let y = z.rows(1, m).into_owned();

    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= VAR_RANK_RTOL * smax {
        return Err(Error::RankDeficient(format!(
            "VAR(1) regressors are collinear (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &y - &x * &beta;
    let mut residual_cov = resid.transpose() * &resid / m as f64;
    residual_cov = (&residual_cov + residual_cov.transpose()) * 0.5;
    Ok(Var1Model {
        coef: beta.rows(1, r).transpose(),
        intercept: beta.row(0).transpose(),
        residual_cov,
    })
}

/// Settings for [`rolling_forecast`].
#[derive(Debug, Clone)]
pub struct ForecastOptions {
    pub method: Method,
    pub r: usize,
    /// Number of one-step predictions `ñ`.
    pub window: usize,
    pub h0: usize,
    pub penalty: PenaltyConfig,
    /// Explicit tuning grids; the data-driven defaults are used when absent.
    pub grid1: Option<Vec<f64>>,
    pub grid2: Option<Vec<f64>>,
    /// Re-run the BIC search at every origin instead of freezing the
    /// λ chosen on the first one.
    pub retune_each_step: bool,
    /// Estimate loadings on outlier-adjusted data; factors and errors
    /// always use the panel as given.
    pub adjust_outliers: bool,
    pub tune: TuneOptions,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            method: Method::Sparsegroup,
            r: 3,
            window: 100,
            h0: 1,
            penalty: PenaltyConfig::default(),
            grid1: None,
            grid2: None,
            retune_each_step: false,
            adjust_outliers: false,
            tune: TuneOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    /// 1-based row of each predicted observation, ascending.
    pub rows: Vec<usize>,
    /// `ñ × p` predictions in row order.
    pub predictions: DMatrix<f64>,
    pub actual: DMatrix<f64>,
    pub errors: ForecastErrors,
    /// `(λ₁, λ₂)` used at each origin; zeros for the eigen method.
    pub lambdas: Vec<(f64, f64)>,
}

/// Serializable summary written next to the predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub method: Method,
    pub window: usize,
    pub rows: Vec<usize>,
    pub lambdas: Vec<(f64, f64)>,
    pub errors: ForecastErrors,
}

impl ForecastResult {
    pub fn summary(&self, method: Method) -> ForecastSummary {
        ForecastSummary {
            method,
            window: self.rows.len(),
            rows: self.rows.clone(),
            lambdas: self.lambdas.clone(),
            errors: self.errors.clone(),
        }
    }
}

/// Shortest training sample accepted by [`rolling_forecast`].
pub fn min_train_len(r: usize, h0: usize) -> usize {
    (r + 2).max(h0 + 2)
}

/// Predicts each of the last `window` rows from the rows strictly before it.
///
/// At every origin the loadings are re-estimated on the training rows, the
/// factors are extracted by least squares, a VAR(1) is fitted, and the
/// prediction is `Q̂ f̂`. Grids and λ are taken from the first origin unless
/// `retune_each_step` is set.
pub fn rolling_forecast(
    panel: &TimeSeriesPanel,
    groups: &GroupStructure,
    opts: &ForecastOptions,
) -> Result<ForecastResult> {
    let (n, p) = (panel.n(), panel.p());
    let min_train = min_train_len(opts.r, opts.h0);
    if opts.window == 0 || n < opts.window + min_train {
        return Err(Error::InvalidArgument(format!(
            "rolling window {} needs at least {} rows before it, panel has {n}",
            opts.window, min_train
        )));
    }
    if groups.r() != opts.r {
        return Err(Error::InvalidArgument(format!(
            "group structure has {} columns, r = {}",
            groups.r(),
            opts.r
        )));
    }
    let first = n - opts.window;
    let adjusted = if opts.adjust_outliers {
        Some(adjust_outliers(panel))
    } else {
        None
    };
    let train = |t: usize| -> Result<(TimeSeriesPanel, TimeSeriesPanel)> {
        let raw = panel.head(t)?;
        let fit = match &adjusted {
            Some(a) => a.head(t)?,
            None => raw.clone(),
        };
        Ok((raw, fit))
    };
    let at_row = |t: usize| {
        move |e: Error| Error::Forecast {
            row: t + 1,
            source: Box::new(e),
        }
    };

    let frozen: Option<PenaltyConfig> = match (opts.method, opts.retune_each_step) {
        (Method::Eigen, _) | (_, true) => None,
        _ => {
            let (_, fit) = train(first).map_err(at_row(first))?;
            Some(tune_at(&fit, groups, opts).map_err(at_row(first))?.0)
        }
    };

    let step = |t: usize| -> Result<(DVector<f64>, (f64, f64))> {
        let (raw, fit) = train(t)?;
        let (q_hat, lambdas) = match (opts.method, frozen) {
            (Method::Eigen, _) => (
                SpectralBasis::from_panel(&fit, opts.h0, opts.r)?.vectors,
                (0.0, 0.0),
            ),
            (_, Some(cfg)) => {
                let basis = SpectralBasis::from_panel(&fit, opts.h0, opts.r)?;
                let est_opts = EstimateOptions {
                    admm: opts.tune.admm,
                    warm_start: None,
                    starts: opts.tune.starts,
                };
                let est = estimate_loadings(&basis, groups, &cfg, &est_opts)?;
                (est.q_hat, est.lambdas)
            }
            (_, None) => {
                let (cfg, q_hat) = tune_at(&fit, groups, opts)?;
                (q_hat, (cfg.lambda1, cfg.lambda2))
            }
        };
        let factors = extract_factors(&raw, &q_hat)?;
        let var = fit_var1(&factors)?;
        let last = factors.values.row(t - 1).transpose();
        Ok((&q_hat * var.predict(&last), lambdas))
    };
    let steps: Vec<Result<_>> = (first..n)
        .into_par_iter()
        .map(|t| step(t).map_err(at_row(t)))
        .collect();

    let mut predictions = DMatrix::<f64>::zeros(opts.window, p);
    let mut lambdas = Vec::with_capacity(opts.window);
    // the earliest failing origin wins regardless of scheduling
    for (k, step) in steps.into_iter().enumerate() {
        let (x_hat, lam) = step?;
        predictions.row_mut(k).copy_from(&x_hat.transpose());
        lambdas.push(lam);
    }
    let actual = panel.values().rows(first, opts.window).into_owned();
    let errors = forecast_errors(&predictions, &actual)?;
    Ok(ForecastResult {
        rows: (first + 1..=n).collect(),
        predictions,
        actual,
        errors,
        lambdas,
    })
}

/// Runs the BIC search on one training sample and returns the chosen
/// penalty with its loading estimate.
fn tune_at(
    fit: &TimeSeriesPanel,
    groups: &GroupStructure,
    opts: &ForecastOptions,
) -> Result<(PenaltyConfig, DMatrix<f64>)> {
    let basis = SpectralBasis::from_panel(fit, opts.h0, opts.r)?;
    let grid1 = match &opts.grid1 {
        Some(g) => g.clone(),
        None => default_grid1(&basis, &opts.penalty),
    };
    let grid2 = match &opts.grid2 {
        Some(g) => g.clone(),
        None => default_grid2(&basis, groups, &opts.penalty),
    };
    let tune = TuneOptions {
        skip_group_step: opts.method == Method::Sparse,
        ..opts.tune
    };
    let res = tune_lambdas(&basis, fit, groups, &grid1, &grid2, &opts.penalty, &tune)?;
    Ok((
        opts.penalty.with_lambdas(res.lambda1, res.lambda2),
        res.estimate.q_hat,
    ))
}
