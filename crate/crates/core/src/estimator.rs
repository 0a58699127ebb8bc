//! Sequential sparse-group loading estimates, factor scores, BIC and tuning.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve_direction, AdmmOptions, DirectionProblem, SolverReport};
use crate::error::{Error, Result};
use crate::linalg::{complement_projector, least_squares_scores, varimax};
use crate::panel::{GroupStructure, TimeSeriesPanel};
use crate::penalty::PenaltyConfig;
use crate::spectral::SpectralBasis;

/// Relative RMS residual at or below which the BIC is undefined.
pub const ZERO_RESIDUAL_RTOL: f64 = 1e-12;
/// Points per default tuning grid.
pub const GRID_POINTS: usize = 20;
/// Smallest grid point as a fraction of the largest.
pub const GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingEstimate {
    /// p×r, columns after zero truncation.
    pub q_hat: DMatrix<f64>,
    /// p×r orthonormal basis of the estimated loading space.
    pub s_tilde: DMatrix<f64>,
    /// Nonzero row indices of each column of `q_hat`.
    pub supports: Vec<Vec<usize>>,
    /// Indices of the blocks of each column with at least one nonzero entry.
    pub group_supports: Vec<Vec<usize>>,
    pub lambdas: (f64, f64),
    pub reports: Vec<SolverReport>,
}

impl LoadingEstimate {
    pub fn r(&self) -> usize {
        self.q_hat.ncols()
    }

    pub fn p(&self) -> usize {
        self.q_hat.nrows()
    }

    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }

    pub fn degenerate(&self) -> bool {
        self.reports.iter().any(|r| r.degenerate)
    }

    pub fn nnz(&self) -> usize {
        self.q_hat.iter().filter(|&&x| x != 0.0).count()
    }
}

/// Per-time-point factor scores, n×r.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub values: DMatrix<f64>,
}

/// Which starting directions each column solve tries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StartRule {
    /// Only `Bŝᵢ` for column `i`.
    Corresponding,
    /// Every `Bŝₖ`, k = 1..r, keeping the solution with the lowest penalized
    /// objective.
    AllSpectral,
    /// `Bŝᵢ`, then `B` times each varimax-rotated spectral vector.
    #[default]
    Varimax,
}

#[derive(Debug, Clone, Default)]
pub struct EstimateOptions {
    pub admm: AdmmOptions,
    /// Initial directions (p×r), tried before the spectral vectors.
    pub warm_start: Option<DMatrix<f64>>,
    pub starts: StartRule,
}

/// Starting directions whose absolute cosine with an earlier start exceeds
/// this are skipped.
const DUPLICATE_START_COS: f64 = 0.999;
const VARIMAX_MAX_ITER: usize = 1000;
const VARIMAX_TOL: f64 = 1e-10;

/// Estimates the loading columns one at a time.
///
/// Column 1 solves the direction problem with `G = ŜŜᵀ` and `B = I`. Column
/// `i ≥ 2` uses `B = I − S̃S̃ᵀ` built from the columns already found. Each
/// solve starts from `Bŝᵢ` (or `B` times the warm start) renormalized.
pub fn estimate_loadings(
    basis: &SpectralBasis,
    groups: &GroupStructure,
    cfg: &PenaltyConfig,
    opts: &EstimateOptions,
) -> Result<LoadingEstimate> {
    let (p, r) = (basis.p(), basis.r());
    if groups.r() != r {
        return Err(Error::InvalidArgument(format!(
            "groups describe {} factors but the basis has {r}",
            groups.r()
        )));
    }
    cfg.validate()?;
    if let Some(w) = &opts.warm_start {
        if w.shape() != (p, r) {
            return Err(Error::InvalidArgument(format!(
                "warm start is {:?}, expected ({p}, {r})",
                w.shape()
            )));
        }
    }
    let g = basis.projector();
    let mut q_hat = DMatrix::zeros(p, r);
    let mut s_tilde = DMatrix::<f64>::zeros(p, r);
    let mut reports = Vec::with_capacity(r);
    let mut supports = Vec::with_capacity(r);
    let mut group_supports = Vec::with_capacity(r);

    for i in 0..r {
        let b = if i == 0 {
            DMatrix::identity(p, p)
        } else {
            complement_projector(p, &s_tilde.columns(0, i).into_owned())
        };
        let blocks = groups.factor(i).to_vec();
        let prob = DirectionProblem::new(g.clone(), b, blocks.clone(), *cfg).map_err(|e| {
            Error::Column {
                column: i + 1,
                source: Box::new(e),
            }
        })?;
        let admm = AdmmOptions {
            seed: opts.admm.seed.wrapping_add(i as u64),
            ..opts.admm
        };
        let mut best: Option<crate::admm::DirectionSolution> = None;
        let mut first_err = None;
        for q0 in starting_directions(basis, opts, prob.b(), i) {
            match solve_direction(&prob, &q0, &admm) {
                Ok(sol) => {
                    if better(&sol, best.as_ref()) {
                        best = Some(sol);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let sol = match (best, first_err) {
            (Some(sol), _) => sol,
            (None, Some(e)) => {
                return Err(Error::Column {
                    column: i + 1,
                    source: Box::new(e),
                })
            }
            (None, None) => unreachable!("at least one starting direction is always tried"),
        };
        q_hat.set_column(i, &sol.q);
        s_tilde.set_column(i, &sol.s);
        supports.push((0..p).filter(|&j| sol.q[j] != 0.0).collect());
        group_supports.push(
            blocks
                .iter()
                .enumerate()
                .filter(|(_, blk)| sol.q.as_slice()[blk.range()].iter().any(|&x| x != 0.0))
                .map(|(k, _)| k)
                .collect(),
        );
        reports.push(sol.report);
    }
    Ok(LoadingEstimate {
        q_hat,
        s_tilde,
        supports,
        group_supports,
        lambdas: (cfg.lambda1, cfg.lambda2),
        reports,
    })
}

/// Converged solutions beat non-converged ones, then non-degenerate beat
/// degenerate ones, then the lower objective wins; earlier starts win ties.
fn better(
    sol: &crate::admm::DirectionSolution,
    best: Option<&crate::admm::DirectionSolution>,
) -> bool {
    let Some(b) = best else { return true };
    let key = |s: &crate::admm::DirectionSolution| (s.report.converged, !s.report.degenerate);
    match key(sol).cmp(&key(b)) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => sol.report.objective < b.report.objective,
    }
}

fn starting_directions(
    basis: &SpectralBasis,
    opts: &EstimateOptions,
    b: &DMatrix<f64>,
    i: usize,
) -> Vec<DVector<f64>> {
    let mut raw: Vec<DVector<f64>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        raw.push(b * w.column(i));
    }
    match opts.starts {
        StartRule::Corresponding => raw.push(b * basis.vectors.column(i)),
        StartRule::AllSpectral => {
            raw.push(b * basis.vectors.column(i));
            raw.extend(
                (0..basis.r())
                    .filter(|&k| k != i)
                    .map(|k| b * basis.vectors.column(k)),
            );
        }
        StartRule::Varimax => {
            raw.push(b * basis.vectors.column(i));
            let rotated = varimax(&basis.vectors, VARIMAX_MAX_ITER, VARIMAX_TOL);
            raw.extend(rotated.column_iter().map(|c| b * c));
        }
    }
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for v in raw {
        if v.norm() <= 1e-8 {
            continue;
        }
        let v = v.normalize();
        if starts.iter().all(|u| u.dot(&v).abs() < DUPLICATE_START_COS) {
            starts.push(v);
        }
    }
    if starts.is_empty() {
        // every projected spectral vector vanished; take the best-preserved one
        let (_, v) = (0..basis.r())
            .map(|k| {
                let v = b * basis.vectors.column(k);
                (v.norm(), v)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("basis has at least one column");
        starts.push(v.normalize());
    }
    starts
}

/// `ẑₜ = (Q̂ᵀQ̂)⁻¹Q̂ᵀxₜ` for every time point.
pub fn extract_factors(panel: &TimeSeriesPanel, q_hat: &DMatrix<f64>) -> Result<FactorSeries> {
    if q_hat.nrows() != panel.p() || q_hat.ncols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "loading matrix is {:?} for a panel with {} series",
            q_hat.shape(),
            panel.p()
        )));
    }
    Ok(FactorSeries {
        values: least_squares_scores(panel.values(), q_hat)?,
    })
}

/// `ln((np)⁻¹ Σₜ ‖xₜ − x̂ₜ‖²) + ln(np)/(np) · nnz(Q̂)` with `x̂ₜ` the projection
/// of `xₜ` onto the span of `Q̂`.
pub fn compute_bic(panel: &TimeSeriesPanel, q_hat: &DMatrix<f64>) -> Result<f64> {
    let z = extract_factors(panel, q_hat)?;
    let fitted = &z.values * q_hat.transpose();
    let x = panel.values();
    let np = (panel.n() * panel.p()) as f64;
    let mse = (x - fitted).norm_squared() / np;
    let scale = x.norm_squared() / np;
    if mse <= ZERO_RESIDUAL_RTOL * ZERO_RESIDUAL_RTOL * scale {
        return Err(Error::ZeroResidual);
    }
    let nnz = q_hat.iter().filter(|&&v| v != 0.0).count() as f64;
    Ok(mse.ln() + np.ln() / np * nnz)
}

/// `count` log-spaced points from `GRID_RATIO·max` to `max`, ascending.
pub fn log_grid(max: f64, count: usize) -> Vec<f64> {
    if count == 0 || !(max > 0.0) {
        return Vec::new();
    }
    if count == 1 {
        return vec![max];
    }
    let lo = (GRID_RATIO * max).ln();
    let hi = max.ln();
    (0..count)
        .map(|k| {
            if k + 1 == count {
                max
            } else {
                (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Smallest `λ₁` for which one coordinate pass of the first q-update from
/// the spectral start sets every entry of column 1 to zero: `‖b‖_∞` with
/// `b = (1 + ρ₁ + ρ₂) ŝ₁`.
pub fn lambda1_max(basis: &SpectralBasis, cfg: &PenaltyConfig) -> f64 {
    let s1 = basis.vectors.column(0);
    (1.0 + cfg.rho1 + cfg.rho2) * s1.amax()
}

/// Smallest `λ₂` that zeroes every block of the first unpenalized δ-update
/// of column 1, where `u = (1 + ρ₁ + ρ₂)/(ρ₁ + ρ₂) · ŝ₁`.
pub fn lambda2_max(basis: &SpectralBasis, groups: &GroupStructure, cfg: &PenaltyConfig) -> f64 {
    let s1 = basis.vectors.column(0);
    let c = (1.0 + cfg.rho1 + cfg.rho2) / (cfg.rho1 + cfg.rho2);
    groups
        .factor(0)
        .iter()
        .map(|blk| cfg.rho2 * c * s1.rows(blk.start, blk.len()).norm() / (blk.len() as f64).sqrt())
        .fold(0.0, f64::max)
}

/// Default λ₁ candidates: [`GRID_POINTS`] log-spaced values up to [`lambda1_max`].
pub fn default_grid1(basis: &SpectralBasis, cfg: &PenaltyConfig) -> Vec<f64> {
    log_grid(lambda1_max(basis, cfg), GRID_POINTS)
}

/// Default λ₂ candidates: 0 followed by [`GRID_POINTS`] log-spaced values up
/// to [`lambda2_max`].
pub fn default_grid2(
    basis: &SpectralBasis,
    groups: &GroupStructure,
    cfg: &PenaltyConfig,
) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(log_grid(lambda2_max(basis, groups, cfg), GRID_POINTS));
    g
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `None` when the candidate was excluded.
    pub bic: Option<f64>,
    pub converged: bool,
    pub degenerate: bool,
    pub iterations: usize,
    /// Direction solves run for this candidate and how many met the
    /// stopping rule.
    pub solves: usize,
    pub converged_solves: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub lambda1: f64,
    pub lambda2: f64,
    /// The estimate at `(lambda1, lambda2)`.
    pub estimate: LoadingEstimate,
    /// The estimate at `(lambda1, 0)`, i.e. the end of step 1.
    pub step1_estimate: LoadingEstimate,
    pub step1: Vec<Candidate>,
    pub step2: Vec<Candidate>,
}

impl TuningResult {
    /// `(solves, converged solves)` over every evaluated candidate, counting
    /// the shared λ₂ = 0 point once.
    pub fn solve_counts(&self) -> (usize, usize) {
        let shared = usize::from(self.step2.first().is_some_and(|c| c.lambda2 == 0.0));
        let mut total = (0, 0);
        for c in self.step1.iter().chain(self.step2.iter().skip(shared)) {
            total.0 += c.solves;
            total.1 += c.converged_solves;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub admm: AdmmOptions,
    /// Start each grid point from the previous point's solution and refit the
    /// selected pair from the spectral start. When false every point starts
    /// from the spectral vectors and the selected fit is reused.
    pub warm_path: bool,
    /// Stop after step 1 (λ₂ = 0).
    pub skip_group_step: bool,
    pub starts: StartRule,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            admm: AdmmOptions::default(),
            warm_path: false,
            skip_group_step: false,
            starts: StartRule::Varimax,
        }
    }
}

type Fit = (Candidate, Option<LoadingEstimate>);

fn evaluate(
    basis: &SpectralBasis,
    panel: &TimeSeriesPanel,
    groups: &GroupStructure,
    cfg: PenaltyConfig,
    opts: &EstimateOptions,
) -> Fit {
    let mut cand = Candidate {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        bic: None,
        converged: false,
        degenerate: false,
        iterations: 0,
        solves: 0,
        converged_solves: 0,
        note: None,
    };
    let est = match estimate_loadings(basis, groups, &cfg, opts) {
        Ok(est) => est,
        Err(e) => {
            cand.solves = 1;
            cand.note = Some(e.to_string());
            return (cand, None);
        }
    };
    cand.converged = est.converged();
    cand.degenerate = est.degenerate();
    cand.iterations = est.reports.iter().map(|r| r.iterations).sum();
    cand.solves = est.reports.len();
    cand.converged_solves = est.reports.iter().filter(|r| r.converged).count();
    if !cand.converged {
        cand.note = Some("ADMM did not converge".into());
    } else if cand.degenerate {
        cand.note = Some("penalty zeroed a whole column".into());
    } else {
        match compute_bic(panel, &est.q_hat) {
            Ok(b) => cand.bic = Some(b),
            Err(Error::ZeroResidual) => {
                log::warn!(
                    "zero residual at λ = ({}, {}); never selected",
                    cfg.lambda1,
                    cfg.lambda2
                );
                cand.note = Some("zero residual; BIC treated as +inf".into());
            }
            Err(e) => cand.note = Some(e.to_string()),
        }
    }
    (cand, Some(est))
}

fn run_grid(
    basis: &SpectralBasis,
    panel: &TimeSeriesPanel,
    groups: &GroupStructure,
    cfgs: Vec<PenaltyConfig>,
    opts: &TuneOptions,
) -> Vec<Fit> {
    let cold = EstimateOptions {
        admm: opts.admm,
        warm_start: None,
        starts: opts.starts,
    };
    if !opts.warm_path {
        return cfgs
            .into_par_iter()
            .map(|cfg| evaluate(basis, panel, groups, cfg, &cold))
            .collect();
    }
    let mut out: Vec<Fit> = Vec::with_capacity(cfgs.len());
    let mut warm: Option<DMatrix<f64>> = None;
    for cfg in cfgs {
        let o = EstimateOptions {
            admm: opts.admm,
            warm_start: warm.clone(),
            starts: opts.starts,
        };
        let fit = evaluate(basis, panel, groups, cfg, &o);
        if let Some(est) = &fit.1 {
            if fit.0.converged && !fit.0.degenerate {
                warm = Some(est.q_hat.clone());
            }
        }
        out.push(fit);
    }
    out
}

/// Index of the smallest BIC, ties going to the later (larger λ) entry.
fn select(fits: &[Fit]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (cand, _)) in fits.iter().enumerate() {
        if let Some(b) = cand.bic {
            if best.is_none_or(|(_, bb)| b <= bb) {
                best = Some((k, b));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn selected_estimate(
    basis: &SpectralBasis,
    groups: &GroupStructure,
    cfg: PenaltyConfig,
    fit: Fit,
    opts: &TuneOptions,
) -> Result<LoadingEstimate> {
    if opts.warm_path {
        let cold = EstimateOptions {
            admm: opts.admm,
            warm_start: None,
            starts: opts.starts,
        };
        estimate_loadings(basis, groups, &cfg, &cold)
    } else {
        Ok(fit.1.expect("selected candidates carry an estimate"))
    }
}

fn summarize_failures(fits: &[Fit]) -> String {
    fits.iter()
        .map(|(c, _)| {
            format!(
                "(λ₁ = {:.4e}, λ₂ = {:.4e}): {}",
                c.lambda1,
                c.lambda2,
                c.note.as_deref().unwrap_or("excluded")
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Two-step BIC selection: λ₁ over `grid1` with λ₂ = 0, then λ₂ over
/// `grid2` with λ₁ fixed at the step-1 choice.
///
/// Candidates that fail, do not converge, or collapse a column are excluded.
/// Equal BIC values go to the larger λ.
pub fn tune_lambdas(
    basis: &SpectralBasis,
    panel: &TimeSeriesPanel,
    groups: &GroupStructure,
    grid1: &[f64],
    grid2: &[f64],
    cfg: &PenaltyConfig,
    opts: &TuneOptions,
) -> Result<TuningResult> {
    for (name, grid) in [("grid1", grid1), ("grid2", grid2)] {
        if grid.is_empty() {
            return Err(Error::InvalidArgument(format!("{name} is empty")));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1]))
            || grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite, non-negative and strictly ascending"
            )));
        }
    }
    if panel.p() != basis.p() {
        return Err(Error::InvalidArgument(format!(
            "panel has {} series but the basis has {} rows",
            panel.p(),
            basis.p()
        )));
    }

    let cfgs1: Vec<PenaltyConfig> = grid1.iter().map(|&l| cfg.with_lambdas(l, 0.0)).collect();
    let mut fits1 = run_grid(basis, panel, groups, cfgs1, opts);
    let k1 = select(&fits1).ok_or_else(|| {
        Error::Tuning(format!(
            "no λ₁ candidate was usable: {}",
            summarize_failures(&fits1)
        ))
    })?;
    let lambda1 = grid1[k1];
    let step1: Vec<Candidate> = fits1.iter().map(|(c, _)| c.clone()).collect();
    let fit1 = std::mem::replace(&mut fits1[k1], (step1[k1].clone(), None));
    drop(fits1);
    let step1_estimate =
        selected_estimate(basis, groups, cfg.with_lambdas(lambda1, 0.0), fit1, opts)?;

    if opts.skip_group_step {
        return Ok(TuningResult {
            lambda1,
            lambda2: 0.0,
            estimate: step1_estimate.clone(),
            step1_estimate,
            step1,
            step2: Vec::new(),
        });
    }

    // λ₂ = 0 at the chosen λ₁ is exactly the step-1 fit
    let mut fits2: Vec<Fit> = Vec::with_capacity(grid2.len());
    let rest: &[f64] = if grid2[0] == 0.0 {
        let mut cand = step1[k1].clone();
        cand.lambda2 = 0.0;
        fits2.push((cand, Some(step1_estimate.clone())));
        &grid2[1..]
    } else {
        grid2
    };
    let cfgs2: Vec<PenaltyConfig> = rest.iter().map(|&l| cfg.with_lambdas(lambda1, l)).collect();
    fits2.extend(run_grid(basis, panel, groups, cfgs2, opts));
    let k2 = select(&fits2).ok_or_else(|| {
        Error::Tuning(format!(
            "no λ₂ candidate was usable: {}",
            summarize_failures(&fits2)
        ))
    })?;
    let lambda2 = grid2[k2];
    let step2: Vec<Candidate> = fits2.iter().map(|(c, _)| c.clone()).collect();
    let estimate = if lambda2 == 0.0 {
        step1_estimate.clone()
    } else {
        let fit2 = std::mem::replace(&mut fits2[k2], (step2[k2].clone(), None));
        selected_estimate(
            basis,
            groups,
            cfg.with_lambdas(lambda1, lambda2),
            fit2,
            opts,
        )?
    };
    Ok(TuningResult {
        lambda1,
        lambda2,
        estimate,
        step1_estimate,
        step1,
        step2,
    })
}

/// Grids for [`tune_lambdas`] where `None` means the default grid and a
/// value pins that level to a single point.
pub fn resolve_grids(
    basis: &SpectralBasis,
    groups: &GroupStructure,
    cfg: &PenaltyConfig,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let grid1 = match lambda1 {
        Some(v) => vec![v],
        None => default_grid1(basis, cfg),
    };
    let grid2 = match lambda2 {
        Some(v) => vec![v],
        None => default_grid2(basis, groups, cfg),
    };
    (grid1, grid2)
}
