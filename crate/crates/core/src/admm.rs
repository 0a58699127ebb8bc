//! ADMM solver for one sparse-group loading direction.
//!
//! The direction problem is
//!
//! ```text
//! min_q  ½‖G − B q qᵀ B‖²_F + Σ_j P(|q_j|; λ₁) + Σ_g P(‖q_g‖₂; √d_g λ₂)
//! s.t.   qᵀ B q = 1
//! ```
//!
//! with `G = Ŝ Ŝᵀ` and `B` an orthogonal projector. Splitting `s = B q` and
//! `δ = q` gives the augmented Lagrangian
//!
//! ```text
//! −sᵀG B q + v₁ᵀ(s − Bq) + ρ₁/2 ‖s − Bq‖² + v₂ᵀ(δ − q) + ρ₂/2 ‖δ − q‖²
//!   + Σ_j P(|q_j|; λ₁) + Σ_g P(‖δ_g‖; √d_g λ₂),   sᵀs = 1
//! ```
//!
//! which is minimized cyclically over `s`, `q`, `δ` followed by dual ascent
//! on `v₁`, `v₂`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs};
use crate::panel::Block;
use crate::penalty::{
    group_mcp, group_mcp_update_in_place, mcp, mcp_prox_unchecked, PenaltyConfig,
};

/// Stopping threshold on both primal residuals.
pub const STOP_TOL: f64 = 1e-5;
/// Entries of the final `q` below this magnitude are set to zero.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// One instance of the general direction problem.
#[derive(Debug, Clone)]
pub struct DirectionProblem {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    blocks: Vec<Block>,
    cfg: PenaltyConfig,
    /// `G B + ρ₁ B`; its transpose is `B G + ρ₁ B`.
    s_map: DMatrix<f64>,
}

impl DirectionProblem {
    pub fn new(
        g: DMatrix<f64>,
        b: DMatrix<f64>,
        mut blocks: Vec<Block>,
        cfg: PenaltyConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        blocks.sort_by_key(|blk| blk.start);
        let p = g.nrows();
        if g.shape() != (p, p) || b.shape() != (p, p) || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "G is {:?} and B is {:?}; both must be the same square size",
                g.shape(),
                b.shape()
            )));
        }
        if g.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "G or B has non-finite entries".into(),
            ));
        }
        let g_tol = 1e-10 * max_abs(&g).max(1.0);
        if asymmetry(&g) > g_tol {
            return Err(Error::InvalidArgument("G is not symmetric".into()));
        }
        if asymmetry(&b) > 1e-10 {
            return Err(Error::InvalidArgument("B is not symmetric".into()));
        }
        if max_abs(&(&b * &b - &b)) > 1e-10 {
            return Err(Error::InvalidArgument("B is not idempotent".into()));
        }
        let mut cursor = 0;
        for blk in &blocks {
            if blk.start != cursor || blk.is_empty() {
                return Err(Error::InvalidArgument(
                    "group blocks must be non-empty, contiguous and ordered".into(),
                ));
            }
            cursor = blk.end;
        }
        if cursor != p {
            return Err(Error::InvalidArgument(format!(
                "group blocks cover {cursor} of {p} coordinates"
            )));
        }
        let s_map = &g * &b + &b * cfg.rho1;
        Ok(Self {
            g,
            b,
            blocks,
            cfg,
            s_map,
        })
    }

    pub fn p(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn cfg(&self) -> &PenaltyConfig {
        &self.cfg
    }

    /// Same G, B and groups under different penalty settings.
    pub fn with_cfg(&self, cfg: PenaltyConfig) -> Result<Self> {
        cfg.validate()?;
        let s_map = &self.g * &self.b + &self.b * cfg.rho1;
        Ok(Self {
            cfg,
            s_map,
            ..self.clone()
        })
    }

    /// Penalized objective at `q`.
    pub fn objective(&self, q: &DVector<f64>) -> f64 {
        let bq = &self.b * q;
        let gbq = &self.g * &bq;
        let fit = self.g.norm_squared() - 2.0 * bq.dot(&gbq) + bq.norm_squared().powi(2);
        let entry: f64 = q
            .iter()
            .map(|&x| mcp(x, self.cfg.lambda1, self.cfg.gamma))
            .sum();
        let group: f64 = self
            .blocks
            .iter()
            .map(|blk| {
                group_mcp(
                    &q.as_slice()[blk.range()],
                    blk.len(),
                    self.cfg.lambda2,
                    self.cfg.gamma2,
                )
            })
            .sum();
        0.5 * fit + entry + group
    }
}

/// ADMM iterates for one direction.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub s: DVector<f64>,
    pub q: DVector<f64>,
    pub delta: DVector<f64>,
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
    pub iter: usize,
    /// `(‖s − Bq‖₂, ‖δ − q‖₂)` after each full cycle.
    pub primal_residuals: Vec<(f64, f64)>,
}

impl AdmmState {
    /// `q⁽⁰⁾ = q0`, `δ⁽⁰⁾ = q0`, `v₁⁽⁰⁾ = v₂⁽⁰⁾ = 0`.
    pub fn init(prob: &DirectionProblem, q0: &DVector<f64>) -> Self {
        let bq = &prob.b * q0;
        let s = crate::linalg::unit(&bq).unwrap_or_else(|| bq.clone());
        let p = prob.p();
        Self {
            s,
            q: q0.clone(),
            delta: q0.clone(),
            v1: DVector::zeros(p),
            v2: DVector::zeros(p),
            iter: 0,
            primal_residuals: Vec::new(),
        }
    }
}

/// Outcome of one direction solve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    /// `‖s − Bq‖₂` at the last iterate.
    pub final_residual: f64,
    /// `‖δ − q‖₂` at the last iterate.
    pub final_split_residual: f64,
    pub objective: f64,
    /// The penalized path collapsed to zero and the unpenalized direction was
    /// returned instead.
    pub degenerate: bool,
    pub reinitialized: bool,
    /// Number of q-updates whose coordinate descent hit the sweep cap.
    pub inner_nonconverged: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdmmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub inner_tol: f64,
    pub inner_max_sweeps: usize,
    pub zero_threshold: f64,
    /// Seed for the single re-initialization after a degenerate s-update.
    pub seed: u64,
    pub record_history: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: STOP_TOL,
            inner_tol: 1e-7,
            inner_max_sweeps: 10_000,
            zero_threshold: ZERO_THRESHOLD,
            seed: 0,
            record_history: false,
        }
    }
}

/// `s = (GBq + ρ₁Bq − v₁) / ‖·‖₂`.
pub fn update_s(state: &AdmmState, prob: &DirectionProblem) -> Result<DVector<f64>> {
    let mut s = DVector::zeros(prob.p());
    update_s_into(&mut s, &state.q, &state.v1, prob)?;
    Ok(s)
}

fn update_s_into(
    s: &mut DVector<f64>,
    q: &DVector<f64>,
    v1: &DVector<f64>,
    prob: &DirectionProblem,
) -> Result<()> {
    s.copy_from(v1);
    s.gemv(1.0, &prob.s_map, q, -1.0);
    let norm = s.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateDirection(
            "s-update numerator GBq + ρ₁Bq − v₁ vanished".into(),
        ));
    }
    *s /= norm;
    Ok(())
}

/// The quadratic `ρ₁B + ρ₂I = RᵀR` with its upper-triangular factor.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    /// Upper triangular with positive diagonal.
    pub r: DMatrix<f64>,
    /// `RᵀR`.
    pub gram: DMatrix<f64>,
}

/// Cholesky factor `R` (upper triangular) with `RᵀR = ρ₁B + ρ₂I`.
pub fn factorize_quadratic(b: &DMatrix<f64>, rho1: f64, rho2: f64) -> Result<QuadraticForm> {
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::Config(
            "augmentation weights must be positive".into(),
        ));
    }
    let p = b.nrows();
    let a = b * rho1 + DMatrix::identity(p, p) * rho2;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("ρ₁B + ρ₂I is not positive definite".into()))?;
    let r = chol.l().transpose();
    let gram = r.transpose() * &r;
    Ok(QuadraticForm { r, gram })
}

/// Result of one penalized least-squares q-update.
#[derive(Debug, Clone)]
pub struct QUpdate {
    pub q: DVector<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Minimizes `½‖R⁻ᵀb − Rq‖² + Σ_j P(|q_j|; λ₁)` by cyclic coordinate descent
/// from `warm`. With `λ₁ = 0` the minimizer is computed by two triangular
/// solves.
pub fn update_q(
    quad: &QuadraticForm,
    b: &DVector<f64>,
    cfg: &PenaltyConfig,
    warm: &DVector<f64>,
    inner_tol: f64,
    max_sweeps: usize,
) -> QUpdate {
    let mut q = warm.clone();
    let mut resid = DVector::zeros(b.len());
    let (sweeps, converged) =
        update_q_in_place(&mut q, &mut resid, quad, b, cfg, inner_tol, max_sweeps);
    QUpdate {
        q,
        sweeps,
        converged,
    }
}

fn update_q_in_place(
    q: &mut DVector<f64>,
    resid: &mut DVector<f64>,
    quad: &QuadraticForm,
    b: &DVector<f64>,
    cfg: &PenaltyConfig,
    inner_tol: f64,
    max_sweeps: usize,
) -> (usize, bool) {
    if cfg.lambda1 == 0.0 {
        let y = quad
            .r
            .tr_solve_upper_triangular(b)
            .expect("R has a positive diagonal");
        let x = quad
            .r
            .solve_upper_triangular(&y)
            .expect("R has a positive diagonal");
        q.copy_from(&x);
        return (0, true);
    }
    let p = b.len();
    let a = &quad.gram;
    // resid = b − A q
    resid.copy_from(b);
    resid.gemv(-1.0, a, q, 1.0);
    for sweep in 1..=max_sweeps {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let ajj = a[(j, j)];
            let z = q[j] + resid[j] / ajj;
            let new = mcp_prox_unchecked(z, cfg.lambda1, cfg.gamma, ajj);
            let change = new - q[j];
            if change != 0.0 {
                q[j] = new;
                resid.axpy(-change, &a.column(j), 1.0);
                max_change = max_change.max(change.abs());
            }
        }
        if max_change < inner_tol {
            return (sweep, true);
        }
    }
    (max_sweeps, false)
}

/// `δ_g` from the group MCP update at `u = q − v₂/ρ₂`, block by block.
pub fn update_delta(
    q_new: &DVector<f64>,
    v2: &DVector<f64>,
    blocks: &[Block],
    cfg: &PenaltyConfig,
) -> DVector<f64> {
    let mut delta = DVector::zeros(q_new.len());
    update_delta_into(&mut delta, q_new, v2, blocks, cfg);
    delta
}

fn update_delta_into(
    delta: &mut DVector<f64>,
    q_new: &DVector<f64>,
    v2: &DVector<f64>,
    blocks: &[Block],
    cfg: &PenaltyConfig,
) {
    delta.copy_from(q_new);
    delta.axpy(-1.0 / cfg.rho2, v2, 1.0);
    for blk in blocks {
        group_mcp_update_in_place(&mut delta.as_mut_slice()[blk.range()], blk.len(), cfg);
    }
}

/// `v₁ + ρ₁(s − Bq)` and `v₂ + ρ₂(δ − q)` at the current iterates.
pub fn update_duals(state: &AdmmState, prob: &DirectionProblem) -> (DVector<f64>, DVector<f64>) {
    let bq = &prob.b * &state.q;
    let v1 = &state.v1 + (&state.s - bq) * prob.cfg.rho1;
    let v2 = &state.v2 + (&state.delta - &state.q) * prob.cfg.rho2;
    (v1, v2)
}

/// Converged direction with its report.
#[derive(Debug, Clone)]
pub struct DirectionSolution {
    /// Loading direction after zero truncation.
    pub q: DVector<f64>,
    /// `Bq / ‖Bq‖₂`.
    pub s: DVector<f64>,
    pub report: SolverReport,
    /// Residual history when requested.
    pub history: Vec<(f64, f64)>,
}

#[allow(clippy::large_enum_variant)]
enum RunOutcome {
    Finished(AdmmState, usize, bool),
    Collapsed,
}

fn run_admm(
    prob: &DirectionProblem,
    quad: &QuadraticForm,
    q0: &DVector<f64>,
    opts: &AdmmOptions,
) -> Result<RunOutcome> {
    let p = prob.p();
    let cfg = prob.cfg;
    let mut st = AdmmState::init(prob, q0);
    let mut b = DVector::zeros(p);
    let mut bq = DVector::zeros(p);
    let mut resid = DVector::zeros(p);
    let mut inner_nonconverged = 0usize;
    let mut converged = false;
    for iter in 1..=opts.max_iter {
        update_s_into(&mut st.s, &st.q, &st.v1, prob)?;

        // b = (BG + ρ₁B)s + Bv₁ + ρ₂δ + v₂
        b.copy_from(&st.v2);
        b.axpy(cfg.rho2, &st.delta, 1.0);
        b.gemv(1.0, &prob.b, &st.v1, 1.0);
        b.gemv_tr(1.0, &prob.s_map, &st.s, 1.0);
        let (_, ok) = update_q_in_place(
            &mut st.q,
            &mut resid,
            quad,
            &b,
            &cfg,
            opts.inner_tol,
            opts.inner_max_sweeps,
        );
        if !ok {
            inner_nonconverged += 1;
        }
        if st.q.iter().all(|&x| x == 0.0) {
            return Ok(RunOutcome::Collapsed);
        }

        update_delta_into(&mut st.delta, &st.q, &st.v2, &prob.blocks, &cfg);

        bq.gemv(1.0, &prob.b, &st.q, 0.0);
        // v₁ += ρ₁(s − Bq), v₂ += ρ₂(δ − q)
        st.v1.axpy(cfg.rho1, &st.s, 1.0);
        st.v1.axpy(-cfg.rho1, &bq, 1.0);
        st.v2.axpy(cfg.rho2, &st.delta, 1.0);
        st.v2.axpy(-cfg.rho2, &st.q, 1.0);

        let r1 = st.s.metric_distance(&bq);
        let r2 = st.delta.metric_distance(&st.q);
        st.iter = iter;
        if opts.record_history || iter == opts.max_iter {
            st.primal_residuals.push((r1, r2));
        }
        if r1 <= opts.tol && r2 <= opts.tol {
            if !opts.record_history {
                st.primal_residuals.push((r1, r2));
            }
            converged = true;
            break;
        }
    }
    Ok(RunOutcome::Finished(st, inner_nonconverged, converged))
}

/// Runs the cycle `s → q → δ → v₁ → v₂` from `q0` until both
/// `‖s − Bq‖₂` and `‖δ − q‖₂` fall to `opts.tol`, or `opts.max_iter`.
///
/// The returned `q` has entries below `opts.zero_threshold` set to zero and
/// every block whose `δ` block is exactly zero set to zero. If the penalized
/// path collapses to `q = 0` the unpenalized direction is returned with
/// `report.degenerate` set.
pub fn solve_direction(
    prob: &DirectionProblem,
    q0: &DVector<f64>,
    opts: &AdmmOptions,
) -> Result<DirectionSolution> {
    let p = prob.p();
    if q0.len() != p {
        return Err(Error::InvalidArgument(format!(
            "initial direction has length {}, expected {p}",
            q0.len()
        )));
    }
    if !((&prob.b * q0).norm() > 0.0) {
        return Err(Error::InvalidArgument("B q0 is zero".into()));
    }
    let quad = factorize_quadratic(&prob.b, prob.cfg.rho1, prob.cfg.rho2)?;

    let mut reinitialized = false;
    let outcome = match run_admm(prob, &quad, q0, opts) {
        Err(Error::DegenerateDirection(_)) => {
            reinitialized = true;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let scale = 1e-2 / (p as f64).sqrt();
            let noise = DVector::from_fn(p, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            });
            let perturbed = &prob.b * (q0 / (&prob.b * q0).norm() + noise);
            run_admm(prob, &quad, &perturbed, opts)?
        }
        other => other?,
    };

    let (state, inner_nonconverged, converged) = match outcome {
        RunOutcome::Collapsed => return unpenalized_fallback(prob, q0, opts, reinitialized),
        RunOutcome::Finished(st, inner, conv) => (st, inner, conv),
    };

    let mut q = state.q.clone();
    for blk in &prob.blocks {
        if state.delta.as_slice()[blk.range()]
            .iter()
            .all(|&x| x == 0.0)
        {
            q.as_mut_slice()[blk.range()]
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }
    q.iter_mut()
        .filter(|x| x.abs() < opts.zero_threshold)
        .for_each(|x| *x = 0.0);
    let bq = &prob.b * &q;
    let Some(s) = crate::linalg::unit(&bq) else {
        return unpenalized_fallback(prob, q0, opts, reinitialized);
    };
    let (r1, r2) = state
        .primal_residuals
        .last()
        .copied()
        .unwrap_or((f64::NAN, f64::NAN));
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "ADMM stopped at {} iterations with residuals ({r1:.2e}, {r2:.2e})",
            opts.max_iter
        ));
    }
    if inner_nonconverged > 0 {
        warnings.push(format!(
            "coordinate descent hit the sweep cap in {inner_nonconverged} q-updates"
        ));
    }
    let report = SolverReport {
        converged,
        iterations: state.iter,
        final_residual: r1,
        final_split_residual: r2,
        objective: prob.objective(&q),
        degenerate: false,
        reinitialized,
        inner_nonconverged,
        warnings,
    };
    Ok(DirectionSolution {
        q,
        s,
        report,
        history: state.primal_residuals,
    })
}

fn unpenalized_fallback(
    prob: &DirectionProblem,
    q0: &DVector<f64>,
    opts: &AdmmOptions,
    reinitialized: bool,
) -> Result<DirectionSolution> {
    let cfg = prob.cfg.with_lambdas(0.0, 0.0);
    if prob.cfg == cfg {
        return Err(Error::DegenerateDirection(
            "unpenalized direction collapsed to zero".into(),
        ));
    }
    let plain = prob.with_cfg(cfg)?;
    let mut sol = solve_direction(&plain, q0, opts)?;
    sol.report.degenerate = true;
    sol.report.reinitialized |= reinitialized;
    sol.report.objective = prob.objective(&sol.q);
    sol.report.warnings.insert(
        0,
        format!(
            "penalties (λ₁ = {}, λ₂ = {}) zeroed the whole direction; returned the unpenalized direction",
            prob.cfg.lambda1, prob.cfg.lambda2
        ),
    );
    Ok(sol)
}
