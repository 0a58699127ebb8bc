//! Planted sparse-group designs and the Monte-Carlo comparison of the
//! eigen, sparse and sparsegroup estimators.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{default_grid1, default_grid2, tune_lambdas, LoadingEstimate, TuneOptions};
use crate::metrics::{sparsity_confusion, subspace_distance, ConfusionSummary};
use crate::panel::{blocks_from_sizes, Block, GroupStructure, TimeSeriesPanel};
use crate::penalty::PenaltyConfig;
use crate::rng::substream;
use crate::spectral::SpectralBasis;

/// Replications whose failure share exceeds this abort the benchmark.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// How nonzero loadings relate to `loading_bound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LoadingTruncation {
    /// Standard normal conditioned on `|a| ≥ bound`.
    #[default]
    AwayFromZero,
    /// Standard normal conditioned on `|a| ≤ bound`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub p: usize,
    pub n: usize,
    pub r: usize,
    pub example: u8,
    pub reps: usize,
    pub seed: u64,
    pub ar_coef: f64,
    pub noise_diag: f64,
    pub noise_offdiag: f64,
    pub loading_bound: f64,
    pub truncation: LoadingTruncation,
    pub burn_in: usize,
    pub h0: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            p: 60,
            n: 500,
            r: 3,
            example: 1,
            reps: 100,
            seed: 1,
            ar_coef: 0.9,
            noise_diag: 1.0,
            noise_offdiag: 0.5,
            loading_bound: 0.1,
            truncation: LoadingTruncation::AwayFromZero,
            burn_in: 200,
            h0: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p == 0 || !self.p.is_multiple_of(12) {
            return bad(format!("p = {} must be a positive multiple of 12", self.p));
        }
        if self.r != 3 {
            return bad(format!(
                "the planted designs have r = 3 factors, not {}",
                self.r
            ));
        }
        if !matches!(self.example, 1 | 2) {
            return bad(format!("example must be 1 or 2, not {}", self.example));
        }
        if self.n < 2 || self.h0 == 0 || self.h0 >= self.n {
            return bad(format!(
                "need n ≥ 2 and 1 ≤ h0 < n (n = {}, h0 = {})",
                self.n, self.h0
            ));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return bad(format!(
                "|ar_coef| = {} must be below 1",
                self.ar_coef.abs()
            ));
        }
        let (d, o) = (self.noise_diag, self.noise_offdiag);
        // eigenvalues d − o (multiplicity p − 1) and d + (p − 1)o
        if !(d > 0.0 && o < d && d + (self.p as f64 - 1.0) * o > 0.0) {
            return bad(format!(
                "noise covariance (diag {d}, offdiag {o}) is not positive definite"
            ));
        }
        if !(self.loading_bound >= 0.0 && self.loading_bound.is_finite()) {
            return bad("loading_bound must be finite and non-negative".into());
        }
        if self.truncation == LoadingTruncation::Literal && self.loading_bound == 0.0 {
            return bad("the literal truncation needs a positive loading_bound".into());
        }
        Ok(())
    }
}

/// A planted loading matrix with its groups and supports.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// p×r, columns ordered by increasing support size.
    pub a_s: DMatrix<f64>,
    pub groups: GroupStructure,
    pub supports: Vec<Vec<usize>>,
    pub group_supports: Vec<Vec<usize>>,
}

impl PlantedTruth {
    /// Support sizes `m_i`.
    pub fn sparsity(&self) -> Vec<usize> {
        self.supports.iter().map(Vec::len).collect()
    }
}

fn draw_loading(rng: &mut impl Rng, bound: f64, truncation: LoadingTruncation) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let keep = match truncation {
            LoadingTruncation::AwayFromZero => z.abs() >= bound,
            LoadingTruncation::Literal => z.abs() <= bound && z != 0.0,
        };
        if keep {
            return z;
        }
    }
}

fn check_p(p: usize) -> Result<()> {
    if p == 0 || !p.is_multiple_of(12) {
        return Err(Error::InvalidArgument(format!(
            "p = {p} must be a positive multiple of 12"
        )));
    }
    Ok(())
}

fn example1_blocks(p: usize) -> Vec<Block> {
    blocks_from_sizes(&[p / 6, p / 6, p / 6, p / 4, p / 4])
}

/// Number of zeroed entries for "a third" of a block.
fn third(d: usize) -> usize {
    (d as f64 / 3.0).round() as usize
}

fn build_truth(
    p: usize,
    groups: GroupStructure,
    masks: [Vec<bool>; 3],
    rng: &mut impl Rng,
    bound: f64,
    truncation: LoadingTruncation,
) -> PlantedTruth {
    let mut a_s = DMatrix::zeros(p, 3);
    for (i, mask) in masks.iter().enumerate() {
        for (j, &on) in mask.iter().enumerate() {
            if on {
                a_s[(j, i)] = draw_loading(rng, bound, truncation);
            }
        }
    }
    let supports = (0..3)
        .map(|i| (0..p).filter(|&j| a_s[(j, i)] != 0.0).collect())
        .collect();
    let group_supports = (0..3)
        .map(|i| {
            groups
                .factor(i)
                .iter()
                .enumerate()
                .filter(|(_, blk)| blk.range().any(|j| a_s[(j, i)] != 0.0))
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    PlantedTruth {
        a_s,
        groups,
        supports,
        group_supports,
    }
}

fn example1_masks(p: usize) -> [Vec<bool>; 2] {
    let blocks = example1_blocks(p);
    let mut a1 = vec![false; p];
    let mut a2 = vec![false; p];
    for (k, blk) in blocks.iter().enumerate() {
        let z = third(blk.len());
        if k < 3 {
            // last third zero
            a1[blk.start..blk.end - z]
                .iter_mut()
                .for_each(|x| *x = true);
        }
        if k < 4 {
            // first third zero
            a2[blk.start + z..blk.end]
                .iter_mut()
                .for_each(|x| *x = true);
        }
    }
    [a1, a2]
}

/// Example 1: five shared groups of sizes p/6, p/6, p/6, p/4, p/4.
///
/// Column 1 is nonzero on groups 1–3 except the last third of each, column 2
/// on groups 1–4 except the first third of each, and column 3 on all of
/// groups 2–5.
pub fn gen_loading_example1(
    p: usize,
    rng: &mut impl Rng,
    bound: f64,
    truncation: LoadingTruncation,
) -> Result<PlantedTruth> {
    check_p(p)?;
    let blocks = example1_blocks(p);
    let [a1, a2] = example1_masks(p);
    let a3: Vec<bool> = (0..p).map(|j| j >= blocks[1].start).collect();
    let groups = GroupStructure::shared(blocks, 3);
    Ok(build_truth(p, groups, [a1, a2, a3], rng, bound, truncation))
}

/// Example 2: columns 1 and 2 as in Example 1; column 3 uses six groups of
/// size p/6 and is nonzero on groups 2, 3, 5 and 6.
pub fn gen_loading_example2(
    p: usize,
    rng: &mut impl Rng,
    bound: f64,
    truncation: LoadingTruncation,
) -> Result<PlantedTruth> {
    check_p(p)?;
    let shared = example1_blocks(p);
    let sixths = blocks_from_sizes(&[p / 6; 6]);
    let [a1, a2] = example1_masks(p);
    let mut a3 = vec![false; p];
    for k in [1, 2, 4, 5] {
        a3[sixths[k].range()].iter_mut().for_each(|x| *x = true);
    }
    let groups = GroupStructure::new(vec![shared.clone(), shared, sixths]);
    Ok(build_truth(p, groups, [a1, a2, a3], rng, bound, truncation))
}

pub fn gen_truth(cfg: &SimulationConfig, rng: &mut impl Rng) -> Result<PlantedTruth> {
    match cfg.example {
        1 => gen_loading_example1(cfg.p, rng, cfg.loading_bound, cfg.truncation),
        2 => gen_loading_example2(cfg.p, rng, cfg.loading_bound, cfg.truncation),
        e => Err(Error::Config(format!("example must be 1 or 2, not {e}"))),
    }
}

/// `xₜ = A fₜ + εₜ` with independent AR(1) factors and equicorrelated
/// Gaussian noise.
///
/// Factors start at zero and run `burn_in` steps before the first kept
/// observation. Each time step draws its factor innovations and then its
/// noise vector, so a shorter panel is a prefix of a longer one from the
/// same generator.
pub fn gen_panel(
    truth: &PlantedTruth,
    cfg: &SimulationConfig,
    rng: &mut impl Rng,
) -> Result<TimeSeriesPanel> {
    cfg.validate()?;
    let (p, r) = truth.a_s.shape();
    if p != cfg.p || r != cfg.r {
        return Err(Error::InvalidArgument(format!(
            "truth is {p}×{r} but the config asks for {}×{}",
            cfg.p, cfg.r
        )));
    }
    let cov = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            cfg.noise_diag
        } else {
            cfg.noise_offdiag
        }
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Config("noise covariance is not positive definite".into()))?;
    let l = chol.l();

    let mut f = DVector::<f64>::zeros(r);
    let mut z = DVector::<f64>::zeros(p);
    let mut eps = DVector::<f64>::zeros(p);
    let mut x = DMatrix::zeros(cfg.n, p);
    for t in 0..cfg.burn_in + cfg.n {
        for k in 0..r {
            f[k] = cfg.ar_coef * f[k] + rng.sample::<f64, _>(StandardNormal);
        }
        for k in 0..p {
            z[k] = rng.sample(StandardNormal);
        }
        if t >= cfg.burn_in {
            eps.gemv(1.0, &l, &z, 0.0);
            eps.gemv(1.0, &truth.a_s, &f, 1.0);
            x.set_row(t - cfg.burn_in, &eps.transpose());
        }
    }
    TimeSeriesPanel::from_matrix(x)
}

/// The truth and panel of replication `rep`.
///
/// Streams are keyed by `(seed, rep)` only, so the panel for a smaller `n`
/// is a prefix of the one for a larger `n`.
pub fn replication_data(
    cfg: &SimulationConfig,
    rep: usize,
) -> Result<(PlantedTruth, TimeSeriesPanel)> {
    let mut lrng = substream(cfg.seed, "loadings", rep as u64);
    let truth = gen_truth(cfg, &mut lrng)?;
    let mut prng = substream(cfg.seed, "panel", rep as u64);
    let panel = gen_panel(&truth, cfg, &mut prng)?;
    Ok((truth, panel))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eigen,
    Sparse,
    Sparsegroup,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Eigen, Method::Sparse, Method::Sparsegroup];

    pub fn name(self) -> &'static str {
        match self {
            Method::Eigen => "eigen",
            Method::Sparse => "sparse",
            Method::Sparsegroup => "sparsegroup",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(Method::Eigen),
            "sparse" => Ok(Method::Sparse),
            "sparsegroup" => Ok(Method::Sparsegroup),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub p: usize,
    pub n: usize,
    pub method: Method,
    pub distance: f64,
    pub lambdas: (f64, f64),
    pub confusion: Option<ConfusionSummary>,
}

/// Direction-solve counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    /// Every solve run during tuning, including excluded grid points.
    pub total: usize,
    pub converged: usize,
    /// Solves behind the reported estimates.
    pub selected_total: usize,
    pub selected_converged: usize,
}

impl SolverStats {
    fn add(&mut self, o: &SolverStats) {
        self.total += o.total;
        self.converged += o.converged;
        self.selected_total += o.selected_total;
        self.selected_converged += o.selected_converged;
    }

    pub fn converged_share(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.converged as f64 / self.total as f64
        }
    }
}

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub p: usize,
    pub n: usize,
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: SimulationConfig,
    pub methods: Vec<Method>,
    pub distance: Vec<MetricSummary>,
    /// `fn_i`, `fp_i`, `f1_i` for each column i (1-based), penalized methods only.
    pub confusion: Vec<MetricSummary>,
    pub replications: Vec<ReplicationResult>,
    /// `(rep, method, message)` for each excluded replication.
    pub failures: Vec<(usize, Method, String)>,
    pub solver: SolverStats,
}

impl BenchmarkReport {
    pub fn distance_mean(&self, method: Method) -> Option<f64> {
        self.distance
            .iter()
            .find(|s| s.method == method)
            .map(|s| s.mean)
    }

    pub fn metric(&self, method: Method, metric: &str) -> Option<&MetricSummary> {
        self.distance
            .iter()
            .chain(&self.confusion)
            .find(|s| s.method == method && s.metric == metric)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

struct RepOutcome {
    results: Vec<ReplicationResult>,
    failures: Vec<(usize, Method, String)>,
    stats: SolverStats,
}

fn penalized_result(
    rep: usize,
    cfg: &SimulationConfig,
    method: Method,
    est: &LoadingEstimate,
    truth: &PlantedTruth,
) -> Result<ReplicationResult> {
    Ok(ReplicationResult {
        rep,
        p: cfg.p,
        n: cfg.n,
        method,
        distance: subspace_distance(&truth.a_s, &est.q_hat)?,
        lambdas: est.lambdas,
        confusion: Some(sparsity_confusion(&est.q_hat, &truth.a_s)?),
    })
}

/// Runs `methods` on replication `rep`.
pub fn run_replication(
    cfg: &SimulationConfig,
    rep: usize,
    methods: &[Method],
    tune: &TuneOptions,
) -> Result<(Vec<ReplicationResult>, SolverStats)> {
    let out = replication(cfg, rep, methods, tune)?;
    if let Some((_, m, msg)) = out.failures.first() {
        return Err(Error::Benchmark(format!(
            "replication {rep}, {}: {msg}",
            m.name()
        )));
    }
    Ok((out.results, out.stats))
}

fn replication(
    cfg: &SimulationConfig,
    rep: usize,
    methods: &[Method],
    tune: &TuneOptions,
) -> Result<RepOutcome> {
    let (truth, panel) = replication_data(cfg, rep)?;
    let basis = SpectralBasis::from_panel(&panel, cfg.h0, cfg.r)?;
    let mut out = RepOutcome {
        results: Vec::new(),
        failures: Vec::new(),
        stats: SolverStats::default(),
    };
    if methods.contains(&Method::Eigen) {
        out.results.push(ReplicationResult {
            rep,
            p: cfg.p,
            n: cfg.n,
            method: Method::Eigen,
            distance: subspace_distance(&truth.a_s, &basis.vectors)?,
            lambdas: (0.0, 0.0),
            confusion: None,
        });
    }
    let want_sparse = methods.contains(&Method::Sparse);
    let want_group = methods.contains(&Method::Sparsegroup);
    if !(want_sparse || want_group) {
        return Ok(out);
    }
    let pen = PenaltyConfig::default();
    let grid1 = default_grid1(&basis, &pen);
    let grid2 = default_grid2(&basis, &truth.groups, &pen);
    let opts = TuneOptions {
        skip_group_step: !want_group,
        admm: crate::admm::AdmmOptions {
            seed: crate::rng::substream(cfg.seed, "admm", rep as u64).random(),
            ..tune.admm
        },
        ..*tune
    };
    match tune_lambdas(&basis, &panel, &truth.groups, &grid1, &grid2, &pen, &opts) {
        Ok(res) => {
            let (total, converged) = res.solve_counts();
            out.stats.total = total;
            out.stats.converged = converged;
            let mut push = |m: Method, est: &LoadingEstimate| -> Result<()> {
                out.stats.selected_total += est.reports.len();
                out.stats.selected_converged += est.reports.iter().filter(|r| r.converged).count();
                out.results
                    .push(penalized_result(rep, cfg, m, est, &truth)?);
                Ok(())
            };
            if want_sparse {
                push(Method::Sparse, &res.step1_estimate)?;
            }
            if want_group {
                push(Method::Sparsegroup, &res.estimate)?;
            }
        }
        Err(e) => {
            for m in [Method::Sparse, Method::Sparsegroup] {
                if methods.contains(&m) {
                    out.failures.push((rep, m, e.to_string()));
                }
            }
        }
    }
    Ok(out)
}

/// Runs every replication of `cfg` for `methods` and aggregates the results.
///
/// Replications run in parallel on the current rayon pool; results are
/// folded in replication order.
pub fn run_benchmark(
    cfg: &SimulationConfig,
    methods: &[Method],
    tune: &TuneOptions,
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if methods.is_empty() || cfg.reps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one method and one replication".into(),
        ));
    }
    let mut methods: Vec<Method> = methods.to_vec();
    methods.sort();
    methods.dedup();
    let outcomes: Vec<RepOutcome> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| replication(cfg, rep, &methods, tune))
        .collect::<Result<_>>()?;

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    let mut solver = SolverStats::default();
    for o in outcomes {
        replications.extend(o.results);
        failures.extend(o.failures);
        solver.add(&o.stats);
    }
    for &m in &methods {
        let failed = failures.iter().filter(|f| f.1 == m).count();
        if failed as f64 > MAX_FAILURE_SHARE * cfg.reps as f64 {
            return Err(Error::Benchmark(format!(
                "{} failed on {failed} of {} replications; first: {}",
                m.name(),
                cfg.reps,
                failures
                    .iter()
                    .find(|f| f.1 == m)
                    .map(|f| f.2.as_str())
                    .unwrap_or("")
            )));
        }
    }

    let mut distance = Vec::new();
    let mut confusion = Vec::new();
    for &m in &methods {
        let rows: Vec<&ReplicationResult> = replications.iter().filter(|r| r.method == m).collect();
        let summary = |metric: String, values: Vec<f64>| {
            let (mean, sd) = mean_sd(&values);
            MetricSummary {
                p: cfg.p,
                n: cfg.n,
                method: m,
                metric,
                mean,
                sd,
                count: values.len(),
            }
        };
        distance.push(summary(
            "distance".into(),
            rows.iter().map(|r| r.distance).collect(),
        ));
        if m == Method::Eigen {
            continue;
        }
        for i in 0..cfg.r {
            let col = |f: fn(&crate::metrics::ColumnConfusion) -> f64| -> Vec<f64> {
                rows.iter()
                    .filter_map(|r| r.confusion.as_ref().map(|c| f(&c.per_column[i])))
                    .collect()
            };
            confusion.push(summary(format!("fn_{}", i + 1), col(|c| c.fn_ as f64)));
            confusion.push(summary(format!("fp_{}", i + 1), col(|c| c.fp as f64)));
            confusion.push(summary(format!("f1_{}", i + 1), col(|c| c.f1)));
        }
        let best: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.confusion.as_ref().and_then(|c| c.best_permutation_f1))
            .collect();
        confusion.push(summary("f1_best_permutation".into(), best));
    }
    Ok(BenchmarkReport {
        config: *cfg,
        methods,
        distance,
        confusion,
        replications,
        failures,
        solver,
    })
}

fn summary_csv(rows: &[MetricSummary]) -> String {
    let mut s = String::from("p,n,method,metric,mean,sd,count\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.p,
            r.n,
            r.method.name(),
            r.metric,
            r.mean,
            r.sd,
            r.count
        );
    }
    s
}

fn raw_csv(report: &BenchmarkReport) -> String {
    let r = report.config.r;
    let mut s = String::from("rep,p,n,method,distance,lambda1,lambda2");
    for i in 1..=r {
        let _ = write!(s, ",fn_{i},fp_{i},f1_{i}");
    }
    s.push('\n');
    for row in &report.replications {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            row.rep,
            row.p,
            row.n,
            row.method.name(),
            row.distance,
            row.lambdas.0,
            row.lambdas.1
        );
        for i in 0..r {
            match &row.confusion {
                Some(c) => {
                    let c = &c.per_column[i];
                    let _ = write!(s, ",{},{},{}", c.fn_, c.fp, c.f1);
                }
                None => s.push_str(",,,"),
            }
        }
        s.push('\n');
    }
    s
}

/// `mean(sd)` rendered with three decimals, as in the published tables.
pub fn format_cell(mean: f64, sd: f64) -> String {
    format!("{mean:.3}({sd:.3})")
}

/// Plain-text distance table, one line per method.
pub fn format_distance_table(reports: &[BenchmarkReport]) -> String {
    let mut s = String::from("p\tn\tmethod\tdistance\n");
    for rep in reports {
        for d in &rep.distance {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                d.p,
                d.n,
                d.method.name(),
                format_cell(d.mean, d.sd)
            );
        }
    }
    s
}

/// Writes `distance.csv`, `confusion.csv`, `raw.csv` and `report.json`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("distance.csv", summary_csv(&report.distance))?;
    write("confusion.csv", summary_csv(&report.confusion))?;
    write("raw.csv", raw_csv(report))?;
    write("report.json", serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

/// Summary of several reports keyed by `(p, n)`.
pub fn index_reports(reports: &[BenchmarkReport]) -> BTreeMap<(usize, usize), &BenchmarkReport> {
    reports
        .iter()
        .map(|r| ((r.config.p, r.config.n), r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::validate_groups;

    fn rng(seed: u64) -> rand_chacha::ChaCha20Rng {
        substream(seed, "test", 0)
    }

    #[test]
    fn example1_pattern_at_p60() {
        let t =
            gen_loading_example1(60, &mut rng(1), 0.1, LoadingTruncation::AwayFromZero).unwrap();
        assert_eq!(t.sparsity(), vec![21, 31, 50]);
        assert!(validate_groups(&t.groups, 60, 3).is_empty());
        assert_eq!(t.groups.sizes(0), vec![10, 10, 10, 15, 15]);
        // a₁: groups 1–3, entries 0..7 of each nonzero
        let nz = |i: usize, j: usize| t.a_s[(j, i)] != 0.0;
        for blk in t.groups.factor(0).iter().take(3) {
            for j in blk.range() {
                assert_eq!(nz(0, j), j < blk.start + 7);
            }
        }
        assert!((30..60).all(|j| !nz(0, j)));
        // a₂: groups 1–4 with the first third zero, group 5 zero
        for (k, blk) in t.groups.factor(1).iter().enumerate() {
            let z = if k < 3 { 3 } else { 5 };
            for j in blk.range() {
                assert_eq!(nz(1, j), k < 4 && j >= blk.start + z);
            }
        }
        // a₃: group 1 zero, groups 2–5 dense
        assert!((0..10).all(|j| !nz(2, j)) && (10..60).all(|j| nz(2, j)));
        assert_eq!(
            t.group_supports,
            vec![vec![0, 1, 2], vec![0, 1, 2, 3], vec![1, 2, 3, 4]]
        );
        assert!(t.a_s.iter().all(|&a| a == 0.0 || a.abs() >= 0.1));
    }

    #[test]
    fn example2_pattern_at_p60() {
        let t =
            gen_loading_example2(60, &mut rng(2), 0.1, LoadingTruncation::AwayFromZero).unwrap();
        assert_eq!(t.groups.count(2), 6);
        assert_eq!(t.groups.sizes(2), vec![10; 6]);
        assert_eq!(t.groups.count(0), 5);
        assert!(validate_groups(&t.groups, 60, 3).is_empty());
        assert_eq!(t.sparsity(), vec![21, 31, 40]);
        assert_eq!(t.group_supports[2], vec![1, 2, 4, 5]);
    }

    #[test]
    fn designs_valid_at_every_p() {
        for p in (12..=240).step_by(12) {
            for ex in [1, 2] {
                let cfg = SimulationConfig {
                    p,
                    example: ex,
                    ..Default::default()
                };
                let t = gen_truth(&cfg, &mut rng(p as u64)).unwrap();
                assert!(validate_groups(&t.groups, p, 3).is_empty());
                let m = t.sparsity();
                assert!(m[0] < m[1] && m[1] < m[2], "p = {p}, example {ex}: {m:?}");
            }
        }
        assert!(
            gen_loading_example1(50, &mut rng(0), 0.1, LoadingTruncation::AwayFromZero).is_err()
        );
        assert!(
            gen_loading_example2(200, &mut rng(0), 0.1, LoadingTruncation::AwayFromZero).is_err()
        );
    }

    #[test]
    fn literal_truncation_bounds_magnitudes() {
        let t = gen_loading_example1(24, &mut rng(3), 0.1, LoadingTruncation::Literal).unwrap();
        assert!(t.a_s.iter().all(|&a| a.abs() <= 0.1));
    }

    #[test]
    fn generation_is_deterministic() {
        let a =
            gen_loading_example1(36, &mut rng(4), 0.1, LoadingTruncation::AwayFromZero).unwrap();
        let b =
            gen_loading_example1(36, &mut rng(4), 0.1, LoadingTruncation::AwayFromZero).unwrap();
        assert_eq!(a, b);
        let cfg = SimulationConfig {
            p: 36,
            n: 40,
            ..Default::default()
        };
        assert_eq!(
            replication_data(&cfg, 3).unwrap().1,
            replication_data(&cfg, 3).unwrap().1
        );
    }

    #[test]
    fn shorter_panel_is_a_prefix() {
        let long = SimulationConfig {
            p: 24,
            n: 120,
            ..Default::default()
        };
        let short = SimulationConfig { n: 50, ..long };
        let (_, a) = replication_data(&long, 2).unwrap();
        let (_, b) = replication_data(&short, 2).unwrap();
        assert_eq!(a.values().rows(0, 50).into_owned(), *b.values());
    }

    #[test]
    fn factor_and_noise_moments() {
        let n = 100_000;
        let cfg = SimulationConfig {
            p: 12,
            n,
            ..Default::default()
        };
        let zero = PlantedTruth {
            a_s: DMatrix::zeros(12, 3),
            groups: GroupStructure::whole(12, 3),
            supports: vec![vec![]; 3],
            group_supports: vec![vec![]; 3],
        };
        let noise = gen_panel(&zero, &cfg, &mut rng(5)).unwrap();
        let x = noise.values();
        let cov = x.transpose() * x / n as f64;
        for i in 0..12 {
            for j in 0..12 {
                let target = if i == j { 1.0 } else { 0.5 };
                assert!(
                    (cov[(i, j)] - target).abs() < 0.05,
                    "({i}, {j}) = {}",
                    cov[(i, j)]
                );
            }
        }

        // loadings e_k pick out factor k; subtracting the noise leaves fₜ
        let mut a = DMatrix::zeros(12, 3);
        for k in 0..3 {
            a[(k, k)] = 1.0;
        }
        let unit = PlantedTruth { a_s: a, ..zero };
        let with = gen_panel(&unit, &cfg, &mut rng(5)).unwrap();
        let f = with.values() - x;
        for k in 0..3 {
            let var = f.column(k).norm_squared() / n as f64;
            let target = 1.0 / (1.0 - 0.81);
            assert!(
                (var / target - 1.0).abs() < 0.05,
                "factor {k} variance {var}"
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig::default().validate().is_ok());
        for bad in [
            SimulationConfig {
                p: 50,
                ..Default::default()
            },
            SimulationConfig {
                ar_coef: 1.0,
                ..Default::default()
            },
            SimulationConfig {
                noise_offdiag: 1.0,
                ..Default::default()
            },
            SimulationConfig {
                example: 3,
                ..Default::default()
            },
            SimulationConfig {
                r: 2,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let json = r#"{"p": 24, "n": 80, "reps": 2, "truncation": "literal"}"#;
        let cfg: SimulationConfig = serde_json::from_str(json).unwrap();
        assert_eq!(
            (cfg.p, cfg.n, cfg.truncation),
            (24, 80, LoadingTruncation::Literal)
        );
        assert!(serde_json::from_str::<SimulationConfig>(r#"{"q": 1}"#).is_err());
    }

    #[test]
    fn small_benchmark_is_reproducible() {
        let cfg = SimulationConfig {
            p: 24,
            n: 100,
            reps: 2,
            seed: 9,
            ..Default::default()
        };
        let a = run_benchmark(&cfg, &Method::ALL, &TuneOptions::default()).unwrap();
        let b = run_benchmark(&cfg, &Method::ALL, &TuneOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replications.len(), 6);
        assert!(a.distance.iter().all(|d| (0.0..=1.0).contains(&d.mean)));
        assert_eq!(raw_csv(&a), raw_csv(&b));
    }

    #[test]
    fn replication_independent_of_others() {
        let cfg = SimulationConfig {
            p: 24,
            n: 60,
            reps: 3,
            seed: 10,
            ..Default::default()
        };
        let all = run_benchmark(&cfg, &[Method::Eigen], &TuneOptions::default()).unwrap();
        let (single, _) =
            run_replication(&cfg, 2, &[Method::Eigen], &TuneOptions::default()).unwrap();
        assert_eq!(all.replications[2], single[0]);
    }
}
