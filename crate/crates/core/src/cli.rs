//! Command-line front end. [`execute`] is the whole program; the binary only
//! forwards `std::env::args_os` and exits with its return value.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmOptions;
use crate::artifacts::{save_estimate, write_matrix_csv, write_text, Manifest};
use crate::error::{Error, Result};
use crate::estimator::{extract_factors, resolve_grids, tune_lambdas, Candidate, TuneOptions};
use crate::forecast::{rolling_forecast, ForecastOptions};
use crate::panel::{
    adjust_outliers, apply_transforms, groups_to_json, load_groups, load_panel,
    load_transform_codes, validate_groups, GroupStructure, TimeSeriesPanel,
};
use crate::penalty::PenaltyConfig;
use crate::rng::substream;
use crate::simulation::{
    format_distance_table, replication_data, run_benchmark, write_report, Method, SimulationConfig,
};
use crate::spectral::SpectralBasis;

#[derive(Debug, Parser)]
#[command(
    name = "sgfactor",
    version,
    about = "Sparse-group factor models for time series panels"
)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "SGF_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate simulated panels and their planted loadings.
    Simulate(SimulateArgs),
    /// Estimate a sparse-group loading matrix from a panel.
    Estimate(EstimateArgs),
    /// Rolling one-step-ahead forecasts of the last rows of a panel.
    Forecast(ForecastArgs),
    /// Monte-Carlo comparison of eigen, sparse and sparsegroup estimates.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON with SimulationConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<u8>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Panel CSV, one row per time point.
    #[arg(long)]
    data: PathBuf,
    /// Group JSON with 1-based inclusive ranges.
    #[arg(long)]
    groups: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    h0: usize,
    /// The first CSV row is data, not series labels.
    #[arg(long)]
    no_header: bool,
    /// JSON array of per-series transform codes applied after loading.
    #[arg(long)]
    transforms: Option<PathBuf>,
    /// Estimate loadings on outlier-adjusted data.
    #[arg(long)]
    adjust_outliers: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `auto` for the BIC search, or a fixed value.
    #[arg(long, default_value = "auto")]
    lambda1: String,
    #[arg(long, default_value = "auto")]
    lambda2: String,
    /// `sparse` ignores groups (λ₂ = 0).
    #[arg(long, default_value = "sparsegroup")]
    method: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    window: usize,
    #[arg(long, default_value = "sparsegroup")]
    method: String,
    /// Re-run the λ search at every origin.
    #[arg(long)]
    retune: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// JSON with SimulationConfig fields.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated subset of eigen, sparse, sparsegroup.
    #[arg(long, default_value = "eigen,sparse,sparsegroup")]
    methods: String,
    /// Comma-separated sample sizes; defaults to the config's `n`.
    #[arg(long)]
    ns: Option<String>,
    /// Comma-separated dimensions; defaults to the config's `p`.
    #[arg(long)]
    ps: Option<String>,
    /// Every p ∈ {60, 120, 200} and n ∈ {50, 100, 200, 500} with 500 reps.
    #[arg(long)]
    full_grid: bool,
    /// Warm-start each λ candidate from its neighbour.
    #[arg(long)]
    warm_path: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the program and returns its exit code: 0 on success, 1 on a runtime
/// failure and 2 on a usage error.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return 1;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            1
        }
    }
}

fn error_chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        src = s.source();
    }
    msg
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Forecast(a) => forecast(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn read_sim_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_sim_config(p)?,
        None => SimulationConfig::default(),
    };
    if let Some(v) = a.example {
        cfg.example = v;
    }
    if let Some(v) = a.p {
        cfg.p = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let header: Vec<String> = (1..=cfg.r).map(|i| format!("a{i}")).collect();
    let mut files = Vec::new();
    let mut groups_json = None;
    for rep in 0..cfg.reps {
        let (truth, panel) = replication_data(&cfg, rep)?;
        let name = format!("rep{:04}", rep + 1);
        let dir = a.out.join(&name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        crate::panel::save_panel(&panel, dir.join("panel.csv"))?;
        write_matrix_csv(&dir.join("loadings.csv"), &truth.a_s, &header)?;
        files.push(format!("{name}/panel.csv"));
        files.push(format!("{name}/loadings.csv"));
        groups_json.get_or_insert(groups_to_json(&truth.groups)?);
    }
    if let Some(g) = groups_json {
        write_text(&a.out.join("groups.json"), &(g + "\n"))?;
        files.push("groups.json".into());
    }
    Manifest::new("simulate", &cfg, cfg.seed, files)?.write(&a.out)?;
    Ok(())
}

/// Inputs shared by `estimate` and `forecast`.
struct Loaded {
    raw: TimeSeriesPanel,
    fit: TimeSeriesPanel,
    groups: GroupStructure,
}

fn load_inputs(d: &DataArgs) -> Result<Loaded> {
    if d.r == 0 {
        return Err(Error::InvalidArgument("--r must be at least 1".into()));
    }
    let mut raw = load_panel(&d.data, !d.no_header)?;
    if let Some(t) = &d.transforms {
        raw = apply_transforms(&raw, &load_transform_codes(t)?)?;
    }
    let groups = load_groups(&d.groups, d.r)?;
    let violations = validate_groups(&groups, raw.p(), d.r);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Config(format!(
            "{}: {}",
            d.groups.display(),
            list.join("; ")
        )));
    }
    let fit = if d.adjust_outliers {
        adjust_outliers(&raw)
    } else {
        raw.clone()
    };
    Ok(Loaded { raw, fit, groups })
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse()
}

fn parse_lambda(name: &str, s: &str) -> Result<Option<f64>> {
    if s == "auto" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
        _ => Err(Error::InvalidArgument(format!(
            "--{name} must be `auto` or a non-negative number, got `{s}`"
        ))),
    }
}

fn admm_seed(seed: u64) -> u64 {
    substream(seed, "admm", 0).random()
}

/// Everything that determines an `estimate` run, recorded in its manifest.
#[derive(Debug, Serialize, Deserialize)]
struct EstimateRecord {
    data: PathBuf,
    groups: PathBuf,
    r: usize,
    h0: usize,
    no_header: bool,
    transforms: Option<PathBuf>,
    adjust_outliers: bool,
    method: Method,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    grid1: Vec<f64>,
    grid2: Vec<f64>,
    penalty: PenaltyConfig,
    tune: TuneOptions,
}

#[derive(Debug, Serialize)]
struct TuningLog<'a> {
    lambda1: f64,
    lambda2: f64,
    step1: &'a [Candidate],
    step2: &'a [Candidate],
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    if method == Method::Eigen {
        return Err(Error::InvalidArgument(
            "estimate supports `sparse` and `sparsegroup`".into(),
        ));
    }
    let lambda1 = parse_lambda("lambda1", &a.lambda1)?;
    let mut lambda2 = parse_lambda("lambda2", &a.lambda2)?;
    if method == Method::Sparse {
        lambda2 = Some(0.0);
    }
    let d = &a.data;
    let inputs = load_inputs(d)?;
    let basis = SpectralBasis::from_panel(&inputs.fit, d.h0, d.r)?;
    let penalty = PenaltyConfig::default();
    let (grid1, grid2) = resolve_grids(&basis, &inputs.groups, &penalty, lambda1, lambda2);
    let tune = TuneOptions {
        admm: AdmmOptions {
            seed: admm_seed(d.seed),
            ..AdmmOptions::default()
        },
        skip_group_step: method == Method::Sparse,
        ..TuneOptions::default()
    };
    let res = tune_lambdas(
        &basis,
        &inputs.fit,
        &inputs.groups,
        &grid1,
        &grid2,
        &penalty,
        &tune,
    )?;
    let est = &res.estimate;
    let record = EstimateRecord {
        data: d.data.clone(),
        groups: d.groups.clone(),
        r: d.r,
        h0: d.h0,
        no_header: d.no_header,
        transforms: d.transforms.clone(),
        adjust_outliers: d.adjust_outliers,
        method,
        lambda1,
        lambda2,
        grid1,
        grid2,
        penalty,
        tune,
    };
    let mut manifest = save_estimate(est, &a.out, "estimate", &record, d.seed)?;
    let factors = extract_factors(&inputs.raw, &est.q_hat)?;
    let header: Vec<String> = (1..=d.r).map(|i| format!("f{i}")).collect();
    write_matrix_csv(&a.out.join("factors.csv"), &factors.values, &header)?;
    let log = TuningLog {
        lambda1: res.lambda1,
        lambda2: res.lambda2,
        step1: &res.step1,
        step2: &res.step2,
    };
    write_text(
        &a.out.join("tuning.json"),
        &(serde_json::to_string_pretty(&log)? + "\n"),
    )?;
    manifest.files.push("factors.csv".into());
    manifest.files.push("tuning.json".into());
    manifest.write(&a.out)?;
    println!(
        "lambda1 {} lambda2 {} nnz {} converged {}",
        res.lambda1,
        res.lambda2,
        est.nnz(),
        est.converged()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ForecastRecord {
    data: PathBuf,
    groups: PathBuf,
    r: usize,
    h0: usize,
    no_header: bool,
    transforms: Option<PathBuf>,
    adjust_outliers: bool,
    method: Method,
    window: usize,
    retune: bool,
    penalty: PenaltyConfig,
    tune: TuneOptions,
}

fn forecast(a: ForecastArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    let d = &a.data;
    // outlier adjustment happens inside rolling_forecast so that factors and
    // errors keep using the data as given
    let inputs = load_inputs(&DataArgs {
        adjust_outliers: false,
        data: d.data.clone(),
        groups: d.groups.clone(),
        transforms: d.transforms.clone(),
        ..*d
    })?;
    let opts = ForecastOptions {
        method,
        r: d.r,
        window: a.window,
        h0: d.h0,
        retune_each_step: a.retune,
        adjust_outliers: d.adjust_outliers,
        tune: TuneOptions {
            admm: AdmmOptions {
                seed: admm_seed(d.seed),
                ..AdmmOptions::default()
            },
            ..TuneOptions::default()
        },
        ..ForecastOptions::default()
    };
    let res = rolling_forecast(&inputs.raw, &inputs.groups, &opts)?;
    let header = inputs.raw.series_ids().to_vec();
    write_matrix_csv(&a.out.join("predictions.csv"), &res.predictions, &header)?;
    write_text(
        &a.out.join("errors.json"),
        &(serde_json::to_string_pretty(&res.summary(method))? + "\n"),
    )?;
    let record = ForecastRecord {
        data: d.data.clone(),
        groups: d.groups.clone(),
        r: d.r,
        h0: d.h0,
        no_header: d.no_header,
        transforms: d.transforms.clone(),
        adjust_outliers: d.adjust_outliers,
        method,
        window: a.window,
        retune: a.retune,
        penalty: opts.penalty,
        tune: opts.tune,
    };
    let files = vec!["predictions.csv".into(), "errors.json".into()];
    Manifest::new("forecast", &record, d.seed, files)?.write(&a.out)?;
    println!(
        "mean RMSE {} mean MAE {}",
        res.errors.mean_rmse, res.errors.mean_mae
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("--{flag}: cannot parse `{v}`")))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkRecord {
    config: SimulationConfig,
    methods: Vec<Method>,
    ps: Vec<usize>,
    ns: Vec<usize>,
    tune: TuneOptions,
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut cfg = read_sim_config(&a.config)?;
    let methods: Vec<Method> = a
        .methods
        .split(',')
        .map(|m| parse_method(m.trim()))
        .collect::<Result<_>>()?;
    let (mut ps, mut ns) = (vec![cfg.p], vec![cfg.n]);
    if a.full_grid {
        ps = vec![60, 120, 200];
        ns = vec![50, 100, 200, 500];
        cfg.reps = 500;
    }
    if let Some(s) = &a.ps {
        ps = parse_list("ps", s)?;
    }
    if let Some(s) = &a.ns {
        ns = parse_list("ns", s)?;
    }
    let tune = TuneOptions {
        warm_path: a.warm_path,
        ..TuneOptions::default()
    };
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for &p in &ps {
        for &n in &ns {
            let cell = SimulationConfig { p, n, ..cfg };
            let report = run_benchmark(&cell, &methods, &tune)?;
            let name = format!("p{p}_n{n}");
            write_report(&report, &a.out.join(&name))?;
            for f in ["distance.csv", "confusion.csv", "raw.csv", "report.json"] {
                files.push(format!("{name}/{f}"));
            }
            reports.push(report);
        }
    }
    let table = format_distance_table(&reports);
    write_text(&a.out.join("distance_table.tsv"), &table)?;
    files.push("distance_table.tsv".into());
    let record = BenchmarkRecord {
        config: cfg,
        methods,
        ps,
        ns,
        tune,
    };
    Manifest::new("benchmark", &record, cfg.seed, files)?.write(&a.out)?;
    print!("{table}");
    Ok(())
}
