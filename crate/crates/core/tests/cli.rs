use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgfactor::artifacts::{load_estimate, read_matrix_csv, Manifest};
use sgfactor::subspace_distance;

fn sgfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgfactor"))
        .args(args)
        .env("SGF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path → file bytes for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn help_and_usage_exit_codes() {
    let o = sgfactor(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["simulate", "estimate", "forecast", "benchmark"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }

    let o = sgfactor(&["launch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));

    let o = sgfactor(&["estimate", "--data", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = sgfactor(&[
        "forecast",
        "--data",
        "/no/such/panel.csv",
        "--groups",
        "/no/such/groups.json",
        "--r",
        "3",
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/"), "{}", stderr(&o));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sgfactor(&[
            "simulate",
            "--example",
            "1",
            "--p",
            "60",
            "--n",
            "500",
            "--reps",
            "5",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.len(), 12, "{:?}", sa.keys().collect::<Vec<_>>());
    assert_eq!(sa, sb);

    let m = Manifest::read(&a).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, 7);
    assert_eq!(m.config["n"], 500);
    for f in &m.files {
        assert!(a.join(f).is_file(), "{f}");
    }
    let text = String::from_utf8(sa[Path::new("rep0001/panel.csv")].clone()).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 501);
}

#[test]
fn estimate_and_forecast_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = sgfactor(&[
        "simulate",
        "--n",
        "300",
        "--reps",
        "1",
        "--seed",
        "11",
        "--out",
        s(&sim),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let data = sim.join("rep0001/panel.csv");
    let groups = sim.join("groups.json");

    let est_args = |out: &Path| {
        vec![
            "estimate".to_string(),
            "--data".into(),
            s(&data).into(),
            "--groups".into(),
            s(&groups).into(),
            "--r".into(),
            "3".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for out in [&e1, &e2] {
        let args = est_args(out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = sgfactor(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(snapshot(&e1), snapshot(&e2));

    let saved = load_estimate(&e1).unwrap();
    assert_eq!(saved.q_hat.shape(), (60, 3));
    assert_eq!(saved.manifest.command, "estimate");
    assert_eq!(saved.manifest.seed, 5);
    assert!(saved.diagnostics.lambda1 > 0.0);
    let (truth, _) = read_matrix_csv(&sim.join("rep0001/loadings.csv")).unwrap();
    let d = subspace_distance(&truth, &saved.q_hat).unwrap();
    assert!(d < 0.15, "distance {d}");
    assert!(saved.diagnostics.converged);
    assert_eq!(saved.diagnostics.reports.len(), 3);
    let (factors, header) = read_matrix_csv(&e1.join("factors.csv")).unwrap();
    assert_eq!(factors.shape(), (300, 3));
    assert_eq!(header, ["f1", "f2", "f3"]);
    for file in [
        "loadings.csv",
        "supports.json",
        "diagnostics.json",
        "tuning.json",
    ] {
        assert!(saved.manifest.files.iter().any(|f| f == file), "{file}");
    }

    let fc = dir.path().join("fc");
    let o = sgfactor(&[
        "forecast",
        "--data",
        s(&data),
        "--groups",
        s(&groups),
        "--r",
        "3",
        "--window",
        "4",
        "--method",
        "eigen",
        "--out",
        s(&fc),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (pred, _) = read_matrix_csv(&fc.join("predictions.csv")).unwrap();
    assert_eq!(pred.shape(), (4, 60));
    let errors: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fc.join("errors.json")).unwrap()).unwrap();
    assert_eq!(errors["errors"]["rmse"].as_array().unwrap().len(), 60);
    assert!(errors["errors"]["mean_mae"].as_f64().unwrap() > 0.0);
}

#[test]
fn fixed_lambdas_and_sparse_method() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = sgfactor(&["simulate", "--n", "200", "--reps", "1", "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(0));
    let out = dir.path().join("e");
    let o = sgfactor(&[
        "estimate",
        "--data",
        s(&sim.join("rep0001/panel.csv")),
        "--groups",
        s(&sim.join("groups.json")),
        "--r",
        "3",
        "--method",
        "sparse",
        "--lambda1",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = load_estimate(&out).unwrap();
    assert_eq!(saved.diagnostics.lambda1, 0.01);
    assert_eq!(saved.diagnostics.lambda2, 0.0);

    let o = sgfactor(&[
        "estimate",
        "--data",
        s(&sim.join("rep0001/panel.csv")),
        "--groups",
        s(&sim.join("groups.json")),
        "--r",
        "3",
        "--lambda1=-2",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lambda1"));
}

#[test]
fn benchmark_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"p": 24, "n": 100, "reps": 3, "seed": 2}"#).unwrap();
    let out = dir.path().join("bench");
    let o = sgfactor(&[
        "benchmark",
        "--config",
        s(&cfg),
        "--methods",
        "eigen,sparse",
        "--ns",
        "60,100",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("distance_table.tsv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    // header plus two methods at two sample sizes
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(out.join("p24_n60").is_dir() && out.join("p24_n100").is_dir());
    assert_eq!(Manifest::read(&out).unwrap().command, "benchmark");

    std::fs::write(&cfg, r#"{"p": 24, "bogus": 1}"#).unwrap();
    let o = sgfactor(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}
