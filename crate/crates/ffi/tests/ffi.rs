use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sgfactor::estimator::{resolve_grids, TuneOptions};
use sgfactor::simulation::{replication_data, SimulationConfig};
use sgfactor::{AdmmOptions, PenaltyConfig, SpectralBasis};
use sgfactor_ffi::*;

fn last_error() -> String {
    let p = sgf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(sgf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut panel: *mut SgfPanel = ptr::null_mut();
    let s = unsafe { sgf_panel_new(ptr::null(), 3, 2, &mut panel) };
    assert_eq!(s, SgfStatus::NullPointer);
    assert!(last_error().contains("data"));
    assert!(panel.is_null());

    let data = [1.0, 2.0];
    let s = unsafe { sgf_panel_new(data.as_ptr(), 1, 2, ptr::null_mut()) };
    assert_eq!(s, SgfStatus::NullPointer);

    assert_eq!(unsafe { sgf_panel_n(ptr::null()) }, 0);
    assert_eq!(unsafe { sgf_estimate_converged(ptr::null()) }, -1);
    unsafe {
        sgf_panel_free(ptr::null_mut());
        sgf_groups_free(ptr::null_mut());
        sgf_estimate_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_io_error_naming_path() {
    let path = CString::new("/nonexistent/dir/panel.csv").unwrap();
    let mut panel: *mut SgfPanel = ptr::null_mut();
    let s = unsafe { sgf_panel_load_csv(path.as_ptr(), true, &mut panel) };
    assert_eq!(s, SgfStatus::Io);
    assert!(last_error().contains("/nonexistent/dir/panel.csv"));
}

#[test]
fn csv_panel_loads() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.csv");
    std::fs::write(&file, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut panel: *mut SgfPanel = ptr::null_mut();
    assert_eq!(
        unsafe { sgf_panel_load_csv(path.as_ptr(), true, &mut panel) },
        SgfStatus::Ok
    );
    assert_eq!(unsafe { (sgf_panel_n(panel), sgf_panel_p(panel)) }, (2, 3));
    unsafe { sgf_panel_free(panel) };

    std::fs::write(&file, "1,2\n3,x\n").unwrap();
    let s = unsafe { sgf_panel_load_csv(path.as_ptr(), false, &mut panel) };
    assert_eq!(s, SgfStatus::Parse);
    assert!(last_error().contains("row 2"));
}

#[test]
fn estimate_matches_core_library() {
    let cfg = SimulationConfig {
        n: 200,
        reps: 1,
        seed: 3,
        ..Default::default()
    };
    let (truth, panel) = replication_data(&cfg, 0).unwrap();
    let data = row_major(panel.values());

    let mut h_panel: *mut SgfPanel = ptr::null_mut();
    let mut h_groups: *mut SgfGroups = ptr::null_mut();
    let mut h_est: *mut SgfEstimate = ptr::null_mut();
    let sizes = [10usize, 10, 10, 15, 15];
    unsafe {
        assert_eq!(
            sgf_panel_new(data.as_ptr(), panel.n(), panel.p(), &mut h_panel),
            SgfStatus::Ok
        );
        assert_eq!(
            sgf_groups_from_sizes(sizes.as_ptr(), sizes.len(), 3, &mut h_groups),
            SgfStatus::Ok
        );
        let s = sgf_estimate(h_panel, h_groups, 3, 1, f64::NAN, f64::NAN, 17, &mut h_est);
        assert_eq!(s, SgfStatus::Ok, "{}", last_error());
    }

    let (mut p, mut r) = (0usize, 0usize);
    assert_eq!(
        unsafe { sgf_estimate_shape(h_est, &mut p, &mut r) },
        SgfStatus::Ok
    );
    assert_eq!((p, r), (60, 3));
    let mut buf = vec![0.0; p * r];
    assert_eq!(
        unsafe { sgf_estimate_loadings(h_est, buf.as_mut_ptr(), buf.len()) },
        SgfStatus::Ok
    );
    let (mut l1, mut l2) = (0.0, 0.0);
    assert_eq!(
        unsafe { sgf_estimate_lambdas(h_est, &mut l1, &mut l2) },
        SgfStatus::Ok
    );
    assert_eq!(unsafe { sgf_estimate_converged(h_est) }, 1);

    // same computation through the Rust API
    let basis = SpectralBasis::from_panel(&panel, 1, 3).unwrap();
    let pen = PenaltyConfig::default();
    let (g1, g2) = resolve_grids(&basis, &truth.groups, &pen, None, None);
    let opts = TuneOptions {
        admm: AdmmOptions {
            seed: 17,
            ..AdmmOptions::default()
        },
        ..TuneOptions::default()
    };
    let res = sgfactor::tune_lambdas(&basis, &panel, &truth.groups, &g1, &g2, &pen, &opts).unwrap();
    assert_eq!(buf, row_major(&res.estimate.q_hat));
    assert_eq!((l1, l2), (res.lambda1, res.lambda2));

    let mut short = vec![0.0; 5];
    let s = unsafe { sgf_estimate_loadings(h_est, short.as_mut_ptr(), short.len()) };
    assert_eq!(s, SgfStatus::InvalidArgument);
    assert!(last_error().contains("180"));

    // fixed levels are used as given
    let mut fixed: *mut SgfEstimate = ptr::null_mut();
    unsafe {
        assert_eq!(
            sgf_estimate(h_panel, h_groups, 3, 1, 0.02, 0.0, 17, &mut fixed),
            SgfStatus::Ok
        );
        assert_eq!(sgf_estimate_lambdas(fixed, &mut l1, &mut l2), SgfStatus::Ok);
        sgf_estimate_free(fixed);
    }
    assert_eq!((l1, l2), (0.02, 0.0));

    let bad = unsafe { sgf_estimate(h_panel, h_groups, 3, 1, -1.0, 0.0, 0, &mut fixed) };
    assert_eq!(bad, SgfStatus::InvalidArgument);
    // groups cover 60 series; r = 2 does not match the 3-column structure
    let bad = unsafe { sgf_estimate(h_panel, h_groups, 2, 1, 0.0, 0.0, 0, &mut fixed) };
    assert_eq!(bad, SgfStatus::InvalidArgument);
    assert!(last_error().contains("groups"));

    unsafe {
        sgf_estimate_free(h_est);
        sgf_groups_free(h_groups);
        sgf_panel_free(h_panel);
    }
}

#[test]
fn group_json_and_bad_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("g.json");
    std::fs::write(
        &file,
        r#"{"factors":[{"blocks":[[1,2],[3,4]],"shared":true}]}"#,
    )
    .unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut g: *mut SgfGroups = ptr::null_mut();
    assert_eq!(
        unsafe { sgf_groups_load_json(path.as_ptr(), 2, &mut g) },
        SgfStatus::Ok
    );
    unsafe { sgf_groups_free(g) };

    let sizes = [3usize, 0];
    let s = unsafe { sgf_groups_from_sizes(sizes.as_ptr(), 2, 1, &mut g) };
    assert_eq!(s, SgfStatus::InvalidArgument);
}

#[test]
fn distance_through_the_boundary() {
    let a = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let b = [0.0, 2.0, 3.0, 0.0, 0.0, 0.0];
    let mut d = -1.0;
    assert_eq!(
        unsafe { sgf_subspace_distance(a.as_ptr(), b.as_ptr(), 3, 2, &mut d) },
        SgfStatus::Ok
    );
    assert!(d.abs() < 1e-12);
    let c = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let s = unsafe { sgf_subspace_distance(a.as_ptr(), c.as_ptr(), 3, 2, &mut d) };
    assert_eq!(s, SgfStatus::Numerical, "rank-one input: {}", last_error());
}

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/sgfactor.h")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs"))
        .unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in [
        "typedef struct SgfPanel",
        "typedef struct SgfGroups",
        "typedef struct SgfEstimate",
    ] {
        assert!(header.contains(ty), "{ty}");
    }
    assert!(header.contains("SGF_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header_path())
        .output()
    else {
        eprintln!("no C compiler on PATH, skipping");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
