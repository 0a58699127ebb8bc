//! C ABI for `sgfactor`.
//!
//! Objects cross the boundary as opaque pointers created by `sgf_*_new` or
//! `sgf_*_load` style functions and released with the matching `sgf_*_free`.
//! Every fallible call returns an [`SgfStatus`]; on failure the message is
//! available from [`sgf_last_error`] on the same thread until the next
//! failing call. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use sgfactor::estimator::{resolve_grids, StartRule};
use sgfactor::panel::{blocks_from_sizes, load_groups, load_panel, validate_groups};
use sgfactor::{
    subspace_distance, tune_lambdas, AdmmOptions, Error, GroupStructure, LoadingEstimate,
    PenaltyConfig, SpectralBasis, TimeSeriesPanel, TuneOptions,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed input file or unparsable cell.
    Parse = 3,
    Io = 4,
    /// Rank deficiency, degenerate direction or an undefined BIC.
    Numerical = 5,
    /// No tuning candidate was usable.
    Tuning = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// A T×p panel of observations.
pub struct SgfPanel(TimeSeriesPanel);

/// Contiguous variable groups for each loading column.
pub struct SgfGroups(GroupStructure);

/// A fitted p×r loading matrix with its tuning outcome.
pub struct SgfEstimate {
    est: LoadingEstimate,
    lambda1: f64,
    lambda2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SgfStatus {
    match e {
        Error::Format(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => SgfStatus::Parse,
        Error::Io { .. } => SgfStatus::Io,
        Error::DegenerateDirection(_) | Error::RankDeficient(_) | Error::ZeroResidual => {
            SgfStatus::Numerical
        }
        Error::Tuning(_) => SgfStatus::Tuning,
        Error::Column { source, .. } | Error::Forecast { source, .. } => status_of(source),
        _ => SgfStatus::InvalidArgument,
    }
}

struct Fail(SgfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SgfStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SgfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SgfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(out: *mut *mut T) -> Result<&'a mut *mut T, Fail> {
    out.as_mut().ok_or_else(|| null("out"))
}

unsafe fn slice_arg<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sgf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sgf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a panel from `n * p` row-major values.
///
/// # Safety
/// `data` must point to `n * p` readable doubles and `out` to a writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn sgf_panel_new(
    data: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut SgfPanel,
) -> SgfStatus {
    guard(|| {
        let out = out_arg(out)?;
        let len = n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?;
        let values = slice_arg(data, len, "data")?;
        let panel = TimeSeriesPanel::from_matrix(DMatrix::from_row_slice(n, p, values))?;
        *out = boxed(SgfPanel(panel));
        Ok(())
    })
}

/// Reads a CSV panel; with `has_header` the first row holds series labels.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sgf_panel_load_csv(
    path: *const c_char,
    has_header: bool,
    out: *mut *mut SgfPanel,
) -> SgfStatus {
    guard(|| {
        let out = out_arg(out)?;
        let path = path_arg(path, "path")?;
        *out = boxed(SgfPanel(load_panel(path, has_header)?));
        Ok(())
    })
}

/// Number of time points, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgf_panel_n(panel: *const SgfPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n())
}

/// Number of series, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgf_panel_p(panel: *const SgfPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.p())
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgf_panel_free(panel: *mut SgfPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// The same consecutive blocks of the given sizes for all `r` columns.
///
/// # Safety
/// `sizes` must point to `count` readable values and `out` to a writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn sgf_groups_from_sizes(
    sizes: *const usize,
    count: usize,
    r: usize,
    out: *mut *mut SgfGroups,
) -> SgfStatus {
    guard(|| {
        let out = out_arg(out)?;
        let sizes = slice_arg(sizes, count, "sizes")?;
        if sizes.is_empty() || sizes.contains(&0) || r == 0 {
            return Err(invalid("need r ≥ 1 and at least one non-empty group"));
        }
        *out = boxed(SgfGroups(GroupStructure::shared(
            blocks_from_sizes(sizes),
            r,
        )));
        Ok(())
    })
}

/// Reads group JSON with 1-based inclusive ranges.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sgf_groups_load_json(
    path: *const c_char,
    r: usize,
    out: *mut *mut SgfGroups,
) -> SgfStatus {
    guard(|| {
        let out = out_arg(out)?;
        let path = path_arg(path, "path")?;
        *out = boxed(SgfGroups(load_groups(path, r)?));
        Ok(())
    })
}

/// # Safety
/// `groups` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgf_groups_free(groups: *mut SgfGroups) {
    if !groups.is_null() {
        drop(Box::from_raw(groups));
    }
}

/// Estimates an `r`-column sparse-group loading matrix.
///
/// A NaN `lambda1` or `lambda2` selects that level by BIC over the default
/// grid; any other value must be non-negative and is used as given. The
/// groups must cover `1..=p` for each of the `r` columns.
///
/// # Safety
/// `panel` and `groups` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate(
    panel: *const SgfPanel,
    groups: *const SgfGroups,
    r: usize,
    h0: usize,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
    out: *mut *mut SgfEstimate,
) -> SgfStatus {
    guard(|| {
        let out = out_arg(out)?;
        let panel = &panel.as_ref().ok_or_else(|| null("panel"))?.0;
        let groups = &groups.as_ref().ok_or_else(|| null("groups"))?.0;
        let level = |v: f64, what: &str| -> Result<Option<f64>, Fail> {
            if v.is_nan() {
                Ok(None)
            } else if v.is_finite() && v >= 0.0 {
                Ok(Some(v))
            } else {
                Err(invalid(format!(
                    "{what} must be NaN or a non-negative number"
                )))
            }
        };
        let (l1, l2) = (level(lambda1, "lambda1")?, level(lambda2, "lambda2")?);
        let violations = validate_groups(groups, panel.p(), r);
        if let Some(v) = violations.first() {
            return Err(invalid(format!("invalid groups: {v}")));
        }
        let basis = SpectralBasis::from_panel(panel, h0, r)?;
        let cfg = PenaltyConfig::default();
        let (grid1, grid2) = resolve_grids(&basis, groups, &cfg, l1, l2);
        let opts = TuneOptions {
            admm: AdmmOptions {
                seed,
                ..AdmmOptions::default()
            },
            starts: StartRule::default(),
            ..TuneOptions::default()
        };
        let res = tune_lambdas(&basis, panel, groups, &grid1, &grid2, &cfg, &opts)?;
        *out = boxed(SgfEstimate {
            lambda1: res.lambda1,
            lambda2: res.lambda2,
            est: res.estimate,
        });
        Ok(())
    })
}

/// Rows `p` and columns `r` of the loading matrix.
///
/// # Safety
/// `est` must be a live handle; `p` and `r` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate_shape(
    est: *const SgfEstimate,
    p: *mut usize,
    r: *mut usize,
) -> SgfStatus {
    guard(|| {
        let est = est.as_ref().ok_or_else(|| null("est"))?;
        *p.as_mut().ok_or_else(|| null("p"))? = est.est.p();
        *r.as_mut().ok_or_else(|| null("r"))? = est.est.r();
        Ok(())
    })
}

/// Copies the p×r loading matrix row-major into `buf` of length `len`.
///
/// # Safety
/// `est` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate_loadings(
    est: *const SgfEstimate,
    buf: *mut f64,
    len: usize,
) -> SgfStatus {
    guard(|| {
        let q = &est.as_ref().ok_or_else(|| null("est"))?.est.q_hat;
        if len != q.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, need {}",
                q.len()
            )));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                dst[i * q.ncols() + j] = q[(i, j)];
            }
        }
        Ok(())
    })
}

/// Selected penalty levels.
///
/// # Safety
/// `est` must be a live handle; `lambda1` and `lambda2` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate_lambdas(
    est: *const SgfEstimate,
    lambda1: *mut f64,
    lambda2: *mut f64,
) -> SgfStatus {
    guard(|| {
        let est = est.as_ref().ok_or_else(|| null("est"))?;
        *lambda1.as_mut().ok_or_else(|| null("lambda1"))? = est.lambda1;
        *lambda2.as_mut().ok_or_else(|| null("lambda2"))? = est.lambda2;
        Ok(())
    })
}

/// 1 if every column solve converged, 0 if not, -1 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate_converged(est: *const SgfEstimate) -> i32 {
    est.as_ref().map_or(-1, |e| e.est.converged() as i32)
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgf_estimate_free(est: *mut SgfEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Distance between the column spans of two row-major p×r matrices, in
/// `[0, 1]`.
///
/// # Safety
/// `a` and `b` must each point to `p * r` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sgf_subspace_distance(
    a: *const f64,
    b: *const f64,
    p: usize,
    r: usize,
    out: *mut f64,
) -> SgfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let len = p.checked_mul(r).ok_or_else(|| invalid("p * r overflows"))?;
        if len == 0 {
            return Err(invalid("p and r must be positive"));
        }
        let a = DMatrix::from_row_slice(p, r, slice_arg(a, len, "a")?);
        let b = DMatrix::from_row_slice(p, r, slice_arg(b, len, "b")?);
        *out = subspace_distance(&a, &b)?;
        Ok(())
    })
}
