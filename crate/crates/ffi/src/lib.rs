//! C ABI over the streaming novel-class engine.
//!
//! Engines are opaque `NcEngine` handles created by `nc_engine_new` or
//! `nc_engine_from_checkpoint` and released with `nc_engine_free`. Every
//! fallible call returns an `NcStatus`; on failure a message is available from
//! `nc_last_error` on the same thread until the next failing call. Panics are
//! caught at the boundary and reported as `NC_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use novelclass::model::PriorCounts;
use novelclass::sir::{AssignmentDecision, EngineConfig, EngineState, Label};
use novelclass::{Error, LabeledDataset, NiwParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInput = 3,
    Numerical = 4,
    Io = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcLabelKind {
    /// `label` is a training class id.
    Known = 0,
    /// `label` is the founding sample index of a discovered cluster.
    Discovered = 1,
    /// The sample founds a new cluster; `label` is its own index.
    New = 2,
}

/// One assignment decision.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NcDecision {
    pub index: u64,
    pub kind: NcLabelKind,
    pub label: u64,
    pub p_novel: f64,
    pub unlabeled_mass: f64,
    pub ess: f64,
    pub discovered_clusters: usize,
}

/// Opaque engine handle.
pub struct NcEngine {
    state: EngineState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> NcStatus {
    match e {
        Error::Io(_) => NcStatus::Io,
        Error::Numerical(_) | Error::NotPositiveDefinite(_) | Error::EmptyStats => NcStatus::Numerical,
        Error::InvalidParameter(_) => NcStatus::InvalidArgument,
        _ => NcStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (NcStatus, String)>) -> NcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NcStatus::Internal
        }
    }
}

fn fail(e: Error) -> (NcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NcStatus, String) {
    (NcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (NcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn decision(d: &AssignmentDecision) -> NcDecision {
    let (kind, label) = match d.chosen_label {
        Label::Labeled(id) => (NcLabelKind::Known, u64::from(id)),
        Label::Cluster(k) => (NcLabelKind::Discovered, k),
        Label::New(k) => (NcLabelKind::New, k),
    };
    NcDecision {
        index: d.index,
        kind,
        label,
        p_novel: d.p_novel,
        unlabeled_mass: d.unlabeled_mass,
        ess: d.ess,
        discovered_clusters: d.k_tilde,
    }
}

fn boxed(state: EngineState, out: *mut *mut NcEngine) {
    unsafe { *out = Box::into_raw(Box::new(NcEngine { state })) };
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an engine from a labeled training set.
///
/// `train` holds `n * dim` values row-major, `labels` holds `n` class ids,
/// `mu0` holds `dim` values and `sigma0` holds `dim * dim` values row-major.
/// `uniform_counts` nonzero gives every known class pseudo-count 1 instead of
/// its training size.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_new(
    train: *const f64,
    labels: *const u32,
    n: usize,
    dim: usize,
    mu0: *const f64,
    kappa: f64,
    sigma0: *const f64,
    m: f64,
    alpha: f64,
    particles: usize,
    seed: u64,
    uniform_counts: i32,
    out: *mut *mut NcEngine,
) -> NcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err((NcStatus::InvalidArgument, "dim must be positive".into()));
        }
        let xs = slice(train, n * dim, "train")?;
        let ls = slice(labels, n, "labels")?;
        let mu = slice(mu0, dim, "mu0")?;
        let s0 = slice(sigma0, dim * dim, "sigma0")?;
        let samples = xs.chunks(dim).map(DVector::from_column_slice).collect();
        let data = LabeledDataset::new(dim, samples, ls.to_vec()).map_err(fail)?;
        let niw = NiwParams::new(DVector::from_column_slice(mu), kappa, DMatrix::from_row_slice(dim, dim, s0), m)
            .map_err(fail)?;
        let mut config = EngineConfig::new(niw, alpha, particles);
        config.seed = seed;
        if uniform_counts != 0 {
            config.prior_counts = PriorCounts::Uniform;
        }
        boxed(EngineState::init(config, &data).map_err(fail)?, out);
        Ok(())
    })
}

/// Processes one sample of `dim` values and writes the decision to `out`.
///
/// # Safety
/// `engine` must come from this library; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_step(
    engine: *mut NcEngine,
    x: *const f64,
    dim: usize,
    out: *mut NcDecision,
) -> NcStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err((NcStatus::InvalidArgument, "dim must be positive".into()));
        }
        let x = DVector::from_column_slice(slice(x, dim, "x")?);
        let d = engine.state.step(&x).map_err(fail)?;
        *out = decision(&d);
        Ok(())
    })
}

/// Samples processed so far, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_samples_seen(engine: *const NcEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.state.n_seen())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_dim(engine: *const NcEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.state.dim())
}

/// Serializes the engine to a JSON checkpoint. Release the string with
/// `nc_string_free`.
///
/// # Safety
/// `engine` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_checkpoint(engine: *const NcEngine, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = engine.state.to_checkpoint_string().map_err(fail)?;
        let c = CString::new(s).map_err(|_| (NcStatus::Internal, "checkpoint contains NUL".to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Restores an engine from a JSON checkpoint string.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_from_checkpoint(json: *const c_char, out: *mut *mut NcEngine) -> NcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = str_arg(json, "json")?;
        boxed(EngineState::from_checkpoint_str(s).map_err(fail)?, out);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `engine` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_save(engine: *const NcEngine, path: *const c_char) -> NcStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let path = str_arg(path, "path")?;
        let f = std::fs::File::create(Path::new(path)).map_err(|e| fail(e.into()))?;
        engine
            .state
            .write_checkpoint(std::io::BufWriter::new(f))
            .map_err(fail)
    })
}

/// Reads a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_load(path: *const c_char, out: *mut *mut NcEngine) -> NcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let f = std::fs::File::open(Path::new(path)).map_err(|e| fail(e.into()))?;
        boxed(EngineState::read_checkpoint(std::io::BufReader::new(f)).map_err(fail)?, out);
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_engine_free(engine: *mut NcEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
