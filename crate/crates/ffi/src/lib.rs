//! C interface to `tomo-core`.
//!
//! Every function returns a [`TomoStatus`]. On failure the message is kept per
//! thread and can be read with [`tomo_last_error`]. Objects are opaque handles
//! released with their matching `*_free` function; strings handed out by the
//! library are released with [`tomo_string_free`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tomo_core::cli::io::{import_log, parse_log, tree_from_json, tree_to_json};
use tomo_core::cli::{scenario::recover_from_matrix, RecoverySettings};
use tomo_core::recover::DEFAULT_MIN_RHO;
use tomo_core::{
    accuracy_report, attach_peer, build_covariance_matrix, remove_peer, CovarianceMatrix, Error,
    LogCovariance, MeasurementLog, NodeId, RecoveryConfig, RoutingTree,
};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TomoStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Internal = 4,
    Utf8 = 5,
}

/// A parsed measurement log.
pub struct TomoLog(MeasurementLog);

/// A pairwise covariance matrix in ms².
pub struct TomoCovariance(CovarianceMatrix);

/// An inferred or reference routing tree.
pub struct TomoTree(RoutingTree);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TomoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => TomoStatus::Config,
            4 => TomoStatus::Internal,
            _ => TomoStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(TomoStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TomoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TomoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside tomo".into());
            TomoStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TomoStatus::Utf8, format!("{name} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn obj_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(v);
    Ok(())
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(TomoStatus::Internal, "string contains a nul byte".into()))
}

fn settings(rho: f64) -> RecoverySettings {
    RecoverySettings {
        rho: (rho > 0.0).then_some(rho),
        min_rho: DEFAULT_MIN_RHO,
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tomo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tomo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string obtained from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tomo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a newline-delimited JSON log held in memory.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_log_parse(text: *const c_char, out: *mut *mut TomoLog) -> TomoStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let log = parse_log(text.as_bytes())?;
        put(out, Box::into_raw(Box::new(TomoLog(log))), "out")
    })
}

/// Reads a newline-delimited JSON log from a file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_log_load(path: *const c_char, out: *mut *mut TomoLog) -> TomoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let log = import_log(Path::new(path))?;
        put(out, Box::into_raw(Box::new(TomoLog(log))), "out")
    })
}

/// Number of receivers in the log.
///
/// # Safety
/// `log` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_log_receiver_count(log: *const TomoLog, out: *mut usize) -> TomoStatus {
    guard(|| {
        let log = obj(log, "log")?;
        put(out, log.0.receivers().count(), "out")
    })
}

/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tomo_log_free(log: *mut TomoLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Covariance matrix over every receiver in the log, ordered by id.
///
/// # Safety
/// `log` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_covariance_build(
    log: *const TomoLog,
    out: *mut *mut TomoCovariance,
) -> TomoStatus {
    guard(|| {
        let log = obj(log, "log")?;
        let receivers: Vec<NodeId> = log.0.receivers().cloned().collect();
        let m = build_covariance_matrix(&log.0, &receivers)?;
        put(out, Box::into_raw(Box::new(TomoCovariance(m))), "out")
    })
}

/// Number of receivers (rows) in the matrix.
///
/// # Safety
/// `cov` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_covariance_len(cov: *const TomoCovariance, out: *mut usize) -> TomoStatus {
    guard(|| put(out, obj(cov, "cov")?.0.len(), "out"))
}

/// Entry (i, j) in ms².
///
/// # Safety
/// `cov` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_covariance_get(
    cov: *const TomoCovariance,
    i: usize,
    j: usize,
    out: *mut f64,
) -> TomoStatus {
    guard(|| {
        let m = &obj(cov, "cov")?.0;
        if i >= m.len() || j >= m.len() {
            return Err(Failure(
                TomoStatus::Data,
                format!("index ({i}, {j}) out of range for {} receivers", m.len()),
            ));
        }
        put(out, m.at(i, j), "out")
    })
}

/// Id of receiver `i`. Free the result with [`tomo_string_free`].
///
/// # Safety
/// `cov` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_covariance_receiver(
    cov: *const TomoCovariance,
    i: usize,
    out: *mut *mut c_char,
) -> TomoStatus {
    guard(|| {
        let m = &obj(cov, "cov")?.0;
        let id = m.receivers().get(i).ok_or_else(|| {
            Failure(TomoStatus::Data, format!("index {i} out of range for {} receivers", m.len()))
        })?;
        put(out, owned_string(id.to_string())?, "out")
    })
}

/// # Safety
/// `cov` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tomo_covariance_free(cov: *mut TomoCovariance) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Infers the routing tree rooted at `source`. A `rho` that is not positive
/// selects the threshold from the matrix.
///
/// # Safety
/// `cov` must be a live handle, `source` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_recover(
    cov: *const TomoCovariance,
    source: *const c_char,
    rho: f64,
    out: *mut *mut TomoTree,
) -> TomoStatus {
    guard(|| {
        let m = &obj(cov, "cov")?.0;
        let source = NodeId::from(str_arg(source, "source")?);
        if rho.is_nan() {
            return Err(Failure(TomoStatus::Config, "rho is NaN".into()));
        }
        let (tree, _) = recover_from_matrix(&source, m, &settings(rho))?;
        put(out, Box::into_raw(Box::new(TomoTree(tree))), "out")
    })
}

/// Parses a tree from its nested JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_from_json(json: *const c_char, out: *mut *mut TomoTree) -> TomoStatus {
    guard(|| {
        let tree = tree_from_json(str_arg(json, "json")?)?;
        put(out, Box::into_raw(Box::new(TomoTree(tree))), "out")
    })
}

/// Nested JSON form of the tree. Free the result with [`tomo_string_free`].
///
/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_to_json(tree: *const TomoTree, out: *mut *mut c_char) -> TomoStatus {
    guard(|| {
        let s = tree_to_json(&obj(tree, "tree")?.0)?;
        put(out, owned_string(s)?, "out")
    })
}

/// Number of leaves in the tree.
///
/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_leaf_count(tree: *const TomoTree, out: *mut usize) -> TomoStatus {
    guard(|| put(out, obj(tree, "tree")?.0.leaves().len(), "out"))
}

/// Adds `peer` to the tree using covariances drawn from `log`.
///
/// # Safety
/// `tree` and `log` must be live handles; `peer` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_join(
    tree: *mut TomoTree,
    log: *const TomoLog,
    peer: *const c_char,
    rho: f64,
) -> TomoStatus {
    guard(|| {
        let tree = obj_mut(tree, "tree")?;
        let log = obj(log, "log")?;
        let peer = NodeId::from(str_arg(peer, "peer")?);
        let config = RecoveryConfig::new(rho)?;
        attach_peer(&mut tree.0, &LogCovariance::new(&log.0), &peer, config)?;
        Ok(())
    })
}

/// Removes leaf `peer` from the tree.
///
/// # Safety
/// `tree` must be a live handle; `peer` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_remove(tree: *mut TomoTree, peer: *const c_char) -> TomoStatus {
    guard(|| {
        let tree = obj_mut(tree, "tree")?;
        let peer = NodeId::from(str_arg(peer, "peer")?);
        remove_peer(&mut tree.0, &peer)?;
        Ok(())
    })
}

/// Tomography accuracy of `recovered` against `truth` over the leaves of
/// `recovered`.
///
/// # Safety
/// Both trees must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tomo_accuracy(
    recovered: *const TomoTree,
    truth: *const TomoTree,
    out: *mut f64,
) -> TomoStatus {
    guard(|| {
        let rec = &obj(recovered, "recovered")?.0;
        let truth = &obj(truth, "truth")?.0;
        let x: BTreeSet<NodeId> = rec.leaves().clone();
        put(out, accuracy_report(rec, truth, &x)?.p, "out")
    })
}

/// # Safety
/// `tree` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tomo_tree_free(tree: *mut TomoTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}
