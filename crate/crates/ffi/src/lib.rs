//! C ABI over `star-core`.
//!
//! Models are passed as opaque `StarModel` handles. Every fallible call
//! returns a `StarStatus`; on failure `star_last_error` gives a message for
//! the calling thread. Output arrays are caller-allocated and their lengths
//! are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use star_core::fit::{fit, v2v, FitOptions};
use star_core::model::{load_model, model_from_json, save_model};
use star_core::{BodyModel, StarError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    BufferSize = 3,
    Parse = 4,
    Validation = 5,
    Format = 6,
    Io = 7,
    Numerical = 8,
    Unreachable = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct StarModel(BodyModel);

/// Scalar outcome of `star_fit`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct StarFitSummary {
    pub v2v: f64,
    pub iterations: usize,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &StarError) -> StarStatus {
    match e {
        StarError::InvalidArgument(_) => StarStatus::InvalidArgument,
        StarError::Parse { .. } => StarStatus::Parse,
        StarError::Validation(_) => StarStatus::Validation,
        StarError::Unreachable { .. } => StarStatus::Unreachable,
        StarError::Format(_) => StarStatus::Format,
        StarError::Numerical { .. } => StarStatus::Numerical,
        StarError::Io { .. } => StarStatus::Io,
    }
}

struct Failure(StarStatus, String);

impl From<StarError> for Failure {
    fn from(e: StarError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StarStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            StarStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(StarStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(model: *const StarModel) -> Result<&'a BodyModel, Failure> {
    model.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(
    data: *mut f64,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [f64], Failure> {
    if len != needed {
        return Err(Failure(
            StarStatus::BufferSize,
            format!("{what} holds {len} values, {needed} required"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn string<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(StarStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn emit_model(out: *mut *mut StarModel, model: BodyModel) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(StarModel(model)));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn star_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model container from `path`. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn star_model_load(path: *const c_char, out: *mut *mut StarModel) -> StarStatus {
    guard(|| {
        let path = string(path, "path")?;
        emit_model(out, load_model(path)?)
    })
}

/// Parses a model container from a JSON string.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn star_model_from_json(json: *const c_char, out: *mut *mut StarModel) -> StarStatus {
    guard(|| {
        let text = string(json, "json")?;
        emit_model(out, model_from_json(text)?)
    })
}

/// # Safety
/// `model` must be a valid handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn star_model_save(model: *const StarModel, path: *const c_char) -> StarStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_model(m, string(path, "path")?)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn star_model_free(model: *mut StarModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn star_model_num_vertices(model: *const StarModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_vertices())
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn star_model_num_joints(model: *const StarModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_joints())
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn star_model_num_betas(model: *const StarModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_betas())
}

/// Posed vertices into `out` (length `3 * num_vertices`). `beta` may be
/// shorter than `num_betas`; missing coefficients are zero.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn star_model_forward(
    model: *const StarModel,
    beta: *const f64,
    beta_len: usize,
    pose: *const f64,
    pose_len: usize,
    out: *mut f64,
    out_len: usize,
) -> StarStatus {
    guard(|| {
        let m = model_ref(model)?;
        let beta = input(beta, beta_len, "beta")?;
        let pose = input(pose, pose_len, "pose")?;
        let out = output(out, out_len, 3 * m.num_vertices(), "out")?;
        out.copy_from_slice(&m.forward_vertices(beta, pose)?);
        Ok(())
    })
}

/// Summed pose correctives into `out` (length `3 * num_vertices`).
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn star_model_pose_correctives(
    model: *const StarModel,
    pose: *const f64,
    pose_len: usize,
    beta2: f64,
    out: *mut f64,
    out_len: usize,
) -> StarStatus {
    guard(|| {
        let m = model_ref(model)?;
        let pose = input(pose, pose_len, "pose")?;
        let out = output(out, out_len, 3 * m.num_vertices(), "out")?;
        out.copy_from_slice(&m.pose_correctives(pose, beta2)?);
        Ok(())
    })
}

/// Non-zero and dense-equivalent corrective parameter counts.
///
/// # Safety
/// `model` must be a valid handle; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn star_model_count_nonzero(
    model: *const StarModel,
    nonzero: *mut usize,
    dense: *mut usize,
) -> StarStatus {
    guard(|| {
        let m = model_ref(model)?;
        if nonzero.is_null() || dense.is_null() {
            return Err(null("count output"));
        }
        let c = m.count_nonzero_params();
        *nonzero = c.nonzero;
        *dense = c.dense;
        Ok(())
    })
}

/// Mean absolute coordinate difference ×1000.
///
/// # Safety
/// `a` and `b` must be valid for `len` values; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn star_v2v(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> StarStatus {
    guard(|| {
        let a = input(a, len, "a")?;
        let b = input(b, len, "b")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = v2v(a, b)?;
        Ok(())
    })
}

/// Fits pose and shape to `target`. `pose` holds the initial pose and
/// receives the fitted one (length `3 * num_joints`); `shape` likewise
/// (length `num_betas`). A negative `shape_coeffs` frees every coefficient.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn star_fit(
    model: *const StarModel,
    target: *const f64,
    target_len: usize,
    pose: *mut f64,
    pose_len: usize,
    shape: *mut f64,
    shape_len: usize,
    shape_coeffs: isize,
    max_iterations: usize,
    summary: *mut StarFitSummary,
) -> StarStatus {
    guard(|| {
        let m = model_ref(model)?;
        let target = input(target, target_len, "target")?;
        let pose = output(pose, pose_len, 3 * m.num_joints(), "pose")?;
        let shape = output(shape, shape_len, m.num_betas(), "shape")?;
        if summary.is_null() {
            return Err(null("summary"));
        }
        let opts = FitOptions {
            max_iterations,
            shape_coeffs: usize::try_from(shape_coeffs).ok(),
            ..FitOptions::default()
        };
        let result = fit(m, target, pose, shape, &opts)?;
        pose.copy_from_slice(&result.pose);
        shape.copy_from_slice(&result.shape);
        *summary = StarFitSummary {
            v2v: result.v2v_error,
            iterations: result.iterations,
            converged: result.converged,
        };
        Ok(())
    })
}
