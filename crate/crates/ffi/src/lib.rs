//! C ABI over the `bodyfit` core.
//!
//! Models and fit results are opaque handles created and released through
//! this interface. Every fallible call returns a [`BfStatus`]; the message
//! for the most recent failure on the calling thread is available from
//! [`bf_last_error_message`].
//!
//! Parameter vectors are flat: `[beta | psi | pose_0 | pose_1 | ...]`, six
//! values per joint except the jaw, which takes three Euler angles.
//! Vertex buffers are `x, y, z` triples.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use bodyfit::body_model::{pose_model, synth_model, BodyModel, ModelDims, Parameters, Vec3};
use bodyfit::fitter::{fit, FitProblem, FitResult, Observations};
use bodyfit::gradcheck::{run_all, GradcheckOptions};
use bodyfit::io::{read_artifact, write_artifact, FitConfigFile};
use bodyfit::metrics::{v2v, AlignKind};
use bodyfit::prior::GenderPrior;
use bodyfit::{Error, ErrorClass};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfStatus {
    Ok = 0,
    /// Invalid input or configuration.
    Validation = 1,
    /// Divergence, non-finite values, failed gradient checks.
    Numeric = 2,
    Io = 3,
    NullPointer = 4,
    /// Output buffer shorter than required; nothing was written.
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Alignment applied before measuring vertex error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfAlign {
    /// Similarity (Procrustes) alignment.
    Procrustes = 0,
    /// Translation only.
    Translation = 1,
}

/// Opaque body model.
pub struct BfModel(BodyModel);

/// Opaque fit result.
pub struct BfFitResult(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Small { need: usize, have: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BfStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            match e.class() {
                ErrorClass::Validation => BfStatus::Validation,
                ErrorClass::Numeric => BfStatus::Numeric,
                ErrorClass::Io => BfStatus::Io,
            }
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            BfStatus::NullPointer
        }
        Ok(Err(Fail::Small { need, have })) => {
            set_error(format!("buffer holds {have} elements, {need} required"));
            BfStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::ConfigInvalid(format!("{what} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

unsafe fn opt_path(p: *const c_char, what: &'static str) -> Result<Option<PathBuf>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn write_out(values: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output buffer"));
    }
    if cap < values.len() {
        return Err(Fail::Small {
            need: values.len(),
            have: cap,
        });
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn points(p: *const f64, n: usize, what: &'static str) -> Result<Vec<Vec3>, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = std::slice::from_raw_parts(p, 3 * n);
    Ok(s.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length including the NUL.
#[no_mangle]
pub unsafe extern "C" fn bf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Builds a deterministic synthetic model.
#[no_mangle]
pub unsafe extern "C" fn bf_model_synth(
    seed: u64,
    vertices: usize,
    joints: usize,
    shape: usize,
    expression: usize,
    out: *mut *mut BfModel,
) -> BfStatus {
    guard(|| {
        let m = synth_model(seed, ModelDims::new(vertices, joints, shape, expression))?;
        store(out, BfModel(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn bf_model_load(path: *const c_char, out: *mut *mut BfModel) -> BfStatus {
    guard(|| {
        let m: BodyModel = read_artifact(path_arg(path, "path")?)?;
        m.validate()?;
        store(out, BfModel(m))
    })
}

#[no_mangle]
pub unsafe extern "C" fn bf_model_save(model: *const BfModel, path: *const c_char) -> BfStatus {
    guard(|| Ok(write_artifact(&deref(model, "model")?.0, path_arg(path, "path")?)?))
}

/// Releases a model; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bf_model_free(model: *mut BfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vertex count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn bf_model_num_vertices(model: *const BfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_vertices())
}

#[no_mangle]
pub unsafe extern "C" fn bf_model_num_joints(model: *const BfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_joints())
}

#[no_mangle]
pub unsafe extern "C" fn bf_model_num_faces(model: *const BfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.faces.len())
}

/// Length of the flat parameter vector.
#[no_mangle]
pub unsafe extern "C" fn bf_model_param_len(model: *const BfModel) -> usize {
    model.as_ref().map_or(0, |m| Parameters::zeros(&m.0).to_flat().len())
}

/// Writes `3 * num_faces` 0-based vertex indices.
#[no_mangle]
pub unsafe extern "C" fn bf_model_faces(model: *const BfModel, out: *mut u32, cap: usize) -> BfStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let idx: Vec<u32> = m.faces.iter().flatten().map(|&i| i as u32).collect();
        if out.is_null() {
            return Err(Fail::Null("output buffer"));
        }
        if cap < idx.len() {
            return Err(Fail::Small {
                need: idx.len(),
                have: cap,
            });
        }
        std::ptr::copy_nonoverlapping(idx.as_ptr(), out, idx.len());
        Ok(())
    })
}

/// Poses the model and writes `3 * num_vertices` coordinates. A null
/// `params` means the rest pose with zero shape and expression.
#[no_mangle]
pub unsafe extern "C" fn bf_model_pose(
    model: *const BfModel,
    params: *const f64,
    params_len: usize,
    out_vertices: *mut f64,
    cap: usize,
) -> BfStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let zeros = Parameters::zeros(m);
        let p = if params.is_null() {
            zeros
        } else {
            zeros.with_flat(std::slice::from_raw_parts(params, params_len))?
        };
        let posed = pose_model(m, &p)?;
        write_out(&flatten(&posed.vertices), out_vertices, cap)
    })
}

/// Fits the model to a keypoint file. `config_path` and `prior_path` may be
/// null for defaults.
#[no_mangle]
pub unsafe extern "C" fn bf_fit(
    model: *const BfModel,
    keypoints_path: *const c_char,
    config_path: *const c_char,
    prior_path: *const c_char,
    out: *mut *mut BfFitResult,
) -> BfStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let obs: Observations = read_artifact(path_arg(keypoints_path, "keypoints path")?)?;
        let cfg: FitConfigFile = match opt_path(config_path, "config path")? {
            Some(p) => read_artifact(p)?,
            None => FitConfigFile::default(),
        };
        let prior: GenderPrior = match opt_path(prior_path, "prior path")? {
            Some(p) => read_artifact(p)?,
            None => GenderPrior::standard(m.n_shape),
        };
        let mut problem = FitProblem::new(m, obs, &prior);
        problem.weights = cfg.weights;
        store(out, BfFitResult(fit(&problem, &cfg.config)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn bf_fit_result_loss(result: *const BfFitResult, out: *mut f64) -> BfStatus {
    guard(|| {
        let r = deref(result, "result")?;
        write_out(&[r.0.final_loss], out, 1)
    })
}

/// Writes the fitted flat parameter vector (`bf_model_param_len` values).
#[no_mangle]
pub unsafe extern "C" fn bf_fit_result_params(result: *const BfFitResult, out: *mut f64, cap: usize) -> BfStatus {
    guard(|| write_out(&deref(result, "result")?.0.params.to_flat(), out, cap))
}

#[no_mangle]
pub unsafe extern "C" fn bf_fit_result_save(result: *const BfFitResult, path: *const c_char) -> BfStatus {
    guard(|| Ok(write_artifact(&deref(result, "result")?.0, path_arg(path, "path")?)?))
}

#[no_mangle]
pub unsafe extern "C" fn bf_fit_result_free(result: *mut BfFitResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Mean per-vertex error between two point sets of `n` points each.
#[no_mangle]
pub unsafe extern "C" fn bf_v2v(pred: *const f64, gt: *const f64, n: usize, align: BfAlign, out: *mut f64) -> BfStatus {
    guard(|| {
        let kind = match align {
            BfAlign::Procrustes => AlignKind::Pa,
            BfAlign::Translation => AlignKind::Tr,
        };
        let e = v2v(&points(pred, n, "pred")?, &points(gt, n, "gt")?, kind, None)?;
        write_out(&[e], out, 1)
    })
}

/// Runs every gradient suite over `seeds` seeds. Returns `Numeric` when any
/// check fails; `out_failed` (nullable) receives the number of failing checks.
#[no_mangle]
pub unsafe extern "C" fn bf_gradcheck(seeds: usize, out_failed: *mut usize) -> BfStatus {
    guard(|| {
        let opts = GradcheckOptions {
            seeds,
            ..Default::default()
        };
        let failed = run_all(&opts)?.iter().filter(|r| !r.passed()).count();
        if let Some(o) = out_failed.as_mut() {
            *o = failed;
        }
        if failed > 0 {
            return Err(Fail::Core(Error::NonFiniteComponent(format!("{failed} gradient checks failed"))));
        }
        Ok(())
    })
}
