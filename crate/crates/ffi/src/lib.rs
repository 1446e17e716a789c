//! C ABI over `cgarom`: load a trained checkpoint, query it at arbitrary
//! points, read datasets and compute test errors.
//!
//! Every fallible function returns a [`CgaromStatus`]; the message of the
//! most recent failure on the calling thread is available through
//! [`cgarom_last_error`]. Handles are opaque and must be released with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use cgarom::dataset::{Dataset, SplitName};
use cgarom::model::{CgaRom, Checkpoint};
use cgarom::numerics::Tensor;
use cgarom::training::evaluate;
use cgarom::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgaromStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Bad argument, shape mismatch or violated precondition.
    InvalidArgument = 2,
    /// I/O failure, corrupt file or version mismatch.
    Io = 3,
    /// Non-finite values in the computation.
    Numerical = 4,
    /// The output buffer is too small; the message names the required length.
    BufferTooSmall = 5,
    /// Internal panic caught at the boundary.
    Panic = 6,
}

/// Trained model handle.
pub struct CgaromModel {
    rom: CgaRom,
}

/// Dataset handle.
pub struct CgaromDataset {
    ds: Dataset,
}

/// Shape information of a model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CgaromModelInfo {
    pub n_basis: usize,
    pub latent: usize,
    pub channels: usize,
    pub dim: usize,
    pub mu_dim: usize,
    pub geo_dim: usize,
    pub has_time: bool,
    pub num_params: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CgaromStatus {
    match e.exit_code() {
        3 => CgaromStatus::Io,
        4 => CgaromStatus::Numerical,
        _ => CgaromStatus::InvalidArgument,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Buffer(&'static str, usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, recording failures and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CgaromStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CgaromStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            CgaromStatus::NullPointer
        }
        Ok(Err(Failure::Buffer(what, needed))) => {
            set_error(&format!("{what} needs {needed} elements"));
            CgaromStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic");
            CgaromStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(Failure::Buffer(what, needed));
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, needed))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

/// Message of the last failure on this thread (empty after a success).
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn cgarom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cgarom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_load(path: *const c_char, out: *mut *mut CgaromModel) -> CgaromStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = path_arg(path, "path")?;
        let rom = Checkpoint::load(&path)?.rom;
        *out = Box::into_raw(Box::new(CgaromModel { rom }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`cgarom_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_free(model: *mut CgaromModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_info(model: *const CgaromModel, out: *mut CgaromModelInfo) -> CgaromStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let c = m.rom.config();
        *out = CgaromModelInfo {
            n_basis: c.n_basis,
            latent: c.latent,
            channels: c.channels,
            dim: c.dim,
            mu_dim: c.mu_dim,
            geo_dim: c.geo_dim,
            has_time: c.has_time,
            num_params: m.rom.params().numel(),
        };
        Ok(())
    })
}

/// Predicts the field at `n_points` points (row-major `n_points × dim`) of
/// the geometry `xi` for parameters `mu` and optional time `*t` (null when
/// the model has no time input). Writes `n_points × channels` values.
///
/// # Safety
/// Every pointer must reference at least the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_infer(
    model: *const CgaromModel,
    t: *const f64,
    mu: *const f64,
    mu_len: usize,
    xi: *const f64,
    xi_len: usize,
    points: *const f64,
    n_points: usize,
    out: *mut f64,
    out_len: usize,
) -> CgaromStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let c = m.rom.config();
        let mu = slice_arg(mu, mu_len, "mu")?;
        let xi = slice_arg(xi, xi_len, "xi")?;
        let pts = slice_arg(points, n_points * c.dim, "points")?;
        let out = out_slice(out, out_len, n_points * c.channels, "out")?;
        let t = t.as_ref().copied();
        let pts = Tensor::matrix(n_points, c.dim, pts.to_vec())?;
        let u = m.rom.forward_infer(t, mu, xi, &pts)?;
        out.copy_from_slice(u.data());
        Ok(())
    })
}

/// Latent code `φ(t, μ, ξ)`; writes `latent` values.
///
/// # Safety
/// Every pointer must reference at least the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_reduce(
    model: *const CgaromModel,
    t: *const f64,
    mu: *const f64,
    mu_len: usize,
    xi: *const f64,
    xi_len: usize,
    out: *mut f64,
    out_len: usize,
) -> CgaromStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let mu = slice_arg(mu, mu_len, "mu")?;
        let xi = slice_arg(xi, xi_len, "xi")?;
        let out = out_slice(out, out_len, m.rom.config().latent, "out")?;
        let z = m.rom.reduce_map(t.as_ref().copied(), mu, xi)?;
        out.copy_from_slice(&z);
        Ok(())
    })
}

/// Opens a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cgarom_dataset_open(dir: *const c_char, out: *mut *mut CgaromDataset) -> CgaromStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let dir = path_arg(dir, "dir")?;
        let ds = Dataset::read(&dir)?;
        *out = Box::into_raw(Box::new(CgaromDataset { ds }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`cgarom_dataset_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cgarom_dataset_free(ds: *mut CgaromDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cgarom_dataset_len(ds: *const CgaromDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.ds.len())
}

/// Point count and channel count of sample `index` (storage order).
///
/// # Safety
/// `ds` must be a live handle; `n_h` and `channels` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cgarom_dataset_sample_shape(
    ds: *const CgaromDataset,
    index: usize,
    n_h: *mut usize,
    channels: *mut usize,
) -> CgaromStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        if n_h.is_null() || channels.is_null() {
            return Err(Failure::Null("output pointer"));
        }
        let s = d.ds.samples().get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("sample index {index} out of range ({} samples)", d.ds.len()))
        })?;
        *n_h = s.n_h();
        *channels = s.channels();
        Ok(())
    })
}

/// Copies the points (`n_h × dim`) and values (`n_h × channels`) of sample
/// `index`. Either output may be null to skip it.
///
/// # Safety
/// Non-null outputs must hold at least the stated number of `double`s.
#[no_mangle]
pub unsafe extern "C" fn cgarom_dataset_sample_data(
    ds: *const CgaromDataset,
    index: usize,
    points: *mut f64,
    points_len: usize,
    values: *mut f64,
    values_len: usize,
) -> CgaromStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        let s = d.ds.samples().get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("sample index {index} out of range ({} samples)", d.ds.len()))
        })?;
        if !points.is_null() {
            let dim = s.cloud.dim();
            let out = out_slice(points, points_len, s.n_h() * dim, "points")?;
            for i in 0..s.n_h() {
                out[i * dim..(i + 1) * dim].copy_from_slice(s.cloud.point(i));
            }
        }
        if !values.is_null() {
            let out = out_slice(values, values_len, s.values.len(), "values")?;
            out.copy_from_slice(s.values.data());
        }
        Ok(())
    })
}

/// Mean relative error `E_R` and global relative error `E` of `model` on a
/// split named `"train"`, `"val"` or `"test"`.
///
/// # Safety
/// Handles must be live; `split` NUL-terminated; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cgarom_model_evaluate(
    model: *const CgaromModel,
    ds: *const CgaromDataset,
    split: *const c_char,
    e_r: *mut f64,
    e: *mut f64,
) -> CgaromStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = handle(ds, "dataset")?;
        if split.is_null() {
            return Err(Failure::Null("split"));
        }
        if e_r.is_null() || e.is_null() {
            return Err(Failure::Null("output pointer"));
        }
        let name = CStr::from_ptr(split)
            .to_str()
            .map_err(|_| Error::InvalidArgument("split is not valid UTF-8".into()))?;
        let metrics = evaluate(&m.rom, &d.ds, SplitName::parse(name)?)?;
        *e_r = metrics.e_r;
        *e = metrics.e;
        Ok(())
    })
}
