//! C ABI for vibshape.
//!
//! Objects cross the boundary as opaque handles created by the `vs_config_*`, `vs_dataset_*` and `vs_run` calls and
//! released with the matching `vs_*_free`. Every fallible call returns a [`VsStatus`]; the text
//! of the most recent error on the calling thread is available from [`vs_last_error`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vibshape::data::Dataset;
use vibshape::dynamics::{residual_vibration_ratio, SystemParams};
use vibshape::error::Error;
use vibshape::pipeline::{generate_vfb, run_ers, ErsResult, PipelineConfig};
use vibshape::shaper::design_zvd;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    NumericalError = 5,
    Panic = 6,
}

/// Opaque pipeline configuration.
pub struct VsConfig(PipelineConfig);

/// Opaque vibration dataset.
pub struct VsDataset(Dataset);

/// Opaque result of a pipeline run.
pub struct VsResult(ErsResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VsMetrics {
    pub max_err: f64,
    pub rmse: f64,
    pub mean_err: f64,
    pub mts: f64,
    pub n: usize,
}

/// Model indices for `vs_result_metrics`.
pub const VS_MODEL_ERS: u32 = 0;
pub const VS_MODEL_EKF: u32 = 1;
pub const VS_MODEL_ZVD: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VsStatus {
    match e {
        _ if e.is_numerical() => VsStatus::NumericalError,
        Error::Parse { .. } => VsStatus::ParseError,
        Error::Io { .. } => VsStatus::IoError,
        Error::Stage { source, .. } => status_of(source),
        _ => VsStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (VsStatus, String)>) -> VsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (VsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (VsStatus, String) {
    (VsStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (VsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (VsStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (VsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (VsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to `len`).
/// Returns the full message length excluding the terminator, or 0 when there is no error.
#[no_mangle]
pub unsafe extern "C" fn vs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// ZVD amplitudes and times (seconds) for a plant at `omega_hz`, `zeta`. Both arrays hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn vs_design_zvd(omega_hz: f64, zeta: f64, amplitudes: *mut f64, times: *mut f64) -> VsStatus {
    guard(|| {
        if amplitudes.is_null() || times.is_null() {
            return Err(null("amplitudes/times"));
        }
        let zvd = design_zvd(&SystemParams::from_hz(omega_hz, zeta).map_err(lib_err)?);
        for (i, imp) in zvd.impulses().iter().enumerate() {
            *amplitudes.add(i) = imp.amplitude;
            *times.add(i) = imp.time;
        }
        Ok(())
    })
}

/// Residual vibration ratio of a ZVD designed at (`design_hz`, `design_zeta`) on a plant.
#[no_mangle]
pub unsafe extern "C" fn vs_residual_ratio(
    plant_hz: f64,
    plant_zeta: f64,
    design_hz: f64,
    design_zeta: f64,
    out: *mut f64,
) -> VsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let plant = SystemParams::from_hz(plant_hz, plant_zeta).map_err(lib_err)?;
        let design = SystemParams::from_hz(design_hz, design_zeta).map_err(lib_err)?;
        *out = residual_vibration_ratio(&plant, &design_zvd(&design));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_config_default(out: *mut *mut VsConfig) -> VsStatus {
    guard(|| put(out, VsConfig(PipelineConfig::default())))
}

/// Parses `key = value` configuration text.
#[no_mangle]
pub unsafe extern "C" fn vs_config_parse(text: *const c_char, out: *mut *mut VsConfig) -> VsStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        put(out, VsConfig(PipelineConfig::parse(text).map_err(lib_err)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_config_load(path: *const c_char, out: *mut *mut VsConfig) -> VsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, VsConfig(PipelineConfig::load(Path::new(path)).map_err(lib_err)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_config_set_seed(cfg: *mut VsConfig, seed: u64) -> VsStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_config_free(cfg: *mut VsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Synthetic dataset from the generator settings in `cfg`.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_generate(cfg: *const VsConfig, seed: u64, out: *mut *mut VsDataset) -> VsStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        put(out, VsDataset(generate_vfb(&cfg.0, seed).map_err(lib_err)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_dataset_load(path: *const c_char, out: *mut *mut VsDataset) -> VsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, VsDataset(Dataset::load(Path::new(path)).map_err(lib_err)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_dataset_save(data: *const VsDataset, path: *const c_char) -> VsStatus {
    guard(|| {
        let data = handle(data, "data")?;
        let path = str_arg(path, "path")?;
        data.0.save(Path::new(path)).map_err(lib_err)
    })
}

/// Number of samples, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn vs_dataset_len(data: *const VsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn vs_dataset_free(data: *mut VsDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Full identification and comparison run.
#[no_mangle]
pub unsafe extern "C" fn vs_run(cfg: *const VsConfig, data: *const VsDataset, out: *mut *mut VsResult) -> VsStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let data = handle(data, "data")?;
        put(out, VsResult(run_ers(&cfg.0, &data.0).map_err(lib_err)?))
    })
}

/// EKF estimate, in Hz and dimensionless damping.
#[no_mangle]
pub unsafe extern "C" fn vs_result_ekf(res: *const VsResult, omega_hz: *mut f64, zeta: *mut f64) -> VsStatus {
    guard(|| write_params(&handle(res, "res")?.0.t_ekf, omega_hz, zeta))
}

/// Corrected parameters (EKF estimate plus learned correction).
#[no_mangle]
pub unsafe extern "C" fn vs_result_corrected(res: *const VsResult, omega_hz: *mut f64, zeta: *mut f64) -> VsStatus {
    guard(|| write_params(&handle(res, "res")?.0.t_r, omega_hz, zeta))
}

unsafe fn write_params(p: &SystemParams, omega_hz: *mut f64, zeta: *mut f64) -> Result<(), (VsStatus, String)> {
    if omega_hz.is_null() || zeta.is_null() {
        return Err(null("omega_hz/zeta"));
    }
    *omega_hz = p.omega_hz();
    *zeta = p.zeta();
    Ok(())
}

/// Held-out metrics of one model (`VS_MODEL_*`).
#[no_mangle]
pub unsafe extern "C" fn vs_result_metrics(res: *const VsResult, model: u32, out: *mut VsMetrics) -> VsStatus {
    guard(|| {
        let res = handle(res, "res")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, r) = res
            .0
            .reports
            .get(model as usize)
            .ok_or_else(|| (VsStatus::InvalidArgument, format!("unknown model index {model}")))?;
        *out = VsMetrics { max_err: r.max_err, rmse: r.rmse, mean_err: r.mean_err, mts: r.mts, n: r.n };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vs_result_free(res: *mut VsResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
