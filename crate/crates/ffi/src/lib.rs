//! C ABI for the cyclemodel library.
//!
//! Conventions:
//! - Opaque handles (`CmFitted`, `CmPredictor`) are created and destroyed
//!   by paired `_new`/`_free` calls; never free them any other way.
//! - Every fallible call returns a `CmStatus`; on failure a thread-local
//!   message is retrievable via `cm_last_error`.
//! - Output buffers are caller-allocated; functions report how many
//!   entries they wrote.
//! - Panics are caught at the boundary and reported as CM_STATUS_PANIC.

use cyclemodel::cli::read_fitted_json;
use cyclemodel::model::{skip_pmf, Hyperparameters, ModelConfig};
use cyclemodel::predict::{PredictiveModel, SkipMode};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result codes; mirrors the CLI exit-code family (2 invalid argument,
/// 3 data, 4 numerical).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &cyclemodel::ModelError) -> CmStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        4 => CmStatus::NumericalError,
        _ => CmStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> CmStatus + std::panic::UnwindSafe) -> CmStatus {
    match catch_unwind(f) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across FFI boundary");
            CmStatus::Panic
        }
    }
}

/// Fitted model: hyperparameters plus the numerical configuration
/// (S, M, D, seed) they were trained with.
pub struct CmFitted {
    u_hat: Hyperparameters,
    config: ModelConfig,
}

/// Prediction engine for one (fitted model, mode) pair.
pub struct CmPredictor {
    model: PredictiveModel,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Copy the last error message (NUL-terminated, possibly truncated) into
/// `buf`. Returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null with len 0).
#[no_mangle]
pub unsafe extern "C" fn cm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            // Always NUL-terminate.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Build a fitted-model handle from explicit values. On success stores the
/// handle in `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_fitted_new(
    kappa: f64,
    gamma: f64,
    alpha: f64,
    beta: f64,
    s_max: u32,
    mc_samples: usize,
    d_max: u32,
    seed: u64,
    out: *mut *mut CmFitted,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return CmStatus::NullPointer;
        }
        let u_hat = match Hyperparameters::new(kappa, gamma, alpha, beta) {
            Ok(u) => u,
            Err(e) => {
                set_error(&e.to_string());
                return CmStatus::InvalidArgument;
            }
        };
        let config = ModelConfig {
            s_max,
            mc_samples,
            d_max,
            seed,
        };
        if let Err(e) = config.validate() {
            set_error(&e.to_string());
            return CmStatus::InvalidArgument;
        }
        let handle = Box::new(CmFitted { u_hat, config });
        unsafe { *out = Box::into_raw(handle) };
        CmStatus::Ok
    }))
}

/// Load a fitted model from the JSON written by `cyclemodel fit`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn cm_fitted_load_json(
    path: *const c_char,
    out: *mut *mut CmFitted,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CmStatus::NullPointer;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return CmStatus::InvalidArgument;
            }
        };
        match read_fitted_json(Path::new(path)) {
            Ok(fitted) => {
                let u_hat = match fitted.hyperparameters() {
                    Ok(u) => u,
                    Err(e) => return status_of(&e),
                };
                let handle = Box::new(CmFitted {
                    u_hat,
                    config: fitted.config_echo.model,
                });
                *out = Box::into_raw(handle);
                CmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Read back the hyperparameters and configuration of a fitted handle.
/// Any output pointer may be null to skip that field.
///
/// # Safety
/// `fitted` must be a live handle from `cm_fitted_new`/`cm_fitted_load_json`.
#[no_mangle]
pub unsafe extern "C" fn cm_fitted_get(
    fitted: *const CmFitted,
    kappa: *mut f64,
    gamma: *mut f64,
    alpha: *mut f64,
    beta: *mut f64,
    s_max: *mut u32,
    d_max: *mut u32,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if fitted.is_null() {
            set_error("fitted handle is null");
            return CmStatus::NullPointer;
        }
        let f = &*fitted;
        if !kappa.is_null() {
            *kappa = f.u_hat.kappa;
        }
        if !gamma.is_null() {
            *gamma = f.u_hat.gamma;
        }
        if !alpha.is_null() {
            *alpha = f.u_hat.alpha;
        }
        if !beta.is_null() {
            *beta = f.u_hat.beta;
        }
        if !s_max.is_null() {
            *s_max = f.config.s_max;
        }
        if !d_max.is_null() {
            *d_max = f.config.d_max;
        }
        CmStatus::Ok
    }))
}

/// Destroy a fitted handle. Null is a no-op.
///
/// # Safety
/// `fitted` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn cm_fitted_free(fitted: *mut CmFitted) {
    if !fitted.is_null() {
        drop(Box::from_raw(fitted));
    }
}

/// Prediction mode for `cm_predictor_new`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmMode {
    /// Trust the next reported cycle (s* = 0).
    AssumeNoSkip = 0,
    /// Marginalize possible skipped cycles (s* up to S).
    AllowSkips = 1,
}

/// Build a prediction engine from a fitted model. `seed` overrides the
/// theta-sampling seed carried by the fitted configuration when
/// `override_seed` is nonzero.
///
/// # Safety
/// `fitted` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_predictor_new(
    fitted: *const CmFitted,
    mode: CmMode,
    override_seed: i32,
    seed: u64,
    out: *mut *mut CmPredictor,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if fitted.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CmStatus::NullPointer;
        }
        let f = &*fitted;
        let mut config = f.config;
        if override_seed != 0 {
            config.seed = seed;
        }
        let mode = match mode {
            CmMode::AssumeNoSkip => SkipMode::AssumeNoSkip,
            CmMode::AllowSkips => SkipMode::AllowSkips,
        };
        match PredictiveModel::new(&f.u_hat, &config, mode) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(CmPredictor { model }));
                CmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Destroy a predictor handle. Null is a no-op.
///
/// # Safety
/// `predictor` must have come from `cm_predictor_new` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn cm_predictor_free(predictor: *mut CmPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

unsafe fn cycles_slice<'a>(cycles: *const u32, n_cycles: usize) -> Option<&'a [u32]> {
    if cycles.is_null() || n_cycles == 0 {
        return None;
    }
    Some(std::slice::from_raw_parts(cycles, n_cycles))
}

/// Expected next cycle length E[d* | d* > d_current, history] and the grid
/// argmax of the conditional pmf. Either output pointer may be null.
///
/// # Safety
/// `cycles` must point to `n_cycles` entries; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_predict_expected(
    predictor: *const CmPredictor,
    cycles: *const u32,
    n_cycles: usize,
    d_current: u32,
    out_expected: *mut f64,
    out_map: *mut u32,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if predictor.is_null() {
            set_error("predictor handle is null");
            return CmStatus::NullPointer;
        }
        let Some(history) = cycles_slice(cycles, n_cycles) else {
            set_error("cycles must be a non-empty array");
            return CmStatus::InvalidArgument;
        };
        let model = &(*predictor).model;
        let result = model.user_weights(history).and_then(|w| {
            let pmf = model.unconditional_cycle_pmf(&w);
            model.expectation_curve(&pmf, &[d_current])
        });
        match result {
            Ok(points) => {
                if !out_expected.is_null() {
                    *out_expected = points[0].expected;
                }
                if !out_map.is_null() {
                    *out_map = points[0].map;
                }
                CmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Conditional next-cycle pmf over d* in {d_current+1 .. D}. Writes up to
/// `buf_len` probabilities into `out_probs` (support starts at
/// `*out_first_day`), storing the full support size in `*out_len`.
/// Fails with CM_STATUS_BUFFER_TOO_SMALL if the buffer cannot hold it.
///
/// # Safety
/// Pointer arguments must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cm_predict_pmf(
    predictor: *const CmPredictor,
    cycles: *const u32,
    n_cycles: usize,
    d_current: u32,
    out_probs: *mut f64,
    buf_len: usize,
    out_first_day: *mut u32,
    out_len: *mut usize,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if predictor.is_null() || out_probs.is_null() || out_len.is_null() {
            set_error("null pointer argument");
            return CmStatus::NullPointer;
        }
        let Some(history) = cycles_slice(cycles, n_cycles) else {
            set_error("cycles must be a non-empty array");
            return CmStatus::InvalidArgument;
        };
        let model = &(*predictor).model;
        let result = model.user_weights(history).and_then(|w| {
            let pmf = model.unconditional_cycle_pmf(&w);
            model.conditional_cycle_pmf(&pmf, d_current)
        });
        match result {
            Ok(dist) => {
                *out_len = dist.probabilities.len();
                if dist.probabilities.len() > buf_len {
                    set_error("probability buffer too small for the conditional support");
                    return CmStatus::BufferTooSmall;
                }
                std::ptr::copy_nonoverlapping(
                    dist.probabilities.as_ptr(),
                    out_probs,
                    dist.probabilities.len(),
                );
                if !out_first_day.is_null() {
                    *out_first_day = dist.support[0];
                }
                CmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Posterior over the next skip count s*; writes min(support, buf_len)
/// probabilities (s* = 0, 1, 2, ... in order) and stores the full support
/// size in `*out_len`.
///
/// # Safety
/// Pointer arguments must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cm_skip_posterior(
    predictor: *const CmPredictor,
    cycles: *const u32,
    n_cycles: usize,
    d_current: u32,
    out_probs: *mut f64,
    buf_len: usize,
    out_len: *mut usize,
) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if predictor.is_null() || out_probs.is_null() || out_len.is_null() {
            set_error("null pointer argument");
            return CmStatus::NullPointer;
        }
        let Some(history) = cycles_slice(cycles, n_cycles) else {
            set_error("cycles must be a non-empty array");
            return CmStatus::InvalidArgument;
        };
        let model = &(*predictor).model;
        let result = model.user_weights(history).and_then(|w| {
            let survival = model.survival_table(d_current)?;
            model.skip_posterior(&w, d_current, &survival)
        });
        match result {
            Ok(dist) => {
                *out_len = dist.probabilities.len();
                let n = dist.probabilities.len().min(buf_len);
                std::ptr::copy_nonoverlapping(dist.probabilities.as_ptr(), out_probs, n);
                CmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Truncated-geometric skip pmf p(s | pi) over s in {0..s_max}; writes
/// s_max + 1 entries.
///
/// # Safety
/// `out_probs` must hold `s_max + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn cm_skip_pmf(pi: f64, s_max: u32, out_probs: *mut f64) -> CmStatus {
    guard(AssertUnwindSafe(|| {
        if out_probs.is_null() {
            set_error("out pointer is null");
            return CmStatus::NullPointer;
        }
        match skip_pmf(pi, s_max) {
            Ok(pmf) => {
                std::ptr::copy_nonoverlapping(pmf.as_ptr(), out_probs, pmf.len());
                CmStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                CmStatus::InvalidArgument
            }
        }
    }))
}
