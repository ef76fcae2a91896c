//! C interface to `lqmfpg-core`.
//!
//! Models are opaque handles created by one of the `lqmfpg_model_*`
//! constructors and released with [`lqmfpg_model_free`]. Gains are passed as
//! row-major `l x d` arrays of `double`. Every call returns an
//! [`LqmfpgStatus`]; on failure [`lqmfpg_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lqmfpg_core::analytic::{exact_cost, exact_gradient, optimal_gains};
use lqmfpg_core::config::ExperimentConfig;
use lqmfpg_core::model::{is_admissible, GaussianReading};
use lqmfpg_core::rng::StreamId;
use lqmfpg_core::simulate::mkv_rollout;
use lqmfpg_core::zo::{estimate_gradient_mkv, PerturbationPolicy, Smoothing, ZoConfig};
use lqmfpg_core::{ControlParams, Error, Mat, MfcModel};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqmfpgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotAdmissible = 3,
    Numerics = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct LqmfpgModel {
    model: MfcModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LqmfpgStatus {
    match err {
        Error::Config { .. } | Error::Validation(_) | Error::Dimension(_) | Error::NonSymmetric { .. } | Error::EmptyHorizon => {
            LqmfpgStatus::InvalidArgument
        }
        Error::Admissibility(_) | Error::Step { .. } => LqmfpgStatus::NotAdmissible,
        Error::Numerics { .. } => LqmfpgStatus::Numerics,
        Error::Io(_) => LqmfpgStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LqmfpgStatus>) -> LqmfpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LqmfpgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            LqmfpgStatus::Panic
        }
    }
}

fn fail(err: Error) -> LqmfpgStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> LqmfpgStatus {
    set_error(format!("{what} is null"));
    LqmfpgStatus::NullPointer
}

unsafe fn model_ref<'a>(m: *const LqmfpgModel) -> Result<&'a MfcModel, LqmfpgStatus> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn read_gain(model: &MfcModel, p: *const f64, what: &str) -> Result<Mat, LqmfpgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let (l, d) = model.k_shape();
    let s = std::slice::from_raw_parts(p, l * d);
    Ok(Mat::from_row_slice(l, d, s))
}

unsafe fn read_theta(model: &MfcModel, k: *const f64, l: *const f64) -> Result<ControlParams, LqmfpgStatus> {
    Ok(ControlParams::new(read_gain(model, k, "K")?, read_gain(model, l, "L")?))
}

unsafe fn write_gain(m: &Mat, out: *mut f64, what: &str) -> Result<(), LqmfpgStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    let dst = std::slice::from_raw_parts_mut(out, m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dst[i * m.ncols() + j] = m[(i, j)];
        }
    }
    Ok(())
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), LqmfpgStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

fn boxed(model: MfcModel) -> *mut LqmfpgModel {
    Box::into_raw(Box::new(LqmfpgModel { model }))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lqmfpg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The scalar reference model (all coefficients 0.5, discount 0.9).
/// `gaussian_as_std` selects how the step-noise parameter 0.01 is read.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_model_scalar_reference(gaussian_as_std: bool, out: *mut *mut LqmfpgModel) -> LqmfpgStatus {
    guard(|| {
        let reading = if gaussian_as_std { GaussianReading::StdDev } else { GaussianReading::Variance };
        put(out, boxed(MfcModel::scalar_reference(reading)), "out")
    })
}

/// Builds a model from configuration text (the `[model]` and `[noise]`
/// sections are used).
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_model_from_config(text: *const c_char, out: *mut *mut LqmfpgModel) -> LqmfpgStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let s = CStr::from_ptr(text).to_str().map_err(|_| {
            set_error("config text is not UTF-8".into());
            LqmfpgStatus::InvalidArgument
        })?;
        let model = ExperimentConfig::parse(s).and_then(|c| c.build_model()).map_err(fail)?;
        put(out, boxed(model), "out")
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_model_free(model: *mut LqmfpgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension `d` and control dimension `l`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_model_dims(model: *const LqmfpgModel, d: *mut usize, l: *mut usize) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        put(d, m.state_dim(), "d")?;
        put(l, m.control_dim(), "l")
    })
}

/// # Safety
/// `k` and `l` must point to `l*d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_is_admissible(
    model: *const LqmfpgModel,
    k: *const f64,
    l: *const f64,
    out: *mut bool,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let theta = read_theta(m, k, l)?;
        put(out, is_admissible(m, &theta), "out")
    })
}

/// Exact mean-field cost `C(K, L)`.
///
/// # Safety
/// `k` and `l` must point to `l*d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_exact_cost(
    model: *const LqmfpgModel,
    k: *const f64,
    l: *const f64,
    out: *mut f64,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let theta = read_theta(m, k, l)?;
        let c = exact_cost(m, &theta).map_err(fail)?;
        put(out, c.total, "out")
    })
}

/// Exact policy gradient, written row-major into `grad_k` and `grad_l`.
///
/// # Safety
/// All arrays must hold `l*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_exact_gradient(
    model: *const LqmfpgModel,
    k: *const f64,
    l: *const f64,
    grad_k: *mut f64,
    grad_l: *mut f64,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let theta = read_theta(m, k, l)?;
        let g = exact_gradient(m, &theta).map_err(fail)?;
        write_gain(&g.grad_k, grad_k, "grad_k")?;
        write_gain(&g.grad_l, grad_l, "grad_l")
    })
}

/// Optimal gains `(K*, L*)` and the optimal cost.
///
/// # Safety
/// `k_out` and `l_out` must hold `l*d` doubles; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_optimal_gains(
    model: *const LqmfpgModel,
    k_out: *mut f64,
    l_out: *mut f64,
    cost: *mut f64,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let opt = optimal_gains(m).map_err(fail)?;
        write_gain(&opt.theta.k, k_out, "k_out")?;
        write_gain(&opt.theta.l, l_out, "l_out")?;
        put(cost, opt.cost.total, "cost")
    })
}

/// One realised discounted cost over `horizon` steps.
///
/// # Safety
/// `k` and `l` must point to `l*d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_mkv_rollout(
    model: *const LqmfpgModel,
    k: *const f64,
    l: *const f64,
    horizon: usize,
    seed: u64,
    out: *mut f64,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let theta = read_theta(m, k, l)?;
        let s = mkv_rollout(m, &theta, horizon, StreamId::root(seed)).map_err(fail)?;
        put(out, s.value, "out")
    })
}

/// Zeroth-order gradient estimate from `perturbations` MKV rollouts.
///
/// # Safety
/// All arrays must hold `l*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn lqmfpg_estimate_gradient_mkv(
    model: *const LqmfpgModel,
    k: *const f64,
    l: *const f64,
    perturbations: usize,
    horizon: usize,
    tau: f64,
    seed: u64,
    grad_k: *mut f64,
    grad_l: *mut f64,
) -> LqmfpgStatus {
    guard(|| {
        let m = model_ref(model)?;
        let theta = read_theta(m, k, l)?;
        let cfg = ZoConfig {
            m: perturbations,
            horizon,
            tau,
            smoothing: Smoothing::Parameter,
            perturbation: PerturbationPolicy::Accept,
        };
        let g = estimate_gradient_mkv(m, &theta, &cfg, StreamId::root(seed)).map_err(fail)?;
        write_gain(&g.grad_k, grad_k, "grad_k")?;
        write_gain(&g.grad_l, grad_l, "grad_l")
    })
}
