//! C ABI over `hdmargin`.
//!
//! Objects cross the boundary as opaque heap handles, created by `hdm_*_new`
//! style constructors and released with the matching `*_free`. Every fallible
//! call returns an [`HdmStatus`]; on failure the message is available from
//! [`hdm_last_error`] on the same thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hdmargin::estimate::{estimate_model, EstimationMode};
use hdmargin::simulate::Dataset;
use hdmargin::theory::{sweep_lambda, LambdaGrid, PrecisionCurve};
use hdmargin::{Error, Loss, PopulationModel};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidLoss = 3,
    InvalidModel = 4,
    InvalidData = 5,
    NoConvergence = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

/// A loss function (`plr`, `svm`, `dwd:q=..`, `lum:a=..,c=..`).
pub struct HdmLoss(Loss);

/// A spiked two-class population model.
pub struct HdmModel(PopulationModel);

/// Asymptotic precision over a lambda grid.
pub struct HdmCurve(PrecisionCurve);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HdmStatus {
    match err {
        Error::InvalidLoss(_) => HdmStatus::InvalidLoss,
        Error::InvalidModel(_) => HdmStatus::InvalidModel,
        Error::Dataset(_) | Error::Estimation(_) => HdmStatus::InvalidData,
        Error::NoConvergence { .. } => HdmStatus::NoConvergence,
        Error::Quadrature(_) | Error::Resolvent(_) | Error::Domain(_) | Error::Internal(_) => HdmStatus::Numerical,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => HdmStatus::Io,
        Error::Usage(_) => HdmStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), (HdmStatus, String)>>(f: F) -> HdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside hdmargin".into());
            HdmStatus::Panic
        }
    }
}

fn lift(err: Error) -> (HdmStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (HdmStatus, String) {
    (HdmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (HdmStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (HdmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (HdmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HdmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), (HdmStatus, String)> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn hdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn hdm_status_str(status: HdmStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HdmStatus::Ok => c"ok",
        HdmStatus::NullPointer => c"null pointer",
        HdmStatus::InvalidArgument => c"invalid argument",
        HdmStatus::InvalidLoss => c"invalid loss",
        HdmStatus::InvalidModel => c"invalid model",
        HdmStatus::InvalidData => c"invalid data",
        HdmStatus::NoConvergence => c"no convergence",
        HdmStatus::Numerical => c"numerical failure",
        HdmStatus::Io => c"i/o or format error",
        HdmStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Parses a loss specification such as `"dwd:q=1"`.
#[no_mangle]
pub unsafe extern "C" fn hdm_loss_parse(spec: *const c_char, out: *mut *mut HdmLoss) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let loss: Loss = read_str(spec, "spec")?.parse().map_err(lift)?;
        *out = Box::into_raw(Box::new(HdmLoss(loss)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdm_loss_free(loss: *mut HdmLoss) {
    if !loss.is_null() {
        drop(Box::from_raw(loss));
    }
}

/// Loss value `V(u)`.
#[no_mangle]
pub unsafe extern "C" fn hdm_loss_eval(loss: *const HdmLoss, u: f64, out: *mut f64) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = handle(loss, "loss")?.0.evaluate(u);
        Ok(())
    })
}

/// Proximal map `argmin_u V(u) + (u - a)^2 / (2 b)`.
#[no_mangle]
pub unsafe extern "C" fn hdm_prox(loss: *const HdmLoss, a: f64, b: f64, out: *mut f64) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = handle(loss, "loss")?.0.prox(a, b).map_err(lift)?;
        Ok(())
    })
}

/// Shared-covariance model with balanced classes; `alpha` is the total ratio `n / p`.
/// `spikes` and `r` both have `k` entries (either may be null when `k == 0`).
#[no_mangle]
pub unsafe extern "C" fn hdm_model_homogeneous(
    mu: f64,
    sigma: f64,
    alpha: f64,
    spikes: *const f64,
    r: *const f64,
    k: usize,
    out: *mut *mut HdmModel,
) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let spikes = read_slice(spikes, k, "spikes")?.to_vec();
        let r = read_slice(r, k, "r")?.to_vec();
        let m = PopulationModel::homogeneous(mu, sigma, alpha, spikes, r).map_err(lift)?;
        *out = Box::into_raw(Box::new(HdmModel(m)));
        Ok(())
    })
}

/// Model from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn hdm_model_from_json(json: *const c_char, out: *mut *mut HdmModel) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = PopulationModel::from_json(read_str(json, "json")?).map_err(lift)?;
        *out = Box::into_raw(Box::new(HdmModel(m)));
        Ok(())
    })
}

/// JSON form of a model; release with [`hdm_string_free`].
#[no_mangle]
pub unsafe extern "C" fn hdm_model_to_json(model: *const HdmModel, out: *mut *mut c_char) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let json = handle(model, "model")?.0.to_json().map_err(lift)?;
        *out = CString::new(json)
            .map_err(|e| (HdmStatus::Io, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdm_model_free(model: *mut HdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hdm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Estimates a model from a row-major `n x p` feature matrix and `±1` labels.
/// `pooled` nonzero selects the shared-covariance estimator.
#[no_mangle]
pub unsafe extern "C" fn hdm_estimate(
    features: *const f64,
    labels: *const f64,
    n: usize,
    p: usize,
    pooled: c_int,
    out: *mut *mut HdmModel,
) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let len = n
            .checked_mul(p)
            .ok_or((HdmStatus::InvalidArgument, "n * p overflows".into()))?;
        let x = read_slice(features, len, "features")?;
        let y = read_slice(labels, n, "labels")?;
        let data = Dataset::new(DMatrix::from_row_slice(n, p, x), y.to_vec()).map_err(lift)?;
        let mode = if pooled != 0 {
            EstimationMode::Pooled
        } else {
            EstimationMode::ClassSpecific
        };
        let report = estimate_model(&data, mode).map_err(lift)?;
        *out = Box::into_raw(Box::new(HdmModel(report.model)));
        Ok(())
    })
}

/// Sweeps a log-spaced grid of `count` values in `[lambda_min, lambda_max]`.
#[no_mangle]
pub unsafe extern "C" fn hdm_sweep(
    loss: *const HdmLoss,
    model: *const HdmModel,
    lambda_min: f64,
    lambda_max: f64,
    count: usize,
    out: *mut *mut HdmCurve,
) -> HdmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (loss, model) = (handle(loss, "loss")?, handle(model, "model")?);
        let grid = LambdaGrid::log_spaced(lambda_min, lambda_max, count).map_err(lift)?;
        let curve = sweep_lambda(&loss.0, &model.0, &grid).map_err(lift)?;
        *out = Box::into_raw(Box::new(HdmCurve(curve)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdm_curve_len(curve: *const HdmCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.points.len())
}

/// Grid point `index`: lambda, class precisions, balanced precision and a convergence flag.
/// Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn hdm_curve_point(
    curve: *const HdmCurve,
    index: usize,
    lambda: *mut f64,
    precision_plus: *mut f64,
    precision_minus: *mut f64,
    balanced: *mut f64,
    converged: *mut c_int,
) -> HdmStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        let pt =
            c.0.points
                .get(index)
                .ok_or((HdmStatus::InvalidArgument, format!("index {index} out of range")))?;
        for (dst, v) in [
            (lambda, pt.lambda),
            (precision_plus, pt.precision_plus),
            (precision_minus, pt.precision_minus),
            (balanced, pt.balanced),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        if !converged.is_null() {
            *converged = c_int::from(pt.order.converged);
        }
        Ok(())
    })
}

/// Refined maximizer of the balanced precision.
#[no_mangle]
pub unsafe extern "C" fn hdm_curve_optimum(curve: *const HdmCurve, lambda: *mut f64, balanced: *mut f64) -> HdmStatus {
    guard(|| {
        out_ptr(lambda, "lambda")?;
        out_ptr(balanced, "balanced")?;
        let opt = handle(curve, "curve")?
            .0
            .optimum
            .ok_or((HdmStatus::NoConvergence, "no grid point converged".into()))?;
        *lambda = opt.lambda;
        *balanced = opt.balanced;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hdm_curve_free(curve: *mut HdmCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}
