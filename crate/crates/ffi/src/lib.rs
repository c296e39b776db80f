//! C ABI for the vcgp library.
//!
//! Models are opaque `VcgpModel` handles released with `vcgp_model_free`.
//! Every fallible call returns a `VcgpStatus`; on failure a message is
//! available from `vcgp_last_error_message` on the same thread. Matrices are
//! dense, row-major `double` arrays; NaN marks a missing entry where noted.
//! Panics never cross the boundary: they are reported as `VCGP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vcgp::harness::{mackey_glass_simulate, MackeyGlassConfig};
use vcgp::model::Posterior;
use vcgp::nalgebra::DMatrix;
use vcgp::pipelines::{iterative_forecast, semi_described_fit, ForecastConfig};
use vcgp::{infer_latent_posterior, train, Error, FitConfig, Mask, MaskedDataset, ModelState};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// A trained model.
pub struct VcgpModel {
    state: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VcgpStatus {
    match e {
        Error::DimensionMismatch { .. } => VcgpStatus::DimensionMismatch,
        Error::InvalidParameter(_) | Error::EmptyInput(_) | Error::UnknownSelector(_) => VcgpStatus::InvalidArgument,
        Error::Factorization { .. } | Error::NonFinite(_) | Error::Optimization(_) | Error::Degenerate(_) => {
            VcgpStatus::Numerical
        }
        Error::Io(_) => VcgpStatus::Io,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => VcgpStatus::Parse,
        _ => VcgpStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VcgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VcgpStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            VcgpStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            VcgpStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            VcgpStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or a handle from this library that has not been freed.
unsafe fn model<'a>(p: *const VcgpModel) -> Result<&'a VcgpModel, Failure> {
    p.as_ref().ok_or(Failure::Null("model"))
}

fn publish(out: *mut *mut VcgpModel, state: ModelState) {
    // SAFETY: callers check `out` before doing any work.
    unsafe { *out = Box::into_raw(Box::new(VcgpModel { state })) };
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn vcgp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vcgp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fit a model to `n` rows of `q` inputs and `d` outputs. NaN inputs are
/// missing and trigger the two-stage partially-observed procedure; `q = 0`
/// is not allowed here (use a latent model from the CLI instead).
/// `config_json` is a fit config in JSON or NULL for defaults.
///
/// # Safety
/// `inputs` must hold `n*q` and `outputs` `n*d` doubles; `config_json` must
/// be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcgp_fit(
    inputs: *const f64,
    n: usize,
    q: usize,
    outputs: *const f64,
    d: usize,
    config_json: *const c_char,
    out: *mut *mut VcgpModel,
) -> VcgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if n == 0 || q == 0 || d == 0 {
            return Err(Failure::Invalid("n, q and d must be positive".into()));
        }
        let x = slice(inputs, n * q, "inputs")?;
        let y = slice(outputs, n * d, "outputs")?;
        let config: FitConfig = if config_json.is_null() {
            FitConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config_json")?).map_err(Error::from)?
        };
        let x = DMatrix::from_row_slice(n, q, x);
        let mask = Mask::from_fn(n, q, |r, c| x[(r, c)].is_finite());
        let ds = MaskedDataset::new(x, mask, DMatrix::from_row_slice(n, d, y), vec![true; n])?;
        let state = if ds.input_mask.all() {
            train(&ds, &config)?.0
        } else {
            semi_described_fit(&ds, &config)?.model
        };
        publish(out, state);
        Ok(())
    })
}

/// Load a model saved by this library or the CLI.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcgp_model_load(path: *const c_char, out: *mut *mut VcgpModel) -> VcgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let text = std::fs::read_to_string(string(path, "path")?).map_err(Error::from)?;
        publish(out, ModelState::from_json(&text)?);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vcgp_model_save(model: *const VcgpModel, path: *const c_char) -> VcgpStatus {
    guard(|| {
        let m = self::model(model)?;
        m.state.save(string(path, "path")?)?;
        Ok(())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vcgp_model_free(model: *mut VcgpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Training rows, input and output dimensions and inducing count. Any
/// output pointer may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcgp_model_dims(
    model: *const VcgpModel,
    n: *mut usize,
    q: *mut usize,
    d: *mut usize,
    m: *mut usize,
) -> VcgpStatus {
    guard(|| {
        let s = &self::model(model)?.state;
        for (p, v) in [(n, s.n()), (q, s.q()), (d, s.d()), (m, s.m())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// The training objective at the stored parameters.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vcgp_model_bound(model: *const VcgpModel, out: *mut f64) -> VcgpStatus {
    guard(|| {
        let s = &self::model(model)?.state;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = s.bound()?.total;
        Ok(())
    })
}

/// Predictive means and variances at `rows` inputs of width q, written as
/// `rows*d` arrays. A null `input_var` means certain inputs.
///
/// # Safety
/// `x` (and `input_var` when non-null) must hold `rows*q` doubles; the
/// outputs must hold `rows*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn vcgp_predict(
    model: *const VcgpModel,
    x: *const f64,
    input_var: *const f64,
    rows: usize,
    include_noise: c_int,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> VcgpStatus {
    guard(|| {
        let s = &self::model(model)?.state;
        let (q, d) = (s.q(), s.d());
        let x = slice(x, rows * q, "x")?;
        let v = if input_var.is_null() {
            None
        } else {
            Some(slice(input_var, rows * q, "input_var")?)
        };
        let mo = slice_mut(mean_out, rows * d, "mean_out")?;
        let vo = slice_mut(var_out, rows * d, "var_out")?;
        let post = Posterior::new(s)?;
        let zeros = vec![0.0; q];
        for r in 0..rows {
            let xr = &x[r * q..(r + 1) * q];
            let vr = v.map_or(&zeros[..], |v| &v[r * q..(r + 1) * q]);
            let g = post.uncertain(xr, vr, include_noise != 0)?;
            mo[r * d..(r + 1) * d].copy_from_slice(&g.mean);
            vo[r * d..(r + 1) * d].copy_from_slice(&g.variance);
        }
        Ok(())
    })
}

/// Posterior q(x*) for one output vector `y` of width d (NaN = missing).
/// `clamp` is NULL or q values where non-NaN entries fix that input
/// dimension. Writes q means and q variances.
///
/// # Safety
/// `y` must hold d doubles, `clamp` q doubles or be NULL, outputs q doubles.
#[no_mangle]
pub unsafe extern "C" fn vcgp_infer_latent(
    model: *const VcgpModel,
    y: *const f64,
    clamp: *const f64,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> VcgpStatus {
    guard(|| {
        let s = &self::model(model)?.state;
        let (q, d) = (s.q(), s.d());
        let y: Vec<Option<f64>> = slice(y, d, "y")?.iter().map(|v| v.is_finite().then_some(*v)).collect();
        let clamp: Vec<Option<f64>> = if clamp.is_null() {
            vec![None; q]
        } else {
            slice(clamp, q, "clamp")?.iter().map(|v| v.is_finite().then_some(*v)).collect()
        };
        let post = infer_latent_posterior(s, &y, &clamp)?;
        slice_mut(mean_out, q, "mean_out")?.copy_from_slice(post.q.means.row(0).clone_owned().as_slice());
        slice_mut(var_out, q, "var_out")?.copy_from_slice(post.q.variances.row(0).clone_owned().as_slice());
        Ok(())
    })
}

/// Free simulation of an auto-regressive model (q = window·d) from
/// `seed_window` (window·d values, oldest first) for `horizon` steps.
/// Writes `horizon*d` means and variances.
///
/// # Safety
/// `seed_window` must hold window·d doubles; outputs `horizon*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn vcgp_forecast(
    model: *const VcgpModel,
    seed_window: *const f64,
    window: usize,
    horizon: usize,
    propagate_uncertainty: c_int,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> VcgpStatus {
    guard(|| {
        let s = &self::model(model)?.state;
        let d = s.d();
        let seed = slice(seed_window, window * d, "seed_window")?;
        let mo = slice_mut(mean_out, horizon * d, "mean_out")?;
        let vo = slice_mut(var_out, horizon * d, "var_out")?;
        let cfg = ForecastConfig {
            window,
            horizon,
            propagate_uncertainty: propagate_uncertainty != 0,
            include_noise: true,
        };
        for (t, g) in iterative_forecast(s, seed, &cfg)?.into_iter().enumerate() {
            mo[t * d..(t + 1) * d].copy_from_slice(&g.mean);
            vo[t * d..(t + 1) * d].copy_from_slice(&g.variance);
        }
        Ok(())
    })
}

/// `length` unit-spaced samples of the Mackey-Glass delay equation
/// dζ/dt = −bζ + αζ(t−T)/(1+ζ(t−T)¹⁰) with constant history.
///
/// # Safety
/// `out` must hold `length` doubles.
#[no_mangle]
pub unsafe extern "C" fn vcgp_mackey_glass(
    alpha: f64,
    b: f64,
    delay: f64,
    step: f64,
    history_init: f64,
    length: usize,
    out: *mut f64,
) -> VcgpStatus {
    guard(|| {
        let o = slice_mut(out, length, "out")?;
        let cfg = MackeyGlassConfig {
            alpha,
            b,
            delay,
            step,
            length,
            history_init,
            ..MackeyGlassConfig::default()
        };
        o.copy_from_slice(&mackey_glass_simulate(&cfg)?);
        Ok(())
    })
}
