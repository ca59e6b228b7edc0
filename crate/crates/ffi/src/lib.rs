//! C ABI over the greybox library.
//!
//! Conventions:
//! - Every fallible function returns a [`GbStatus`]; results go through out
//!   pointers, which are written only on success.
//! - After a failure, [`gb_last_error_message`] describes it. The message is
//!   thread-local and stays valid until the next failing call on the same
//!   thread.
//! - Normal models are opaque handles created by `gb_normal_model_*` and
//!   released with [`gb_normal_model_free`].
//! - Arrays of seven values follow the parameter order
//!   `gamma, R, omega, y, phi, c, x`; 7x7 matrices are row-major.
//! - Panics never cross the boundary; they surface as `GB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use greybox::anomaly::{self, NormalModel};
use greybox::control_map as cm;
use greybox::fit::{self, FitConfig, PriorExponent};
use greybox::oscillator::{self, NPARAM};
use greybox::pipeline;
use greybox::{Error, ShapeSignature, TraceSeries, TripleKey};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Singular = 4,
    Overdamped = 5,
    NonFinite = 6,
    Io = 7,
    Parse = 8,
    Validation = 9,
    Panic = 10,
}

/// Shape signature of one trace.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GbSignature {
    pub gamma: f64,
    pub r: f64,
    pub omega: f64,
    pub y: f64,
    pub phi: f64,
    pub c: f64,
    pub x: f64,
}

impl From<GbSignature> for ShapeSignature {
    fn from(s: GbSignature) -> Self {
        ShapeSignature::from_array([s.gamma, s.r, s.omega, s.y, s.phi, s.c, s.x])
    }
}

impl From<ShapeSignature> for GbSignature {
    fn from(s: ShapeSignature) -> Self {
        GbSignature {
            gamma: s.gamma,
            r: s.r,
            omega: s.omega,
            y: s.y,
            phi: s.phi,
            c: s.c,
            x: s.x,
        }
    }
}

/// PI controller and first-order process.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GbControlParams {
    pub k_p: f64,
    pub k_c: f64,
    pub tau_p: f64,
    pub tau_i: f64,
    pub q1: f64,
    pub q2: f64,
}

impl From<GbControlParams> for cm::ControlParams {
    fn from(c: GbControlParams) -> Self {
        cm::ControlParams {
            k_p: c.k_p,
            k_c: c.k_c,
            tau_p: c.tau_p,
            tau_i: c.tau_i,
            q1: c.q1,
            q2: c.q2,
        }
    }
}

/// Coefficients of `v'' + gamma v' + k v = a t + b`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GbOdeParams {
    pub gamma: f64,
    pub k: f64,
    pub a: f64,
    pub b: f64,
}

impl From<GbOdeParams> for cm::OdeParams {
    fn from(o: GbOdeParams) -> Self {
        cm::OdeParams {
            gamma: o.gamma,
            k: o.k,
            a: o.a,
            b: o.b,
        }
    }
}

impl From<cm::OdeParams> for GbOdeParams {
    fn from(o: cm::OdeParams) -> Self {
        GbOdeParams {
            gamma: o.gamma,
            k: o.k,
            a: o.a,
            b: o.b,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GbShapeTrend {
    pub omega: f64,
    pub c: f64,
    pub y: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GbProcessRecovery {
    pub tau_p: f64,
    pub k_p: f64,
    pub q1: f64,
    pub q2: f64,
}

/// Opaque normal model.
pub struct GbNormalModel(NormalModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GbStatus {
    match e {
        Error::Domain(_) => GbStatus::Domain,
        Error::Singular(_) => GbStatus::Singular,
        Error::Overdamped { .. } => GbStatus::Overdamped,
        Error::Validation(_) => GbStatus::Validation,
        Error::NonFinite { .. } => GbStatus::NonFinite,
        Error::Io { .. } => GbStatus::Io,
        Error::Parse { .. } => GbStatus::Parse,
    }
}

struct Fail(GbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GbStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GbStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_error(&format!("internal panic: {msg}"));
            GbStatus::Panic
        }
    }
}

unsafe fn read<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    let slot = p.as_mut().ok_or_else(|| null(what))?;
    *slot = v;
    Ok(())
}

unsafe fn write_array<const N: usize>(p: *mut f64, v: &[f64; N], what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts_mut(p, N).copy_from_slice(v);
    Ok(())
}

unsafe fn read_array<const N: usize>(p: *const f64, what: &str) -> Result<[f64; N], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let mut out = [0.0; N];
    out.copy_from_slice(std::slice::from_raw_parts(p, N));
    Ok(out)
}

unsafe fn trace(times: *const f64, values: *const f64, n: usize) -> Result<TraceSeries, Fail> {
    if times.is_null() || values.is_null() {
        return Err(null("times/values"));
    }
    if n == 0 {
        return Err(Fail(GbStatus::InvalidArgument, "trace has no observations".into()));
    }
    let t = std::slice::from_raw_parts(times, n).to_vec();
    let v = std::slice::from_raw_parts(values, n).to_vec();
    Ok(TraceSeries::new(t, v)?)
}

unsafe fn handle<'a>(nm: *const GbNormalModel) -> Result<&'a NormalModel, Fail> {
    Ok(&read(nm, "normal model")?.0)
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn flatten(h: &[[f64; NPARAM]; NPARAM]) -> [f64; NPARAM * NPARAM] {
    let mut out = [0.0; NPARAM * NPARAM];
    for (i, row) in h.iter().enumerate() {
        out[i * NPARAM..(i + 1) * NPARAM].copy_from_slice(row);
    }
    out
}

/// Message of the last failure on this thread, or null if none. Owned by the
/// library; do not free.
#[no_mangle]
pub extern "C" fn gb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Evaluates the oscillator at time `t`.
///
/// # Safety
/// `s` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gb_eval(s: *const GbSignature, t: f64, out: *mut f64) -> GbStatus {
    guard(|| {
        let s: ShapeSignature = (*read(s, "signature")?).into();
        write(out, oscillator::eval(&s, t)?, "out")
    })
}

/// Gradient of the oscillator value with respect to the seven parameters.
///
/// # Safety
/// `s` must be valid and `out_grad` must hold 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_grad_params(s: *const GbSignature, t: f64, out_grad: *mut f64) -> GbStatus {
    guard(|| {
        let s: ShapeSignature = (*read(s, "signature")?).into();
        write_array(out_grad, &oscillator::grad_params(&s, t)?, "out_grad")
    })
}

/// Hessian of the oscillator value, row-major 7x7.
///
/// # Safety
/// `s` must be valid and `out_hess` must hold 49 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_hess_params(s: *const GbSignature, t: f64, out_hess: *mut f64) -> GbStatus {
    guard(|| {
        let s: ShapeSignature = (*read(s, "signature")?).into();
        write_array(out_hess, &flatten(&oscillator::hess_params(&s, t)?), "out_hess")
    })
}

/// Fits one trace on its own (no prior) with default settings.
///
/// # Safety
/// `times` and `values` must hold `n` doubles; `out` and `out_ssr` must be
/// valid (`out_ssr` may be null).
#[no_mangle]
pub unsafe extern "C" fn gb_fit_trace(
    times: *const f64,
    values: *const f64,
    n: usize,
    out: *mut GbSignature,
    out_ssr: *mut f64,
) -> GbStatus {
    guard(|| {
        let tr = trace(times, values, n)?;
        let fit = fit::fit_trace(&tr, &FitConfig::default())?;
        write(out, fit.signature.into(), "out")?;
        if !out_ssr.is_null() {
            *out_ssr = fit.ssr;
        }
        Ok(())
    })
}

/// ODE coefficients induced by a set-point change on the output.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_ode_from_control_output(cp: *const GbControlParams, out: *mut GbOdeParams) -> GbStatus {
    guard(|| {
        let cp: cm::ControlParams = (*read(cp, "control params")?).into();
        write(out, cm::ode_from_control_output(&cp)?.into(), "out")
    })
}

/// ODE coefficients induced by a set-point change on the input.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_ode_from_control_input(cp: *const GbControlParams, out: *mut GbOdeParams) -> GbStatus {
    guard(|| {
        let cp: cm::ControlParams = (*read(cp, "control params")?).into();
        write(out, cm::ode_from_control_input(&cp)?.into(), "out")
    })
}

/// Frequency, slope and offset of the motion described by `ode`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_shape_from_ode(ode: *const GbOdeParams, out: *mut GbShapeTrend) -> GbStatus {
    guard(|| {
        let ode: cm::OdeParams = (*read(ode, "ode")?).into();
        let s = cm::shape_from_ode(&ode)?;
        write(out, GbShapeTrend { omega: s.omega, c: s.c, y: s.y }, "out")
    })
}

/// ODE coefficients implied by a shape signature.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_ode_from_signature(s: *const GbSignature, out: *mut GbOdeParams) -> GbStatus {
    guard(|| {
        let s: ShapeSignature = (*read(s, "signature")?).into();
        write(out, cm::ode_from_signature(&s).into(), "out")
    })
}

/// Recovers the process parameters when `k_c` and `tau_i` are known.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_control_from_ode_known(
    ode: *const GbOdeParams,
    k_c: f64,
    tau_i: f64,
    out: *mut GbProcessRecovery,
) -> GbStatus {
    guard(|| {
        let ode: cm::OdeParams = (*read(ode, "ode")?).into();
        let r = cm::control_from_ode_known(&ode, k_c, tau_i)?;
        write(
            out,
            GbProcessRecovery {
                tau_p: r.tau_p,
                k_p: r.k_p,
                q1: r.q1,
                q2: r.q2,
            },
            "out",
        )
    })
}

/// Writes 1 to `out` when the closed loop oscillates, else 0.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gb_oscillates(cp: *const GbControlParams, out: *mut i32) -> GbStatus {
    guard(|| {
        let cp: cm::ControlParams = (*read(cp, "control params")?).into();
        write(out, i32::from(cm::oscillates(&cp)), "out")
    })
}

/// Creates a normal model from its hyperparameters. `prior_exponent` is 0
/// for the variance convention and 1 for the standard-deviation convention.
///
/// # Safety
/// `mu_star` and `sigma_star_s` must hold 7 doubles; the strings must be
/// NUL-terminated UTF-8; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn gb_normal_model_new(
    sigma_star: f64,
    mu_star: *const f64,
    sigma_star_s: *const f64,
    prior_exponent: i32,
    tool: *const c_char,
    sensor: *const c_char,
    step: *const c_char,
    out: *mut *mut GbNormalModel,
) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let prior_exponent = match prior_exponent {
            0 => PriorExponent::Variance,
            1 => PriorExponent::Std,
            other => {
                return Err(Fail(
                    GbStatus::InvalidArgument,
                    format!("prior_exponent must be 0 or 1, got {other}"),
                ))
            }
        };
        let nm = NormalModel {
            sigma_star,
            mu_star: read_array(mu_star, "mu_star")?,
            sigma_star_s: read_array(sigma_star_s, "sigma_star_s")?,
            source_lots: vec!["external".to_owned()],
            triple: TripleKey::new(c_str(tool, "tool")?, c_str(sensor, "sensor")?, c_str(step, "step")?),
            prior_exponent,
        };
        nm.validate()?;
        *out = Box::into_raw(Box::new(GbNormalModel(nm)));
        Ok(())
    })
}

/// Loads a normal-model file written by the command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn gb_normal_model_load(path: *const c_char, out: *mut *mut GbNormalModel) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let nm = pipeline::read_normal_model(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(GbNormalModel(nm)));
        Ok(())
    })
}

/// Writes a normal model to a file.
///
/// # Safety
/// `nm` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gb_normal_model_save(nm: *const GbNormalModel, path: *const c_char) -> GbStatus {
    guard(|| Ok(pipeline::write_normal_model(handle(nm)?, Path::new(c_str(path, "path")?))?))
}

/// Copies the hyperparameters out of a handle. Any out pointer may be null.
///
/// # Safety
/// `nm` must be a live handle; non-null arrays must hold 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_normal_model_params(
    nm: *const GbNormalModel,
    sigma_star: *mut f64,
    mu_star: *mut f64,
    sigma_star_s: *mut f64,
) -> GbStatus {
    guard(|| {
        let nm = handle(nm)?;
        if !sigma_star.is_null() {
            *sigma_star = nm.sigma_star;
        }
        if !mu_star.is_null() {
            write_array(mu_star, &nm.mu_star, "mu_star")?;
        }
        if !sigma_star_s.is_null() {
            write_array(sigma_star_s, &nm.sigma_star_s, "sigma_star_s")?;
        }
        Ok(())
    })
}

/// Releases a handle. Null is accepted.
///
/// # Safety
/// `nm` must come from a `gb_normal_model_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn gb_normal_model_free(nm: *mut GbNormalModel) {
    if !nm.is_null() {
        drop(Box::from_raw(nm));
    }
}

/// Anomaly score of signature `s` fitted to the given trace.
///
/// # Safety
/// `nm` must be a live handle; `times`/`values` hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_score(
    nm: *const GbNormalModel,
    s: *const GbSignature,
    times: *const f64,
    values: *const f64,
    n: usize,
    out: *mut f64,
) -> GbStatus {
    guard(|| {
        let nm = handle(nm)?;
        let s: ShapeSignature = (*read(s, "signature")?).into();
        let tr = trace(times, values, n)?;
        write(out, anomaly::score(&s, &tr, nm), "out")
    })
}

/// Gradient of the anomaly score (7 doubles).
///
/// # Safety
/// As [`gb_score`]; `out_grad` holds 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_score_gradient(
    nm: *const GbNormalModel,
    s: *const GbSignature,
    times: *const f64,
    values: *const f64,
    n: usize,
    out_grad: *mut f64,
) -> GbStatus {
    guard(|| {
        let nm = handle(nm)?;
        let s: ShapeSignature = (*read(s, "signature")?).into();
        let tr = trace(times, values, n)?;
        write_array(out_grad, &anomaly::score_gradient(&s, &tr, nm), "out_grad")
    })
}

/// Hessian of the anomaly score, row-major 7x7.
///
/// # Safety
/// As [`gb_score`]; `out_hess` holds 49 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_score_hessian(
    nm: *const GbNormalModel,
    s: *const GbSignature,
    times: *const f64,
    values: *const f64,
    n: usize,
    out_hess: *mut f64,
) -> GbStatus {
    guard(|| {
        let nm = handle(nm)?;
        let s: ShapeSignature = (*read(s, "signature")?).into();
        let tr = trace(times, values, n)?;
        write_array(out_hess, &flatten(&anomaly::score_hessian(&s, &tr, nm)), "out_hess")
    })
}

/// Approximate score gradient at a change point between two consecutive
/// wafers, expanded about the earlier one whose trace is given.
///
/// # Safety
/// As [`gb_score`]; `out_grad` holds 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn gb_changepoint_gradient(
    nm: *const GbNormalModel,
    s_before: *const GbSignature,
    s_after: *const GbSignature,
    times_before: *const f64,
    values_before: *const f64,
    n: usize,
    out_grad: *mut f64,
) -> GbStatus {
    guard(|| {
        let nm = handle(nm)?;
        let b: ShapeSignature = (*read(s_before, "s_before")?).into();
        let a: ShapeSignature = (*read(s_after, "s_after")?).into();
        let tr = trace(times_before, values_before, n)?;
        write_array(out_grad, &anomaly::changepoint_gradient(&b, &a, &tr, nm), "out_grad")
    })
}

/// Parameter indices (0 = gamma ... 6 = x) ordered by decreasing gradient
/// magnitude.
///
/// # Safety
/// `grad` holds 7 doubles and `out_order` 7 ints.
#[no_mangle]
pub unsafe extern "C" fn gb_rank_contributors(grad: *const f64, out_order: *mut i32) -> GbStatus {
    guard(|| {
        let g: [f64; NPARAM] = read_array(grad, "grad")?;
        if out_order.is_null() {
            return Err(null("out_order"));
        }
        let ranked = anomaly::rank_contributors(&g);
        let out = std::slice::from_raw_parts_mut(out_order, NPARAM);
        for (slot, (p, _)) in out.iter_mut().zip(ranked) {
            *slot = p.index() as i32;
        }
        Ok(())
    })
}
