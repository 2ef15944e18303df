//! C interface to stabilab.
//!
//! Objects are opaque handles created by `stabilab_*_new`/`_from_json` calls
//! and released with the matching `_free`. Every fallible call returns a
//! [`StabilabStatus`]; the message of the last failure on the calling thread
//! is available from [`stabilab_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stabilab::capacity::capacity;
use stabilab::domain::{build_grid, DomainSpec};
use stabilab::eigen::{first_eigenpair, DEFAULT_MAX_ITER, DEFAULT_TOL};
use stabilab::noise::NoiseModel;
use stabilab::operator::assemble;
use stabilab::spde::{Ensemble, Simulator, SpdeConfig};
use stabilab::stability::{stability_report, StabilityInputs, Verdict};
use stabilab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

/// Parsed and validated domain.
pub struct StabilabDomain(DomainSpec);

/// Finished stochastic ensemble.
pub struct StabilabEnsemble(Ensemble);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct StabilabSimConfig {
    pub beta: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Negative for the default `horizon / 5`.
    pub burn_in: f64,
    pub paths: usize,
    pub seed: u64,
    /// Amplitude of the `φ₁` initial state.
    pub amplitude: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct StabilabThreshold {
    pub margin: f64,
    /// NaN when the margin is not positive or there are no holes.
    pub epsilon0: f64,
    pub predicted_exponent: f64,
    /// 1 when the zero state is stabilized.
    pub stabilized: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(e: Error) -> StabilabStatus {
    let status = if e.is_numerical() {
        StabilabStatus::Numerical
    } else {
        StabilabStatus::InvalidArgument
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), StabilabStatus>) -> StabilabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StabilabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            StabilabStatus::Panic
        }
    }
}

fn null(what: &str) -> StabilabStatus {
    set_error(format!("{what} is null"));
    StabilabStatus::NullPointer
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, StabilabStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        StabilabStatus::InvalidArgument
    })
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stabilab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stabilab_domain_from_json(json: *const c_char, out: *mut *mut StabilabDomain) -> StabilabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(json, "json")?;
        let spec = DomainSpec::from_json(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(StabilabDomain(spec)));
        Ok(())
    })
}

/// # Safety
/// `domain` must come from [`stabilab_domain_from_json`] and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn stabilab_domain_free(domain: *mut StabilabDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// Smallest Dirichlet eigenvalue on the lattice with `resolution` nodes per
/// unit length.
///
/// # Safety
/// `domain` and `lambda1` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stabilab_eigen(
    domain: *const StabilabDomain,
    resolution: usize,
    lambda1: *mut f64,
) -> StabilabStatus {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if lambda1.is_null() {
            return Err(null("lambda1"));
        }
        let lap = assemble(build_grid(&d.0, resolution).map_err(fail)?);
        *lambda1 = first_eigenpair(&lap, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(fail)?.lambda1;
        Ok(())
    })
}

/// Capacity of the holes of `domain` relative to its outer boundary.
///
/// # Safety
/// `domain` and `value` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stabilab_capacity(
    domain: *const StabilabDomain,
    resolution: usize,
    value: *mut f64,
) -> StabilabStatus {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        *value = capacity(&d.0, resolution).map_err(fail)?.value;
        Ok(())
    })
}

/// Margin, critical hole size and exponent bound from known eigen data.
/// `phi1_sq` holds `n_holes` values and may be null when `n_holes` is 0.
///
/// # Safety
/// `phi1_sq` must point to `n_holes` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stabilab_threshold(
    dimension: usize,
    beta: f64,
    gamma0: f64,
    rho0: f64,
    lambda1: f64,
    phi1_sq: *const f64,
    n_holes: usize,
    out: *mut StabilabThreshold,
) -> StabilabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let phi: &[f64] = if n_holes == 0 {
            &[]
        } else if phi1_sq.is_null() {
            return Err(null("phi1_sq"));
        } else {
            std::slice::from_raw_parts(phi1_sq, n_holes)
        };
        let r = stability_report(StabilityInputs {
            dimension,
            beta,
            gamma0,
            rho0,
            lambda1_base: lambda1,
            lambda1_exponent: lambda1,
            phi1_sq: phi,
        })
        .map_err(fail)?;
        *out = StabilabThreshold {
            margin: r.margin,
            epsilon0: r.epsilon0.unwrap_or(f64::NAN),
            predicted_exponent: r.predicted_exponent,
            stabilized: (r.verdict == Verdict::Stabilized) as i32,
        };
        Ok(())
    })
}

/// Defaults matching the command line: `dt = 0.005`, `T = 10`, 16 paths.
#[no_mangle]
pub extern "C" fn stabilab_sim_config_default(beta: f64) -> StabilabSimConfig {
    StabilabSimConfig {
        beta,
        dt: 0.005,
        horizon: 10.0,
        burn_in: -1.0,
        paths: 16,
        seed: 0,
        amplitude: 1.0,
    }
}

/// Runs an ensemble. `noise` uses the command-line syntax, e.g.
/// `"linear:alpha=3.4641"`.
///
/// # Safety
/// All pointers must be valid; `noise` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stabilab_simulate(
    domain: *const StabilabDomain,
    resolution: usize,
    noise: *const c_char,
    config: *const StabilabSimConfig,
    out: *mut *mut StabilabEnsemble,
) -> StabilabStatus {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let noise: NoiseModel = c_str(noise, "noise")?.parse().map_err(fail)?;
        let mut cfg = SpdeConfig::new(c.beta, noise, c.dt, c.horizon);
        cfg.burn_in = (c.burn_in >= 0.0).then_some(c.burn_in);
        cfg.paths = c.paths;
        cfg.seed = c.seed;
        cfg.initial = stabilab::spde::InitialData::Eigenfunction { amplitude: c.amplitude };
        cfg.validate().map_err(fail)?;
        let lap = assemble(build_grid(&d.0, resolution).map_err(fail)?);
        let ensemble = Simulator::new(&lap, cfg).and_then(|s| s.ensemble()).map_err(fail)?;
        *out = Box::into_raw(Box::new(StabilabEnsemble(ensemble)));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stabilab_ensemble_paths(ensemble: *const StabilabEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.paths.len())
}

/// Finite-time exponent of `log||u||²` on path `path`.
///
/// # Safety
/// `ensemble` and `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stabilab_ensemble_lyapunov(
    ensemble: *const StabilabEnsemble,
    path: usize,
    value: *mut f64,
) -> StabilabStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        if value.is_null() {
            return Err(null("value"));
        }
        let p = e.0.paths.get(path).ok_or_else(|| {
            set_error(format!("path {path} out of range ({} paths)", e.0.paths.len()));
            StabilabStatus::InvalidArgument
        })?;
        *value = p.lyapunov_hat;
        Ok(())
    })
}

/// Ensemble summary as a JSON string, to be released with
/// [`stabilab_string_free`].
///
/// # Safety
/// `ensemble` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stabilab_ensemble_summary_json(
    ensemble: *const StabilabEnsemble,
    out: *mut *mut c_char,
) -> StabilabStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string(&e.0.summary).map_err(|err| {
            set_error(err.to_string());
            StabilabStatus::Numerical
        })?;
        *out = CString::new(json).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from [`stabilab_simulate`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn stabilab_ensemble_free(ensemble: *mut StabilabEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `s` must come from this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn stabilab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
