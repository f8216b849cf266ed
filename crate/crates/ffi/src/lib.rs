//! C ABI over `gcstar`.
//!
//! Every function returns a [`GcsStatus`]; on failure the message is kept in
//! thread-local storage and read back with [`gcs_last_error_message`].
//! Fits are returned as opaque [`GcsFit`] handles released by
//! [`gcs_fit_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gcstar::gc_dist::{gc_log_pmf, gc_mean, gc_pmf, GcParams};
use gcstar::harness::{fit_from_files, FitReport, RunConfig};
use gcstar::priors::{kld_gamma, pc_alpha_calibrate, scale_dependent_rate};
use gcstar::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcsStatus {
    Ok = 0,
    Domain = 1,
    Convergence = 2,
    Calibration = 3,
    Dimension = 4,
    Design = 5,
    Graph = 6,
    Parse = 7,
    Config = 8,
    TooManyHyper = 9,
    Index = 10,
    UnknownLevel = 11,
    Io = 12,
    NullPointer = 13,
    InvalidUtf8 = 14,
    Panic = 15,
}

impl From<&Error> for GcsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain { .. } => Self::Domain,
            Error::Convergence { .. } => Self::Convergence,
            Error::Calibration(_) => Self::Calibration,
            Error::Dimension(_) => Self::Dimension,
            Error::DegenerateDesign(_) => Self::Design,
            Error::GraphFormat { .. } => Self::Graph,
            Error::Parse { .. } => Self::Parse,
            Error::Config(_) => Self::Config,
            Error::TooManyHyperparameters(_) => Self::TooManyHyper,
            Error::IndexOutOfRange { .. } => Self::Index,
            Error::UnknownLevel(_) => Self::UnknownLevel,
            Error::Io { .. } => Self::Io,
        }
    }
}

/// Posterior summary of one parameter.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GcsSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GcsScores {
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub log_score: f64,
    pub cpo_failures: usize,
}

/// Opaque fitted model.
pub struct GcsFit {
    report: FitReport,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), (GcsStatus, String)>) -> GcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GcsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GcsStatus::Panic
        }
    }
}

fn lift<T>(r: gcstar::Result<T>) -> Result<T, (GcsStatus, String)> {
    r.map_err(|e| (GcsStatus::from(&e), format!("{}: {e}", e.code())))
}

fn null() -> (GcsStatus, String) {
    (GcsStatus::NullPointer, "null pointer argument".into())
}

/// # Safety
/// `out` must be null or point to writable memory for one value.
unsafe fn write<T>(out: *mut T, v: T) -> Result<(), (GcsStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, (GcsStatus, String)> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (GcsStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn gcs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// `P(Y = y)` for the gamma-count law with shape `alpha` and rate `gamma`.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gcs_pmf(alpha: f64, gamma: f64, y: u64, out: *mut f64) -> GcsStatus {
    guard(|| {
        let p = lift(GcParams::new(alpha, gamma))?;
        write(out, lift(gc_pmf(&p, y))?)
    })
}

/// Log of [`gcs_pmf`], floored at `ln(1e-300)`.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gcs_log_pmf(alpha: f64, gamma: f64, y: u64, out: *mut f64) -> GcsStatus {
    guard(|| {
        let p = lift(GcParams::new(alpha, gamma))?;
        write(out, lift(gc_log_pmf(&p, y))?)
    })
}

/// Mean and variance by series summation to tolerance `tol`.
///
/// # Safety
/// `mean` and `variance` must point to writable `double`s.
#[no_mangle]
pub unsafe extern "C" fn gcs_mean(alpha: f64, gamma: f64, tol: f64, mean: *mut f64, variance: *mut f64) -> GcsStatus {
    guard(|| {
        let p = lift(GcParams::new(alpha, gamma))?;
        let m = lift(gc_mean(&p, tol))?;
        write(mean, m.mean)?;
        write(variance, m.variance)
    })
}

/// Kullback-Leibler divergence of Gamma(alpha, rate ratio) from the exponential base.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gcs_kld_gamma(alpha: f64, rate_ratio: f64, out: *mut f64) -> GcsStatus {
    guard(|| write(out, lift(kld_gamma(alpha, rate_ratio))?))
}

/// PC-prior rate λ from `P(d > u) = a`.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gcs_pc_calibrate(u: f64, a: f64, out: *mut f64) -> GcsStatus {
    guard(|| write(out, lift(pc_alpha_calibrate(u, a))?))
}

/// Scale-dependent rate θ from `P(σ > u) = a`.
///
/// # Safety
/// `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn gcs_sd_calibrate(u: f64, a: f64, out: *mut f64) -> GcsStatus {
    guard(|| write(out, lift(scale_dependent_rate(u, a))?))
}

/// Fits the model described by a TOML run configuration. Report files go to
/// `out_dir`, or to the configured output directory when it is null.
///
/// # Safety
/// `config_path` must be a valid C string, `out_dir` null or a valid C
/// string, and `out` must point to a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_from_config(
    config_path: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut GcsFit,
) -> GcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg = lift(RunConfig::from_file(Path::new(read_str(config_path)?)))?;
        let dir = if out_dir.is_null() {
            cfg.output_dir()
        } else {
            read_str(out_dir)?.into()
        };
        let report = lift(fit_from_files(&cfg, &dir))?;
        let labels = report
            .fit
            .engine
            .latent_labels()
            .into_iter()
            .map(|l| CString::new(l).unwrap_or_default())
            .collect();
        out.write(Box::into_raw(Box::new(GcsFit { report, labels })));
        Ok(())
    })
}

/// Length of the latent vector (intercept first).
///
/// # Safety
/// `fit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_latent_len(fit: *const GcsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.report.fit.latent_marginals.len())
}

/// Label of latent element `index`, owned by the handle.
///
/// # Safety
/// `fit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_latent_label(fit: *const GcsFit, index: usize) -> *const c_char {
    match fit.as_ref().and_then(|f| f.labels.get(index)) {
        Some(l) => l.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Posterior marginal summary of latent element `index`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_latent_marginal(fit: *const GcsFit, index: usize, out: *mut GcsSummary) -> GcsStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(null)?;
        let m = &f.report.fit.latent_marginals;
        let s = m.get(index).ok_or_else(|| {
            (
                GcsStatus::Index,
                format!("E_INDEX: index {index} out of range for length {}", m.len()),
            )
        })?;
        write(
            out,
            GcsSummary {
                mean: s.mean,
                sd: s.sd,
                q025: s.q025,
                q500: s.q500,
                q975: s.q975,
            },
        )
    })
}

/// Posterior mean of α (gamma-count), the size (negative binomial) or 1 (Poisson).
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_dispersion_mean(fit: *const GcsFit, out: *mut f64) -> GcsStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(null)?;
        write(out, f.report.fit.dispersion_mean())
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_scores(fit: *const GcsFit, out: *mut GcsScores) -> GcsStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(null)?;
        let s = &f.report.scores;
        write(
            out,
            GcsScores {
                dic: s.dic,
                p_d: s.p_d,
                waic: s.waic,
                p_waic: s.p_waic,
                log_score: s.log_score,
                cpo_failures: s.cpo_failures,
            },
        )
    })
}

/// Releases a handle from [`gcs_fit_from_config`]; null is ignored.
///
/// # Safety
/// `fit` must come from [`gcs_fit_from_config`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gcs_fit_free(fit: *mut GcsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
