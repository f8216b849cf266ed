//! The gamma-count distribution.
//!
//! `Y(t)` counts the arrivals in `(0, t]` of a renewal process whose
//! inter-arrival times are i.i.d. `Gamma(alpha, gamma)` (shape, rate). Its pmf
//! is a difference of regularized incomplete gamma functions:
//!
//! `P(Y = y) = G(y·alpha, gamma·t) − G((y + 1)·alpha, gamma·t)`.
//!
//! `alpha = 1` is the Poisson law; `alpha > 1` is under-dispersed and
//! `alpha < 1` over-dispersed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::specfun::{ln_gamma_raw, reg_gamma_pair};

/// `ln(1e-300)`: log-pmf values are clamped here so optimizers never see −∞.
pub const DEFAULT_LOG_FLOOR: f64 = -690.775_527_898_213_7;

/// Iteration cap for the mean/variance series.
pub const MAX_SERIES_TERMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcParams {
    pub alpha: f64,
    pub gamma: f64,
    pub t: f64,
}

impl GcParams {
    /// Unit observation window, as used throughout the regression layer.
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        Self::with_window(alpha, gamma, 1.0)
    }

    pub fn with_window(alpha: f64, gamma: f64, t: f64) -> Result<Self> {
        for (v, name) in [(alpha, "alpha > 0"), (gamma, "gamma > 0"), (t, "t > 0")] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain("GcParams", v, name));
            }
        }
        Ok(Self { alpha, gamma, t })
    }

    /// Regression parameterization `gamma = alpha · exp(eta)`.
    pub fn from_predictor(alpha: f64, eta: f64) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::domain("GcParams::from_predictor", eta, "finite eta"));
        }
        Self::new(alpha, alpha * eta.exp())
    }

    fn scaled_rate(&self) -> f64 {
        self.gamma * self.t
    }
}

/// `P(Y = y)`.
///
/// When both incomplete gammas exceed 1/2 the difference is taken between
/// the upper tails instead, which are then the small quantities.
pub fn gc_pmf(params: &GcParams, y: u64) -> Result<f64> {
    let x = params.scaled_rate();
    let a1 = y as f64 * params.alpha;
    let a2 = a1 + params.alpha;
    let (p1, q1) = reg_gamma_pair(a1, x)?;
    let (p2, q2) = reg_gamma_pair(a2, x)?;
    let p = if p2 > 0.5 { q2 - q1 } else { p1 - p2 };
    Ok(p.clamp(0.0, 1.0))
}

/// `ln P(Y = y)`, floored at [`DEFAULT_LOG_FLOOR`].
pub fn gc_log_pmf(params: &GcParams, y: u64) -> Result<f64> {
    gc_log_pmf_with_floor(params, y, DEFAULT_LOG_FLOOR)
}

pub fn gc_log_pmf_with_floor(params: &GcParams, y: u64, floor: f64) -> Result<f64> {
    let p = gc_pmf(params, y)?;
    Ok(if p > 0.0 { p.ln().max(floor) } else { floor })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcMoments {
    pub mean: f64,
    pub variance: f64,
    /// Index of the last series term included.
    pub truncation_k: usize,
    /// Estimated bound on the neglected tail of either series.
    pub tail_bound: f64,
}

/// Mean and variance from the renewal series
/// `E[Y] = Σ_k G(kα, γt)` and `E[Y²] = Σ_k (2k − 1) G(kα, γt)`.
///
/// Stops once `k > γt/α + 10`, the current term is below `tol` and the
/// geometric tail estimate of both series is below `tol`.
pub fn gc_mean(params: &GcParams, tol: f64) -> Result<GcMoments> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::domain("gc_mean", tol, "tol > 0"));
    }
    let x = params.scaled_rate();
    let k_min = x / params.alpha + 10.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut prev = f64::NAN;
    for k in 1..=MAX_SERIES_TERMS {
        let term = reg_gamma_pair(k as f64 * params.alpha, x)?.0;
        mean += term;
        second += (2 * k - 1) as f64 * term;
        if (k as f64) > k_min && term < tol {
            let ratio = if prev > 0.0 { (term / prev).min(0.999) } else { 0.0 };
            let geom = ratio / (1.0 - ratio);
            let tail_mean = term * geom;
            let tail_second = (2 * k + 1) as f64 * term * geom / (1.0 - ratio);
            let tail_bound = tail_mean.max(tail_second);
            if tail_bound < tol || term == 0.0 {
                return Ok(GcMoments {
                    mean,
                    variance: (second - mean * mean).max(0.0),
                    truncation_k: k,
                    tail_bound,
                });
            }
        }
        prev = term;
    }
    Err(Error::Convergence {
        what: "gamma-count mean series",
        iterations: MAX_SERIES_TERMS,
    })
}

/// One renewal draw: count gamma inter-arrival times until their running sum
/// passes the window length.
pub fn gc_draw<R: Rng + ?Sized>(params: &GcParams, rng: &mut R) -> u64 {
    let gamma = Gamma::new(params.alpha, 1.0 / params.gamma).expect("validated parameters");
    let mut elapsed = 0.0;
    let mut count = 0u64;
    loop {
        elapsed += gamma.sample(rng);
        if elapsed > params.t {
            return count;
        }
        count += 1;
    }
}

/// `n` renewal draws, deterministic in `seed`.
pub fn gc_sample(params: &GcParams, seed: u64, n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::domain("gc_sample", 0.0, "n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| gc_draw(params, &mut rng)).collect())
}

/// Log-likelihood and its first two derivatives in the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    /// The pmf hit the floor; derivatives are set to zero there.
    pub floored: bool,
}

/// `ln u(a, γ)` where `u = γ^a e^{−γ} / Γ(a) = γ · ∂G(a, γ)/∂γ`.
fn ln_u(a: f64, gamma: f64) -> f64 {
    if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        a * gamma.ln() - gamma - ln_gamma_raw(a)
    }
}

/// Exact derivatives of `ln P(y | alpha, gamma = alpha·e^eta)` in `eta`.
///
/// With `p = G(a₁, γ) − G(a₂, γ)`, `a₁ = yα`, `a₂ = a₁ + α` and
/// `u(a) = γ^a e^{−γ}/Γ(a)`:
/// `dp/dη = u(a₁) − u(a₂)` and `d²p/dη² = (a₁ − γ)u(a₁) − (a₂ − γ)u(a₂)`.
pub fn gc_loglik_derivs(alpha: f64, eta: f64, y: u64) -> Result<LogLikDerivs> {
    let params = GcParams::from_predictor(alpha, eta)?;
    let gamma = params.gamma;
    let value = gc_log_pmf(&params, y)?;
    if value <= DEFAULT_LOG_FLOOR {
        return Ok(LogLikDerivs {
            value,
            d1: 0.0,
            d2: 0.0,
            floored: true,
        });
    }
    let a1 = y as f64 * alpha;
    let a2 = a1 + alpha;
    let r1 = (ln_u(a1, gamma) - value).exp();
    let r2 = (ln_u(a2, gamma) - value).exp();
    let d1 = r1 - r2;
    let d2 = (a1 - gamma) * r1 - (a2 - gamma) * r2 - d1 * d1;
    Ok(LogLikDerivs {
        value,
        d1,
        d2,
        floored: false,
    })
}
