//! Special functions: log-gamma, digamma, trigamma and the regularized
//! incomplete gamma function.
//!
//! Everything is evaluated on finite `f64` only. NaN and infinite inputs are
//! rejected with [`Error::Domain`] rather than propagated.

use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_ITER: usize = 100_000;

/// Number of Taylor terms used for `ln Γ(1 + z)`, |z| ≤ 1/2.
const TAYLOR_TERMS: usize = 40;

/// `ζ(k) − 1` for k = 0..TAYLOR_TERMS (entries 0 and 1 unused).
static ZETA_MINUS_ONE: LazyLock<[f64; TAYLOR_TERMS]> = LazyLock::new(|| {
    let mut out = [0.0; TAYLOR_TERMS];
    // Direct sum over n = 2..M-1, Euler-Maclaurin tail from M.
    const M: f64 = 30.0;
    for (k, slot) in out.iter_mut().enumerate().skip(2) {
        let kf = k as f64;
        let mut s = 0.0;
        for n in (2..30).rev() {
            s += (n as f64).powf(-kf);
        }
        let f = M.powf(-kf);
        let mut tail = M * f / (kf - 1.0) + 0.5 * f;
        // Bernoulli corrections: B2, B4, B6, B8, B10.
        let rising = |j: usize| (0..j).map(|i| kf + i as f64).product::<f64>();
        tail += rising(1) * f / M / 12.0;
        tail -= rising(3) * f / M.powi(3) / 720.0;
        tail += rising(5) * f / M.powi(5) / 30_240.0;
        tail -= rising(7) * f / M.powi(7) / 1_209_600.0;
        tail += rising(9) * f / M.powi(9) / 47_900_160.0;
        *slot = s + tail;
    }
    out
});

fn check_finite(func: &'static str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(func, x, "finite value"))
    }
}

/// `ln Γ(2 + z)` for |z| ≤ 1/2, free of cancellation near z = 0.
fn ln_gamma_2p(z: f64) -> f64 {
    let zm1 = &*ZETA_MINUS_ONE;
    let mut acc = 0.0;
    let mut zk = z;
    for (k, c) in zm1.iter().enumerate().skip(2) {
        zk *= z;
        let term = c * zk / k as f64;
        if k % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    z * (1.0 - EULER_GAMMA) + acc
}

fn ln_gamma_stirling(x: f64) -> f64 {
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv;
    for c in C {
        series += c * p;
        p *= inv2;
    }
    (x - 0.5) * x.ln() - x + LN_SQRT_2PI + series
}

pub(crate) fn ln_gamma_raw(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x) = Γ(1 + x) / x, with 1 + x in [1, 1.5).
        ln_gamma_1p(x) - x.ln()
    } else if x < 1.5 {
        ln_gamma_1p(x - 1.0)
    } else if x < 2.5 {
        ln_gamma_2p(x - 2.0)
    } else if x < 10.0 {
        let mut prod = 1.0;
        let mut y = x;
        while y < 10.0 {
            prod *= y;
            y += 1.0;
        }
        ln_gamma_stirling(y) - prod.ln()
    } else {
        ln_gamma_stirling(x)
    }
}

/// `ln Γ(1 + z)` for |z| ≤ 1/2.
fn ln_gamma_1p(z: f64) -> f64 {
    ln_gamma_2p(z) - z.ln_1p()
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_finite("ln_gamma", x)?;
    if x <= 0.0 {
        return Err(Error::domain("ln_gamma", x, "x > 0"));
    }
    Ok(ln_gamma_raw(x))
}

pub(crate) fn digamma_raw(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // -Σ B_{2k} / (2k x^{2k})
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Digamma function ψ(x) = d/dx ln Γ(x), `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_finite("digamma", x)?;
    if x <= 0.0 {
        return Err(Error::domain("digamma", x, "x > 0"));
    }
    Ok(digamma_raw(x))
}

pub(crate) fn trigamma_raw(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + series
}

/// Trigamma function ψ′(x), `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    check_finite("trigamma", x)?;
    if x <= 0.0 {
        return Err(Error::domain("trigamma", x, "x > 0"));
    }
    Ok(trigamma_raw(x))
}

/// Both regularized incomplete gamma tails `(P(a, x), Q(a, x))`.
///
/// The tail that is small in the current regime is computed directly, the
/// other one as its complement. `a = 0` gives `(1, 0)`: the zeroth arrival
/// time of a renewal process is identically zero.
pub fn reg_gamma_pair(a: f64, x: f64) -> Result<(f64, f64)> {
    check_finite("reg_lower_gamma", a)?;
    check_finite("reg_lower_gamma", x)?;
    if a < 0.0 {
        return Err(Error::domain("reg_lower_gamma", a, "a >= 0"));
    }
    if x < 0.0 {
        return Err(Error::domain("reg_lower_gamma", x, "x >= 0"));
    }
    if a == 0.0 {
        return Ok((1.0, 0.0));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_pref = a * x.ln() - x - ln_gamma_raw(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * f64::EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                what: "incomplete gamma series",
                iterations: MAX_ITER,
            });
        }
        let p = (sum.ln() + log_pref).exp().min(1.0);
        Ok((p, 1.0 - p))
    } else {
        // Modified Lentz evaluation of the continued fraction for Q.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut converged = false;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < f64::EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                what: "incomplete gamma continued fraction",
                iterations: MAX_ITER,
            });
        }
        let q = (h.ln() + log_pref).exp().min(1.0);
        Ok((1.0 - q, q))
    }
}

/// Regularized lower incomplete gamma `G(a, x) = γ(a, x) / Γ(a)`.
pub fn reg_lower_gamma(a: f64, x: f64) -> Result<f64> {
    reg_gamma_pair(a, x).map(|(p, _)| p)
}

/// Regularized upper incomplete gamma `1 − G(a, x)`.
pub fn reg_upper_gamma(a: f64, x: f64) -> Result<f64> {
    reg_gamma_pair(a, x).map(|(_, q)| q)
}

/// Log of the Gamma(a, 1) density `x^{a−1} e^{−x} / Γ(a)`, i.e. the
/// derivative of `G(a, ·)` at `x`.
pub fn ln_gamma_density(a: f64, x: f64) -> Result<f64> {
    check_finite("ln_gamma_density", a)?;
    check_finite("ln_gamma_density", x)?;
    if a <= 0.0 || x <= 0.0 {
        return Err(Error::domain("ln_gamma_density", a.min(x), "a > 0, x > 0"));
    }
    Ok((a - 1.0) * x.ln() - x - ln_gamma_raw(a))
}

/// Standard normal CDF via `erfc(t) = Q(1/2, t²)`.
pub fn normal_cdf(z: f64) -> f64 {
    if !z.is_finite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    let t = z / std::f64::consts::SQRT_2;
    let q = reg_gamma_pair(0.5, t * t).map(|(_, q)| q).unwrap_or(0.0);
    if z >= 0.0 {
        1.0 - 0.5 * q
    } else {
        0.5 * q
    }
}

/// Log of the standard normal density.
pub fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `ln n!` for nonnegative integers.
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma_raw(n as f64 + 1.0)
}
