//! Prior catalog: the penalized-complexity prior for the gamma-count
//! dispersion, the scale-dependent prior for smoothing variances, and the
//! competing gamma / inverse-gamma / half-Cauchy / flat alternatives.
//!
//! All densities are exposed in log form so they compose directly into the
//! joint log-posterior.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::numeric::{bisect, integrate, integrate_to_inf};
use crate::specfun::{digamma_raw, ln_gamma_raw, trigamma_raw};

const ZETA3: f64 = 1.202_056_903_159_594_3;
const KLD_CLAMP: f64 = -1e-12;
/// Below this |α − 1| the equal-rate distance uses its Taylor expansion.
const TAYLOR_RADIUS: f64 = 1e-3;

fn positive(func: &'static str, v: f64, what: &'static str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(func, v, what))
    }
}

/// `KLD(Gamma(α, β₁) ‖ Gamma(1, β₂))` with `R = β₁/β₂`:
/// `−ln Γ(α) + (α − 1)ψ(α) + ln R − α(1 − 1/R)`.
pub fn kld_gamma(alpha: f64, rate_ratio: f64) -> Result<f64> {
    positive("kld_gamma", alpha, "alpha > 0")?;
    positive("kld_gamma", rate_ratio, "rate_ratio > 0")?;
    let k = kld_raw(alpha, rate_ratio);
    if k < KLD_CLAMP {
        return Err(Error::domain("kld_gamma", k, "nonnegative divergence"));
    }
    Ok(k.max(0.0))
}

fn kld_raw(alpha: f64, r: f64) -> f64 {
    if r == 1.0 && (alpha - 1.0).abs() < TAYLOR_RADIUS {
        let delta = alpha - 1.0;
        return 0.5 * delta * delta * equal_rate_scaled(delta).powi(2);
    }
    -ln_gamma_raw(alpha) + (alpha - 1.0) * digamma_raw(alpha) + r.ln() - alpha * (1.0 - 1.0 / r)
}

/// `d(α)/|α − 1|` for `R = 1` near the base model, from
/// `KLD = ψ′(1)δ²/2 − (2/3)ζ(3)δ³ + (π⁴/120)δ⁴ + O(δ⁵)`.
fn equal_rate_scaled(delta: f64) -> f64 {
    let psi1 = PI * PI / 6.0;
    (psi1 - 4.0 / 3.0 * ZETA3 * delta + PI.powi(4) / 60.0 * delta * delta).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// α below the distance minimizer (over-dispersion side when R = 1).
    Below,
    /// At the minimizer.
    Base,
    /// α above the minimizer.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceValue {
    pub d: f64,
    pub direction: Branch,
}

/// `d = √(2·KLD)`; the branch is the side of α = 1.
pub fn pc_distance(alpha: f64, rate_ratio: f64) -> Result<DistanceValue> {
    let k = kld_gamma(alpha, rate_ratio)?;
    let direction = match alpha.partial_cmp(&1.0) {
        Some(std::cmp::Ordering::Less) => Branch::Below,
        Some(std::cmp::Ordering::Greater) => Branch::Above,
        _ => Branch::Base,
    };
    Ok(DistanceValue {
        d: (2.0 * k).sqrt(),
        direction,
    })
}

/// Penalized-complexity prior for the gamma-count dispersion α.
///
/// The distance is exponential with rate `lambda`. Because `d(α)` is
/// two-to-one, each side of the minimizer carries half of the mass; the
/// resulting constant is computed by quadrature at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcAlphaPrior {
    pub lambda: f64,
    pub rate_ratio: f64,
    pub normalization: f64,
    /// Minimizer of `d(α)`; equals 1 for equal rates.
    pub alpha_min: f64,
    pub d_min: f64,
}

impl PcAlphaPrior {
    pub fn new(lambda: f64, rate_ratio: f64) -> Result<Self> {
        positive("PcAlphaPrior", lambda, "lambda > 0")?;
        positive("PcAlphaPrior", rate_ratio, "rate_ratio > 0")?;
        let alpha_min = if rate_ratio == 1.0 {
            1.0
        } else {
            // (α − 1)ψ′(α) is increasing from −∞ to 1; 1 − 1/R lies in that range.
            let target = 1.0 - 1.0 / rate_ratio;
            bisect(
                |la: f64| {
                    let a = la.exp();
                    (a - 1.0) * trigamma_raw(a) - target
                },
                -30.0,
                30.0,
                1e-15,
            )?
            .exp()
        };
        let d_min = (2.0 * kld_raw(alpha_min, rate_ratio).max(0.0)).sqrt();
        let mut prior = Self {
            lambda,
            rate_ratio,
            normalization: 1.0,
            alpha_min,
            d_min,
        };
        let f = |a: f64| prior.unnormalized(a);
        let below = integrate(f, 0.0, alpha_min, 1e-11)?;
        let above = integrate_to_inf(f, alpha_min, 1e-11)?;
        prior.normalization = 1.0 / (below + above);
        Ok(prior)
    }

    pub fn equal_rate(lambda: f64) -> Result<Self> {
        Self::new(lambda, 1.0)
    }

    /// `(d(α), |d′(α)|)`.
    pub fn distance_and_slope(&self, alpha: f64) -> (f64, f64) {
        let r = self.rate_ratio;
        if r == 1.0 && (alpha - 1.0).abs() < TAYLOR_RADIUS {
            let delta = alpha - 1.0;
            let scaled = equal_rate_scaled(delta);
            // d′ = (α − 1)ψ′(α)/d = sign(δ) ψ′(α)/scaled
            return (delta.abs() * scaled, trigamma_raw(alpha) / scaled);
        }
        let d = (2.0 * kld_raw(alpha, r).max(0.0)).sqrt();
        let dk = (alpha - 1.0) * trigamma_raw(alpha) - (1.0 - 1.0 / r);
        let slope = if d > 0.0 { (dk / d).abs() } else { 0.0 };
        (d, slope)
    }

    fn unnormalized(&self, alpha: f64) -> f64 {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return 0.0;
        }
        let (d, slope) = self.distance_and_slope(alpha);
        let v = self.lambda * (-self.lambda * d).exp() * slope;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    /// Density in α; zero outside `(0, ∞)`.
    pub fn density(&self, alpha: f64) -> f64 {
        self.normalization * self.unnormalized(alpha)
    }

    pub fn log_density(&self, alpha: f64) -> f64 {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (d, slope) = self.distance_and_slope(alpha);
        self.normalization.ln() + self.lambda.ln() - self.lambda * d + slope.ln()
    }

    /// Prior mass of `{α : d(α) ≤ u}` by quadrature of the α-density.
    pub fn distance_mass_below(&self, u: f64) -> Result<f64> {
        if u <= self.d_min {
            return Ok(0.0);
        }
        let (lo, hi) = self.distance_level_set(u)?;
        let f = |a: f64| self.density(a);
        Ok(integrate(f, lo, self.alpha_min, 1e-12)? + integrate(f, self.alpha_min, hi, 1e-12)?)
    }

    /// The two α values with `d(α) = u`, one on each side of the minimizer.
    pub fn distance_level_set(&self, u: f64) -> Result<(f64, f64)> {
        let g = |la: f64| self.distance_and_slope(la.exp()).0 - u;
        let m = self.alpha_min.ln();
        let lo = bisect(g, -700.0, m, 1e-15)?.exp();
        let hi = bisect(g, m, 300.0, 1e-15)?.exp();
        Ok((lo, hi))
    }

    /// Exact draw: distance from its exponential law, branch by a fair coin,
    /// then invert `d` on that branch.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let exp = Exp::new(self.lambda).expect("lambda > 0");
        let d = self.d_min + exp.sample(rng);
        let (lo, hi) = self
            .distance_level_set(d)
            .unwrap_or((self.alpha_min, self.alpha_min));
        if rng.gen_bool(0.5) {
            lo
        } else {
            hi
        }
    }
}

/// Shrinkage rate solving `P(d(α) > u) = a` under the exponential distance
/// law: `λ = −ln(a)/u`. Only meaningful for equal inter-arrival rates, where
/// the distance can reach zero.
pub fn pc_alpha_calibrate(u: f64, a: f64) -> Result<f64> {
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::Calibration(format!("distance bound u must be > 0, got {u}")));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Calibration(format!("tail mass a must lie in (0, 1), got {a}")));
    }
    Ok(-a.ln() / u)
}

/// Calibrates λ and re-derives the tail mass `P(d > u)` by integrating the
/// normalized α-density over the set `{d ≤ u}`.
pub fn pc_alpha_calibrate_checked(u: f64, a: f64) -> Result<(f64, f64)> {
    let lambda = pc_alpha_calibrate(u, a)?;
    let prior = PcAlphaPrior::equal_rate(lambda)?;
    Ok((lambda, 1.0 - prior.distance_mass_below(u)?))
}

/// Normalized PC density of α; zero outside the support.
pub fn pc_alpha_density(prior: &PcAlphaPrior, alpha: f64) -> f64 {
    prior.density(alpha)
}

/// Rate `θ` of the exponential law on σ solving `P(σ > u) = a`.
pub fn scale_dependent_rate(u: f64, a: f64) -> Result<f64> {
    pc_alpha_calibrate(u, a)
}

/// Weibull(shape 1/2, scale ε) density of a variance σ²:
/// `(1/(2ε)) (σ²/ε)^{−1/2} exp(−(σ²/ε)^{1/2})`.
///
/// Equivalently σ is exponential with rate `1/√ε`.
pub fn scale_dependent_density(epsilon: f64, sigma2: f64) -> Result<f64> {
    positive("scale_dependent_density", epsilon, "epsilon > 0")?;
    positive("scale_dependent_density", sigma2, "sigma2 > 0")?;
    let s = (sigma2 / epsilon).sqrt();
    Ok((-s).exp() / (2.0 * epsilon * s))
}

/// Prior on a dispersion-like positive parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPrior {
    Pc(PcAlphaPrior),
    /// Gamma with shape and rate.
    Gamma { shape: f64, rate: f64 },
}

impl AlphaPrior {
    pub fn pc(lambda: f64, rate_ratio: f64) -> Result<Self> {
        PcAlphaPrior::new(lambda, rate_ratio).map(AlphaPrior::Pc)
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("AlphaPrior::gamma", shape, "shape > 0")?;
        positive("AlphaPrior::gamma", rate, "rate > 0")?;
        Ok(AlphaPrior::Gamma { shape, rate })
    }

    pub fn log_density(&self, alpha: f64) -> f64 {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self {
            AlphaPrior::Pc(p) => p.log_density(alpha),
            AlphaPrior::Gamma { shape, rate } => {
                shape * rate.ln() - ln_gamma_raw(*shape) + (shape - 1.0) * alpha.ln() - rate * alpha
            }
        }
    }

    /// Log-density of `ln α` (includes the Jacobian `α`).
    pub fn log_density_log_scale(&self, log_alpha: f64) -> f64 {
        self.log_density(log_alpha.exp()) + log_alpha
    }
}

impl fmt::Display for AlphaPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaPrior::Pc(p) if p.rate_ratio == 1.0 => write!(f, "PC({})", p.lambda),
            AlphaPrior::Pc(p) => write!(f, "PC({},{})", p.lambda, p.rate_ratio),
            AlphaPrior::Gamma { shape, rate } => write!(f, "G({shape},{rate})"),
        }
    }
}

/// Hyperprior for a smoothing variance σ² = 1/τ, evaluated on τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariancePrior {
    /// σ ~ Exp(theta); the Weibull(1/2) law on σ² with ε = θ⁻².
    ScaleDependent { theta: f64 },
    /// `p(σ²) ∝ (1 + σ²/ε²)⁻¹ (σ²/ε²)^{−1/2}`.
    GeneralizedBetaPrime { epsilon: f64 },
    /// Gamma(shape, rate) on τ.
    Gamma { shape: f64, rate: f64 },
    /// Inverse-gamma(shape, scale) on σ².
    InverseGamma { shape: f64, scale: f64 },
    /// Half-normal on σ.
    HalfNormal { scale: f64 },
    /// Half-Cauchy on σ.
    HalfCauchy { scale: f64 },
    /// Uniform on τ.
    FlatUniform { lower: f64, upper: f64 },
}

impl VariancePrior {
    /// Scale-dependent prior with tail statement `P(σ > u) = a`.
    pub fn scale_dependent(u: f64, a: f64) -> Result<Self> {
        Ok(VariancePrior::ScaleDependent {
            theta: scale_dependent_rate(u, a)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let f = "VariancePrior";
        match *self {
            VariancePrior::ScaleDependent { theta } => positive(f, theta, "theta > 0"),
            VariancePrior::GeneralizedBetaPrime { epsilon } => positive(f, epsilon, "epsilon > 0"),
            VariancePrior::Gamma { shape, rate } => {
                positive(f, shape, "shape > 0")?;
                positive(f, rate, "rate > 0")
            }
            VariancePrior::InverseGamma { shape, scale } => {
                positive(f, shape, "shape > 0")?;
                positive(f, scale, "scale > 0")
            }
            VariancePrior::HalfNormal { scale } | VariancePrior::HalfCauchy { scale } => {
                positive(f, scale, "scale > 0")
            }
            VariancePrior::FlatUniform { lower, upper } => {
                if lower >= 0.0 && upper > lower && upper.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain(f, upper, "0 <= lower < upper < inf"))
                }
            }
        }
    }

    /// Log-density of the precision τ, including the change of variables
    /// for families defined on σ² or σ.
    pub fn log_density_tau(&self, tau: f64) -> f64 {
        if !(tau > 0.0) || !tau.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ln_tau = tau.ln();
        // |dσ²/dτ| = τ⁻², |dσ/dτ| = τ^{−3/2}/2
        let jac_var = -2.0 * ln_tau;
        let jac_sd = -1.5 * ln_tau - std::f64::consts::LN_2;
        match *self {
            VariancePrior::ScaleDependent { theta } => {
                let sigma = tau.powf(-0.5);
                theta.ln() - theta * sigma + jac_sd
            }
            VariancePrior::GeneralizedBetaPrime { epsilon } => {
                let v = 1.0 / (tau * epsilon * epsilon);
                -(PI * epsilon * epsilon).ln() - 0.5 * v.ln() - v.ln_1p() + jac_var
            }
            VariancePrior::Gamma { shape, rate } => {
                shape * rate.ln() - ln_gamma_raw(shape) + (shape - 1.0) * ln_tau - rate * tau
            }
            VariancePrior::InverseGamma { shape, scale } => {
                let s2 = 1.0 / tau;
                shape * scale.ln() - ln_gamma_raw(shape) - (shape + 1.0) * s2.ln() - scale / s2 + jac_var
            }
            VariancePrior::HalfNormal { scale } => {
                let sigma = tau.powf(-0.5);
                (2.0 / (scale * (2.0 * PI).sqrt())).ln() - 0.5 * (sigma / scale).powi(2) + jac_sd
            }
            VariancePrior::HalfCauchy { scale } => {
                let sigma = tau.powf(-0.5);
                (2.0 / (PI * scale)).ln() - (sigma / scale).powi(2).ln_1p() + jac_sd
            }
            VariancePrior::FlatUniform { lower, upper } => {
                if tau >= lower && tau <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Log-density of `ln τ` (includes the Jacobian τ).
    pub fn log_density_log_tau(&self, log_tau: f64) -> f64 {
        self.log_density_tau(log_tau.exp()) + log_tau
    }
}

impl fmt::Display for VariancePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VariancePrior::ScaleDependent { theta } => write!(f, "SD[theta={theta}]"),
            VariancePrior::GeneralizedBetaPrime { epsilon } => write!(f, "GBP({epsilon})"),
            VariancePrior::Gamma { shape, rate } => write!(f, "G({shape},{rate})"),
            VariancePrior::InverseGamma { shape, scale } => write!(f, "IG({shape},{scale})"),
            VariancePrior::HalfNormal { scale } => write!(f, "HN({scale})"),
            VariancePrior::HalfCauchy { scale } => write!(f, "HC({scale})"),
            VariancePrior::FlatUniform { lower, upper } => write!(f, "Flat({lower},{upper})"),
        }
    }
}

/// Log-density of the precision τ under `prior`.
pub fn variance_prior_logdensity(prior: &VariancePrior, tau: f64) -> f64 {
    prior.log_density_tau(tau)
}

/// Splits `NAME(a,b,...)` or a bare `NAME` into the name and its arguments.
fn split_call(s: &str) -> Result<(String, Vec<f64>)> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse prior `{s}`"));
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), vec![]));
    };
    if !s.ends_with(')') {
        return Err(bad());
    }
    let name = s[..open].trim().to_string();
    let inner = &s[open + 1..s.len() - 1];
    let args = inner
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    Ok((name, args))
}

impl FromStr for AlphaPrior {
    type Err = Error;

    /// `PC(λ)`, `PC(λ,R)`, `G(shape,rate)`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        match (name.to_ascii_uppercase().as_str(), args.as_slice()) {
            ("PC", [l]) => AlphaPrior::pc(*l, 1.0),
            ("PC", [l, r]) => AlphaPrior::pc(*l, *r),
            ("G" | "GAMMA", [a, b]) => AlphaPrior::gamma(*a, *b),
            _ => Err(Error::Config(format!("unknown dispersion prior `{s}`"))),
        }
    }
}

impl FromStr for VariancePrior {
    type Err = Error;

    /// `SD(u,a)`, `GBP(ε)`, `G(shape,rate)`, `IG(shape,scale)`, `HN(s)`,
    /// `HC(s)`, `Flat(lo,hi)`; bare `SD`, `HC` and `Flat` take the defaults
    /// `SD(1,0.01)`, `HC(0.022)` and `Flat(1,1000)`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_call(s)?;
        let prior = match (name.to_ascii_uppercase().as_str(), args.as_slice()) {
            ("SD" | "PC", []) => VariancePrior::scale_dependent(1.0, 0.01)?,
            ("SD" | "PC", [u, a]) => VariancePrior::scale_dependent(*u, *a)?,
            ("GBP", [e]) => VariancePrior::GeneralizedBetaPrime { epsilon: *e },
            ("G" | "GAMMA", [a, b]) => VariancePrior::Gamma { shape: *a, rate: *b },
            ("IG", [a, b]) => VariancePrior::InverseGamma { shape: *a, scale: *b },
            ("HN", [s]) => VariancePrior::HalfNormal { scale: *s },
            ("HC", []) => VariancePrior::HalfCauchy { scale: 0.022 },
            ("HC", [s]) => VariancePrior::HalfCauchy { scale: *s },
            ("FLAT", []) => VariancePrior::FlatUniform { lower: 1.0, upper: 1000.0 },
            ("FLAT", [lo, hi]) => VariancePrior::FlatUniform { lower: *lo, upper: *hi },
            _ => return Err(Error::Config(format!("unknown variance prior `{s}`"))),
        };
        prior.validate()?;
        Ok(prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kld_examples() {
        assert_eq!(kld_gamma(1.0, 1.0).unwrap(), 0.0);
        assert!((kld_gamma(2.0, 1.0).unwrap() - 0.422_784_335_098_467_1).abs() < 1e-12);
        assert!((kld_gamma(1.0, 2.0).unwrap() - (2f64.ln() - 0.5)).abs() < 1e-12);
        assert!(kld_gamma(0.0, 1.0).is_err());
        assert!(kld_gamma(1.0, -2.0).is_err());
    }

    #[test]
    fn kld_taylor_branch_is_continuous() {
        for &delta in &[-1.5e-3, -9.9e-4, 9.9e-4, 1.5e-3] {
            let a = 1.0 + delta;
            let direct = -ln_gamma_raw(a) + (a - 1.0) * digamma_raw(a);
            let series = kld_raw(a, 1.0);
            assert!((direct - series).abs() < 1e-11, "delta={delta}");
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(pc_distance(1.0, 1.0).unwrap().d, 0.0);
        let d2 = pc_distance(2.0, 1.0).unwrap();
        assert!((d2.d - 0.919_548_079_3).abs() < 1e-9);
        assert_eq!(d2.direction, Branch::Above);
        let d = pc_distance(0.5, 1.0).unwrap();
        let want = (2.0 * (-ln_gamma_raw(0.5) - 0.5 * digamma_raw(0.5))).sqrt();
        assert!(d.d.is_finite() && d.d > 0.0);
        assert!((d.d - want).abs() < 1e-14);
        assert_eq!(d.direction, Branch::Below);
    }

    #[test]
    fn equal_rate_normalization_is_one_half() {
        for &l in &[1.0, 3.0, 5.0] {
            let p = PcAlphaPrior::equal_rate(l).unwrap();
            assert!((p.normalization - 0.5).abs() < 1e-8, "lambda={l}: {}", p.normalization);
        }
    }

    #[test]
    fn unequal_rate_normalization_matches_minimum_distance() {
        for &r in &[0.5, 2.0] {
            let p = PcAlphaPrior::new(3.0, r).unwrap();
            let want = 0.5 * (p.lambda * p.d_min).exp();
            assert!((p.normalization - want).abs() < 1e-7 * want, "R={r}");
        }
    }

    #[test]
    fn density_continuous_at_base_model() {
        let p = PcAlphaPrior::equal_rate(2.0).unwrap();
        let at = p.density(1.0);
        let limit = 0.5 * p.lambda * trigamma_raw(1.0).sqrt();
        assert!((at - limit).abs() < 1e-12);
        for &h in &[1e-7, 1e-5, 2e-3] {
            assert!((p.density(1.0 - h) - at).abs() < 3.0 * h * 10.0, "h={h}");
            assert!((p.density(1.0 + h) - at).abs() < 3.0 * h * 10.0, "h={h}");
        }
        assert!((p.density(1.0 - 1e-7) - p.density(1.0 + 1e-7)).abs() < 1e-6);
        assert_eq!(p.density(0.0), 0.0);
        assert_eq!(p.density(-1.0), 0.0);
    }

    #[test]
    fn calibration_examples() {
        assert!((pc_alpha_calibrate(1.0, (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        assert!((pc_alpha_calibrate(2.0, 0.05).unwrap() - 1.497_866_136_776_995).abs() < 1e-9);
        assert!((pc_alpha_calibrate(0.5, 0.01).unwrap() - 9.210_340_371_976_184).abs() < 1e-9);
        assert!(pc_alpha_calibrate(1.0, 1.0).is_err());
        assert!(pc_alpha_calibrate(0.0, 0.5).is_err());
        assert!((scale_dependent_rate(1.0, 0.01).unwrap() - 4.605_170_186_0).abs() < 1e-9);
    }

    #[test]
    fn calibration_round_trip_by_alpha_quadrature() {
        for &(u, a) in &[(2.0, 0.05), (0.5, 0.01), (1.0, 0.2)] {
            let lambda = pc_alpha_calibrate(u, a).unwrap();
            let prior = PcAlphaPrior::equal_rate(lambda).unwrap();
            let mass = prior.distance_mass_below(u).unwrap();
            assert!((mass - (1.0 - a)).abs() < 1e-6, "u={u} a={a}: {mass}");
            let (l2, tail) = pc_alpha_calibrate_checked(u, a).unwrap();
            assert_eq!(l2, lambda);
            assert!((tail - a).abs() < 1e-6);
        }
    }

    #[test]
    fn sampler_lands_on_both_branches() {
        let p = PcAlphaPrior::equal_rate(1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..2000).map(|_| p.sample(&mut rng)).collect();
        let below = draws.iter().filter(|&&a| a < 1.0).count();
        assert!((800..1200).contains(&below));
        assert!(draws.iter().all(|a| a.is_finite() && *a > 0.0));
    }

    #[test]
    fn variance_prior_examples() {
        let theta = 0.005;
        let g = VariancePrior::Gamma { shape: 1.0, rate: theta };
        for &tau in &[0.1, 1.0, 40.0] {
            assert!((g.log_density_tau(tau) - (theta.ln() - theta * tau)).abs() < 1e-14);
        }
        let hc = VariancePrior::HalfCauchy { scale: 0.022 };
        let s = 0.022f64;
        let want = (2.0 / (PI * s * (1.0 + 1.0 / (s * s)))).ln() + 0.5f64.ln();
        assert!((hc.log_density_tau(1.0) - want).abs() < 1e-12);
        let flat = VariancePrior::FlatUniform { lower: 1.0, upper: 1000.0 };
        assert_eq!(flat.log_density_tau(0.5), f64::NEG_INFINITY);
        assert!((flat.log_density_tau(10.0) + 999f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn beta_prime_equals_half_cauchy() {
        let gbp = VariancePrior::GeneralizedBetaPrime { epsilon: 0.3 };
        let hc = VariancePrior::HalfCauchy { scale: 0.3 };
        for &tau in &[0.01, 0.7, 3.0, 250.0] {
            assert!((gbp.log_density_tau(tau) - hc.log_density_tau(tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_gamma_on_variance_is_gamma_on_precision() {
        let ig = VariancePrior::InverseGamma { shape: 0.01, scale: 0.01 };
        let g = VariancePrior::Gamma { shape: 0.01, rate: 0.01 };
        for &tau in &[0.05, 1.0, 17.0] {
            assert!((ig.log_density_tau(tau) - g.log_density_tau(tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_dependent_precision_is_type2_gumbel() {
        let theta = 2.3;
        let prior = VariancePrior::ScaleDependent { theta };
        let eps = 1.0 / (theta * theta);
        for &tau in &[0.1, 1.0, 10.0] {
            // Jacobian route through the σ² density.
            let via_var = scale_dependent_density(eps, 1.0 / tau).unwrap() / (tau * tau);
            let gumbel = 0.5 * theta * tau.powf(-1.5) * (-theta / tau.sqrt()).exp();
            assert!((via_var - gumbel).abs() < 1e-12 * gumbel.max(1.0));
            assert!((prior.log_density_tau(tau) - gumbel.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_catalog_names() {
        assert_eq!("G(1,0.005)".parse::<AlphaPrior>().unwrap(), AlphaPrior::Gamma { shape: 1.0, rate: 0.005 });
        assert!(matches!("PC(3)".parse::<AlphaPrior>().unwrap(), AlphaPrior::Pc(p) if p.lambda == 3.0));
        assert!(matches!("PC(1, 2)".parse::<AlphaPrior>().unwrap(), AlphaPrior::Pc(p) if p.rate_ratio == 2.0));
        assert!("HC".parse::<VariancePrior>().is_ok());
        assert!(matches!("SD(1,0.01)".parse::<VariancePrior>().unwrap(), VariancePrior::ScaleDependent { theta } if (theta - 4.605_170_186).abs() < 1e-8));
        assert!("Flat(1,1000)".parse::<VariancePrior>().is_ok());
        assert!("IG(1,0.005)".parse::<VariancePrior>().is_ok());
        assert!("SD(1,1)".parse::<VariancePrior>().is_err());
        assert!("XYZ(1)".parse::<VariancePrior>().is_err());
        assert!("G(1".parse::<AlphaPrior>().is_err());
    }
}
