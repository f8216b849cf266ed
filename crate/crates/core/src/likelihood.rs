//! Count likelihoods with a log link: gamma-count, Poisson and negative
//! binomial, each exposing the log-density and its first two derivatives in
//! the linear predictor.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::gc_dist::{gc_draw, gc_log_pmf, gc_loglik_derivs, gc_mean, GcParams, LogLikDerivs};
use crate::specfun::{ln_factorial, ln_gamma_raw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Likelihood {
    /// `y ~ GC(α, α·e^η)`; dispersion is α.
    GammaCount,
    /// `y ~ Poisson(e^η)`; no dispersion.
    Poisson,
    /// `y ~ NB(mean e^η, size s)`; dispersion is the size `s`.
    NegativeBinomial,
}

impl Likelihood {
    pub fn has_dispersion(&self) -> bool {
        !matches!(self, Likelihood::Poisson)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::GammaCount => "gc",
            Likelihood::Poisson => "poisson",
            Likelihood::NegativeBinomial => "nb",
        }
    }

    /// `ln p(y | η, dispersion)`; the dispersion is ignored for Poisson.
    pub fn log_density(&self, dispersion: f64, eta: f64, y: u64) -> Result<f64> {
        check_eta(eta)?;
        match self {
            Likelihood::GammaCount => gc_log_pmf(&GcParams::from_predictor(dispersion, eta)?, y),
            Likelihood::Poisson => Ok(y as f64 * eta - eta.exp() - ln_factorial(y)),
            Likelihood::NegativeBinomial => {
                let s = check_size(dispersion)?;
                let mu = eta.exp();
                let yf = y as f64;
                let ln_sum = (s + mu).ln();
                Ok(ln_gamma_raw(yf + s) - ln_gamma_raw(s) - ln_factorial(y) + s * (s.ln() - ln_sum)
                    + yf * (eta - ln_sum))
            }
        }
    }

    pub fn derivs(&self, dispersion: f64, eta: f64, y: u64) -> Result<LogLikDerivs> {
        check_eta(eta)?;
        match self {
            Likelihood::GammaCount => gc_loglik_derivs(dispersion, eta, y),
            Likelihood::Poisson => {
                let mu = eta.exp();
                Ok(LogLikDerivs {
                    value: self.log_density(dispersion, eta, y)?,
                    d1: y as f64 - mu,
                    d2: -mu,
                    floored: false,
                })
            }
            Likelihood::NegativeBinomial => {
                let s = check_size(dispersion)?;
                let mu = eta.exp();
                let yf = y as f64;
                let frac = mu / (s + mu);
                Ok(LogLikDerivs {
                    value: self.log_density(dispersion, eta, y)?,
                    d1: yf - (yf + s) * frac,
                    d2: -(yf + s) * frac * (1.0 - frac),
                    floored: false,
                })
            }
        }
    }

    /// `E[y | η]`.
    pub fn mean(&self, dispersion: f64, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        match self {
            Likelihood::GammaCount => Ok(gc_mean(&GcParams::from_predictor(dispersion, eta)?, 1e-10)?.mean),
            _ => Ok(eta.exp()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dispersion: f64, eta: f64, rng: &mut R) -> Result<u64> {
        check_eta(eta)?;
        let mu = eta.exp();
        match self {
            Likelihood::GammaCount => Ok(gc_draw(&GcParams::from_predictor(dispersion, eta)?, rng)),
            Likelihood::Poisson => Ok(poisson_draw(mu, rng)),
            Likelihood::NegativeBinomial => {
                let s = check_size(dispersion)?;
                let g = Gamma::new(s, mu / s).map_err(|_| Error::domain("nb sample", s, "size > 0"))?;
                Ok(poisson_draw(g.sample(rng), rng))
            }
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    Poisson::new(mu).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta.abs() < 700.0 {
        Ok(())
    } else {
        Err(Error::domain("likelihood", eta, "finite linear predictor"))
    }
}

fn check_size(s: f64) -> Result<f64> {
    if s.is_finite() && s > 0.0 {
        Ok(s)
    } else {
        Err(Error::domain("negative binomial", s, "size > 0"))
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gc" | "gamma-count" | "gammacount" => Ok(Likelihood::GammaCount),
            "poisson" => Ok(Likelihood::Poisson),
            "nb" | "negative-binomial" | "nbinomial" => Ok(Likelihood::NegativeBinomial),
            _ => Err(Error::Config(format!("unknown likelihood `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(lik: Likelihood, disp: f64, eta: f64, y: u64) {
        let h = 1e-5;
        let d = lik.derivs(disp, eta, y).unwrap();
        let f = |e: f64| lik.log_density(disp, e, y).unwrap();
        let g1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
        let g2 = (f(eta + h) - 2.0 * f(eta) + f(eta - h)) / (h * h);
        assert!((d.d1 - g1).abs() < 1e-6 * (1.0 + g1.abs()), "{lik} d1");
        assert!((d.d2 - g2).abs() < 1e-3 * (1.0 + g2.abs()), "{lik} d2");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &(eta, y) in &[(0.3, 0), (0.3, 4), (1.7, 2), (-0.5, 1)] {
            fd_check(Likelihood::Poisson, 1.0, eta, y);
            fd_check(Likelihood::NegativeBinomial, 2.5, eta, y);
            fd_check(Likelihood::GammaCount, 1.8, eta, y);
        }
    }

    #[test]
    fn gc_at_unit_alpha_is_poisson() {
        for y in 0..10 {
            let a = Likelihood::GammaCount.log_density(1.0, 0.7, y).unwrap();
            let b = Likelihood::Poisson.log_density(1.0, 0.7, y).unwrap();
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn negative_binomial_sums_to_one() {
        let total: f64 = (0..400)
            .map(|y| Likelihood::NegativeBinomial.log_density(0.7, 1.2, y).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn parse_names() {
        assert_eq!("GC".parse::<Likelihood>().unwrap(), Likelihood::GammaCount);
        assert_eq!("nb".parse::<Likelihood>().unwrap(), Likelihood::NegativeBinomial);
        assert!("binomial".parse::<Likelihood>().is_err());
    }
}
