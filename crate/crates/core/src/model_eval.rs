//! Predictive model scores (DIC, WAIC, CPO and the logarithmic score) and
//! the simulation criteria Q₁, Q₂.
//!
//! Every score is built from the same kernel: Gauss-Hermite quadrature of
//! `p(y_i | η_i)` against each grid point's Gaussian marginal of `η_i`,
//! mixed by the grid weights.
//!
//! For the CPO the observation's own quadratic likelihood term is first
//! divided out of the Gaussian marginal, giving `p(y_i | y_{−i}, θ_k)` per
//! grid point; the harmonic identity is then applied across the grid only.
//! Applied directly over `η_i`, `E[1/p]` diverges for log-link counts.

use std::sync::LazyLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::FitResult;
use crate::numeric::{gauss_hermite, log_sum_exp};

/// Quadrature order of the pointwise predictive kernel.
pub const GH_NODES: usize = 31;

static GH: LazyLock<(Vec<f64>, Vec<f64>)> = LazyLock::new(|| {
    let (x, w) = gauss_hermite(GH_NODES);
    let norm = std::f64::consts::PI.sqrt();
    (
        x.iter().map(|t| t * std::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| v / norm).collect(),
    )
});

/// Posterior expectations of the pointwise likelihood of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointwise {
    pub e_p: f64,
    pub e_log_p: f64,
    pub var_log_p: f64,
    /// `ln E_θ[1 / p(y_i | y_{−i}, θ)]`, kept in log form.
    pub log_e_inv_p: f64,
    /// A quadrature node produced a non-finite density.
    pub flagged: bool,
}

impl Pointwise {
    pub fn e_inv_p(&self) -> f64 {
        self.log_e_inv_p.exp()
    }
}

/// Quadrature of `p(y_i | η_i)` over the mixture marginal of `η_i`.
///
/// `marginals` holds `(weight, mean, sd, dispersion)` per grid point.
pub fn pointwise_from_marginals(
    likelihood: crate::likelihood::Likelihood,
    y: u64,
    marginals: &[(f64, f64, f64, f64)],
) -> Pointwise {
    let (nodes, weights) = &*GH;
    let mut logs: Vec<(f64, f64)> = Vec::with_capacity(marginals.len() * GH_NODES);
    let mut loo: Vec<f64> = Vec::with_capacity(marginals.len());
    let mut flagged = false;
    for &(w, mu, sd, disp) in marginals {
        if w <= 0.0 {
            continue;
        }
        if sd <= 0.0 {
            match likelihood.log_density(disp, mu, y) {
                Ok(l) if l.is_finite() => {
                    logs.push((w, l));
                    loo.push(w.ln() - l);
                }
                _ => flagged = true,
            }
            continue;
        }
        for (t, v) in nodes.iter().zip(weights) {
            match likelihood.log_density(disp, mu + sd * t, y) {
                Ok(l) if l.is_finite() => logs.push((w * v, l)),
                _ => flagged = true,
            }
        }
        match leave_one_out_log_density(likelihood, y, mu, sd, disp) {
            Some(l) => loo.push(w.ln() - l),
            None => flagged = true,
        }
    }
    let total: f64 = logs.iter().map(|(w, _)| w).sum();
    let e_log_p = logs.iter().map(|(w, l)| w * l).sum::<f64>() / total;
    let var_log_p = logs.iter().map(|(w, l)| w * (l - e_log_p).powi(2)).sum::<f64>() / total;
    let e_p = logs.iter().map(|(w, l)| w * l.exp()).sum::<f64>() / total;
    let w_total: f64 = marginals.iter().map(|m| m.0).filter(|w| *w > 0.0).sum();
    let log_e_inv_p = log_sum_exp(loo.iter().copied()) - w_total.ln();
    Pointwise {
        e_p,
        e_log_p,
        var_log_p,
        log_e_inv_p,
        flagged,
    }
}

/// `ln p(y | y_{−i}, θ)`: the Gaussian marginal `N(μ, σ²)` of `η_i` with the
/// observation's second-order likelihood term removed, integrated against
/// the exact likelihood.
fn leave_one_out_log_density(likelihood: crate::likelihood::Likelihood, y: u64, mu: f64, sd: f64, disp: f64) -> Option<f64> {
    let (nodes, weights) = &*GH;
    let d = likelihood.derivs(disp, mu, y).ok()?;
    let curvature = (-d.d2).max(0.0);
    let precision = 1.0 / (sd * sd) - curvature;
    if !(precision > 1e-10 / (sd * sd)) {
        return None;
    }
    let m = mu - d.d1 / precision;
    let s = precision.sqrt().recip();
    let terms: Vec<f64> = nodes
        .iter()
        .zip(weights)
        .filter_map(|(t, v)| likelihood.log_density(disp, m + s * t, y).ok().map(|l| v.ln() + l))
        .collect();
    let l = log_sum_exp(terms.into_iter());
    l.is_finite().then_some(l)
}

/// Pointwise predictive quantities for observation `i` of a fit.
pub fn pointwise_predictive(fit: &FitResult, i: usize) -> Result<Pointwise> {
    let n = fit.engine.model().n_obs();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let marg: Vec<(f64, f64, f64, f64)> = fit
        .grid
        .iter()
        .map(|p| {
            (
                p.hyper.weight,
                p.approx.eta_mean[i],
                p.approx.eta_var[i].sqrt(),
                p.hyper.dispersion(),
            )
        })
        .collect();
    Ok(pointwise_from_marginals(
        fit.engine.model().likelihood,
        fit.engine.y()[i],
        &marg,
    ))
}

fn all_pointwise(fit: &FitResult) -> Vec<Pointwise> {
    (0..fit.engine.model().n_obs())
        .into_par_iter()
        .map(|i| pointwise_predictive(fit, i).expect("index in range"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
    /// `NaN` where the CPO failed.
    pub cpo: Vec<f64>,
    pub log_score: f64,
    pub cpo_failures: usize,
}

/// `(waic, p_waic)`.
pub fn compute_waic(fit: &FitResult) -> (f64, f64) {
    waic_from(&all_pointwise(fit))
}

fn waic_from(pw: &[Pointwise]) -> (f64, f64) {
    let p_waic: f64 = pw.iter().map(|p| p.var_log_p).sum();
    let lppd: f64 = pw.iter().map(|p| p.e_p.ln()).sum();
    let waic = -2.0 * (lppd - p_waic);
    let bound: f64 = 2.0 * pw.iter().map(|p| (p.e_p.ln() - p.e_log_p).abs()).sum::<f64>();
    if p_waic > bound + 1e-9 {
        log::info!("WAIC penalty {p_waic} exceeds the sanity bound {bound}");
    }
    (waic, p_waic)
}

/// Per-observation CPO (Gaussian leave-one-out per grid point, harmonic
/// identity across the grid) and `−Σ ln CPO` over the
/// observations whose CPO is numerically usable.
pub fn compute_cpo_logscore(fit: &FitResult) -> (Vec<f64>, f64, usize) {
    cpo_from(&all_pointwise(fit))
}

fn cpo_from(pw: &[Pointwise]) -> (Vec<f64>, f64, usize) {
    let mut failures = 0;
    let mut log_score = 0.0;
    let cpo = pw
        .iter()
        .map(|p| {
            let ln_cpo = -p.log_e_inv_p;
            if p.flagged || !ln_cpo.is_finite() || ln_cpo < crate::gc_dist::DEFAULT_LOG_FLOOR {
                failures += 1;
                f64::NAN
            } else {
                log_score -= ln_cpo;
                ln_cpo.exp()
            }
        })
        .collect();
    if failures > 0 {
        log::warn!("{failures} CPO values failed and were excluded from the log score");
    }
    (cpo, log_score, failures)
}

/// `(dic, p_d)` with the plug-in deviance at the posterior-mean predictor
/// and posterior-mean dispersion.
pub fn compute_dic(fit: &FitResult) -> Result<(f64, f64)> {
    dic_from(fit, &all_pointwise(fit))
}

fn dic_from(fit: &FitResult, pw: &[Pointwise]) -> Result<(f64, f64)> {
    let d_bar: f64 = -2.0 * pw.iter().map(|p| p.e_log_p).sum::<f64>();
    let eta = fit.eta_mean();
    let disp = fit.dispersion_mean();
    let lik = fit.engine.model().likelihood;
    let mut d_hat = 0.0;
    for (e, &y) in eta.iter().zip(fit.engine.y()) {
        d_hat -= 2.0 * lik.log_density(disp, *e, y)?;
    }
    let p_d = d_bar - d_hat;
    if p_d < 0.0 {
        log::warn!("negative effective number of parameters p_d = {p_d}");
    }
    Ok((d_bar + p_d, p_d))
}

/// All scores from one pass of the pointwise kernel.
pub fn compute_scores(fit: &FitResult) -> Result<Scores> {
    let pw = all_pointwise(fit);
    let (waic, p_waic) = waic_from(&pw);
    let (cpo, log_score, cpo_failures) = cpo_from(&pw);
    let (dic, p_d) = dic_from(fit, &pw)?;
    Ok(Scores {
        dic,
        p_d,
        waic,
        p_waic,
        cpo,
        log_score,
        cpo_failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimCriteria {
    /// Mean squared error of the centered functional effect.
    pub q1: f64,
    /// Squared error of the dispersion estimate.
    pub q2: f64,
}

/// `Q₁ = (1/n) Σ (f̂ᵢ − fᵢ)²` after centering both vectors, `Q₂ = (α̂ − α)²`.
pub fn compute_q_criteria(fitted_f: &[f64], true_f: &[f64], alpha_hat: f64, alpha_true: f64) -> Result<SimCriteria> {
    if fitted_f.len() != true_f.len() || fitted_f.is_empty() {
        return Err(Error::Dimension(format!(
            "fitted effect has {} values, true effect {}",
            fitted_f.len(),
            true_f.len()
        )));
    }
    let n = fitted_f.len() as f64;
    let mf = fitted_f.iter().sum::<f64>() / n;
    let mt = true_f.iter().sum::<f64>() / n;
    let q1 = fitted_f
        .iter()
        .zip(true_f)
        .map(|(a, b)| ((a - mf) - (b - mt)).powi(2))
        .sum::<f64>()
        / n;
    Ok(SimCriteria {
        q1,
        q2: (alpha_hat - alpha_true).powi(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Likelihood;

    #[test]
    fn q_criteria_examples() {
        let f = [0.3, -1.0, 0.7];
        assert_eq!(compute_q_criteria(&f, &f, 2.0, 2.0).unwrap().q1, 0.0);
        let shifted: Vec<f64> = f.iter().map(|v| v + 1.0).collect();
        assert!(compute_q_criteria(&shifted, &f, 2.0, 2.0).unwrap().q1 < 1e-30);
        assert_eq!(compute_q_criteria(&f, &f, 1.5, 2.0).unwrap().q2, 0.25);
        assert!(compute_q_criteria(&f, &f[..2], 1.0, 1.0).is_err());
    }

    #[test]
    fn point_mass_collapses_to_plugin() {
        let p = pointwise_from_marginals(Likelihood::Poisson, 3, &[(1.0, 0.4, 0.0, 1.0)]);
        let l = Likelihood::Poisson.log_density(1.0, 0.4, 3).unwrap();
        assert!((p.e_log_p - l).abs() < 1e-14);
        assert!((p.e_p - l.exp()).abs() < 1e-14);
        assert_eq!(p.var_log_p, 0.0);
        assert!((p.log_e_inv_p + l).abs() < 1e-14);
    }

    #[test]
    fn harmonic_mean_below_mean() {
        let marg = [(0.3, 0.2, 0.4, 1.0), (0.7, 0.5, 0.2, 1.0)];
        for y in 0..6 {
            let p = pointwise_from_marginals(Likelihood::Poisson, y, &marg);
            assert!(p.e_inv_p() * p.e_p >= 1.0 - 1e-12);
        }
    }
}
