use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcstar::priors::{
    kld_gamma, pc_alpha_calibrate, pc_alpha_calibrate_checked, pc_distance, scale_dependent_density,
    scale_dependent_rate, variance_prior_logdensity, AlphaPrior, PcAlphaPrior, VariancePrior,
};

mod common;
use common::{ks_pvalue, ks_statistic, simpson_log};

#[test]
fn kld_nonnegative_on_grid_and_zero_only_at_base() {
    for i in 0..100 {
        let alpha = 0.05 + 0.1 * i as f64;
        for j in 0..20 {
            let r = 0.25 + 0.25 * j as f64;
            let k = kld_gamma(alpha, r).unwrap();
            assert!(k >= 0.0, "kld({alpha}, {r}) = {k}");
            if (alpha - 1.0).abs() > 1e-9 || (r - 1.0).abs() > 1e-9 {
                assert!(k > 0.0);
            }
        }
    }
    assert_eq!(kld_gamma(1.0, 1.0).unwrap(), 0.0);
}

#[test]
fn pc_exact_sampler_pushes_forward_to_exponential() {
    for lambda in [1.0, 3.0, 5.0] {
        let prior = PcAlphaPrior::equal_rate(lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(lambda as u64);
        let d: Vec<f64> = (0..100_000).map(|_| pc_distance(prior.sample(&mut rng), 1.0).unwrap().d).collect();
        let p = ks_pvalue(ks_statistic(d, |x| 1.0 - (-lambda * x).exp()), 100_000);
        assert!(p > 0.01, "λ={lambda}: KS p = {p}");
    }
}

#[test]
fn unequal_rate_prior_normalizes() {
    for r in [0.5, 2.0] {
        let prior = PcAlphaPrior::new(2.0, r).unwrap();
        let mass = simpson_log(|a| prior.density(a), -300.0, 7.0, 400_000);
        assert!((mass - 1.0).abs() < 1e-4, "R={r}: mass {mass}");
    }
}

#[test]
fn scale_dependent_sigma_is_exponential() {
    // σ² by inverse transform of the tabulated density, then σ is tested
    // against Exp(1/√ε).
    let eps = 0.04;
    let (lo, hi, m) = (-30.0f64, 6.0f64, 200_000usize);
    let h = (hi - lo) / m as f64;
    let g = |t: f64| scale_dependent_density(eps, t.exp()).unwrap() * t.exp();
    let mut cdf = vec![0.0; m + 1];
    for i in 1..=m {
        let t = lo + i as f64 * h;
        cdf[i] = cdf[i - 1] + h * (g(t - h) + 4.0 * g(t - 0.5 * h) + g(t)) / 6.0;
    }
    let total = cdf[m];
    let n = 50_000;
    let sigmas: Vec<f64> = (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64 * total;
            let k = cdf.partition_point(|&c| c < u).clamp(1, m);
            let f = (u - cdf[k - 1]) / (cdf[k] - cdf[k - 1]);
            (0.5 * (lo + (k as f64 - 1.0 + f) * h)).exp()
        })
        .collect();
    let rate = 1.0 / eps.sqrt();
    let p = ks_pvalue(ks_statistic(sigmas, |s| 1.0 - (-rate * s).exp()), n);
    assert!(p > 0.01, "KS p = {p}");
    let mass = simpson_log(|s2| scale_dependent_density(eps, s2).unwrap(), -40.0, 8.0, 200_000);
    assert!((mass - 1.0).abs() < 1e-6);
}

#[test]
fn scale_dependent_tau_form_is_type2_gumbel() {
    let theta = scale_dependent_rate(1.0, 0.01).unwrap();
    let eps = 1.0 / (theta * theta);
    let prior = VariancePrior::scale_dependent(1.0, 0.01).unwrap();
    for tau in [0.1, 1.0, 10.0] {
        // π(τ) = π_{σ²}(1/τ) · τ⁻².
        let via_variance = (scale_dependent_density(eps, 1.0 / tau).unwrap() / (tau * tau)).ln();
        let gumbel = (theta / 2.0).ln() - 1.5 * f64::ln(tau) - theta / tau.sqrt();
        assert_relative_eq!(variance_prior_logdensity(&prior, tau), via_variance, epsilon = 1e-12);
        assert_relative_eq!(gumbel, via_variance, epsilon = 1e-12);
    }
}

#[test]
fn catalog_examples() {
    let hc: VariancePrior = "HC(0.022)".parse().unwrap();
    let s = 0.022;
    let expected = (2.0 / (std::f64::consts::PI * s * (1.0 + 1.0 / (s * s)))).ln() + (0.5f64).ln();
    assert_relative_eq!(variance_prior_logdensity(&hc, 1.0), expected, epsilon = 1e-12);
    let flat: VariancePrior = "Flat(1,1000)".parse().unwrap();
    assert_eq!(variance_prior_logdensity(&flat, 0.5), f64::NEG_INFINITY);
    let g: VariancePrior = "G(1,0.005)".parse().unwrap();
    assert_relative_eq!(variance_prior_logdensity(&g, 2.0), 0.005f64.ln() - 0.01, epsilon = 1e-14);
    assert!("Nope(1)".parse::<VariancePrior>().is_err());
    assert!("G(-1,1)".parse::<VariancePrior>().is_err());
}

#[test]
fn calibrations_round_trip() {
    let (lambda, tail) = pc_alpha_calibrate_checked(2.0, 0.05).unwrap();
    assert_relative_eq!(lambda, 1.497_866_136_7, epsilon = 1e-9);
    assert!((tail - 0.05).abs() < 1e-6);
    assert_relative_eq!(scale_dependent_rate(1.0, 0.01).unwrap(), 4.605_170_186_0, epsilon = 1e-9);
    assert!(pc_alpha_calibrate(1.0, 0.0).is_err());
    assert!(pc_alpha_calibrate(1.0, 1.0).is_err());
    assert!(scale_dependent_rate(0.0, 0.5).is_err());
}

proptest! {
    #[test]
    fn kld_nonnegative(alpha in 0.01f64..50.0, r in 0.05f64..20.0) {
        prop_assert!(kld_gamma(alpha, r).unwrap() >= 0.0);
    }

    #[test]
    fn pc_density_positive_and_finite(la in -8.0f64..4.0, lambda in 0.1f64..10.0) {
        let prior = AlphaPrior::pc(lambda, 1.0).unwrap();
        let v = prior.log_density_log_scale(la);
        prop_assert!(v.is_finite());
    }

    #[test]
    fn calibration_recovers_tail(u in 0.1f64..5.0, a in 0.001f64..0.9) {
        let (_, tail) = pc_alpha_calibrate_checked(u, a).unwrap();
        prop_assert!((tail - a).abs() < 1e-6);
    }

    #[test]
    fn gamma_alpha_prior_parses(shape in 0.1f64..10.0, rate in 0.001f64..10.0) {
        let p: AlphaPrior = format!("G({shape},{rate})").parse().unwrap();
        prop_assert_eq!(p.to_string().parse::<AlphaPrior>().unwrap(), p);
    }
}
