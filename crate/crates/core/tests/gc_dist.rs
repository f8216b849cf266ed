use proptest::prelude::*;

use gcstar::gc_dist::{gc_log_pmf, gc_loglik_derivs, gc_mean, gc_pmf, gc_sample, GcParams};

#[test]
fn mean_series_matches_renewal_draws() {
    for (alpha, gamma) in [(0.5, 3.0), (2.0, 4.0), (4.0, 1.5)] {
        let p = GcParams::new(alpha, gamma).unwrap();
        let m = gc_mean(&p, 1e-12).unwrap();
        let direct: f64 = (0..400u64).map(|y| y as f64 * gc_pmf(&p, y).unwrap()).sum();
        assert!((m.mean - direct).abs() < 1e-9, "series {} vs sum {direct}", m.mean);
        let draws = gc_sample(&p, 11, 200_000).unwrap();
        let n = draws.len() as f64;
        let mc = draws.iter().sum::<u64>() as f64 / n;
        let var = draws.iter().map(|&d| (d as f64 - mc).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (m.variance / n).sqrt();
        assert!((mc - m.mean).abs() < 5.0 * se, "α={alpha}: mc {mc} vs {}", m.mean);
        assert!((var / m.variance - 1.0).abs() < 0.03);
    }
}

#[test]
fn longer_window_scales_the_count() {
    let p = GcParams::with_window(2.0, 3.0, 2.0).unwrap();
    let q = GcParams::new(2.0, 6.0).unwrap();
    for y in 0..20 {
        assert!((gc_pmf(&p, y).unwrap() - gc_pmf(&q, y).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn invalid_parameters_rejected() {
    assert!(GcParams::new(0.0, 1.0).is_err());
    assert!(GcParams::new(1.0, f64::NAN).is_err());
    assert!(GcParams::from_predictor(1.0, f64::INFINITY).is_err());
    assert!(gc_sample(&GcParams::new(1.0, 1.0).unwrap(), 1, 0).is_err());
}

proptest! {
    #[test]
    fn pmf_sums_to_one(alpha in 0.2f64..6.0, gamma in 0.3f64..15.0) {
        let p = GcParams::new(alpha, gamma).unwrap();
        let total: f64 = (0..3000u64).map(|y| gc_pmf(&p, y).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn log_pmf_consistent(alpha in 0.2f64..6.0, gamma in 0.3f64..15.0, y in 0u64..40) {
        let p = GcParams::new(alpha, gamma).unwrap();
        let v = gc_pmf(&p, y).unwrap();
        prop_assume!(v > 1e-250);
        prop_assert!((gc_log_pmf(&p, y).unwrap() - v.ln()).abs() < 1e-8 * (1.0 + v.ln().abs()));
    }

    #[test]
    fn dispersion_direction(gamma in 0.5f64..10.0) {
        let ratio = |a: f64| {
            let m = gc_mean(&GcParams::new(a, gamma).unwrap(), 1e-12).unwrap();
            m.variance / m.mean
        };
        prop_assert!(ratio(2.5) < 1.0);
        prop_assert!(ratio(0.4) > 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences(alpha in 0.3f64..5.0, eta in -2.0f64..2.5, y in 0u64..15) {
        let d = gc_loglik_derivs(alpha, eta, y).unwrap();
        prop_assume!(!d.floored);
        let h = 1e-4;
        let f = |e: f64| gc_loglik_derivs(alpha, e, y).unwrap().value;
        let d1 = (f(eta + h) - f(eta - h)) / (2.0 * h);
        let d2 = (f(eta + h) - 2.0 * f(eta) + f(eta - h)) / (h * h);
        prop_assert!((d.d1 - d1).abs() < 1e-5 * (1.0 + d1.abs()));
        prop_assert!((d.d2 - d2).abs() < 1e-3 * (1.0 + d2.abs()));
    }
}
