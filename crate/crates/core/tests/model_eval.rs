use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcstar::inference::{fit, FitResult, InferenceSettings};
use gcstar::likelihood::Likelihood;
use gcstar::model_eval::{compute_scores, pointwise_from_marginals, pointwise_predictive};
use gcstar::priors::AlphaPrior;
use gcstar::star_predictor::{make_linear, LatentModel};

fn ln_poisson(y: u64, eta: f64) -> f64 {
    let lf: f64 = (1..=y).map(|k| (k as f64).ln()).sum();
    y as f64 * eta - eta.exp() - lf
}

/// Midpoint rule on `[mu - 12 sd, mu + 12 sd]` with 10⁴ nodes.
fn brute_force(mu: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
    let n = 10_000;
    let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|k| {
            let e = lo + (k as f64 + 0.5) * h;
            let z = (e - mu) / sd;
            g(e) * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        })
        .sum::<f64>()
        * h
}

#[test]
fn poisson_kernel_matches_brute_force_quadrature() {
    for (mu, sd, y) in [(0.5, 0.3, 3u64), (1.2, 0.15, 1), (-0.4, 0.5, 0), (2.0, 0.2, 9)] {
        let pw = pointwise_from_marginals(Likelihood::Poisson, y, &[(1.0, mu, sd, 1.0)]);
        let e_p = brute_force(mu, sd, |e| ln_poisson(y, e).exp());
        let e_log = brute_force(mu, sd, |e| ln_poisson(y, e));
        let var_log = brute_force(mu, sd, |e| (ln_poisson(y, e) - e_log).powi(2));
        assert!((pw.e_p / e_p - 1.0).abs() < 1e-6, "E[p] {} vs {e_p}", pw.e_p);
        assert!((pw.e_log_p - e_log).abs() < 1e-6 * e_log.abs().max(1.0));
        assert!((pw.var_log_p - var_log).abs() < 1e-6 * var_log.max(1e-3));
        assert!(!pw.flagged);
    }
}

#[test]
fn leave_one_out_recovers_the_prior_predictive() {
    // One Poisson observation with η ~ N(0, 1): the Laplace posterior has
    // mode η̂ = y − e^η̂ and precision 1 + e^η̂, and removing the
    // observation's quadratic term gives back N(0, 1) exactly, so the CPO is
    // the marginal likelihood.
    for y in [0u64, 2, 5] {
        let mut eta = 0.0f64;
        for _ in 0..100 {
            eta -= (eta - y as f64 + eta.exp()) / (1.0 + eta.exp());
        }
        let sd = (1.0 + eta.exp()).sqrt().recip();
        let pw = pointwise_from_marginals(Likelihood::Poisson, y, &[(1.0, eta, sd, 1.0)]);
        let marginal = brute_force(0.0, 1.0, |e| ln_poisson(y, e).exp());
        // 31 Hermite nodes against a likelihood peaked at ln y in the prior's
        // tail: about 1e-4 relative at y = 5.
        assert!(((-pw.log_e_inv_p).exp() / marginal - 1.0).abs() < 5e-4, "y={y}: {} vs {marginal}", (-pw.log_e_inv_p).exp());
    }
}

#[test]
fn deterministic_posterior_has_no_waic_penalty() {
    let (mu, y) = (0.8, 4u64);
    let pw = pointwise_from_marginals(Likelihood::Poisson, y, &[(1.0, mu, 0.0, 1.0)]);
    assert_eq!(pw.var_log_p, 0.0);
    assert!((pw.e_log_p - ln_poisson(y, mu)).abs() < 1e-12);
    assert!((pw.e_p.ln() - pw.e_log_p).abs() < 1e-12);
    // With a point mass the -2(lppd - p_waic) form reduces to the deviance.
    let waic = -2.0 * (pw.e_p.ln() - pw.var_log_p);
    assert!((waic + 2.0 * ln_poisson(y, mu)).abs() < 1e-12);
}

fn poisson_data(n: usize, betas: &[f64], seed: u64) -> (Vec<Vec<f64>>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = betas.iter().map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let eta = 0.7 + betas.iter().zip(&xs).map(|(b, x)| b * x[i]).sum::<f64>();
            Likelihood::Poisson.sample(1.0, eta, &mut rng).unwrap()
        })
        .collect();
    (xs, y)
}

fn fit_linear(xs: &[Vec<f64>], y: &[u64], lik: Likelihood) -> FitResult {
    let comps = xs
        .iter()
        .enumerate()
        .map(|(k, x)| make_linear(&format!("x{k}"), x).unwrap())
        .collect();
    let model = LatentModel::new(y.len(), comps, lik, AlphaPrior::pc(3.0, 1.0).unwrap()).unwrap();
    fit(model, y.to_vec(), &InferenceSettings::default()).unwrap()
}

#[test]
fn cpo_never_exceeds_posterior_predictive() {
    let (xs, y) = poisson_data(120, &[0.8], 5);
    let f = fit_linear(&xs, &y, Likelihood::GammaCount);
    let scores = compute_scores(&f).unwrap();
    assert_eq!(scores.cpo_failures, 0);
    for (i, c) in scores.cpo.iter().enumerate() {
        let e_p = pointwise_predictive(&f, i).unwrap().e_p;
        assert!(*c <= e_p * (1.0 + 1e-9), "obs {i}: CPO {c} > E[p] {e_p}");
    }
}

#[test]
fn scores_ignore_observation_order() {
    let (xs, y) = poisson_data(100, &[0.6], 8);
    let a = compute_scores(&fit_linear(&xs, &y, Likelihood::GammaCount)).unwrap();
    let perm: Vec<usize> = (0..y.len()).rev().collect();
    let xs_p: Vec<Vec<f64>> = xs.iter().map(|x| perm.iter().map(|&i| x[i]).collect()).collect();
    let y_p: Vec<u64> = perm.iter().map(|&i| y[i]).collect();
    let b = compute_scores(&fit_linear(&xs_p, &y_p, Likelihood::GammaCount)).unwrap();
    for (u, v) in [(a.dic, b.dic), (a.waic, b.waic), (a.log_score, b.log_score), (a.p_d, b.p_d)] {
        assert!((u - v).abs() < 1e-6 * u.abs().max(1.0), "{u} vs {v}");
    }
}

#[test]
fn effective_parameters_count_linear_terms() {
    let (xs, y) = poisson_data(500, &[0.5, -0.4], 13);
    let s = compute_scores(&fit_linear(&xs, &y, Likelihood::Poisson)).unwrap();
    assert!((s.p_d - 3.0).abs() < 0.9, "p_d = {}", s.p_d);
    assert!((s.p_waic - 3.0).abs() < 0.9, "p_waic = {}", s.p_waic);
}

#[test]
fn true_model_beats_intercept_only() {
    let (xs, y) = poisson_data(200, &[1.2], 21);
    let full = compute_scores(&fit_linear(&xs, &y, Likelihood::Poisson)).unwrap();
    let null = compute_scores(&fit_linear(&[], &y, Likelihood::Poisson)).unwrap();
    assert!(full.dic < null.dic);
    assert!(full.waic < null.waic);
    assert!(full.log_score < null.log_score);
}
