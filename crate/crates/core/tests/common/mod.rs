//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use gcstar::likelihood::Likelihood;
use gcstar::priors::AlphaPrior;
use gcstar::star_predictor::INTERCEPT_PRECISION;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫₀^∞ g(x) dx` via `x = eᵗ` over `t ∈ [lo, hi]`.
pub fn simpson_log(g: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    simpson(
        |t| {
            let x = t.exp();
            let v = g(x) * x;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        lo,
        hi,
        n,
    )
}

/// Asymptotic Kolmogorov p-value with Stephens' finite-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let x = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Posterior moments `(E β₀, sd β₀, E α)` of an intercept-only model by a
/// dense tensor grid over (β₀, ln α).
pub fn intercept_quadrature(y: &[u64], lik: Likelihood, prior: &AlphaPrior) -> (f64, f64, f64) {
    let log_post = |b: f64, la: f64| -> f64 {
        let a = la.exp();
        let mut s = -0.5 * INTERCEPT_PRECISION * b * b + prior.log_density_log_scale(la);
        for &yi in y {
            s += lik.log_density(a, b, yi).unwrap();
        }
        s
    };
    // Coarse pass to locate the bulk, then a fine grid over it.
    let (mut bb, mut ba, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=60 {
        for j in 0..=60 {
            let b = -3.0 + 6.0 * i as f64 / 60.0;
            let la = -3.0 + 6.0 * j as f64 / 60.0;
            let v = log_post(b, la);
            if v > best {
                (bb, ba, best) = (b, la, v);
            }
        }
    }
    let (nb, na) = (241, 241);
    let (wb, wa) = (0.6, 1.6);
    let mut cells = Vec::with_capacity(nb * na);
    for i in 0..nb {
        for j in 0..na {
            let b = bb - wb + 2.0 * wb * i as f64 / (nb - 1) as f64;
            let la = ba - wa + 2.0 * wa * j as f64 / (na - 1) as f64;
            cells.push((b, la, log_post(b, la)));
        }
    }
    let m = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut mb, mut mb2, mut ma) = (0.0, 0.0, 0.0, 0.0);
    for &(b, la, v) in &cells {
        let w = (v - m).exp();
        z += w;
        mb += w * b;
        mb2 += w * b * b;
        ma += w * la.exp();
    }
    let mean_b = mb / z;
    (mean_b, (mb2 / z - mean_b * mean_b).sqrt(), ma / z)
}
