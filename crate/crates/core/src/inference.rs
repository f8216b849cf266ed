//! Approximate Bayesian inference for latent Gaussian count models.
//!
//! For fixed hyperparameters θ the latent field is replaced by its Gaussian
//! (Laplace) approximation around the constrained posterior mode. θ itself is
//! integrated over a regular grid in standardized log-scale coordinates, and
//! latent marginals are Gaussian mixtures over that grid.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model_eval::Scores;
use crate::numeric::nelder_mead;
use crate::sparse::{CsrMatrix, Profile, ProfileCholesky, ProfileMatrix};
use crate::specfun::normal_cdf;
use crate::star_predictor::{joint_prior_logdensity, LatentModel};

/// Largest supported number of hyperparameters.
pub const MAX_HYPER: usize = 4;

/// Box on log-scale hyperparameters explored by the mode search.
const THETA_BOUND: (f64, f64) = (-15.0, 20.0);

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSettings {
    /// Grid spacing in standardized coordinates.
    pub grid_step: f64,
    /// Points whose log-posterior falls this far below the mode are dropped.
    pub log_drop: f64,
    /// Cap on `|k|∞` for grid indices.
    pub max_grid_index: i32,
    pub max_newton: usize,
    /// Tolerance on the max-norm of the projected gradient.
    pub grad_tol: f64,
    pub max_damping_retries: usize,
    /// Step of the finite-difference Hessian in log-θ.
    pub fd_step: f64,
    pub mode_max_evals: usize,
    /// Starting value of every `ln τ` in the mode search.
    pub initial_log_tau: f64,
    /// Safety cap on the number of grid points.
    pub max_grid_points: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            grid_step: 0.75,
            log_drop: 6.0,
            max_grid_index: 12,
            max_newton: 50,
            grad_tol: 1e-6,
            max_damping_retries: 10,
            fd_step: 0.05,
            mode_max_evals: 600,
            initial_log_tau: 2.0,
            max_grid_points: 5000,
        }
    }
}

/// A model bound to its observed counts, with the sparse layout of the
/// posterior precision fixed once.
#[derive(Debug, Clone)]
pub struct Engine {
    model: LatentModel,
    y: Vec<u64>,
    design: CsrMatrix,
    profile: Arc<Profile>,
    constraints: Vec<Vec<(usize, f64)>>,
    /// `(C Cᵀ)⁻¹`, used to project gradients onto the constraint set.
    cct_inv: DMatrix<f64>,
}

impl Engine {
    pub fn new(model: LatentModel, y: Vec<u64>) -> Result<Self> {
        if y.len() != model.n_obs() {
            return Err(Error::Dimension(format!(
                "{} responses for a model with {} observations",
                y.len(),
                model.n_obs()
            )));
        }
        let m = model.n_hyper();
        if m > MAX_HYPER {
            return Err(Error::TooManyHyperparameters(m));
        }
        let design = model.design()?;
        let dense = model.dense_indices();
        let mut is_dense = vec![false; model.dim()];
        for &d in &dense {
            is_dense[d] = true;
        }
        let ones = vec![1.0; model.random_components().len()];
        let mut edges: Vec<(usize, usize)> = model
            .prior_precision_entries(&ones)?
            .into_iter()
            .filter(|&(i, j, _)| i != j && !is_dense[i] && !is_dense[j])
            .map(|(i, j, _)| (i, j))
            .collect();
        for i in 0..design.nrows() {
            let (idx, _) = design.row(i);
            let sparse: Vec<usize> = idx.iter().copied().filter(|&k| !is_dense[k]).collect();
            for a in 0..sparse.len() {
                for b in a + 1..sparse.len() {
                    edges.push((sparse[a], sparse[b]));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let profile = Profile::new(model.dim(), &edges, &dense)?;
        let constraints = model.constraints();
        let k = constraints.len();
        let mut cct = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                cct[(a, b)] = sparse_dot(&constraints[a], &constraints[b]);
            }
        }
        let cct_inv = if k == 0 {
            cct
        } else {
            cct.try_inverse()
                .ok_or_else(|| Error::DegenerateDesign("linearly dependent constraints".into()))?
        };
        Ok(Self {
            model,
            y,
            design,
            profile,
            constraints,
            cct_inv,
        })
    }

    pub fn model(&self) -> &LatentModel {
        &self.model
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    /// Full design including the intercept column.
    pub fn design(&self) -> &CsrMatrix {
        &self.design
    }

    pub fn n_hyper(&self) -> usize {
        self.model.n_hyper()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Labels of latent elements: `(Intercept)`, `name` for scalar
    /// components and `name[k]` (1-based) otherwise.
    pub fn latent_labels(&self) -> Vec<String> {
        let mut out = vec!["(Intercept)".to_string()];
        for c in &self.model.components {
            if c.dim() == 1 {
                out.push(c.name.clone());
            } else {
                out.extend((1..=c.dim()).map(|k| format!("{}[{k}]", c.name)));
            }
        }
        out
    }

    /// Names of the hyperparameters in θ order.
    pub fn hyper_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.model.likelihood {
            crate::likelihood::Likelihood::GammaCount => out.push("alpha".to_string()),
            crate::likelihood::Likelihood::NegativeBinomial => out.push("size".to_string()),
            crate::likelihood::Likelihood::Poisson => {}
        }
        for j in self.model.random_components() {
            out.push(format!("tau[{}]", self.model.components[j].name));
        }
        out
    }

    /// Splits log-scale θ into (dispersion, precisions).
    pub fn split_theta(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.n_hyper() {
            return Err(Error::Dimension(format!(
                "theta has length {}, model has {} hyperparameters",
                theta.len(),
                self.n_hyper()
            )));
        }
        if self.model.likelihood.has_dispersion() {
            Ok((theta[0].exp(), theta[1..].iter().map(|t| t.exp()).collect()))
        } else {
            Ok((1.0, theta.iter().map(|t| t.exp()).collect()))
        }
    }

    /// `ln π(θ)` on the log scale, Jacobians included.
    pub fn log_hyperprior(&self, theta: &[f64]) -> f64 {
        let mut lp = 0.0;
        let mut rest = theta;
        if self.model.likelihood.has_dispersion() {
            lp += self.model.alpha_prior.log_density_log_scale(theta[0]);
            rest = &theta[1..];
        }
        for (&j, &lt) in self.model.random_components().iter().zip(rest) {
            let prior = self.model.components[j].tau_prior.as_ref().expect("random component");
            lp += prior.log_density_log_tau(lt);
        }
        lp
    }

    fn prior_matrix(&self, taus: &[f64]) -> Result<ProfileMatrix> {
        let mut q = self.profile.zeros();
        for (i, j, v) in self.model.prior_precision_entries(taus)? {
            q.add(i, j, v);
        }
        Ok(q)
    }

    fn constraint_values(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|r| sparse_apply(r, x)))
    }

    /// Removes the component of `v` outside the constraint null space.
    fn project(&self, v: &mut [f64]) {
        if self.constraints.is_empty() {
            return;
        }
        let coef = &self.cct_inv * self.constraint_values(v);
        for (row, c) in self.constraints.iter().zip(coef.iter()) {
            for &(k, a) in row {
                v[k] -= c * a;
            }
        }
    }

    fn local(&self, dispersion: f64, x: &[f64]) -> Result<Local> {
        let eta = self.design.mul_vec(x);
        let mut loglik = 0.0;
        let mut d1 = Vec::with_capacity(eta.len());
        let mut curv = Vec::with_capacity(eta.len());
        for (&e, &y) in eta.iter().zip(&self.y) {
            let d = self.model.likelihood.derivs(dispersion, e, y)?;
            loglik += d.value;
            d1.push(d.d1);
            curv.push((-d.d2).max(0.0));
        }
        Ok(Local { eta, loglik, d1, curv })
    }

    /// `Q_prior + Aᵀ diag(c) A`, factored with Levenberg damping on failure.
    fn factor_hessian(
        &self,
        qp: &ProfileMatrix,
        curv: &[f64],
        retries: usize,
    ) -> Result<(ProfileMatrix, ProfileCholesky, f64)> {
        let mut h = qp.clone();
        for (i, &c) in curv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (idx, val) = self.design.row(i);
            for a in 0..idx.len() {
                for b in a..idx.len() {
                    h.add(idx[a], idx[b], c * val[a] * val[b]);
                }
            }
        }
        if let Ok(ch) = h.cholesky() {
            return Ok((h, ch, 0.0));
        }
        let mut mu = 1e-8 * h.max_abs().max(1.0);
        for _ in 0..retries {
            let mut damped = h.clone();
            damped.add_diag(mu);
            if let Ok(ch) = damped.cholesky() {
                return Ok((damped, ch, mu));
            }
            mu *= 10.0;
        }
        Err(Error::Convergence {
            what: "damped Newton Hessian factorization",
            iterations: retries,
        })
    }

    /// `V = Q⁻¹Cᵀ` and `W = C V`.
    fn kriging(&self, chol: &ProfileCholesky) -> (Vec<Vec<f64>>, DMatrix<f64>) {
        let n = self.model.dim();
        let v: Vec<Vec<f64>> = self
            .constraints
            .iter()
            .map(|row| {
                let mut rhs = vec![0.0; n];
                for &(k, a) in row {
                    rhs[k] = a;
                }
                chol.solve(&rhs)
            })
            .collect();
        let k = self.constraints.len();
        let w = DMatrix::from_fn(k, k, |a, b| sparse_apply(&self.constraints[a], &v[b]));
        (v, w)
    }

    fn default_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.model.dim()];
        let mean = self.y.iter().sum::<u64>() as f64 / self.y.len() as f64;
        x[0] = (mean + 0.5).ln();
        x
    }
}

struct Local {
    eta: Vec<f64>,
    loglik: f64,
    d1: Vec<f64>,
    curv: Vec<f64>,
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut s = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

fn sparse_apply(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(k, a)| a * x[k]).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Hyperparameters on their natural log scale plus grid bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPoint {
    /// `ln α` (gamma-count) or `ln size` (negative binomial).
    pub log_dispersion: Option<f64>,
    pub log_taus: Vec<f64>,
    /// Unnormalized `ln π(θ | y)`.
    pub log_post: f64,
    pub weight: f64,
}

impl HyperPoint {
    pub fn theta(&self) -> Vec<f64> {
        self.log_dispersion.iter().copied().chain(self.log_taus.iter().copied()).collect()
    }

    /// α (or the NB size); 1 when the likelihood has no dispersion.
    pub fn dispersion(&self) -> f64 {
        self.log_dispersion.map_or(1.0, f64::exp)
    }

    fn from_theta(engine: &Engine, theta: &[f64], log_post: f64) -> Self {
        let (log_dispersion, rest) = if engine.model.likelihood.has_dispersion() {
            (Some(theta[0]), &theta[1..])
        } else {
            (None, theta)
        };
        Self {
            log_dispersion,
            log_taus: rest.to_vec(),
            log_post,
            weight: 0.0,
        }
    }
}

/// Constrained Gaussian approximation of `π(x | θ, y)`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mode: Vec<f64>,
    /// Posterior precision at the mode (before the constraint correction).
    pub precision: ProfileMatrix,
    /// `ln det` of `precision`.
    pub log_det: f64,
    /// `ln det(C Q⁻¹ Cᵀ)`; zero without constraints.
    pub log_det_constraint: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Diagonal damping added to the final Hessian (zero when none).
    pub damping: f64,
    /// `Σ_i ln p(y_i | η_i*)`.
    pub log_lik: f64,
    /// Constrained marginal variances of the latent elements.
    pub latent_var: Vec<f64>,
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
}

/// Newton-Raphson for the constrained mode of `ln p(y|x) + ln p(x|θ)`, then
/// the Gaussian approximation there.
pub fn gaussian_approx(
    engine: &Engine,
    theta: &[f64],
    start: Option<&[f64]>,
    settings: &InferenceSettings,
) -> Result<GaussianApprox> {
    let (dispersion, taus) = engine.split_theta(theta)?;
    let qp = engine.prior_matrix(&taus)?;
    let mut x = match start {
        Some(s) if s.len() == engine.model.dim() => s.to_vec(),
        Some(s) => {
            return Err(Error::Dimension(format!(
                "start vector has length {}, expected {}",
                s.len(),
                engine.model.dim()
            )))
        }
        None => engine.default_start(),
    };
    engine.project(&mut x);
    let mut loc = match engine.local(dispersion, &x) {
        Ok(l) => l,
        Err(_) => {
            x = engine.default_start();
            engine.local(dispersion, &x)?
        }
    };
    let mut qx = qp.mul_vec(&x);
    let mut f = loc.loglik - 0.5 * dot(&x, &qx);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut g = engine.design.tr_mul_vec(&loc.d1);
        for (gi, q) in g.iter_mut().zip(&qx) {
            *gi -= q;
        }
        let mut pg = g.clone();
        engine.project(&mut pg);
        if max_abs(&pg) < settings.grad_tol {
            converged = true;
            break;
        }
        if iterations >= settings.max_newton {
            break;
        }
        let (_, chol, _) = engine.factor_hessian(&qp, &loc.curv, settings.max_damping_retries)?;
        let mut d = chol.solve(&g);
        if !engine.constraints.is_empty() {
            let (v, w) = engine.kriging(&chol);
            let coef = w
                .cholesky()
                .ok_or(Error::Convergence {
                    what: "constraint correction",
                    iterations,
                })?
                .solve(&engine.constraint_values(&d));
            for (vk, c) in v.iter().zip(coef.iter()) {
                for (di, vi) in d.iter_mut().zip(vk) {
                    *di -= c * vi;
                }
            }
        }
        let decrement = dot(&g, &d);
        if decrement.abs() < 1e-15 * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Ok(ln) = engine.local(dispersion, &xn) {
                let qxn = qp.mul_vec(&xn);
                let fnew = ln.loglik - 0.5 * dot(&xn, &qxn);
                if fnew.is_finite() && fnew >= f - 1e-12 * (1.0 + f.abs()) {
                    x = xn;
                    loc = ln;
                    qx = qxn;
                    f = fnew;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let (h, chol, damping) = engine.factor_hessian(&qp, &loc.curv, settings.max_damping_retries)?;
    let log_det = chol.log_det();
    let sel = chol.selected_inverse();
    let n = engine.model.dim();
    let mut latent_var: Vec<f64> = (0..n).map(|j| sel.get(j, j)).collect();
    let mut eta_var: Vec<f64> = (0..engine.model.n_obs())
        .map(|i| {
            let (idx, val) = engine.design.row(i);
            let mut s = 0.0;
            for a in 0..idx.len() {
                for b in 0..idx.len() {
                    s += val[a] * val[b] * sel.get(idx[a], idx[b]);
                }
            }
            s
        })
        .collect();
    let mut log_det_constraint = 0.0;
    if !engine.constraints.is_empty() {
        let (v, w) = engine.kriging(&chol);
        let wc = w.cholesky().ok_or(Error::Convergence {
            what: "constraint covariance factorization",
            iterations,
        })?;
        log_det_constraint = 2.0 * wc.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let winv = wc.inverse();
        let k = v.len();
        for (j, lv) in latent_var.iter_mut().enumerate() {
            let vj = DVector::from_iterator(k, v.iter().map(|col| col[j]));
            *lv = (*lv - vj.dot(&(&winv * &vj))).max(0.0);
        }
        for (i, ev) in eta_var.iter_mut().enumerate() {
            let (idx, val) = engine.design.row(i);
            let ai = DVector::from_iterator(k, v.iter().map(|col| idx.iter().zip(val).map(|(&p, a)| a * col[p]).sum()));
            *ev = (*ev - ai.dot(&(&winv * &ai))).max(0.0);
        }
    }
    for ev in eta_var.iter_mut() {
        *ev = ev.max(0.0);
    }
    Ok(GaussianApprox {
        mode: x,
        precision: h,
        log_det,
        log_det_constraint,
        converged,
        iterations,
        damping,
        log_lik: loc.loglik,
        latent_var,
        eta_mean: loc.eta,
        eta_var,
    })
}

/// Laplace approximation of `ln π(θ | y)` up to a constant:
/// `ln p(y|x*) + ln p(x*|θ) + ln π(θ) − ½ ln|Q| − ½ ln|C Q⁻¹ Cᵀ| + ((N − k)/2) ln 2π`.
pub fn log_posterior(engine: &Engine, theta: &[f64], approx: &GaussianApprox) -> Result<f64> {
    let (_, taus) = engine.split_theta(theta)?;
    let free = (engine.model.dim() - engine.n_constraints()) as f64;
    Ok(approx.log_lik + joint_prior_logdensity(&engine.model, &approx.mode, &taus)?
        + engine.log_hyperprior(theta)
        - 0.5 * approx.log_det
        - 0.5 * approx.log_det_constraint
        + 0.5 * free * (2.0 * PI).ln())
}

fn evaluate(
    engine: &Engine,
    theta: &[f64],
    start: Option<&[f64]>,
    settings: &InferenceSettings,
) -> Option<(GaussianApprox, f64)> {
    let result = gaussian_approx(engine, theta, start, settings)
        .and_then(|approx| log_posterior(engine, theta, &approx).map(|lp| (approx, lp)));
    match result {
        Ok((approx, lp)) if lp.is_finite() => Some((approx, lp)),
        Ok(_) => {
            log::debug!("non-finite log-posterior at θ = {theta:?}");
            None
        }
        Err(e) => {
            log::debug!("evaluation at θ = {theta:?} failed: {e}");
            None
        }
    }
}

/// One integration point: hyperparameters, lattice index and the Gaussian
/// approximation there.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub hyper: HyperPoint,
    pub index: Vec<i32>,
    pub approx: GaussianApprox,
}

/// Standardization of the hyperparameter space: `θ(k) = mode + M · z` with
/// `z_d = step · k_d · s_d`, where `s_d` is a separate stretch factor on each
/// side of the mode along direction `d`.
#[derive(Debug, Clone)]
pub struct GridDesign {
    pub mode: Vec<f64>,
    pub scale: DMatrix<f64>,
    /// `[negative side, positive side]` stretch per direction.
    pub side_scale: Vec<[f64; 2]>,
    pub step: f64,
    /// The curvature at the mode was not negative definite in some direction.
    pub flat: bool,
}

impl GridDesign {
    fn stretch(&self, d: usize, k: i32) -> f64 {
        match k.cmp(&0) {
            std::cmp::Ordering::Less => self.side_scale[d][0],
            std::cmp::Ordering::Greater => self.side_scale[d][1],
            std::cmp::Ordering::Equal => 0.5 * (self.side_scale[d][0] + self.side_scale[d][1]),
        }
    }

    pub fn theta_at(&self, index: &[i32]) -> Vec<f64> {
        let z = DVector::from_iterator(
            index.len(),
            index.iter().enumerate().map(|(d, &k)| self.step * k as f64 * self.stretch(d, k)),
        );
        let off = &self.scale * z;
        self.mode.iter().zip(off.iter()).map(|(m, o)| m + o).collect()
    }

    /// Relative volume of the lattice cell at `index`.
    pub fn cell_volume(&self, index: &[i32]) -> f64 {
        index.iter().enumerate().map(|(d, &k)| self.stretch(d, k)).product()
    }

    /// Kernel variance of hyperparameter `k` for one grid cell.
    pub fn cell_variance(&self, k: usize) -> f64 {
        let row_sq: f64 = self
            .scale
            .row(k)
            .iter()
            .zip(&self.side_scale)
            .map(|(m, s)| m * m * 0.5 * (s[0] * s[0] + s[1] * s[1]))
            .sum();
        self.step * self.step / 12.0 * row_sq
    }
}

fn in_bounds(theta: &[f64]) -> bool {
    theta.iter().all(|t| *t > THETA_BOUND.0 && *t < THETA_BOUND.1)
}

/// Locates the mode of `ln π(θ|y)` and builds the weighted integration grid.
pub fn hyper_grid(engine: &Engine, settings: &InferenceSettings) -> Result<(Vec<GridPoint>, GridDesign)> {
    let m = engine.n_hyper();
    if m > MAX_HYPER {
        return Err(Error::TooManyHyperparameters(m));
    }
    if m == 0 {
        let (approx, lp) = evaluate(engine, &[], None, settings).ok_or(Error::Convergence {
            what: "Gaussian approximation",
            iterations: settings.max_newton,
        })?;
        let mut hyper = HyperPoint::from_theta(engine, &[], lp);
        hyper.weight = 1.0;
        let design = GridDesign {
            mode: vec![],
            scale: DMatrix::zeros(0, 0),
            side_scale: vec![],
            step: settings.grid_step,
            flat: false,
        };
        return Ok((vec![GridPoint { hyper, index: vec![], approx }], design));
    }

    // Mode search: sequential, each evaluation warm-started from the last.
    let mut warm: Option<Vec<f64>> = None;
    let mut objective = |theta: &[f64]| -> f64 {
        if !in_bounds(theta) {
            return f64::INFINITY;
        }
        match evaluate(engine, theta, warm.as_deref(), settings) {
            Some((a, lp)) if a.converged => {
                warm = Some(a.mode);
                -lp
            }
            _ => f64::INFINITY,
        }
    };
    let mut start = vec![settings.initial_log_tau; m];
    if engine.model.likelihood.has_dispersion() {
        start[0] = 0.0;
    }
    let first = nelder_mead(&mut objective, &start, 1.0, 1e-8, settings.mode_max_evals);
    let polish = nelder_mead(&mut objective, &first.x, 0.2, 1e-10, settings.mode_max_evals);
    let best = if polish.value <= first.value { polish } else { first };
    if !best.value.is_finite() {
        return Err(Error::Convergence {
            what: "hyperparameter mode search",
            iterations: best.evaluations,
        });
    }
    let mode = best.x;
    let (mode_approx, _) = evaluate(engine, &mode, warm.as_deref(), settings).ok_or(Error::Convergence {
        what: "Gaussian approximation at the hyperparameter mode",
        iterations: settings.max_newton,
    })?;
    let (scale, flat) = standardization(engine, &mode, &mode_approx.mode, settings);
    if flat {
        log::warn!("log-posterior of the hyperparameters is flat or non-concave at the mode");
    }
    let side_scale = side_corrections(engine, &mode, &scale, &mode_approx, settings)?;
    let design = GridDesign {
        mode,
        scale,
        side_scale,
        step: settings.grid_step,
        flat,
    };
    let points = explore(engine, &design, mode_approx, settings)?;
    Ok((points, design))
}

fn standardization(
    engine: &Engine,
    mode: &[f64],
    x0: &[f64],
    settings: &InferenceSettings,
) -> (DMatrix<f64>, bool) {
    let m = mode.len();
    let h = settings.fd_step;
    let lp = |offsets: &[(usize, f64)]| -> Option<f64> {
        let mut t = mode.to_vec();
        for &(k, d) in offsets {
            t[k] += d;
        }
        evaluate(engine, &t, Some(x0), settings).map(|(_, v)| v)
    };
    let mut hess = DMatrix::zeros(m, m);
    let mut ok = true;
    let f0 = lp(&[]);
    for a in 0..m {
        match (lp(&[(a, h)]), f0, lp(&[(a, -h)])) {
            (Some(p), Some(c), Some(q)) => hess[(a, a)] = (p - 2.0 * c + q) / (h * h),
            _ => ok = false,
        }
        for b in 0..a {
            let vals = [
                lp(&[(a, h), (b, h)]),
                lp(&[(a, h), (b, -h)]),
                lp(&[(a, -h), (b, h)]),
                lp(&[(a, -h), (b, -h)]),
            ];
            if let [Some(pp), Some(pm), Some(mp), Some(mm)] = vals {
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            } else {
                ok = false;
            }
        }
    }
    const MIN_CURVATURE: f64 = 0.05;
    if !ok || hess.iter().any(|v| !v.is_finite()) {
        return (DMatrix::identity(m, m), true);
    }
    let neg = -hess;
    let eig = neg.symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..m)
        .map(|k| {
            let mut v = eig.eigenvectors.column(k).into_owned();
            let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v = -v;
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut flat = false;
    let mut scale = DMatrix::zeros(m, m);
    for (k, (lambda, v)) in pairs.into_iter().enumerate() {
        let lam = if lambda < MIN_CURVATURE {
            flat = true;
            MIN_CURVATURE
        } else {
            lambda
        };
        scale.set_column(k, &(v / lam.sqrt()));
    }
    (scale, flat)
}

/// Per-side stretch so that the log posterior drops by `z²/2` at `z` along
/// each standardized direction, as it would for a Gaussian. Corrects the
/// curvature estimate where the posterior is skewed or has a kink.
fn side_corrections(
    engine: &Engine,
    mode: &[f64],
    scale: &DMatrix<f64>,
    origin: &GaussianApprox,
    settings: &InferenceSettings,
) -> Result<Vec<[f64; 2]>> {
    const PROBE: f64 = 2.0;
    const RANGE: (f64, f64) = (0.1, 10.0);
    let lp0 = log_posterior(engine, mode, origin)?;
    let m = mode.len();
    let mut out = vec![[1.0; 2]; m];
    for (d, sides) in out.iter_mut().enumerate() {
        for (side, sign) in [(0, -1.0), (1, 1.0)] {
            let mut c = 1.0f64;
            for _ in 0..6 {
                let t = PROBE * c;
                let theta: Vec<f64> = (0..m).map(|i| mode[i] + sign * t * scale[(i, d)]).collect();
                let drop = if in_bounds(&theta) {
                    evaluate(engine, &theta, Some(&origin.mode), settings)
                        .filter(|(a, _)| a.converged)
                        .map(|(_, lp)| lp0 - lp)
                } else {
                    None
                };
                let Some(drop) = drop else { break };
                let next = if drop > 0.0 { (t / (2.0 * drop).sqrt()).clamp(RANGE.0, RANGE.1) } else { RANGE.1 };
                // Re-probe farther out when the drop was small.
                let done = next <= c * 1.05;
                c = next;
                if done || c >= RANGE.1 {
                    break;
                }
            }
            sides[side] = c;
        }
    }
    Ok(out)
}

fn l1(k: &[i32]) -> i32 {
    k.iter().map(|v| v.abs()).sum()
}

/// Layered walk over the integer lattice. Each point is warm-started from
/// its first included inner neighbour in lexicographic order, so results do
/// not depend on the number of worker threads.
fn explore(
    engine: &Engine,
    design: &GridDesign,
    origin: GaussianApprox,
    settings: &InferenceSettings,
) -> Result<Vec<GridPoint>> {
    let m = design.mode.len();
    let lp0 = log_posterior(engine, &design.mode, &origin)?;
    let mut points: Vec<GridPoint> = vec![GridPoint {
        hyper: HyperPoint::from_theta(engine, &design.mode, lp0),
        index: vec![0; m],
        approx: origin,
    }];
    let mut included: BTreeMap<Vec<i32>, usize> = BTreeMap::from([(vec![0; m], 0)]);
    let mut visited: BTreeSet<Vec<i32>> = BTreeSet::from([vec![0; m]]);
    let mut frontier: Vec<Vec<i32>> = vec![vec![0; m]];
    while !frontier.is_empty() {
        let mut candidates: BTreeSet<Vec<i32>> = BTreeSet::new();
        for k in &frontier {
            for d in 0..m {
                for s in [-1, 1] {
                    let mut c = k.clone();
                    c[d] += s;
                    if c[d].abs() <= settings.max_grid_index && l1(&c) == l1(k) + 1 && !visited.contains(&c) {
                        candidates.insert(c);
                    }
                }
            }
        }
        let jobs: Vec<(Vec<i32>, usize)> = candidates
            .into_iter()
            .map(|c| {
                let parent = (0..m)
                    .filter(|&d| c[d] != 0)
                    .map(|d| {
                        let mut p = c.clone();
                        p[d] -= c[d].signum();
                        p
                    })
                    .filter_map(|p| included.get(&p).map(|&i| (p, i)))
                    .min()
                    .map(|(_, i)| i)
                    .expect("candidate has an included parent");
                (c, parent)
            })
            .collect();
        let results: Vec<(Vec<i32>, Option<(GaussianApprox, f64)>)> = jobs
            .par_iter()
            .map(|(k, parent)| {
                let theta = design.theta_at(k);
                let r = if in_bounds(&theta) {
                    evaluate(engine, &theta, Some(&points[*parent].approx.mode), settings)
                } else {
                    None
                };
                (k.clone(), r)
            })
            .collect();
        frontier = Vec::new();
        for (k, r) in results {
            visited.insert(k.clone());
            let Some((approx, lp)) = r else {
                // Outside the prior's support or the θ box the density is
                // taken as zero anyway.
                let theta = design.theta_at(&k);
                if in_bounds(&theta) && engine.log_hyperprior(&theta).is_finite() {
                    log::warn!("grid point {k:?} failed; weight set to zero");
                } else {
                    log::debug!("grid point {k:?} lies outside the hyperparameter domain");
                }
                continue;
            };
            if !approx.converged {
                log::warn!("Newton iterations did not converge at grid point {k:?}; weight set to zero");
                continue;
            }
            if lp < lp0 - settings.log_drop {
                continue;
            }
            let theta = design.theta_at(&k);
            included.insert(k.clone(), points.len());
            points.push(GridPoint {
                hyper: HyperPoint::from_theta(engine, &theta, lp),
                index: k.clone(),
                approx,
            });
            frontier.push(k);
        }
        if points.len() >= settings.max_grid_points {
            log::warn!("grid truncated at {} points", points.len());
            break;
        }
    }
    let max_lp = points.iter().map(|p| p.hyper.log_post).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = points
        .iter()
        .map(|p| (p.hyper.log_post - max_lp).exp() * design.cell_volume(&p.index))
        .collect();
    let total: f64 = raw.iter().sum();
    for (p, r) in points.iter_mut().zip(raw) {
        p.hyper.weight = r / total;
    }
    Ok(points)
}

/// Moments and quantiles of one posterior marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
}

/// Weighted grid values of one hyperparameter on the log scale.
#[derive(Debug, Clone)]
pub struct HyperMarginal {
    pub name: String,
    /// `(ln value, weight)` per grid point.
    pub points: Vec<(f64, f64)>,
    /// Standard deviation of the smoothing kernel on the log scale.
    pub bandwidth: f64,
    /// Summary on the natural (exponentiated) scale.
    pub summary: MarginalSummary,
}

impl HyperMarginal {
    fn new(name: String, points: Vec<(f64, f64)>, bandwidth: f64) -> Self {
        let mean: f64 = points.iter().map(|(t, w)| w * t.exp()).sum();
        let second: f64 = points.iter().map(|(t, w)| w * (2.0 * t).exp()).sum();
        let comps: Vec<(f64, f64, f64)> = points.iter().map(|&(t, w)| (w, t, bandwidth)).collect();
        let q = |p: f64| mixture_quantile(&comps, p).exp();
        let summary = MarginalSummary {
            mean,
            sd: (second - mean * mean).max(0.0).sqrt(),
            q025: q(0.025),
            q500: q(0.5),
            q975: q(0.975),
        };
        Self {
            name,
            points,
            bandwidth,
            summary,
        }
    }

    /// Normalized histogram of the log-scale values over `n_bins` equal bins.
    pub fn histogram(&self, n_bins: usize) -> Vec<(f64, f64)> {
        let lo = self.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / n_bins as f64).max(f64::MIN_POSITIVE);
        let mut h = vec![0.0; n_bins];
        for &(t, w) in &self.points {
            let k = (((t - lo) / width) as usize).min(n_bins - 1);
            h[k] += w;
        }
        h.into_iter().enumerate().map(|(k, w)| (lo + (k as f64 + 0.5) * width, w)).collect()
    }
}

/// CDF of `Σ w N(μ, σ²)`; zero-variance components are point masses.
pub fn mixture_cdf(comps: &[(f64, f64, f64)], x: f64) -> f64 {
    comps
        .iter()
        .map(|&(w, mu, sd)| {
            if sd > 0.0 {
                w * normal_cdf((x - mu) / sd)
            } else if x >= mu {
                w
            } else {
                0.0
            }
        })
        .sum()
}

/// Quantile of a Gaussian mixture `(weight, mean, sd)` by bisection.
pub fn mixture_quantile(comps: &[(f64, f64, f64)], p: f64) -> f64 {
    let lo0 = comps.iter().map(|&(_, m, s)| m - 12.0 * s).fold(f64::INFINITY, f64::min);
    let hi0 = comps.iter().map(|&(_, m, s)| m + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    if hi - lo <= 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(comps, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub engine: Engine,
    pub grid: Vec<GridPoint>,
    pub design: GridDesign,
    pub latent_marginals: Vec<MarginalSummary>,
    pub hyper_marginals: Vec<HyperMarginal>,
    pub scores: Option<Scores>,
}

impl FitResult {
    /// Mixture components `(weight, mean, sd)` of latent element `j`.
    pub fn latent_components(&self, j: usize) -> Vec<(f64, f64, f64)> {
        self.grid
            .iter()
            .map(|p| (p.hyper.weight, p.approx.mode[j], p.approx.latent_var[j].sqrt()))
            .collect()
    }

    /// Posterior mean of the latent vector.
    pub fn latent_mean(&self) -> Vec<f64> {
        self.latent_marginals.iter().map(|s| s.mean).collect()
    }

    /// Posterior mean of the linear predictor at the observations.
    pub fn eta_mean(&self) -> Vec<f64> {
        let n = self.engine.model.n_obs();
        let mut out = vec![0.0; n];
        for p in &self.grid {
            for (o, e) in out.iter_mut().zip(&p.approx.eta_mean) {
                *o += p.hyper.weight * e;
            }
        }
        out
    }

    /// Posterior mean of component `j` evaluated at the observations.
    pub fn component_fit(&self, j: usize) -> Vec<f64> {
        let mean = self.latent_mean();
        self.engine.model.components[j].fitted(&mean[self.engine.model.range(j)])
    }

    /// Posterior mean of α (or the NB size); 1 for Poisson.
    pub fn dispersion_mean(&self) -> f64 {
        self.grid.iter().map(|p| p.hyper.weight * p.hyper.dispersion()).sum()
    }
}

fn summarize(comps: &[(f64, f64, f64)]) -> MarginalSummary {
    let mean: f64 = comps.iter().map(|(w, m, _)| w * m).sum();
    let second: f64 = comps.iter().map(|(w, m, s)| w * (s * s + m * m)).sum();
    MarginalSummary {
        mean,
        sd: (second - mean * mean).max(0.0).sqrt(),
        q025: mixture_quantile(comps, 0.025),
        q500: mixture_quantile(comps, 0.5),
        q975: mixture_quantile(comps, 0.975),
    }
}

/// Full pipeline: grid construction, latent and hyperparameter marginals.
pub fn fit(model: LatentModel, y: Vec<u64>, settings: &InferenceSettings) -> Result<FitResult> {
    let engine = Engine::new(model, y)?;
    let (grid, design) = hyper_grid(&engine, settings)?;
    let mut result = FitResult {
        engine,
        grid,
        design,
        latent_marginals: vec![],
        hyper_marginals: vec![],
        scores: None,
    };
    result.latent_marginals = (0..result.engine.model.dim())
        .map(|j| summarize(&result.latent_components(j)))
        .collect();
    result.hyper_marginals = result
        .engine
        .hyper_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let pts = result.grid.iter().map(|p| (p.hyper.theta()[k], p.hyper.weight)).collect();
            HyperMarginal::new(name, pts, result.design.cell_variance(k).sqrt())
        })
        .collect();
    Ok(result)
}

/// Mixture mean, sd and (2.5%, 50%, 97.5%) quantiles of latent element `index`.
pub fn latent_marginal(fit: &FitResult, index: usize) -> Result<MarginalSummary> {
    let n = fit.engine.model.dim();
    if index >= n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    Ok(fit.latent_marginals[index].clone())
}

/// Predictive draws for one new covariate row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub draws: Vec<u64>,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Maps raw cells (one per component, in component order) to a sparse
/// design row over the latent vector.
pub fn design_row(model: &LatentModel, cells: &[String]) -> Result<Vec<(usize, f64)>> {
    if cells.len() != model.components.len() {
        return Err(Error::Dimension(format!(
            "{} cells for {} components",
            cells.len(),
            model.components.len()
        )));
    }
    let mut row = vec![(0, 1.0)];
    for (j, (c, raw)) in model.components.iter().zip(cells).enumerate() {
        let (k, v) = c.kind.design_entry(raw)?;
        row.push((model.range(j).start + k, v));
    }
    Ok(row)
}

/// Posterior predictive sampling: grid point by weight, latent field from its
/// constrained Gaussian, then the count from the likelihood.
pub fn predictive_draw(
    fit: &FitResult,
    newdata: &[Vec<String>],
    rng_seed: u64,
    n_draws: usize,
) -> Result<Vec<PredictiveSummary>> {
    let engine = &fit.engine;
    let model = &engine.model;
    let rows = newdata.iter().map(|r| design_row(model, r)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cum: Vec<f64> = fit
        .grid
        .iter()
        .scan(0.0, |s, p| {
            *s += p.hyper.weight;
            Some(*s)
        })
        .collect();
    type Sampler = (ProfileCholesky, Vec<Vec<f64>>, DMatrix<f64>);
    let mut cache: Vec<Option<Sampler>> = vec![None; fit.grid.len()];
    let mut draws = vec![Vec::with_capacity(n_draws); rows.len()];
    let n = model.dim();
    for _ in 0..n_draws {
        let u: f64 = rng.gen();
        let k = cum.partition_point(|&c| c < u * cum[cum.len() - 1]).min(fit.grid.len() - 1);
        let point = &fit.grid[k];
        if cache[k].is_none() {
            let chol = point.approx.precision.cholesky()?;
            let (v, w) = engine.kriging(&chol);
            let winv = if w.nrows() == 0 {
                w
            } else {
                w.try_inverse().ok_or(Error::Convergence {
                    what: "constraint covariance inversion",
                    iterations: 0,
                })?
            };
            cache[k] = Some((chol, v, winv));
        }
        let (chol, v, winv) = cache[k].as_ref().unwrap();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut dx = chol.sample_from_standard(&z);
        if !v.is_empty() {
            let coef = winv * engine.constraint_values(&dx);
            for (vk, c) in v.iter().zip(coef.iter()) {
                for (d, vi) in dx.iter_mut().zip(vk) {
                    *d -= c * vi;
                }
            }
        }
        let x: Vec<f64> = point.approx.mode.iter().zip(&dx).map(|(m, d)| m + d).collect();
        for (row, out) in rows.iter().zip(draws.iter_mut()) {
            let eta = sparse_apply(row, &x);
            out.push(model.likelihood.sample(point.hyper.dispersion(), eta, &mut rng)?);
        }
    }
    Ok(draws
        .into_iter()
        .map(|d| {
            let mean = d.iter().sum::<u64>() as f64 / d.len().max(1) as f64;
            let mut sorted = d.clone();
            sorted.sort_unstable();
            let q = |p: f64| {
                if sorted.is_empty() {
                    return f64::NAN;
                }
                let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
                sorted[idx] as f64
            };
            PredictiveSummary {
                mean,
                q025: q(0.025),
                q975: q(0.975),
                draws: d,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Likelihood;
    use crate::priors::AlphaPrior;

    #[test]
    fn mixture_quantiles() {
        let one = [(1.0, 2.0, 3.0)];
        assert!((mixture_quantile(&one, 0.975) - (2.0 + 3.0 * 1.959_963_984_540_054)).abs() < 1e-8);
        let two = [(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)];
        assert!(mixture_quantile(&two, 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_too_many_hyperparameters() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let g: Vec<String> = (0..40).map(|i| format!("g{}", i % 4)).collect();
        let comps = vec![
            crate::star_predictor::make_rw2("a", &x, 10).unwrap(),
            crate::star_predictor::make_iid("b", &g).unwrap(),
            crate::star_predictor::make_iid("c", &g).unwrap().with_name("c"),
            crate::star_predictor::make_iid("d", &g).unwrap().with_name("d"),
        ];
        let m = LatentModel::new(40, comps, Likelihood::GammaCount, AlphaPrior::gamma(1.0, 0.01).unwrap()).unwrap();
        assert!(matches!(Engine::new(m, vec![1; 40]), Err(Error::TooManyHyperparameters(5))));
    }

    #[test]
    fn poisson_intercept_only_is_single_point() {
        let m = LatentModel::new(6, vec![], Likelihood::Poisson, AlphaPrior::gamma(1.0, 0.01).unwrap()).unwrap();
        let f = fit(m, vec![2, 3, 1, 4, 2, 3], &InferenceSettings::default()).unwrap();
        assert_eq!(f.grid.len(), 1);
        assert_eq!(f.grid[0].hyper.weight, 1.0);
        let s = latent_marginal(&f, 0).unwrap();
        assert!((s.mean - (2.5f64).ln()).abs() < 0.05);
        assert!(latent_marginal(&f, 1).is_err());
    }
}
