//! Structured additive predictor `η = β₀ + Σ_j Z_j β_j`.
//!
//! Each component carries its design `Z_j`, a structure matrix `K_j`
//! (prior precision `τ_j K_j`), its rank deficiency and the linear
//! constraints `A β_j = 0` that pin down the null space of `K_j`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::Likelihood;
use crate::priors::{AlphaPrior, VariancePrior};
use crate::sparse::CsrMatrix;

/// Prior precision of the intercept.
pub const INTERCEPT_PRECISION: f64 = 0.01;
/// Prior precision of fixed (linear) effects.
pub const FIXED_EFFECT_PRECISION: f64 = 0.001;
/// Default number of RW2 bins.
pub const DEFAULT_RW2_BINS: usize = 30;

/// Neighbourhood graph of an areal partition; indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates symmetry and the absence of self-loops.
    pub fn new(mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.contains(&i) {
                return Err(Error::GraphFormat {
                    line: i + 2,
                    msg: format!("region {} lists itself as a neighbor", i + 1),
                });
            }
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(Error::GraphFormat {
                    line: i + 2,
                    msg: format!("neighbor id {} exceeds region count {n}", bad + 1),
                });
            }
        }
        for i in 0..n {
            for &j in &neighbors[i] {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::GraphFormat {
                        line: i + 2,
                        msg: format!("asymmetric adjacency: {} lists {} but not vice versa", i + 1, j + 1),
                    });
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// Parses the adjacency format: first line the region count, then one
    /// line `<id> <n_neighbors> <id_1> ... <id_k>` per region, ids 1-based.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (l0, head) = lines.next().ok_or(Error::GraphFormat {
            line: 1,
            msg: "empty graph file".into(),
        })?;
        let n: usize = head.trim().parse().map_err(|_| Error::GraphFormat {
            line: l0 + 1,
            msg: format!("expected region count, found `{}`", head.trim()),
        })?;
        let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; n];
        for (ln, line) in lines {
            let line_no = ln + 1;
            let err = |msg: String| Error::GraphFormat { line: line_no, msg };
            let fields = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| err(format!("non-integer token `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if fields.len() < 2 {
                return Err(err("expected `<id> <n_neighbors> ...`".into()));
            }
            let (id, k) = (fields[0], fields[1]);
            if id == 0 || id > n {
                return Err(err(format!("region id {id} outside 1..={n}")));
            }
            if fields.len() != k + 2 {
                return Err(err(format!("declared {k} neighbors but listed {}", fields.len() - 2)));
            }
            if neighbors[id - 1].is_some() {
                return Err(err(format!("region {id} listed twice")));
            }
            let mut list = Vec::with_capacity(k);
            for &j in &fields[2..] {
                if j == 0 || j > n {
                    return Err(err(format!("neighbor id {j} outside 1..={n}")));
                }
                if j == id {
                    return Err(err(format!("region {id} lists itself as a neighbor")));
                }
                list.push(j - 1);
            }
            neighbors[id - 1] = Some(list);
        }
        let neighbors = neighbors
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or(Error::GraphFormat {
                    line: 0,
                    msg: format!("region {} has no adjacency line", i + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(neighbors)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Writes the 1-based adjacency format accepted by [`Graph::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.neighbors.len());
        for (i, list) in self.neighbors.iter().enumerate() {
            s.push_str(&format!("{} {}", i + 1, list.len()));
            for j in list {
                s.push_str(&format!(" {}", j + 1));
            }
            s.push('\n');
        }
        s
    }

    pub fn n_regions(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Connected component label of every node, labels in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n_regions();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// How a component maps raw covariate values to design rows.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind {
    /// Centered covariate times one coefficient.
    Linear { center: f64 },
    /// Second-order random walk on equidistant bins over `[lower, lower + n_bins·width]`.
    Rw2 { lower: f64, width: f64, n_bins: usize },
    /// Intrinsic CAR on a region graph; observations carry 1-based region ids.
    Icar { graph: Graph },
    /// Exchangeable effect over the listed levels.
    Iid { levels: Vec<String> },
}

impl ComponentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ComponentKind::Linear { .. } => "linear",
            ComponentKind::Rw2 { .. } => "rw2",
            ComponentKind::Icar { .. } => "icar",
            ComponentKind::Iid { .. } => "iid",
        }
    }

    /// Sparse design row for one raw cell value.
    pub fn design_entry(&self, raw: &str) -> Result<(usize, f64)> {
        let num = || {
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("non-numeric covariate value `{raw}`")))
        };
        match self {
            ComponentKind::Linear { center } => Ok((0, num()? - center)),
            ComponentKind::Rw2 { lower, width, n_bins } => Ok((bin_index(num()?, *lower, *width, *n_bins), 1.0)),
            ComponentKind::Icar { graph } => {
                let id: usize = raw.trim().parse().map_err(|_| Error::UnknownLevel(raw.to_string()))?;
                if id == 0 || id > graph.n_regions() {
                    return Err(Error::UnknownLevel(raw.to_string()));
                }
                Ok((id - 1, 1.0))
            }
            ComponentKind::Iid { levels } => levels
                .iter()
                .position(|l| l == raw.trim())
                .map(|k| (k, 1.0))
                .ok_or_else(|| Error::UnknownLevel(raw.to_string())),
        }
    }

    /// Midpoints of the RW2 bins.
    pub fn bin_centers(&self) -> Option<Vec<f64>> {
        match self {
            ComponentKind::Rw2 { lower, width, n_bins } => {
                Some((0..*n_bins).map(|k| lower + (k as f64 + 0.5) * width).collect())
            }
            _ => None,
        }
    }
}

fn bin_index(x: f64, lower: f64, width: f64, n_bins: usize) -> usize {
    let k = ((x - lower) / width).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(n_bins - 1)
    }
}

#[derive(Debug, Clone)]
pub struct PredictorComponent {
    pub name: String,
    pub kind: ComponentKind,
    /// `n × D` design.
    pub design: CsrMatrix,
    /// `D × D` structure matrix as `(i, j, v)` with `i ≤ j`.
    pub penalty: Vec<(usize, usize, f64)>,
    pub rank_deficiency: usize,
    /// Rows `a` with `a·β = 0`.
    pub constraints: Vec<Vec<f64>>,
    /// `None` for fixed effects.
    pub tau_prior: Option<VariancePrior>,
    /// Gaussian precision of a fixed effect.
    pub fixed_precision: Option<f64>,
}

impl PredictorComponent {
    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn is_random(&self) -> bool {
        self.tau_prior.is_some()
    }

    pub fn rank(&self) -> usize {
        self.dim() - self.rank_deficiency
    }

    pub fn with_tau_prior(mut self, prior: VariancePrior) -> Self {
        if self.fixed_precision.is_none() {
            self.tau_prior = Some(prior);
        }
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Dense `K`.
    pub fn penalty_dense(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut k = vec![vec![0.0; d]; d];
        for &(i, j, v) in &self.penalty {
            k[i][j] += v;
            if i != j {
                k[j][i] += v;
            }
        }
        k
    }

    /// `βᵀ K β`.
    pub fn quad_form(&self, beta: &[f64]) -> f64 {
        self.penalty
            .iter()
            .map(|&(i, j, v)| if i == j { v * beta[i] * beta[i] } else { 2.0 * v * beta[i] * beta[j] })
            .sum()
    }

    /// `Z β`.
    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        self.design.mul_vec(beta)
    }
}

fn default_tau_prior() -> VariancePrior {
    VariancePrior::scale_dependent(1.0, 0.01).expect("valid default")
}

fn finite_column(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::DegenerateDesign(format!("{what}: empty covariate column")));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::DegenerateDesign(format!("{what}: non-finite covariate value {v}")));
    }
    Ok(())
}

/// Fixed linear effect of a centered covariate.
pub fn make_linear(name: &str, x: &[f64]) -> Result<PredictorComponent> {
    finite_column(x, name)?;
    let n = x.len();
    let center = x.iter().sum::<f64>() / n as f64;
    let spread = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * (1.0 + center.abs()) {
        return Err(Error::DegenerateDesign(format!("{name}: constant covariate column")));
    }
    let trip: Vec<_> = x.iter().enumerate().map(|(i, v)| (i, 0, v - center)).collect();
    Ok(PredictorComponent {
        name: name.to_string(),
        kind: ComponentKind::Linear { center },
        design: CsrMatrix::from_triplets(n, 1, &trip)?,
        penalty: vec![],
        rank_deficiency: 1,
        constraints: vec![],
        tau_prior: None,
        fixed_precision: Some(FIXED_EFFECT_PRECISION),
    })
}

/// Binned second-order random walk.
///
/// If the covariate has fewer distinct values than `n_bins`, the bin count
/// collapses to the number of distinct values (at least 3 are required).
pub fn make_rw2(name: &str, x: &[f64], n_bins: usize) -> Result<PredictorComponent> {
    if n_bins < 5 {
        return Err(Error::Config(format!("{name}: rw2 needs at least 5 bins, got {n_bins}")));
    }
    finite_column(x, name)?;
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "{name}: rw2 needs at least 3 distinct covariate values"
        )));
    }
    let mut bins = n_bins;
    if distinct.len() < n_bins {
        log::warn!("{name}: only {} distinct values, collapsing {n_bins} bins", distinct.len());
        bins = distinct.len();
    }
    let lower = distinct[0];
    let width = (distinct[distinct.len() - 1] - lower) / bins as f64;
    let trip: Vec<_> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, bin_index(v, lower, width, bins), 1.0))
        .collect();
    Ok(PredictorComponent {
        name: name.to_string(),
        kind: ComponentKind::Rw2 {
            lower,
            width,
            n_bins: bins,
        },
        design: CsrMatrix::from_triplets(x.len(), bins, &trip)?,
        penalty: rw2_structure(bins),
        rank_deficiency: 2,
        constraints: rw2_constraints(bins),
        tau_prior: Some(default_tau_prior()),
        fixed_precision: None,
    })
}

/// `D₂ᵀ D₂` for unit-spaced knots, upper triangle.
pub fn rw2_structure(m: usize) -> Vec<(usize, usize, f64)> {
    let mut k: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in 0..m - 2 {
        let row = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
        for &(i, a) in &row {
            for &(j, b) in &row {
                if i <= j {
                    *k.entry((i, j)).or_default() += a * b;
                }
            }
        }
    }
    k.into_iter().map(|((i, j), v)| (i, j, v)).collect()
}

fn rw2_constraints(m: usize) -> Vec<Vec<f64>> {
    let mid = (m as f64 - 1.0) / 2.0;
    vec![vec![1.0; m], (0..m).map(|k| k as f64 - mid).collect()]
}

/// Besag intrinsic CAR; `regions` are 1-based ids into `graph`.
pub fn make_icar(name: &str, graph: &Graph, regions: &[usize]) -> Result<PredictorComponent> {
    let r = graph.n_regions();
    if r < 2 {
        return Err(Error::DegenerateDesign(format!("{name}: graph needs at least 2 regions")));
    }
    let mut trip = Vec::with_capacity(regions.len());
    for (i, &id) in regions.iter().enumerate() {
        if id == 0 || id > r {
            return Err(Error::UnknownLevel(format!("region {id}")));
        }
        trip.push((i, id - 1, 1.0));
    }
    let mut penalty = Vec::new();
    for i in 0..r {
        penalty.push((i, i, graph.neighbors(i).len() as f64));
        for &j in graph.neighbors(i) {
            if i < j {
                penalty.push((i, j, -1.0));
            }
        }
    }
    let labels = graph.components();
    let n_comp = labels.iter().max().map_or(0, |m| m + 1);
    let constraints = (0..n_comp)
        .map(|c| labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(PredictorComponent {
        name: name.to_string(),
        kind: ComponentKind::Icar { graph: graph.clone() },
        design: CsrMatrix::from_triplets(regions.len(), r, &trip)?,
        penalty,
        rank_deficiency: n_comp,
        constraints,
        tau_prior: Some(default_tau_prior()),
        fixed_precision: None,
    })
}

/// Exchangeable Gaussian effect; levels are sorted lexicographically.
pub fn make_iid(name: &str, group: &[String]) -> Result<PredictorComponent> {
    let mut levels: Vec<String> = group.iter().map(|g| g.trim().to_string()).collect();
    levels.sort();
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::DegenerateDesign(format!("{name}: iid effect needs at least 2 levels")));
    }
    let trip: Vec<_> = group
        .iter()
        .enumerate()
        .map(|(i, g)| (i, levels.binary_search(&g.trim().to_string()).unwrap(), 1.0))
        .collect();
    let d = levels.len();
    Ok(PredictorComponent {
        name: name.to_string(),
        kind: ComponentKind::Iid { levels },
        design: CsrMatrix::from_triplets(group.len(), d, &trip)?,
        penalty: (0..d).map(|i| (i, i, 1.0)).collect(),
        rank_deficiency: 0,
        constraints: vec![],
        tau_prior: Some(default_tau_prior()),
        fixed_precision: None,
    })
}

/// Latent Gaussian model: likelihood, intercept and additive components.
///
/// The latent vector is `[β₀, β₁, …, β_J]` with components concatenated in
/// order.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub intercept_precision: f64,
    pub components: Vec<PredictorComponent>,
    pub likelihood: Likelihood,
    /// Prior on α (gamma-count) or on the size (negative binomial).
    pub alpha_prior: AlphaPrior,
    n_obs: usize,
    offsets: Vec<usize>,
}

impl LatentModel {
    pub fn new(
        n_obs: usize,
        components: Vec<PredictorComponent>,
        likelihood: Likelihood,
        alpha_prior: AlphaPrior,
    ) -> Result<Self> {
        if n_obs == 0 {
            return Err(Error::Dimension("model needs at least one observation".into()));
        }
        let mut offsets = Vec::with_capacity(components.len());
        let mut next = 1;
        for c in &components {
            if c.design.nrows() != n_obs {
                return Err(Error::Dimension(format!(
                    "component `{}` has {} rows, expected {n_obs}",
                    c.name,
                    c.design.nrows()
                )));
            }
            if let Some(p) = &c.tau_prior {
                p.validate()?;
            }
            offsets.push(next);
            next += c.dim();
        }
        check_linear_collinearity(&components)?;
        Ok(Self {
            intercept_precision: INTERCEPT_PRECISION,
            components,
            likelihood,
            alpha_prior,
            n_obs,
            offsets,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Latent dimension `1 + Σ D_j`.
    pub fn dim(&self) -> usize {
        1 + self.components.iter().map(|c| c.dim()).sum::<usize>()
    }

    /// Latent index range of component `j`.
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        let o = self.offsets[j];
        o..o + self.components[j].dim()
    }

    /// Indices of components that carry a precision hyperparameter.
    pub fn random_components(&self) -> Vec<usize> {
        (0..self.components.len()).filter(|&j| self.components[j].is_random()).collect()
    }

    /// Number of hyperparameters: dispersion (if any) plus one τ per random
    /// component.
    pub fn n_hyper(&self) -> usize {
        self.likelihood.has_dispersion() as usize + self.random_components().len()
    }

    /// Full `n × dim` design including the intercept column.
    pub fn design(&self) -> Result<CsrMatrix> {
        let mut trip = Vec::new();
        for i in 0..self.n_obs {
            trip.push((i, 0, 1.0));
        }
        for (j, c) in self.components.iter().enumerate() {
            let o = self.offsets[j];
            for i in 0..self.n_obs {
                let (idx, val) = c.design.row(i);
                for (&k, &v) in idx.iter().zip(val) {
                    trip.push((i, o + k, v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_obs, self.dim(), &trip)
    }

    /// Latent indices that couple to every observation (intercept and
    /// fixed effects).
    pub fn dense_indices(&self) -> Vec<usize> {
        let mut d = vec![0];
        for (j, c) in self.components.iter().enumerate() {
            if !c.is_random() {
                d.extend(self.range(j));
            }
        }
        d
    }

    /// Constraint rows over the full latent vector.
    pub fn constraints(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for (j, c) in self.components.iter().enumerate() {
            let o = self.offsets[j];
            for row in &c.constraints {
                out.push(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (o + k, *v)).collect());
            }
        }
        out
    }

    /// Prior precision entries `(i, j, v)`, `i ≤ j`, for the given per-random-
    /// component precisions.
    pub fn prior_precision_entries(&self, taus: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        let random = self.random_components();
        if taus.len() != random.len() {
            return Err(Error::Dimension(format!(
                "expected {} precisions, got {}",
                random.len(),
                taus.len()
            )));
        }
        let mut out = vec![(0, 0, self.intercept_precision)];
        let mut t = taus.iter();
        for (j, c) in self.components.iter().enumerate() {
            let o = self.offsets[j];
            if let Some(p) = c.fixed_precision {
                for k in 0..c.dim() {
                    out.push((o + k, o + k, p));
                }
            } else {
                let tau = *t.next().unwrap();
                for &(a, b, v) in &c.penalty {
                    out.push((o + a, o + b, tau * v));
                }
            }
        }
        Ok(out)
    }
}

fn check_linear_collinearity(components: &[PredictorComponent]) -> Result<()> {
    let cols: Vec<(&str, Vec<f64>)> = components
        .iter()
        .filter(|c| matches!(c.kind, ComponentKind::Linear { .. }))
        .map(|c| (c.name.as_str(), c.design.mul_vec(&[1.0])))
        .collect();
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let (x, y) = (&cols[a].1, &cols[b].1);
            let xy: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let xx: f64 = x.iter().map(|p| p * p).sum();
            let yy: f64 = y.iter().map(|q| q * q).sum();
            if xy.abs() >= (1.0 - 1e-10) * (xx * yy).sqrt() {
                return Err(Error::DegenerateDesign(format!(
                    "linear effects `{}` and `{}` are collinear",
                    cols[a].0, cols[b].0
                )));
            }
        }
    }
    Ok(())
}

/// `ln p(x | τ)` for the partially improper Gaussian prior: proper Gaussians
/// on the intercept and fixed effects, and for each random component
/// `(rk/2)(ln τ − ln 2π) − (τ/2) βᵀKβ`.
pub fn joint_prior_logdensity(model: &LatentModel, latent: &[f64], taus: &[f64]) -> Result<f64> {
    if latent.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "latent vector has length {}, model dimension is {}",
            latent.len(),
            model.dim()
        )));
    }
    let random = model.random_components();
    if taus.len() != random.len() {
        return Err(Error::Dimension(format!("expected {} precisions, got {}", random.len(), taus.len())));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::domain("joint_prior_logdensity", *t, "tau > 0"));
    }
    let ln2pi = (2.0 * PI).ln();
    let gauss = |prec: f64, v: f64| 0.5 * (prec.ln() - ln2pi) - 0.5 * prec * v * v;
    let mut total = gauss(model.intercept_precision, latent[0]);
    let mut t = taus.iter();
    for (j, c) in model.components.iter().enumerate() {
        let beta = &latent[model.range(j)];
        if let Some(p) = c.fixed_precision {
            total += beta.iter().map(|&b| gauss(p, b)).sum::<f64>();
        } else {
            let tau = *t.next().unwrap();
            total += 0.5 * c.rank() as f64 * (tau.ln() - ln2pi) - 0.5 * tau * c.quad_form(beta);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_centers_and_rejects_constant() {
        let c = make_linear("x", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.design.mul_vec(&[1.0]), vec![-1.0, 0.0, 1.0]);
        assert!(make_linear("x", &[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn collinear_linear_effects_rejected() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let a = make_linear("a", &x).unwrap();
        let b = make_linear("b", &x).unwrap();
        let prior = AlphaPrior::gamma(1.0, 0.01).unwrap();
        assert!(matches!(
            LatentModel::new(4, vec![a, b], Likelihood::Poisson, prior),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn rw2_structure_examples() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let c = make_rw2("s", &x, 5).unwrap();
        let k = c.penalty_dense();
        assert_eq!(k.len(), 5);
        assert_eq!(k[0], vec![1.0, -2.0, 1.0, 0.0, 0.0]);
        assert_eq!(k[2], vec![1.0, -4.0, 6.0, -4.0, 1.0]);
        for beta in [[1.0; 5], [1.0, 2.0, 3.0, 4.0, 5.0]] {
            assert!(c.quad_form(&beta).abs() < 1e-12);
        }
        // β_k = k² has constant second difference 2.
        let sq: Vec<f64> = (1..=5).map(|k| (k * k) as f64).collect();
        assert!((c.quad_form(&sq) - 4.0 * 3.0).abs() < 1e-12);
        assert!(make_rw2("s", &x, 4).is_err());
    }

    #[test]
    fn rw2_bins_and_clamping() {
        let x: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let c = make_rw2("s", &x, 10).unwrap();
        let (idx, _) = c.design.row(0);
        assert_eq!(idx, &[0]);
        let (idx, _) = c.design.row(100);
        assert_eq!(idx, &[9]);
        assert_eq!(c.kind.design_entry("-5").unwrap().0, 0);
        assert_eq!(c.kind.design_entry("7").unwrap().0, 9);
        assert_eq!(c.kind.design_entry("0.55").unwrap().0, 5);
    }

    #[test]
    fn icar_path_and_disconnected() {
        let g = Graph::parse("3\n1 1 2\n2 2 1 3\n3 1 2\n").unwrap();
        let c = make_icar("s", &g, &[1, 2, 3, 2]).unwrap();
        assert_eq!(
            c.penalty_dense(),
            vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]
        );
        assert_eq!(c.rank_deficiency, 1);
        let g2 = Graph::parse("4\n1 1 2\n2 1 1\n3 1 4\n4 1 3\n").unwrap();
        let c2 = make_icar("s", &g2, &[1, 2, 3, 4]).unwrap();
        assert_eq!(c2.rank_deficiency, 2);
        assert_eq!(c2.constraints, vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
        for row in c2.penalty_dense() {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
        assert!(c2.quad_form(&[3.0, 3.0, -1.0, -1.0]).abs() < 1e-15);
    }

    #[test]
    fn graph_format_errors_carry_line_numbers() {
        assert!(matches!(Graph::parse("2\n1 1 2\n2 0\n"), Err(Error::GraphFormat { .. })));
        assert!(matches!(Graph::parse("2\n1 1 1\n2 0\n"), Err(Error::GraphFormat { line: 2, .. })));
        assert!(matches!(Graph::parse("2\n1 2 2\n2 1 1\n"), Err(Error::GraphFormat { line: 2, .. })));
        assert!(matches!(Graph::parse("2\n1 1 x\n"), Err(Error::GraphFormat { line: 2, .. })));
        assert!(matches!(Graph::parse("x\n"), Err(Error::GraphFormat { line: 1, .. })));
        let g = Graph::parse("3\n1 1 2\n2 2 1 3\n3 1 2\n").unwrap();
        assert_eq!(Graph::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn iid_examples() {
        let g: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let c = make_iid("g", &g).unwrap();
        assert_eq!(c.penalty_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        for i in 0..4 {
            assert_eq!(c.design.row(i).0.len(), 1);
        }
        assert!(make_iid("g", &["a".to_string(), "a".to_string()]).is_err());
        assert!(matches!(c.kind.design_entry("z"), Err(Error::UnknownLevel(_))));
    }

    #[test]
    fn prior_logdensity_zero_vector_and_null_space() {
        let g = Graph::parse("3\n1 1 2\n2 2 1 3\n3 1 2\n").unwrap();
        let icar = make_icar("s", &g, &[1, 2, 3]).unwrap();
        let prior = AlphaPrior::gamma(1.0, 0.01).unwrap();
        let m = LatentModel::new(3, vec![icar], Likelihood::GammaCount, prior).unwrap();
        let tau = 2.5;
        let zero = joint_prior_logdensity(&m, &[0.0; 4], &[tau]).unwrap();
        let ln2pi = (2.0 * PI).ln();
        let want = 0.5 * (0.01f64.ln() - ln2pi) + (tau.ln() - ln2pi);
        assert!((zero - want).abs() < 1e-12);
        let shifted = joint_prior_logdensity(&m, &[0.0, 4.0, 4.0, 4.0], &[tau]).unwrap();
        assert!((shifted - zero).abs() < 1e-12);
        assert!(joint_prior_logdensity(&m, &[0.0; 3], &[tau]).is_err());
        assert!(joint_prior_logdensity(&m, &[0.0; 4], &[]).is_err());
    }
}
