//! Run configuration, data ingestion, the simulation-study driver and report
//! writers behind the `gcstar` command line tool.
//!
//! Replication seeds: replication `r` at sample-size index `s` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `(s << 32) | r`, so
//! every replication is reproducible on its own and independent of the
//! number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{fit, predictive_draw, FitResult, InferenceSettings, MarginalSummary};
use crate::likelihood::Likelihood;
use crate::model_eval::{compute_q_criteria, compute_scores, Scores};
use crate::priors::{pc_alpha_calibrate_checked, scale_dependent_rate, AlphaPrior, VariancePrior};
use crate::star_predictor::{
    make_iid, make_icar, make_linear, make_rw2, ComponentKind, Graph, LatentModel, PredictorComponent,
    DEFAULT_RW2_BINS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Fit,
    Simulate,
    CalibratePrior,
    Compare,
}

/// Top-level configuration file (TOML).
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: Option<DataConfig>,
    pub model: Option<ModelConfig>,
    pub scenario: Option<ScenarioConfig>,
    pub calibrate: Option<CalibrateConfig>,
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub inference: InferenceConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub response: String,
    pub graph: Option<PathBuf>,
    /// Optional covariate table for posterior predictive summaries.
    pub predict: Option<PathBuf>,
    #[serde(default = "default_predict_draws")]
    pub predict_draws: usize,
}

fn default_predict_draws() -> usize {
    2000
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_likelihood")]
    pub likelihood: String,
    /// Prior on α for the gamma-count likelihood.
    #[serde(default = "default_alpha_prior")]
    pub alpha_prior: String,
    /// Prior on the size of the negative binomial.
    #[serde(default = "default_size_prior")]
    pub size_prior: String,
    #[serde(default)]
    pub components: Vec<ComponentConfig>,
}

fn default_likelihood() -> String {
    "gc".into()
}

fn default_alpha_prior() -> String {
    "PC(3)".into()
}

fn default_size_prior() -> String {
    "G(1,0.01)".into()
}

fn default_tau_prior() -> String {
    "SD(1,0.01)".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    /// `linear`, `rw2`, `icar` or `iid`.
    pub kind: String,
    pub column: String,
    pub name: Option<String>,
    pub bins: Option<usize>,
    /// Hyperprior of the precision (random components only).
    pub prior: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `f1` (sin x), `f2` (exp(−exp(5x))) or `f3` (−½ asinh(1.25πx)).
    #[serde(default = "default_effect")]
    pub effect: String,
    #[serde(default = "default_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_intercept")]
    pub intercept: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_likelihoods")]
    pub likelihoods: Vec<String>,
    #[serde(default = "default_alpha_priors")]
    pub alpha_priors: Vec<String>,
    #[serde(default = "default_tau_priors")]
    pub tau_priors: Vec<String>,
    #[serde(default = "default_size_prior")]
    pub size_prior: String,
}

fn default_alpha() -> f64 {
    2.0
}
fn default_effect() -> String {
    "f1".into()
}
fn default_sizes() -> Vec<usize> {
    vec![50, 100, 500]
}
fn default_replications() -> usize {
    50
}
fn default_intercept() -> f64 {
    0.5
}
fn default_bins() -> usize {
    DEFAULT_RW2_BINS
}
fn default_likelihoods() -> Vec<String> {
    vec!["gc".into()]
}
fn default_alpha_priors() -> Vec<String> {
    vec![default_alpha_prior()]
}
fn default_tau_priors() -> Vec<String> {
    vec![default_tau_prior()]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            effect: default_effect(),
            sample_sizes: default_sizes(),
            replications: default_replications(),
            intercept: default_intercept(),
            bins: default_bins(),
            likelihoods: default_likelihoods(),
            alpha_priors: default_alpha_priors(),
            tau_priors: default_tau_priors(),
            size_prior: default_size_prior(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    /// `PC` (dispersion) or `SD` (scale-dependent).
    pub family: String,
    pub u: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_compare_likelihoods")]
    pub likelihoods: Vec<String>,
    /// Precision priors, one table row each.
    #[serde(default = "default_tau_priors")]
    pub priors: Vec<String>,
}

fn default_compare_likelihoods() -> Vec<String> {
    vec!["gc".into(), "poisson".into(), "nb".into()]
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub grid_step: Option<f64>,
    pub log_drop: Option<f64>,
}

impl InferenceConfig {
    pub fn settings(&self) -> InferenceSettings {
        let mut s = InferenceSettings::default();
        if let Some(v) = self.grid_step {
            s.grid_step = v;
        }
        if let Some(v) = self.log_drop {
            s.log_drop = v;
        }
        s
    }
}

impl RunConfig {
    /// Parses a TOML file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.data.as_mut() {
            fix(&mut d.path);
            if let Some(g) = d.graph.as_mut() {
                fix(g);
            }
            if let Some(p) = d.predict.as_mut() {
                fix(p);
            }
        }
        if let Some(o) = cfg.output.as_mut() {
            fix(o);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.data {
            for p in [Some(&d.path), d.graph.as_ref(), d.predict.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("file `{}` does not exist", p.display())));
                }
            }
        }
        if let Some(s) = &self.scenario {
            if !(s.alpha > 0.0 && s.alpha.is_finite()) {
                return Err(Error::Config(format!("scenario alpha must be > 0, got {}", s.alpha)));
            }
            if s.replications == 0 {
                return Err(Error::Config("replications must be >= 1".into()));
            }
            if s.sample_sizes.is_empty() || s.sample_sizes.iter().any(|&n| n < 10) {
                return Err(Error::Config("sample sizes must be >= 10".into()));
            }
            effect_fn(&s.effect)?;
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("gcstar-out"))
    }
}

/// A CSV table of raw string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    /// Numeric column; errors carry the 1-based file line.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or(Error::Parse {
                    line: i + 2,
                    msg: format!("column `{name}`: `{v}` is not a finite number"),
                })
            })
            .collect()
    }

    /// Non-negative integer counts; `NA` and blanks are rejected.
    pub fn counts(&self, name: &str) -> Result<Vec<u64>> {
        self.column(name)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let t = v.trim();
                let line = i + 2;
                if t.is_empty() || t.eq_ignore_ascii_case("na") {
                    return Err(Error::Parse {
                        line,
                        msg: format!("missing response in column `{name}`"),
                    });
                }
                if let Ok(k) = t.parse::<u64>() {
                    return Ok(k);
                }
                match t.parse::<f64>() {
                    Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 => Ok(x as u64),
                    _ => Err(Error::Parse {
                        line,
                        msg: format!("column `{name}`: `{t}` is not a non-negative integer count"),
                    }),
                }
            })
            .collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => Error::Parse {
            line,
            msg: format!("{}: {kind:?}", path.display()),
        },
    }
}

/// Reads a header-first CSV file.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table_from(file, path)
}

fn read_table_from<R: std::io::Read>(reader: R, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{}: missing header row", path.display()),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { headers, rows })
}

fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(s) => io(s),
        k => Error::Config(format!("{k:?}")),
    })?;
    let wr = |r: csv::Result<()>| {
        r.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(s) => io(s),
            k => Error::Config(format!("{k:?}")),
        })
    };
    wr(w.write_record(headers))?;
    for r in rows {
        wr(w.write_record(r))?;
    }
    w.flush().map_err(io)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Builds the latent model described by `cfg` over `table`.
pub fn build_model(
    table: &Table,
    cfg: &ModelConfig,
    graph: Option<&Graph>,
    tau_prior_override: Option<&VariancePrior>,
    likelihood_override: Option<Likelihood>,
) -> Result<LatentModel> {
    let likelihood = match likelihood_override {
        Some(l) => l,
        None => cfg.likelihood.parse()?,
    };
    let dispersion_prior: AlphaPrior = match likelihood {
        Likelihood::NegativeBinomial => cfg.size_prior.parse()?,
        _ => cfg.alpha_prior.parse()?,
    };
    let mut comps = Vec::new();
    for c in &cfg.components {
        let name = c.name.clone().unwrap_or_else(|| c.column.clone());
        let comp = match c.kind.to_ascii_lowercase().as_str() {
            "linear" => make_linear(&name, &table.numeric(&c.column)?)?,
            "rw2" => make_rw2(&name, &table.numeric(&c.column)?, c.bins.unwrap_or(DEFAULT_RW2_BINS))?,
            "iid" => {
                let g: Vec<String> = table.column(&c.column)?.into_iter().map(String::from).collect();
                make_iid(&name, &g)?
            }
            "icar" => {
                let graph = graph.ok_or_else(|| Error::Config("icar component needs data.graph".into()))?;
                let ids = table
                    .column(&c.column)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.trim().parse::<usize>().map_err(|_| Error::Parse {
                            line: i + 2,
                            msg: format!("column `{}`: `{v}` is not a region id", c.column),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                make_icar(&name, graph, &ids)?
            }
            other => return Err(Error::Config(format!("unknown component kind `{other}`"))),
        };
        let comp = if comp.is_random() {
            let prior = match (tau_prior_override, &c.prior) {
                (Some(p), _) => *p,
                (None, Some(s)) => s.parse()?,
                (None, None) => default_tau_prior().parse()?,
            };
            comp.with_tau_prior(prior)
        } else {
            comp
        };
        comps.push(comp);
    }
    LatentModel::new(table.rows.len(), comps, likelihood, dispersion_prior)
}

/// Summary row of the fit report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub summary: MarginalSummary,
}

/// Fixed effects and hyperparameters, in the order they are reported.
pub fn report_rows(fit: &FitResult) -> Vec<ReportRow> {
    let labels = fit.engine.latent_labels();
    let model = fit.engine.model();
    let mut rows = vec![ReportRow {
        parameter: labels[0].clone(),
        summary: fit.latent_marginals[0].clone(),
    }];
    for (j, c) in model.components.iter().enumerate() {
        if !c.is_random() {
            for k in model.range(j) {
                rows.push(ReportRow {
                    parameter: labels[k].clone(),
                    summary: fit.latent_marginals[k].clone(),
                });
            }
        }
    }
    for h in &fit.hyper_marginals {
        rows.push(ReportRow {
            parameter: h.name.clone(),
            summary: h.summary.clone(),
        });
    }
    rows
}

/// Human-readable posterior summary with the score block.
pub fn format_report(fit: &FitResult, scores: &Scores) -> String {
    let rows = report_rows(fit);
    let width = rows.iter().map(|r| r.parameter.len()).max().unwrap_or(9).max(9);
    let mut s = String::new();
    let model = fit.engine.model();
    let _ = writeln!(s, "Summary of posterior estimates");
    let _ = writeln!(
        s,
        "likelihood: {}   observations: {}   grid points: {}",
        model.likelihood,
        model.n_obs(),
        fit.grid.len()
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<width$}  {:>10}  {:>24}", "parameter", "mean", "(2.5%, 97.5%)");
    for r in &rows {
        let ci = format!("({:.4}, {:.4})", r.summary.q025, r.summary.q975);
        let _ = writeln!(s, "{:<width$}  {:>10.4}  {:>24}", r.parameter, r.summary.mean, ci);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14}{:>12.4}", "DIC", scores.dic);
    let _ = writeln!(s, "{:<14}{:>12.4}", "p_D", scores.p_d);
    let _ = writeln!(s, "{:<14}{:>12.4}", "WAIC", scores.waic);
    let _ = writeln!(s, "{:<14}{:>12.4}", "p_WAIC", scores.p_waic);
    let _ = writeln!(s, "{:<14}{:>12.4}", "LS", scores.log_score);
    let _ = writeln!(s, "{:<14}{:>12}", "CPO failures", scores.cpo_failures);
    s
}

fn summary_cells(s: &MarginalSummary) -> Vec<String> {
    [s.mean, s.sd, s.q025, s.q500, s.q975].iter().map(|v| v.to_string()).collect()
}

/// Output of `fit_from_files`.
#[derive(Debug)]
pub struct FitReport {
    pub fit: FitResult,
    pub scores: Scores,
    pub text: String,
}

/// Fits the configured model to the configured data and writes
/// `report.txt`, `report.csv`, `latent.csv` and optionally `predictions.csv`.
pub fn fit_from_files(cfg: &RunConfig, out_dir: &Path) -> Result<FitReport> {
    cfg.validate()?;
    let data = cfg.data.as_ref().ok_or_else(|| Error::Config("fit needs a [data] section".into()))?;
    let mcfg = cfg.model.as_ref().ok_or_else(|| Error::Config("fit needs a [model] section".into()))?;
    let table = read_table(&data.path)?;
    let y = table.counts(&data.response)?;
    let graph = data.graph.as_deref().map(Graph::from_file).transpose()?;
    let model = build_model(&table, mcfg, graph.as_ref(), None, None)?;
    let mut result = fit(model, y, &cfg.inference.settings())?;
    let scores = compute_scores(&result)?;
    result.scores = Some(scores.clone());
    let text = format_report(&result, &scores);
    ensure_dir(out_dir)?;
    write_text(&out_dir.join("report.txt"), &text)?;
    let mut rows: Vec<Vec<String>> = report_rows(&result)
        .into_iter()
        .map(|r| {
            let mut v = vec![r.parameter];
            v.extend(summary_cells(&r.summary));
            v
        })
        .collect();
    for (k, v) in [
        ("DIC", scores.dic),
        ("p_D", scores.p_d),
        ("WAIC", scores.waic),
        ("p_WAIC", scores.p_waic),
        ("LS", scores.log_score),
        ("CPO_failures", scores.cpo_failures as f64),
    ] {
        let mut r = vec![k.to_string(), v.to_string()];
        r.extend(std::iter::repeat_n(String::new(), 4));
        rows.push(r);
    }
    write_csv(&out_dir.join("report.csv"), &["parameter", "mean", "sd", "q025", "q500", "q975"], &rows)?;
    let latent: Vec<Vec<String>> = result
        .engine
        .latent_labels()
        .into_iter()
        .zip(&result.latent_marginals)
        .map(|(l, s)| {
            let mut v = vec![l];
            v.extend(summary_cells(s));
            v
        })
        .collect();
    write_csv(&out_dir.join("latent.csv"), &["parameter", "mean", "sd", "q025", "q500", "q975"], &latent)?;
    if let Some(p) = &data.predict {
        let newdata = read_table(p)?;
        let cols: Vec<usize> = mcfg
            .components
            .iter()
            .map(|c| newdata.column_index(&c.column))
            .collect::<Result<_>>()?;
        let cells: Vec<Vec<String>> = newdata.rows.iter().map(|r| cols.iter().map(|&k| r[k].clone()).collect()).collect();
        let pred = predictive_draw(&result, &cells, cfg.seed, data.predict_draws)?;
        let rows: Vec<Vec<String>> = pred
            .iter()
            .enumerate()
            .map(|(i, p)| vec![(i + 1).to_string(), p.mean.to_string(), p.q025.to_string(), p.q975.to_string()])
            .collect();
        write_csv(&out_dir.join("predictions.csv"), &["row", "mean", "q025", "q975"], &rows)?;
    }
    Ok(FitReport {
        fit: result,
        scores,
        text,
    })
}

/// Simulated functional effect by id.
pub fn effect_fn(id: &str) -> Result<fn(f64) -> f64> {
    match id.to_ascii_lowercase().as_str() {
        "f1" => Ok(f64::sin),
        "f2" => Ok(|x: f64| (-(5.0 * x).exp()).exp()),
        "f3" => Ok(|x: f64| -0.5 * (1.25 * std::f64::consts::PI * x).asinh()),
        _ => Err(Error::Config(format!("unknown effect `{id}` (expected f1, f2 or f3)"))),
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct SimData {
    /// Centered covariate.
    pub x: Vec<f64>,
    /// True effect at `x`.
    pub f: Vec<f64>,
    pub y: Vec<u64>,
}

/// `x ~ U(−3, 3)` centered, `y ~ GC(α, α·exp(β₀ + f(x)))`.
pub fn simulate_dataset(effect: fn(f64) -> f64, n: usize, alpha: f64, intercept: f64, rng: &mut ChaCha8Rng) -> Result<SimData> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let f: Vec<f64> = x.iter().map(|&v| effect(v)).collect();
    let y = f
        .iter()
        .map(|fi| Likelihood::GammaCount.sample(alpha, intercept + fi, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimData { x, f, y })
}

/// Seeded generator for replication `rep` at sample-size index `size_idx`.
pub fn replication_rng(seed: u64, size_idx: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size_idx as u64) << 32) | rep as u64);
    rng
}

/// Intercept + linear(x) + rw2(x); the RW2 constraints remove its linear
/// trend, which the fixed effect carries instead.
pub fn simulation_model(
    x: &[f64],
    bins: usize,
    likelihood: Likelihood,
    dispersion_prior: AlphaPrior,
    tau_prior: VariancePrior,
) -> Result<LatentModel> {
    let comps: Vec<PredictorComponent> = vec![make_linear("x", x)?, make_rw2("f", x, bins)?.with_tau_prior(tau_prior)];
    LatentModel::new(x.len(), comps, likelihood, dispersion_prior)
}

/// One (likelihood, prior) fit within a replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub n: usize,
    pub replication: usize,
    pub likelihood: String,
    pub alpha_prior: String,
    pub tau_prior: String,
    pub alpha_hat: f64,
    pub q1: f64,
    pub q2: f64,
    pub log_score: f64,
    pub dic: f64,
    pub waic: f64,
    pub status: String,
}

impl ReplicationRow {
    pub const HEADERS: [&'static str; 12] = [
        "n",
        "replication",
        "likelihood",
        "alpha_prior",
        "tau_prior",
        "alpha_hat",
        "q1",
        "q2",
        "log_score",
        "dic",
        "waic",
        "status",
    ];

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.replication.to_string(),
            self.likelihood.clone(),
            self.alpha_prior.clone(),
            self.tau_prior.clone(),
            self.alpha_hat.to_string(),
            self.q1.to_string(),
            self.q2.to_string(),
            self.log_score.to_string(),
            self.dic.to_string(),
            self.waic.to_string(),
            self.status.clone(),
        ]
    }
}

/// Per-replication rows plus boxplot statistics per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub likelihood: String,
    pub alpha_prior: String,
    pub tau_prior: String,
    pub metric: String,
    pub count: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted finite values.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Median and quartiles per configuration and metric, recomputed from the
/// replication rows alone.
pub fn summarize_rows(rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    type Key = (usize, String, String, String);
    let mut groups: BTreeMap<Key, Vec<&ReplicationRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.n, r.likelihood.clone(), r.alpha_prior.clone(), r.tau_prior.clone()))
            .or_default()
            .push(r);
    }
    let metrics: [(&str, fn(&ReplicationRow) -> f64); 6] = [
        ("q1", |r| r.q1),
        ("q2", |r| r.q2),
        ("alpha_hat", |r| r.alpha_hat),
        ("log_score", |r| r.log_score),
        ("dic", |r| r.dic),
        ("waic", |r| r.waic),
    ];
    let mut out = Vec::new();
    for ((n, lik, ap, tp), group) in groups {
        for (name, get) in metrics {
            let mut v: Vec<f64> = group.iter().map(|r| get(r)).filter(|x| x.is_finite()).collect();
            v.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                n,
                likelihood: lik.clone(),
                alpha_prior: ap.clone(),
                tau_prior: tp.clone(),
                metric: name.to_string(),
                count: v.len(),
                q25: quantile_sorted(&v, 0.25),
                median: quantile_sorted(&v, 0.5),
                q75: quantile_sorted(&v, 0.75),
            });
        }
    }
    out
}

/// (likelihood, dispersion-prior label, dispersion prior) combinations.
fn likelihood_grid(s: &ScenarioConfig) -> Result<Vec<(Likelihood, String, AlphaPrior)>> {
    let mut out = Vec::new();
    for l in &s.likelihoods {
        let lik: Likelihood = l.parse()?;
        match lik {
            Likelihood::GammaCount => {
                for a in &s.alpha_priors {
                    out.push((lik, a.clone(), a.parse()?));
                }
            }
            Likelihood::NegativeBinomial => out.push((lik, s.size_prior.clone(), s.size_prior.parse()?)),
            Likelihood::Poisson => out.push((lik, "-".to_string(), AlphaPrior::gamma(1.0, 1.0)?)),
        }
    }
    Ok(out)
}

fn fit_replication(
    data: &SimData,
    n: usize,
    rep: usize,
    bins: usize,
    alpha_true: f64,
    combos: &[(Likelihood, String, AlphaPrior)],
    tau_priors: &[(String, VariancePrior)],
    settings: &InferenceSettings,
) -> Vec<ReplicationRow> {
    let mut rows = Vec::new();
    for (lik, ap_name, ap) in combos {
        for (tp_name, tp) in tau_priors {
            let mut row = ReplicationRow {
                n,
                replication: rep,
                likelihood: lik.name().to_string(),
                alpha_prior: ap_name.clone(),
                tau_prior: tp_name.clone(),
                alpha_hat: f64::NAN,
                q1: f64::NAN,
                q2: f64::NAN,
                log_score: f64::NAN,
                dic: f64::NAN,
                waic: f64::NAN,
                status: "ok".to_string(),
            };
            let outcome = simulation_model(&data.x, bins, *lik, *ap, *tp)
                .and_then(|m| fit(m, data.y.clone(), settings))
                .and_then(|f| compute_scores(&f).map(|s| (f, s)));
            match outcome {
                Ok((f, s)) => {
                    let fitted: Vec<f64> = f
                        .component_fit(0)
                        .iter()
                        .zip(f.component_fit(1))
                        .map(|(a, b)| a + b)
                        .collect();
                    let alpha_hat = if *lik == Likelihood::GammaCount { f.dispersion_mean() } else { f64::NAN };
                    let q = compute_q_criteria(&fitted, &data.f, alpha_hat, alpha_true).expect("same length");
                    row.alpha_hat = alpha_hat;
                    row.q1 = q.q1;
                    row.q2 = q.q2;
                    row.log_score = s.log_score;
                    row.dic = s.dic;
                    row.waic = s.waic;
                }
                Err(e) => row.status = e.code().to_string(),
            }
            rows.push(row);
        }
    }
    rows
}

/// Simulation study: every replication at every sample size is fitted with
/// every configured (likelihood, prior) combination.
pub fn run_simulation_scenario(cfg: &RunConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let default = ScenarioConfig::default();
    let s = cfg.scenario.as_ref().unwrap_or(&default);
    let effect = effect_fn(&s.effect)?;
    let combos = likelihood_grid(s)?;
    let tau_priors = s
        .tau_priors
        .iter()
        .map(|t| Ok((t.clone(), t.parse::<VariancePrior>()?)))
        .collect::<Result<Vec<_>>>()?;
    let settings = cfg.inference.settings();
    let jobs: Vec<(usize, usize, usize)> = s
        .sample_sizes
        .iter()
        .enumerate()
        .flat_map(|(si, &n)| (0..s.replications).map(move |r| (si, n, r)))
        .collect();
    let run = || -> Result<Vec<Vec<ReplicationRow>>> {
        jobs.par_iter()
            .map(|&(si, n, rep)| {
                let mut rng = replication_rng(cfg.seed, si, rep);
                let data = simulate_dataset(effect, n, s.alpha, s.intercept, &mut rng)?;
                Ok(fit_replication(&data, n, rep, s.bins, s.alpha, &combos, &tau_priors, &settings))
            })
            .collect()
    };
    let rows: Vec<ReplicationRow> = with_threads(cfg.threads.unwrap_or(0), run)??.into_iter().flatten().collect();
    let summary = summarize_rows(&rows);
    Ok(ScenarioResult { rows, summary })
}

/// Writes `replications.csv` and `summary.csv`.
pub fn write_scenario(result: &ScenarioResult, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let rows: Vec<Vec<String>> = result.rows.iter().map(|r| r.cells()).collect();
    write_csv(&out_dir.join("replications.csv"), &ReplicationRow::HEADERS, &rows)?;
    let sum: Vec<Vec<String>> = result
        .summary
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.likelihood.clone(),
                r.alpha_prior.clone(),
                r.tau_prior.clone(),
                r.metric.clone(),
                r.count.to_string(),
                r.q25.to_string(),
                r.median.to_string(),
                r.q75.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("summary.csv"),
        &["n", "likelihood", "alpha_prior", "tau_prior", "metric", "count", "q25", "median", "q75"],
        &sum,
    )
}

/// Result of a prior calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub family: String,
    /// λ for the PC prior, θ for the scale-dependent prior.
    pub value: f64,
    /// Tail mass recomputed by quadrature.
    pub verified_tail: f64,
}

/// `λ = −ln(a)/u` (PC) or `θ = −ln(a)/u` (SD), each with an independent
/// quadrature check of the tail statement.
pub fn calibrate_prior_cmd(u: f64, a: f64, family: &str) -> Result<Calibration> {
    match family.to_ascii_uppercase().as_str() {
        "PC" => {
            let (lambda, tail) = pc_alpha_calibrate_checked(u, a)?;
            Ok(Calibration {
                family: "PC".into(),
                value: lambda,
                verified_tail: tail,
            })
        }
        "SD" => {
            let theta = scale_dependent_rate(u, a)?;
            let eps = 1.0 / (theta * theta);
            // P(σ > u) = ∫_{u²}^∞ p(σ²) dσ² with the Weibull(1/2) variance density.
            let tail = crate::numeric::integrate_to_inf(
                |s2: f64| crate::priors::scale_dependent_density(eps, s2).unwrap_or(0.0),
                u * u,
                1e-13,
            )?;
            Ok(Calibration {
                family: "SD".into(),
                value: theta,
                verified_tail: tail,
            })
        }
        other => Err(Error::Config(format!("unknown prior family `{other}` (expected PC or SD)"))),
    }
}

pub fn format_calibration(c: &Calibration, u: f64, a: f64) -> String {
    let (name, event) = if c.family == "PC" { ("lambda", "d") } else { ("theta", "sigma") };
    format!(
        "{} prior: {name} = {:.10}\nverification: P({event} > {u}) = {:.10} (target {a})\n",
        c.family, c.value, c.verified_tail
    )
}

/// LS and WAIC per (prior, model).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub priors: Vec<String>,
    pub models: Vec<String>,
    /// `[prior][model]`.
    pub log_score: Vec<Vec<f64>>,
    pub waic: Vec<Vec<f64>>,
}

impl ComparisonTable {
    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut headers = vec!["metric".to_string(), "prior".to_string()];
        headers.extend(self.models.iter().cloned());
        let mut rows = Vec::new();
        for (metric, m) in [("LS", &self.log_score), ("WAIC", &self.waic)] {
            for (p, vals) in self.priors.iter().zip(m) {
                let mut r = vec![metric.to_string(), p.clone()];
                r.extend(vals.iter().map(|v| v.to_string()));
                rows.push(r);
            }
        }
        (headers, rows)
    }

    /// Aligned text; the minimum of every column is wrapped in `**`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (metric, m) in [("LS", &self.log_score), ("WAIC", &self.waic)] {
            let pw = self.priors.iter().map(|p| p.len()).max().unwrap_or(5).max(5);
            let cells: Vec<Vec<String>> = (0..self.priors.len())
                .map(|i| {
                    (0..self.models.len())
                        .map(|j| {
                            let v = m[i][j];
                            let col_min = m.iter().map(|r| r[j]).filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
                            if v == col_min {
                                format!("**{v:.3}**")
                            } else {
                                format!("{v:.3}")
                            }
                        })
                        .collect()
                })
                .collect();
            let cw: Vec<usize> = (0..self.models.len())
                .map(|j| cells.iter().map(|r| r[j].len()).chain([self.models[j].len()]).max().unwrap_or(8))
                .collect();
            let _ = writeln!(s, "{metric}");
            let _ = write!(s, "{:<pw$}", "prior");
            for (j, name) in self.models.iter().enumerate() {
                let _ = write!(s, "  {:>w$}", name, w = cw[j]);
            }
            let _ = writeln!(s);
            for (i, p) in self.priors.iter().enumerate() {
                let _ = write!(s, "{p:<pw$}");
                for (j, c) in cells[i].iter().enumerate() {
                    let _ = write!(s, "  {:>w$}", c, w = cw[j]);
                }
                let _ = writeln!(s);
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Fits every (precision prior × likelihood) pair to one dataset: the
/// configured data file, or one simulated draw of the scenario otherwise.
pub fn compare_cmd(cfg: &RunConfig) -> Result<ComparisonTable> {
    cfg.validate()?;
    let default = CompareConfig {
        likelihoods: default_compare_likelihoods(),
        priors: default_tau_priors(),
    };
    let cc = cfg.compare.as_ref().unwrap_or(&default);
    let likelihoods = cc.likelihoods.iter().map(|l| l.parse::<Likelihood>()).collect::<Result<Vec<_>>>()?;
    let priors = cc.priors.iter().map(|p| p.parse::<VariancePrior>()).collect::<Result<Vec<_>>>()?;
    let settings = cfg.inference.settings();
    let (table, graph, mcfg, y) = match &cfg.data {
        Some(d) => {
            let t = read_table(&d.path)?;
            let y = t.counts(&d.response)?;
            let g = d.graph.as_deref().map(Graph::from_file).transpose()?;
            let m = cfg.model.clone().ok_or_else(|| Error::Config("compare on data needs [model]".into()))?;
            (t, g, m, y)
        }
        None => {
            let s = cfg.scenario.clone().unwrap_or_default();
            let mut rng = replication_rng(cfg.seed, 0, 0);
            let n = s.sample_sizes[0];
            let data = simulate_dataset(effect_fn(&s.effect)?, n, s.alpha, s.intercept, &mut rng)?;
            let t = Table {
                headers: vec!["y".into(), "x".into()],
                rows: data.y.iter().zip(&data.x).map(|(y, x)| vec![y.to_string(), x.to_string()]).collect(),
            };
            let m = cfg.model.clone().unwrap_or(ModelConfig {
                likelihood: default_likelihood(),
                alpha_prior: s.alpha_priors.first().cloned().unwrap_or_else(default_alpha_prior),
                size_prior: s.size_prior.clone(),
                components: vec![
                    ComponentConfig {
                        kind: "linear".into(),
                        column: "x".into(),
                        name: None,
                        bins: None,
                        prior: None,
                    },
                    ComponentConfig {
                        kind: "rw2".into(),
                        column: "x".into(),
                        name: Some("f".into()),
                        bins: Some(s.bins),
                        prior: None,
                    },
                ],
            });
            (t, None, m, data.y)
        }
    };
    let jobs: Vec<(usize, usize)> = (0..priors.len()).flat_map(|i| (0..likelihoods.len()).map(move |j| (i, j))).collect();
    let run = || -> Result<Vec<(f64, f64)>> {
        jobs.par_iter()
            .map(|&(i, j)| {
                let model = build_model(&table, &mcfg, graph.as_ref(), Some(&priors[i]), Some(likelihoods[j]))?;
                let f = fit(model, y.clone(), &settings)?;
                let s = compute_scores(&f)?;
                Ok((s.log_score, s.waic))
            })
            .collect()
    };
    let vals = with_threads(cfg.threads.unwrap_or(0), run)??;
    let mut ls = vec![vec![f64::NAN; likelihoods.len()]; priors.len()];
    let mut wa = ls.clone();
    for (&(i, j), (l, w)) in jobs.iter().zip(vals) {
        ls[i][j] = l;
        wa[i][j] = w;
    }
    Ok(ComparisonTable {
        priors: cc.priors.clone(),
        models: likelihoods.iter().map(|l| l.name().to_string()).collect(),
        log_score: ls,
        waic: wa,
    })
}

/// Writes `comparison.csv` and `comparison.txt`.
pub fn write_comparison(t: &ComparisonTable, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let (headers, rows) = t.csv_rows();
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    write_csv(&out_dir.join("comparison.csv"), &h, &rows)?;
    write_text(&out_dir.join("comparison.txt"), &t.to_text())
}

/// Kind label of every model component, for diagnostics.
pub fn describe_model(model: &LatentModel) -> String {
    model
        .components
        .iter()
        .map(|c| {
            let extra = match &c.kind {
                ComponentKind::Rw2 { n_bins, .. } => format!(", {n_bins} bins"),
                ComponentKind::Icar { graph } => format!(", {} regions", graph.n_regions()),
                ComponentKind::Iid { levels } => format!(", {} levels", levels.len()),
                ComponentKind::Linear { .. } => String::new(),
            };
            format!("{} ({}{extra})", c.name, c.kind.label())
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }

    #[test]
    fn counts_reject_missing_and_negative() {
        let t = Table {
            headers: vec!["y".into()],
            rows: vec![vec!["3".into()], vec!["NA".into()]],
        };
        assert!(matches!(t.counts("y"), Err(Error::Parse { line: 3, .. })));
        let t = Table {
            headers: vec!["y".into()],
            rows: vec![vec!["-1".into()]],
        };
        assert!(t.counts("y").is_err());
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = RunConfig::from_toml("task = \"simulate\"\n[scenario]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.task, Some(Task::Simulate));
        assert_eq!(c.scenario.as_ref().unwrap().sample_sizes, vec![50, 100, 500]);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        let bad = RunConfig::from_toml("[scenario]\nalpha = -1.0\n").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn calibration_values() {
        let c = calibrate_prior_cmd(2.0, 0.05, "PC").unwrap();
        assert!((c.value - 1.497_866_136_7).abs() < 1e-9);
        assert!((c.verified_tail - 0.05).abs() < 1e-6);
        let s = calibrate_prior_cmd(1.0, 0.01, "SD").unwrap();
        assert!((s.value - 4.605_170_186_0).abs() < 1e-9);
        assert!((s.verified_tail - 0.01).abs() < 1e-6);
        assert!(matches!(calibrate_prior_cmd(1.0, 1.0, "PC"), Err(Error::Calibration(_))));
    }
}
