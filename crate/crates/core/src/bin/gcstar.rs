use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gcstar::harness::{
    calibrate_prior_cmd, compare_cmd, fit_from_files, format_calibration, run_simulation_scenario, write_comparison,
    write_scenario, RunConfig, Task,
};
use gcstar::{Error, Result};

#[derive(Parser)]
#[command(name = "gcstar", version, about = "Gamma-count regression with structured additive predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model to a data file.
    Fit(Common),
    /// Run a simulation scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Calibrate a dispersion (PC) or precision (SD) prior from P(. > u) = a.
    CalibratePrior {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        a: Option<f64>,
        /// PC or SD.
        #[arg(long)]
        family: Option<String>,
    },
    /// Score every prior and likelihood combination.
    Compare(Common),
}

fn load(common: &Common, task: Task) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cfg.task {
        if t != task {
            log::warn!("config task {t:?} ignored in favour of the subcommand");
        }
    }
    cfg.task = Some(task);
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(common) => {
            let cfg = load(&common, Task::Fit)?;
            let out = cfg.output_dir();
            let report = fit_from_files(&cfg, &out)?;
            print!("{}", report.text);
        }
        Command::Simulate { common, replications } => {
            let mut cfg = load(&common, Task::Simulate)?;
            if let Some(r) = replications {
                cfg.scenario.get_or_insert_with(Default::default).replications = r;
            }
            let result = run_simulation_scenario(&cfg)?;
            let out = cfg.output_dir();
            write_scenario(&result, &out)?;
            let failed = result.rows.iter().filter(|r| r.status != "ok").count();
            println!("{} fits written to {} ({failed} failed)", result.rows.len(), out.display());
        }
        Command::CalibratePrior { common, u, a, family } => {
            let cfg = load(&common, Task::CalibratePrior)?;
            let c = cfg.calibrate.as_ref();
            let u = u.or(c.map(|c| c.u)).ok_or_else(|| Error::Config("missing --u".into()))?;
            let a = a.or(c.map(|c| c.a)).ok_or_else(|| Error::Config("missing --a".into()))?;
            let family = family.or(c.map(|c| c.family.clone())).unwrap_or_else(|| "PC".into());
            let cal = calibrate_prior_cmd(u, a, &family)?;
            print!("{}", format_calibration(&cal, u, a));
        }
        Command::Compare(common) => {
            let cfg = load(&common, Task::Compare)?;
            let table = compare_cmd(&cfg)?;
            write_comparison(&table, &cfg.output_dir())?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
