//! `magidde` command-line tool.
//!
//! Exit status: 0 on success, 2 for usage and configuration problems, 3 for
//! numerical or runtime failures.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use magidde::bench::{run_study_with, simulate_dataset};
use magidde::models::DdeModel;
use magidde::pipeline::{compare_runs, prepare, sample_prepared, InferenceResult, StabilityReport};
use magidde::solver::{solve, SolverConfig};
use serde_json::json;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<magidde::Error> for CliError {
    fn from(e: magidde::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "magidde",
    version,
    about = "Manifold-constrained GP inference for delay differential equations"
)]
struct Cli {
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; every key has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set hmc.iterations=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate noisy observations from the model's reference setting.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory for truth.csv and observations.csv.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Solve the DDE on a uniform grid and write the trajectory.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Output CSV file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit a model to an observation file.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observation CSV; overrides the `observations` key.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Output directory for summary.json, trajectory.csv and samples.csv.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a replicated simulation study.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Output directory for report.csv and report.txt.
        #[arg(long, short)]
        out: PathBuf,
        /// Replicates fitted in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Fit at two discretization levels and compare the parameter intervals.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Observation CSV; overrides the `observations` key.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Output directory for stability.json, stability.csv and stability.txt.
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn observations_path(cli: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cli.or_else(|| cfg.observations.clone()).ok_or_else(|| {
        CliError::Usage("an observation file is required (--observations or the `observations` key)".into())
    })
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = cfg.model()?;
    let spec = cfg.simulation(model.as_ref())?;
    create_dir(out)?;
    let obs = simulate_dataset(model.as_ref(), &spec, 0)?;
    let truth = solve(
        model.as_ref(),
        &spec.theta,
        &spec.x0,
        spec.t_end,
        &SolverConfig::uniform(cfg.step(), spec.t_end),
    )?;
    write_trajectory_csv(&out.join("truth.csv"), model.as_ref(), &truth.times, &truth.values)?;
    io::write_observations(&out.join("observations.csv"), model.as_ref(), &obs)?;
    println!("seed {}", cfg.seed);
    Ok(())
}

fn write_trajectory_csv(path: &Path, model: &dyn DdeModel, times: &[f64], values: &[Vec<f64>]) -> Result<(), CliError> {
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain(model.components().iter().cloned())
        .collect();
    io::write_table(
        path,
        &header,
        times
            .iter()
            .zip(values)
            .map(|(t, row)| std::iter::once(*t).chain(row.iter().copied()).collect()),
    )
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = cfg.model()?;
    let spec = cfg.simulation(model.as_ref())?;
    let sol = solve(
        model.as_ref(),
        &spec.theta,
        &spec.x0,
        spec.t_end,
        &SolverConfig::uniform(cfg.step(), spec.t_end),
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_trajectory_csv(out, model.as_ref(), &sol.times, &sol.values)
}

fn fit_once(
    model: Arc<dyn DdeModel>,
    cfg: &RunConfig,
    obs_path: &Path,
    level: Option<u32>,
) -> Result<(magidde::pipeline::Prepared, InferenceResult), CliError> {
    let obs = io::read_observations(obs_path, model.as_ref())?;
    let mut inference = cfg.inference(model.as_ref());
    if let Some(l) = level {
        inference.level = l;
    }
    log::info!("fitting {} at level {}", cfg.model, inference.level);
    let prepared = prepare(model, &obs, &inference)?;
    let result = sample_prepared(&prepared, &inference)?;
    Ok((prepared, result))
}

fn summary_json(cfg: &RunConfig, model: &dyn DdeModel, result: &InferenceResult) -> serde_json::Value {
    let priors: serde_json::Map<String, serde_json::Value> = model
        .params()
        .iter()
        .map(|p| {
            let prior = cfg.priors.get(&p.name).copied().unwrap_or(p.prior);
            (p.name.clone(), serde_json::to_value(prior).expect("priors serialize"))
        })
        .collect();
    let tr = &result.trajectory;
    let initial_state: Vec<serde_json::Value> = tr
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| json!({ "name": format!("{c}(0)"), "mean": tr.mean[i][0], "lower": tr.lower[i][0], "upper": tr.upper[i][0] }))
        .collect();
    json!({
        "model": result.model,
        "seed": cfg.seed,
        "scheme": cfg.scheme,
        "thin": cfg.hmc.thin,
        "parameters": result.parameters,
        "noise": result.noise,
        "initial_state": initial_state,
        "priors": priors,
        "diagnostics": result.diagnostics,
    })
}

fn cmd_fit(cfg: &RunConfig, obs: Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let model = cfg.model()?;
    let obs_path = observations_path(obs, cfg)?;
    let (prepared, result) = fit_once(model.clone(), cfg, &obs_path, None)?;
    create_dir(out)?;
    let summary = summary_json(cfg, model.as_ref(), &result);
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    io::write_trajectory(&out.join("trajectory.csv"), &result)?;
    io::write_samples(&out.join("samples.csv"), &prepared.posterior, &result)?;
    for p in &result.parameters {
        println!(
            "{:<10} {:>12.6} [{:.6}, {:.6}]",
            p.name, p.summary.mean, p.summary.lower, p.summary.upper
        );
    }
    Ok(())
}

fn cmd_benchmark(cfg: &RunConfig, out: &Path, workers: usize) -> Result<(), CliError> {
    let model = cfg.model()?;
    let spec = cfg.simulation(model.as_ref())?;
    log::info!("running {} replicates on {workers} workers", spec.replicates);
    let report = run_study_with(model, &spec, workers)?;
    create_dir(out)?;
    write_text(&out.join("report.csv"), &report.to_csv()?)?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn stability_table(report: &StabilityReport) -> String {
    let mut s = format!(
        "{:<10}  {:>24}  {:>24}  {:>8}\n",
        "parameter",
        format!("level {}", report.levels.0),
        format!("level {}", report.levels.1),
        "overlap"
    );
    for p in &report.parameters {
        s += &format!(
            "{:<10}  {:>24}  {:>24}  {:>8.3}\n",
            p.name,
            format!("[{:.4}, {:.4}]", p.coarse.0, p.coarse.1),
            format!("[{:.4}, {:.4}]", p.fine.0, p.fine.1),
            p.overlap
        );
    }
    s += if report.stable { "stable\n" } else { "unstable\n" };
    s
}

fn cmd_stability(cfg: &RunConfig, obs: Option<PathBuf>, out: &Path) -> Result<(), CliError> {
    let model = cfg.model()?;
    let obs_path = observations_path(obs, cfg)?;
    let levels = cfg.stability_levels(model.as_ref());
    let (_, coarse) = fit_once(model.clone(), cfg, &obs_path, Some(levels.0))?;
    let (_, fine) = fit_once(model, cfg, &obs_path, Some(levels.1))?;
    let report = compare_runs(levels, &coarse, &fine);
    create_dir(out)?;
    write_text(
        &out.join("stability.json"),
        &serde_json::to_string_pretty(&report).expect("json"),
    )?;
    let table = stability_table(&report);
    io::write_stability(&out.join("stability.csv"), &report)?;
    write_text(&out.join("stability.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, out } => {
            cmd_simulate(&RunConfig::load(common.config.as_deref(), &common.overrides)?, &out)
        }
        Command::Solve { common, out } => {
            cmd_solve(&RunConfig::load(common.config.as_deref(), &common.overrides)?, &out)
        }
        Command::Fit {
            common,
            observations,
            out,
        } => cmd_fit(
            &RunConfig::load(common.config.as_deref(), &common.overrides)?,
            observations,
            &out,
        ),
        Command::Benchmark { common, out, workers } => cmd_benchmark(
            &RunConfig::load(common.config.as_deref(), &common.overrides)?,
            &out,
            workers,
        ),
        Command::Stability {
            common,
            observations,
            out,
        } => cmd_stability(
            &RunConfig::load(common.config.as_deref(), &common.overrides)?,
            observations,
            &out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
