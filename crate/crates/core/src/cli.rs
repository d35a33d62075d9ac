//! Command-line front end: `simulate`, `meanfield`, `fluctuations`,
//! `verify` and `plot-data`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::analysis::{self, backend_comparison, critical_experiment};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::fluctuations::FluctuationModel;
use crate::network::sample_network;
use crate::output::{self, events_csv, paths_csv, plot_data_csv, table_csv, write_atomic, write_json, Csv};
use crate::report::{ExperimentReport, ReplicateSeeds, SeedManifest};
use crate::rng::derive_seed;
use crate::simulator::{simulate, Backend, SimulationConfig};
use crate::stats::CovarianceEstimate;
use crate::{Error, Result};

const DEFAULT_OUT: &str = "hawkes-mf-out";
/// Samples generated and written per parallel batch.
const SAMPLE_BATCH: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "hawkes-mf", version, about = "Mean-field toolkit for Hawkes processes with inhibition")]
pub struct Cli {
    /// Worker threads for replicates.
    #[arg(long, global = true, env = "HAWKES_MF_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Master seed (overrides `run.master_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// `thinning` or `timechange`.
    #[arg(long)]
    pub backend: Option<Backend>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate spike trains for every configured N and replicate.
    Simulate(Common),
    /// Solve the mean-field equation and write I.csv.
    Meanfield(Common),
    /// Sample the limiting fluctuation system.
    Fluctuations {
        #[command(flatten)]
        common: Common,
        /// Number of samples (defaults to `run.replicates`).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run a verification experiment and write its report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// lln, clt, compensated, critical, independence or backends.
        #[arg(long)]
        experiment: Option<ExperimentKind>,
    },
    /// Convert a report's series into tidy CSV.
    PlotData {
        /// report.json, or a directory containing one.
        #[arg(long)]
        report: PathBuf,
        /// Output CSV file, or a directory for plot_data.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments, runs, and maps the outcome to an exit code:
/// 0 success, 1 a verdict other than PASS, 2 usage or configuration error,
/// 3 runtime error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::Parameter { .. } | Error::WrongRegime(_) => 2,
                _ => 3,
            })
        }
    }
}

/// Runs one command; `Ok(false)` means a verification verdict did not pass.
pub fn run(cli: Cli) -> Result<bool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::param("jobs", "must be at least 1"));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Simulate(common) => {
            let (cfg, out) = prepare(&common, None)?;
            run_simulate(&cfg, &out)?;
            Ok(true)
        }
        Command::Meanfield(common) => {
            let (cfg, out) = prepare(&common, None)?;
            run_meanfield(&cfg, &out)?;
            Ok(true)
        }
        Command::Fluctuations { common, samples } => {
            let (cfg, out) = prepare(&common, None)?;
            let samples = samples.unwrap_or(cfg.run.replicates);
            run_fluctuations(&cfg, samples, &out)?;
            Ok(true)
        }
        Command::Verify { common, experiment } => {
            let (cfg, out) = prepare(&common, experiment)?;
            let report = run_verify(&cfg, &out)?;
            print!("{}", output::verdict_lines(&report));
            Ok(report.all_pass())
        }
        Command::PlotData { report, out } => {
            let path = if report.is_dir() { report.join("report.json") } else { report };
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report: ExperimentReport = serde_json::from_str(&text)?;
            let target = if out.is_dir() || out.extension().is_none() {
                out.join("plot_data.csv")
            } else {
                out
            };
            write_atomic(&target, plot_data_csv(&report).as_bytes())?;
            Ok(true)
        }
    }
}

/// Loads the config, applies command-line overrides and validates it.
fn prepare(common: &Common, experiment: Option<ExperimentKind>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(r) = common.replicates {
        cfg.run.replicates = r;
    }
    if let Some(seed) = common.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(backend) = common.backend {
        cfg.run.backend = backend;
    }
    if experiment.is_some() {
        cfg.experiment = experiment;
    }
    cfg.validate()?;
    // Pin the resolved grid so the manifest alone reproduces the run.
    let grid = cfg.grid()?;
    cfg.run.horizon = grid.horizon();
    cfg.run.step = None;
    cfg.run.intervals = Some(grid.intervals());
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.output = Some(out.clone());
    Ok((cfg, out))
}

fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, seeds: &SeedManifest) -> Result<()> {
    write_json(
        &out.join("manifest.json"),
        &json!({
            "tool": "hawkes-mf",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "csv_schema_version": output::SCHEMA_VERSION,
            "config": cfg,
            "seeds": seeds,
        }),
    )
}

fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = cfg.model_spec();
    let run = cfg.run_spec()?;
    let grid = cfg.grid()?;
    let scaling = cfg.scaling();
    let mut seeds = SeedManifest {
        master: run.master_seed,
        ..SeedManifest::default()
    };
    let mut summary = Csv::new(
        "simulate_summary",
        &["n", "replicate", "events", "candidates", "accepted", "tie_incidents"],
    );
    for n in cfg.model.n.to_vec() {
        let tracked: Vec<usize> = (0..cfg.run.tracked.min(n)).collect();
        let results = (0..run.replicates)
            .into_par_iter()
            .map(|r| {
                let (net_seed, sim_seed) = run.seeds(n as u64, r);
                let net = sample_network(n, model.p, model.q, net_seed)?;
                let mut sim = SimulationConfig::new(grid.horizon(), scaling, sim_seed)?
                    .with_tracked(tracked.clone());
                sim.grid = grid;
                simulate(run.backend, &net, &model.kernel, &model.transfer, &sim)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, res) in results.iter().enumerate() {
            let (network, simulation) = run.seeds(n as u64, r);
            seeds.replicates.push(ReplicateSeeds {
                label: format!("N={n}"),
                replicate: r,
                network,
                simulation,
            });
            write_atomic(&out.join(format!("events_N{n}_r{r}.csv")), events_csv(&res.trains).as_bytes())?;
            let names: Vec<String> = tracked.iter().map(|i| format!("input_{i}")).collect();
            let paths: Vec<&[f64]> = res.recording.tracked_paths.iter().map(Vec::as_slice).collect();
            write_atomic(
                &out.join(format!("inputs_N{n}_r{r}.csv")),
                paths_csv("inputs", &grid, &names, &paths).as_bytes(),
            )?;
            let d = &res.diagnostics;
            summary.row([
                n.to_string(),
                r.to_string(),
                res.trains.total_events().to_string(),
                d.candidates.to_string(),
                d.accepted.to_string(),
                d.tie_incidents.to_string(),
            ]);
        }
    }
    write_atomic(&out.join("summary.csv"), summary.finish().as_bytes())?;
    write_manifest(out, "simulate", cfg, &seeds)
}

fn run_meanfield(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = cfg.model_spec();
    let grid = cfg.grid()?;
    let path = model.mean_field(grid)?;
    let rates = path.rates(&model.transfer);
    write_atomic(
        &out.join("I.csv"),
        paths_csv("meanfield", &grid, &["I".into(), "h_I".into()], &[&path.values, &rates]).as_bytes(),
    )?;
    write_json(
        &out.join("meanfield.json"),
        &json!({
            "metadata": path.metadata,
            "terminal": path.last(),
            "integrated_rate": path.integrated_rate(&model.transfer),
        }),
    )?;
    write_manifest(out, "meanfield", cfg, &SeedManifest::default())
}

fn run_fluctuations(cfg: &ExperimentConfig, samples: usize, out: &Path) -> Result<()> {
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2 samples for a covariance"));
    }
    let model = cfg.model_spec();
    let grid = cfg.grid()?;
    let tracked = cfg.run.tracked;
    let mf = model.mean_field(grid)?;
    let fm = FluctuationModel::new(&mf, &model.kernel, &model.transfer, model.p, model.q)?;
    let master = cfg.run.master_seed;
    let mut names = vec!["kbar".to_string()];
    names.extend((1..=tracked).map(|k| format!("k{k}")));
    let mut columns = vec![Vec::with_capacity(samples); tracked + 1];
    let mut files = Vec::with_capacity(samples);
    for start in (0..samples).step_by(SAMPLE_BATCH) {
        let end = (start + SAMPLE_BATCH).min(samples);
        let batch = (start..end)
            .into_par_iter()
            .map(|s| fm.sample(tracked, derive_seed(master, s as u64)))
            .collect::<Result<Vec<_>>>()?;
        for (s, sample) in (start..end).zip(batch) {
            let mut paths: Vec<&[f64]> = vec![&sample.kbar];
            paths.extend(sample.k.iter().map(Vec::as_slice));
            let name = format!("samples/sample_{s:05}.csv");
            write_atomic(&out.join(&name), paths_csv("fluctuation", &grid, &names, &paths).as_bytes())?;
            files.push(name);
            for (col, path) in columns.iter_mut().zip(&paths) {
                col.push(path[grid.intervals()]);
            }
        }
    }
    let cov = CovarianceEstimate::from_columns(&columns);
    write_json(
        &out.join("covariance.json"),
        &json!({
            "t": grid.horizon(),
            "samples": samples,
            "labels": names,
            "mean": cov.mean,
            "cov": cov.cov,
            "se": cov.se,
            "sample_files": files,
        }),
    )?;
    let seeds = SeedManifest {
        master,
        replicates: Vec::new(),
        limit: Some(master),
    };
    write_manifest(out, "fluctuations", cfg, &seeds)
}

/// Runs the configured experiment, writes report, tables and manifest.
pub fn run_verify(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let report = experiment_report(cfg)?;
    write_json(&out.join("report.json"), &report)?;
    for table in &report.tables {
        write_atomic(&out.join(format!("tables/{}.csv", table.name)), table_csv(table).as_bytes())?;
    }
    write_manifest(out, "verify", cfg, &report.seeds)?;
    Ok(report)
}

/// The experiment selected by `cfg`, with tolerance overrides applied.
pub fn experiment_report(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = cfg.experiment.ok_or_else(|| Error::Config {
        path: "experiment".into(),
        message: "verify needs an experiment (config key or --experiment)".into(),
    })?;
    let model = cfg.model_spec();
    let run = cfg.run_spec()?;
    let ns = cfg.model.n.to_vec();
    let largest = cfg.model.n.largest();
    let report = match kind {
        ExperimentKind::Lln => analysis::lln_experiment(&model, &ns, &run)?,
        ExperimentKind::Clt => analysis::clt_experiment(&model, largest, cfg.run.tracked, &run)?,
        ExperimentKind::Compensated => analysis::compensated_experiment(&model, &ns, &run)?,
        ExperimentKind::Critical => critical_experiment(&model, largest, &run, cfg.run.network)?,
        ExperimentKind::Independence => {
            analysis::independence_experiment(&model, &ns, cfg.run.vertices, &run)?
        }
        ExperimentKind::Backends => backend_comparison(&model, largest, &run)?,
    };
    if cfg.tolerances.is_empty() {
        return Ok(report);
    }
    let mut report = report;
    for (id, value) in &cfg.tolerances {
        report.set_tolerance(id, *value)?;
    }
    Ok(report.finalize())
}
