//! Command-line interface and experiment harness.
//!
//! Exit status: 0 on success, 1 for usage and input errors, 2 for numerical
//! failures, 3 when a forecast diverged.

pub mod config;
pub mod crps;
pub mod ingest;
pub mod io;
pub mod ou;
pub mod plot;
pub mod search;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use self::config::{ExperimentConfig, SystemSpec};
use self::search::{grid_search, SearchSpace, SelectionLog};
use crate::dynamics::{cir_simulate, ou_sample_pairs, SamplePairs, SeededRng};
use crate::estimators::{evolution_compression, KoopmanFit};
use crate::forecaster::{baseline_forecast, dli_forecast};
use crate::kernels::KernelSpec;
use crate::spectral::{spectral_report, SpectralOptions};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dli", version, about = "Kernel Koopman forecasting of distribution flows")]
pub struct Cli {
    /// Experiment configuration (JSON); built-in defaults otherwise.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for repetitions.
    #[arg(long, global = true, value_name = "N", conflicts_with = "single_thread")]
    pub threads: Option<usize>,
    /// Run repetitions sequentially on the calling thread.
    #[arg(long, global = true)]
    pub single_thread: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample training, validation and initial-condition files.
    Simulate,
    /// Grid-search an estimator and save the selected fit.
    Fit(FitArgs),
    /// Propagate an initial sample through a saved fit.
    Forecast(ForecastArgs),
    /// Stability report of a saved fit's evolution matrix.
    Diagnose(DiagnoseArgs),
    /// Run a full repeated study.
    Experiment {
        #[command(subcommand)]
        study: Study,
    },
    /// SVG chart of a results file.
    Plot(PlotArgs),
    /// Pair a univariate time series and split it by date.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Study {
    /// Relative MMD of OU forecasts, centered against uncentered.
    OuMmd,
    /// Average CRPS against a calibrated CIR model.
    Crps,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training pairs [default: OUT/train.csv].
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation pairs [default: OUT/validation.csv].
    #[arg(long)]
    pub validation: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// DLI for centered fits, the plain recursion otherwise.
    Auto,
    Dli,
    Baseline,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Saved fit [default: OUT/fit.json].
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Initial sample [default: OUT/initial.csv].
    #[arg(long)]
    pub initial: Option<PathBuf>,
    /// Number of steps [default: from the configuration].
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Trajectory file [default: OUT/trajectory.csv].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Saved fit [default: OUT/fit.json].
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Largest power computed for the power-norm profile.
    #[arg(long, default_value_t = 20_000)]
    pub max_steps: usize,
    /// Angles per circle in the resolvent grids.
    #[arg(long, default_value_t = 256)]
    pub angles: usize,
    /// Report file [default: OUT/spectral_report.json].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Results table [default: OUT/results.csv].
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Metric to chart [default: the first one present].
    #[arg(long)]
    pub metric: Option<String>,
    /// SVG file [default: OUT/results.svg].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Column holding the observed values.
    #[arg(long)]
    pub column: String,
    /// Column holding sortable dates.
    #[arg(long)]
    pub date_column: Option<String>,
    /// Last date (inclusive) of the training window.
    #[arg(long, requires = "date_column")]
    pub train_until: Option<String>,
    /// Last date (inclusive) of the validation window.
    #[arg(long, requires = "date_column")]
    pub validation_until: Option<String>,
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Diverged,
}

#[derive(Serialize)]
struct SelectionRecord<'a> {
    seed: u64,
    method: &'a str,
    selection: &'a SelectionLog,
}

const TRAIN_FILE: &str = "train.csv";
const VALIDATION_FILE: &str = "validation.csv";
const TEST_FILE: &str = "test.csv";
const INITIAL_FILE: &str = "initial.csv";
const SERIES_FILE: &str = "series.csv";
const FIT_FILE: &str = "fit.json";
const SELECTION_FILE: &str = "selection.json";
const TRAJECTORY_FILE: &str = "trajectory.csv";
const REPORT_FILE: &str = "spectral_report.json";
const RESULTS_FILE: &str = "results.csv";
const SUMMARY_FILE: &str = "summary.csv";
const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
const CONFIG_FILE: &str = "config.json";
const CRPS_RESULTS_FILE: &str = "crps_results.csv";
const CRPS_TABLE_FILE: &str = "crps_table.csv";
const CRPS_SEED_FILE: &str = "crps_by_seed.csv";
const PLOT_FILE: &str = "results.svg";

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Diverged) => EXIT_DIVERGED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli, fallback: fn() -> ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => fallback(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` with the requested scheduling; the flag tells it whether to
/// spread repetitions over the pool.
fn scheduled<T: Send>(cli: &Cli, f: impl FnOnce(bool) -> T + Send) -> Result<T> {
    if cli.single_thread {
        return Ok(f(false));
    }
    match cli.threads {
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(pool.install(|| f(true)))
        }
        None => Ok(f(true)),
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let study_default = match cli.command {
        Command::Experiment { study: Study::Crps } => ExperimentConfig::crps_default,
        _ => ExperimentConfig::default,
    };
    let cfg = resolve_config(cli, study_default)?;
    let out = PathBuf::from(&cfg.output_dir);
    let or_out = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out),
        Command::Fit(a) => cmd_fit(
            &cfg,
            &or_out(&a.train, TRAIN_FILE),
            &or_out(&a.validation, VALIDATION_FILE),
            &out,
        ),
        Command::Forecast(a) => cmd_forecast(
            &or_out(&a.fit, FIT_FILE),
            &or_out(&a.initial, INITIAL_FILE),
            a.horizon.unwrap_or(cfg.horizon),
            a.method,
            &or_out(&a.output, TRAJECTORY_FILE),
        ),
        Command::Diagnose(a) => cmd_diagnose(&or_out(&a.fit, FIT_FILE), a, &or_out(&a.output, REPORT_FILE)),
        Command::Experiment { study: Study::OuMmd } => cmd_experiment_ou(cli, &cfg, &out),
        Command::Experiment { study: Study::Crps } => cmd_experiment_crps(cli, &cfg, &out),
        Command::Plot(a) => cmd_plot(
            &or_out(&a.results, RESULTS_FILE),
            a.metric.as_deref(),
            &or_out(&a.output, PLOT_FILE),
        ),
        Command::Ingest(a) => cmd_ingest(a, &out),
    }
}

/// Writes the data of repetition 0 of the configured study.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut rng = SeededRng::new(cfg.seed).child(0).rng();
    match &cfg.system {
        SystemSpec::Ou(params) => {
            let train = ou_sample_pairs(params, cfg.sizes.train, &mut rng)?;
            let val = ou_sample_pairs(params, cfg.sizes.validation, &mut rng)?;
            let mixture = cfg.initial_mixture()?;
            let z: Vec<f64> = (0..cfg.sizes.initial).map(|_| mixture.sample(&mut rng)).collect();
            io::write_pairs(&out.join(TRAIN_FILE), &train)?;
            io::write_pairs(&out.join(VALIDATION_FILE), &val)?;
            io::write_initial(&out.join(INITIAL_FILE), &z)?;
            println!(
                "wrote {} training, {} validation and {} initial samples to {}",
                train.len(),
                val.len(),
                z.len(),
                out.display()
            );
        }
        SystemSpec::Cir { params, x0 } => {
            let c = &cfg.crps;
            let path = cir_simulate(params, *x0, c.train_steps + c.test_steps, &mut rng)?;
            let rows: Vec<Vec<String>> = path
                .iter()
                .enumerate()
                .map(|(t, v)| vec![t.to_string(), io::fmt_float(*v)])
                .collect();
            io::write_table(&out.join(SERIES_FILE), &["t", "value"], &rows)?;
            let pairs = SamplePairs::from_series(&path[..=c.train_steps])?;
            let (train, val) = crps::split_chronological(&pairs, c.validation_fraction)?;
            io::write_pairs(&out.join(TRAIN_FILE), &train)?;
            io::write_pairs(&out.join(VALIDATION_FILE), &val)?;
            io::write_initial(&out.join(INITIAL_FILE), &[path[c.train_steps]])?;
            println!(
                "wrote a {}-state series, {} training and {} validation pairs to {}",
                path.len(),
                train.len(),
                val.len(),
                out.display()
            );
        }
        SystemSpec::Csv { .. } => {
            return Err(Error::invalid("CSV systems are read with the ingest command"))
        }
    }
    Ok(Outcome::Done)
}

fn config_kernels(cfg: &ExperimentConfig) -> Result<Vec<KernelSpec>> {
    cfg.grid.lengthscales.iter().map(|&l| KernelSpec::gaussian(l)).collect()
}

pub fn cmd_fit(cfg: &ExperimentConfig, train: &Path, validation: &Path, out: &Path) -> Result<Outcome> {
    let train = io::read_pairs(train)?;
    let val = io::read_pairs(validation)?;
    let kernels = config_kernels(cfg)?;
    let space = SearchSpace {
        kernels: &kernels,
        gammas: &cfg.grid.gammas,
        ranks: &cfg.grid.ranks,
    };
    let (fit, log) = grid_search(&train, &val, cfg.estimator.kind, cfg.estimator.centered, &space)?;
    io::write_json(&out.join(FIT_FILE), &fit.to_file())?;
    io::write_json(&out.join(SELECTION_FILE), &log)?;
    let c = log.selected();
    println!(
        "selected {} kernel={:?} gamma={:?} rank={:?} risk={:?} ({} candidates)",
        log.estimator,
        c.kernel,
        c.gamma,
        c.effective_rank,
        c.risk,
        log.candidates.len()
    );
    Ok(Outcome::Done)
}

pub fn load_fit(path: &Path) -> Result<KoopmanFit> {
    KoopmanFit::from_file(&io::read_json(path)?)
}

pub fn cmd_forecast(
    fit: &Path,
    initial: &Path,
    horizon: usize,
    method: MethodArg,
    output: &Path,
) -> Result<Outcome> {
    let fit = load_fit(fit)?;
    let z = io::read_initial(initial)?;
    let use_dli = match method {
        MethodArg::Auto => fit.centered(),
        MethodArg::Dli => true,
        MethodArg::Baseline => false,
    };
    let traj = if use_dli {
        dli_forecast(&fit, &z, horizon)?
    } else {
        baseline_forecast(&fit, &z, horizon)?
    };
    io::write_trajectory(output, &traj)?;
    match traj.diverged_at {
        Some(t) => {
            log::warn!("forecast diverged at step {t}; wrote {} steps", traj.steps());
            Ok(Outcome::Diverged)
        }
        None => Ok(Outcome::Done),
    }
}

pub fn cmd_diagnose(fit: &Path, args: &DiagnoseArgs, output: &Path) -> Result<Outcome> {
    let fit = load_fit(fit)?;
    let m = evolution_compression(&fit);
    let mut opts = SpectralOptions {
        max_steps: args.max_steps,
        rank: Some(fit.rank()),
        ..SpectralOptions::default()
    };
    opts.kreiss.angles = args.angles;
    opts.circle.angles = args.angles;
    let report = spectral_report(&m, &opts)?;
    io::write_json(output, &report)?;
    println!(
        "verdict={:?} rho={:.6e} p_hat={:.6e} eta_hat={:.6e} d_hat={:.6e}",
        report.verdict, report.rho, report.p_hat, report.eta_hat, report.d_hat
    );
    Ok(Outcome::Done)
}

fn write_selections(path: &Path, records: &[SelectionRecord<'_>]) -> Result<()> {
    io::write_json(path, &records)
}

pub fn cmd_experiment_ou(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let outcomes = scheduled(cli, |parallel| ou::run(cfg, parallel))??;
    let rows: Vec<io::ResultRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let summary = io::summarize(&rows, ou::REL_MMD);
    io::write_results(&out.join(RESULTS_FILE), &rows)?;
    io::write_summary(&out.join(SUMMARY_FILE), &summary)?;
    io::write_table(
        &out.join(DIAGNOSTICS_FILE),
        &["seed", "method", "metric", "value"],
        &ou::diagnostics_table(&outcomes),
    )?;
    let records: Vec<SelectionRecord<'_>> = outcomes
        .iter()
        .flat_map(|o| {
            o.diagnostics.iter().map(move |d| SelectionRecord {
                seed: o.seed,
                method: &d.method,
                selection: &d.selection,
            })
        })
        .collect();
    write_selections(&out.join(SELECTION_FILE), &records)?;
    io::write_json(&out.join(CONFIG_FILE), cfg)?;
    for s in summary.iter().filter(|s| s.t == cfg.horizon) {
        println!("t={} {}: median {} [q25 {}, q75 {}]", s.t, s.method, s.median, s.q25, s.q75);
    }
    Ok(Outcome::Done)
}

pub fn cmd_experiment_crps(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let outcomes = scheduled(cli, |parallel| crps::run(cfg, parallel))??;
    let rows: Vec<io::ResultRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    io::write_results(&out.join(CRPS_RESULTS_FILE), &rows)?;
    let table = crps::summary_table(&outcomes);
    io::write_table(
        &out.join(CRPS_TABLE_FILE),
        &["model", "mean_crps", "std", "diverged"],
        &table,
    )?;
    io::write_table(
        &out.join(CRPS_SEED_FILE),
        &["seed", "method", "value"],
        &crps::per_seed_table(&outcomes),
    )?;
    let records: Vec<SelectionRecord<'_>> = outcomes
        .iter()
        .flat_map(|o| {
            o.selections.iter().map(move |(m, log)| SelectionRecord {
                seed: o.seed,
                method: m,
                selection: log,
            })
        })
        .collect();
    write_selections(&out.join(SELECTION_FILE), &records)?;
    io::write_json(&out.join(CONFIG_FILE), cfg)?;
    for r in &table {
        println!("{}: mean {} std {} diverged {}", r[0], r[1], r[2], r[3]);
    }
    Ok(Outcome::Done)
}

pub fn cmd_plot(results: &Path, metric: Option<&str>, output: &Path) -> Result<Outcome> {
    let rows = io::read_results(results)?;
    let svg = plot::plot_results(&rows, metric)?;
    io::write_text(output, &svg)?;
    Ok(Outcome::Done)
}

pub fn cmd_ingest(args: &IngestArgs, out: &Path) -> Result<Outcome> {
    let spec = ingest::IngestSpec {
        value_column: args.column.clone(),
        date_column: args.date_column.clone(),
        train_until: args.train_until.clone(),
        validation_until: args.validation_until.clone(),
    };
    let data = ingest::ingest(&args.input, &spec)?;
    for (name, part) in [
        (TRAIN_FILE, &data.train),
        (VALIDATION_FILE, &data.validation),
        (TEST_FILE, &data.test),
    ] {
        if let Some(p) = part {
            io::write_pairs(&out.join(name), p)?;
        }
    }
    println!(
        "{} pairs: train {}, validation {}, test {}",
        data.series.len() - 1,
        data.counts[0],
        data.counts[1],
        data.counts[2]
    );
    Ok(Outcome::Done)
}
