//! The `glyco` command-line tool.
//!
//! Each subcommand reads its inputs from and writes its outputs to one working
//! directory (`--dir`), so a whole experiment is a sequence of invocations:
//!
//! ```text
//! glyco synth --patients 20 --days 30
//! glyco cluster
//! glyco prepare
//! glyco train --model lstm
//! glyco evaluate
//! ```
//!
//! Failures print a single JSON line on stderr and exit with 2 (config),
//! 3 (data) or 4 (numeric); files the failed command had already written are
//! removed.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod workspace;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use commands::bolus::BolusArgs;
use commands::train::TrainModel;
use commands::Context;
use config::{CohortMode, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "glyco", version, about = "CGM glucose forecasting experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Working directory for inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    pub dir: PathBuf,
    /// JSON file with configuration overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (beats the config file and GLYCO_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `all` or `cohort:<id>`.
    #[arg(long, global = true)]
    pub cohort: Option<String>,
    /// Arbitrary override, e.g. `--set lstm.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus (cgm.csv, patients.csv, corpus.json).
    Synth {
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 30)]
        days: usize,
    },
    /// Parse CGM and patient CSV files into corpus.json.
    Ingest {
        #[arg(long)]
        cgm: PathBuf,
        #[arg(long)]
        patients: Option<PathBuf>,
    },
    /// Corpus statistics, daily profile and patient-feature covariance.
    Stats,
    /// Gaussian-mixture clustering of patients into cohorts.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_init: Option<usize>,
    },
    /// Split sequences into folds and window them.
    Prepare {
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        train_step: Option<usize>,
        /// Prepare the whole corpus and every cohort in cohorts.csv.
        #[arg(long)]
        all_cohorts: bool,
    },
    /// Train one model per fold.
    Train {
        #[arg(long, value_enum)]
        model: TrainModel,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        /// Train with teacher forcing instead of recursive feedback.
        #[arg(long)]
        teacher_forcing: bool,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Train on the whole corpus and every cohort in cohorts.csv.
        #[arg(long)]
        all_cohorts: bool,
    },
    /// Score models on the test folds (report.json, report.csv).
    Evaluate {
        /// Comma-separated subset of copy_last, linreg, hmm, lstm.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Also write scatter_<model>.csv with every forecast point.
        #[arg(long)]
        scatter: bool,
        /// Generalised model vs per-cohort models (compare.json, compare.csv).
        #[arg(long)]
        compare_cohorts: bool,
        /// Model used with --compare-cohorts.
        #[arg(long, default_value = "lstm")]
        model: String,
    },
    /// Forget-gate trace of one test forecast (forget_trace.csv).
    Explain {
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        example: usize,
    },
    /// Standard bolus calculator; prints one JSON line.
    Bolus(BolusArgs),
}

fn push<T: serde::Serialize>(out: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), serde_json::to_value(v).expect("flag value serializes")));
    }
}

/// Flag values as config overrides, in increasing precedence.
fn overrides(cli: &Cli) -> CliResult<Vec<(String, Value)>> {
    let mut o = Vec::new();
    for s in &cli.global.set {
        o.push(config::parse_set(s)?);
    }
    push(&mut o, "seed", cli.global.seed);
    push(&mut o, "cohort", cli.global.cohort.clone());
    match &cli.command {
        Command::Cluster { k, n_init } => {
            push(&mut o, "gmm.k", *k);
            push(&mut o, "gmm.n_init", *n_init);
        }
        Command::Prepare { folds, train_step, .. } => {
            push(&mut o, "k_folds", *folds);
            push(&mut o, "train_step", *train_step);
        }
        Command::Train {
            epochs,
            batch,
            lr,
            hidden,
            layers,
            teacher_forcing,
            states,
            max_iter,
            ..
        } => {
            push(&mut o, "lstm.epochs", *epochs);
            push(&mut o, "lstm.batch", *batch);
            push(&mut o, "lstm.lr", *lr);
            push(&mut o, "lstm.hidden", *hidden);
            push(&mut o, "lstm.layers", *layers);
            push(&mut o, "hmm.n_states", *states);
            push(&mut o, "hmm.max_iter", *max_iter);
            if *teacher_forcing {
                push(&mut o, "lstm.loss", Some("teacher_forcing"));
            }
        }
        _ => {}
    }
    Ok(o)
}

/// Cohorts a multi-cohort command works on.
fn cohort_modes(ctx: &Context, all_cohorts: bool) -> CliResult<Vec<CohortMode>> {
    if !all_cohorts {
        return Ok(vec![ctx.cfg.cohort_mode()?]);
    }
    let mut modes = vec![CohortMode::All];
    modes.extend(workspace::cohort_ids(&ctx.dir)?.into_iter().map(CohortMode::Cohort));
    Ok(modes)
}

pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let env_seed = std::env::var(config::SEED_ENV).ok();
    config::resolve(cli.global.config.as_deref(), env_seed.as_deref(), &overrides(cli)?)
}

/// Runs a parsed command. Returns what should go to stdout.
pub fn run(cli: Cli) -> CliResult<Option<String>> {
    if let Command::Bolus(args) = &cli.command {
        return commands::bolus::bolus(args).map(Some);
    }
    let cfg = resolve_config(&cli)?;
    let ctx = Context {
        dir: cli.global.dir.clone(),
        cfg,
        quiet: cli.global.quiet,
    };
    let jobs = match cli.global.jobs {
        Some(0) => return Err(CliError::config("--jobs must be >= 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&ctx, &cli.command)).map(|_| None)
}

fn dispatch(ctx: &Context, command: &Command) -> CliResult<()> {
    use commands::*;
    match command {
        Command::Synth { patients, days } => data::synth(ctx, *patients, *days),
        Command::Ingest { cgm, patients } => data::ingest(ctx, cgm, patients.as_deref()),
        Command::Stats => data::stats(ctx),
        Command::Cluster { .. } => data::cluster(ctx),
        Command::Prepare { all_cohorts, .. } => prepare::prepare(ctx, &cohort_modes(ctx, *all_cohorts)?),
        Command::Train { model, all_cohorts, .. } => train::train(ctx, *model, &cohort_modes(ctx, *all_cohorts)?),
        Command::Evaluate {
            models,
            scatter,
            compare_cohorts,
            model,
        } => {
            if *compare_cohorts {
                evaluate::compare_cohorts(ctx, model)
            } else {
                evaluate::evaluate(ctx, models.as_deref(), *scatter)
            }
        }
        Command::Explain { fold, example } => explain::explain(ctx, *fold, *example),
        Command::Bolus(_) => unreachable!("handled before config resolution"),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let err = CliError::config(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(stdout) => {
            if let Some(s) = stdout {
                println!("{s}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
