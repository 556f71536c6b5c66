use glyco::hmm::{baum_welch, BaumWelchOptions, HmmForecaster, Quantizer};
use glyco::lstm::{train as train_lstm, write_model, EpochStats, LstmNetwork, TrainOptions};
use glyco::pipeline::Example;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::Context;
use crate::config::{CohortMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::workspace::{self, hmm_file, lstm_file, model_dir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainModel {
    Lstm,
    Hmm,
}

#[derive(Serialize)]
struct LstmFoldSummary {
    fold: usize,
    seed: u64,
    train_examples: usize,
    test_examples: usize,
    best_epoch: usize,
    curve: Vec<EpochStats>,
}

#[derive(Serialize)]
struct HmmFoldSummary {
    fold: usize,
    seed: u64,
    train_sequences: usize,
    n_states: usize,
    n_symbols: usize,
    iterations: usize,
    final_log_likelihood: Option<f64>,
    /// Mean log-likelihood per observed symbol.
    mean_log_likelihood: Option<f64>,
    log_likelihood_trace: Vec<f64>,
}

#[derive(Serialize)]
struct TrainSummary<T> {
    config: RunConfig,
    model: &'static str,
    cohort: String,
    folds: Vec<T>,
}

/// Training windows for the HMM: the non-overlapping ones, input and target joined.
pub fn hmm_sequences(examples: &[Example], total: usize) -> Vec<Vec<f64>> {
    examples
        .iter()
        .filter(|e| e.offset % total == 0)
        .map(|e| e.input.iter().chain(&e.target).copied().collect())
        .collect()
}

fn fold_seed(cfg: &RunConfig, fold: usize) -> u64 {
    cfg.seed.wrapping_add(fold as u64)
}

pub fn train(ctx: &Context, model: TrainModel, modes: &[CohortMode]) -> CliResult<()> {
    let mut out = Outputs::new(&ctx.dir)?;
    for mode in modes {
        let label = mode.label();
        let manifest = workspace::load_manifest(&ctx.dir, &label)?;
        workspace::check_compatible(&manifest, &ctx.cfg)?;
        match model {
            TrainModel::Lstm => train_lstm_folds(ctx, &label, &mut out)?,
            TrainModel::Hmm => train_hmm_folds(ctx, &label, &mut out)?,
        }
    }
    out.commit();
    Ok(())
}

fn train_lstm_folds(ctx: &Context, label: &str, out: &mut Outputs) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let l = &cfg.lstm;
    let results: Vec<(LstmFoldSummary, Vec<u8>, String)> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|fold| {
            let set = workspace::load_fold(&ctx.dir, label, fold)?;
            let seed = fold_seed(cfg, fold);
            let opts = TrainOptions {
                epochs: l.epochs,
                batch: l.batch,
                lr: l.lr,
                heuristic_test_n: l.heuristic_test_n,
                seed,
                clip: l.clip,
                mode: l.loss,
            };
            let net = LstmNetwork::<f64>::new(l.hidden, l.layers, seed);
            let run = train_lstm(net, &set.train_examples, &set.test_examples, &opts)?;
            let best_epoch = run.checkpoints[run.best].stats.epoch;
            let provenance = json!({
                "cohort": label,
                "fold": fold,
                "seed": seed,
                "epochs": l.epochs,
                "batch": l.batch,
                "lr": l.lr,
                "loss": l.loss,
                "clip": l.clip,
                "train_step": set.provenance.train_step,
                "best_epoch": best_epoch,
            });
            let mut bytes = Vec::new();
            write_model(&mut bytes, run.best_net(), &provenance)?;
            let summary = LstmFoldSummary {
                fold,
                seed,
                train_examples: set.train_examples.len(),
                test_examples: set.test_examples.len(),
                best_epoch,
                curve: run.curve(),
            };
            Ok((summary, bytes, run.curve_csv()))
        })
        .collect::<CliResult<_>>()?;
    let mut folds = Vec::new();
    for (summary, bytes, curve) in results {
        out.write(lstm_file(label, summary.fold), &bytes)?;
        out.write(model_dir(label).join(format!("lstm_fold{}_curve.csv", summary.fold)), curve.as_bytes())?;
        let best = &summary.curve[summary.best_epoch - 1];
        ctx.say(&format!(
            "{label} fold {}: best epoch {} (heuristic RMSE {})",
            summary.fold,
            summary.best_epoch,
            best.heuristic_rmse.map_or("n/a".into(), |v| format!("{v:.3}"))
        ));
        folds.push(summary);
    }
    out.write_json(
        model_dir(label).join("lstm_train.json"),
        &TrainSummary {
            config: cfg.clone(),
            model: "lstm",
            cohort: label.to_string(),
            folds,
        },
    )?;
    Ok(())
}

fn train_hmm_folds(ctx: &Context, label: &str, out: &mut Outputs) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let (n, m) = (cfg.hmm.n_states, cfg.hmm.symbols());
    let results: Vec<(HmmFoldSummary, String)> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|fold| {
            let set = workspace::load_fold(&ctx.dir, label, fold)?;
            let windows = hmm_sequences(&set.train_examples, cfg.window.total);
            if windows.is_empty() {
                return Err(CliError::data(format!("{label} fold {fold}: no non-overlapping training windows")));
            }
            let quantizer = Quantizer::fit(m, windows.iter().flatten().copied())?;
            let symbols: Vec<Vec<usize>> = windows
                .iter()
                .map(|w| w.iter().map(|v| quantizer.encode(*v)).collect())
                .collect();
            let seed = fold_seed(cfg, fold);
            let opts = BaumWelchOptions {
                max_iter: cfg.hmm.max_iter,
                tol: cfg.hmm.tol,
                seed,
                ..BaumWelchOptions::default()
            };
            let model = baum_welch::<f64>(&symbols, n, m, &opts)?;
            let n_obs: usize = symbols.iter().map(Vec::len).sum();
            let ll = model.final_log_likelihood;
            let summary = HmmFoldSummary {
                fold,
                seed,
                train_sequences: symbols.len(),
                n_states: n,
                n_symbols: m,
                iterations: model.trained_iterations,
                final_log_likelihood: ll.is_finite().then_some(ll),
                mean_log_likelihood: ll.is_finite().then(|| ll / n_obs as f64),
                log_likelihood_trace: model.log_likelihood_trace.clone(),
            };
            let forecaster = HmmForecaster {
                model,
                quantizer,
                horizon: cfg.window.horizon,
            };
            Ok((summary, forecaster.to_json()?))
        })
        .collect::<CliResult<_>>()?;
    let mut folds = Vec::new();
    for (summary, json) in results {
        out.write(hmm_file(label, summary.fold), json.as_bytes())?;
        ctx.say(&format!(
            "{label} fold {}: {} iterations, mean log-likelihood per symbol {}",
            summary.fold,
            summary.iterations,
            summary.mean_log_likelihood.map_or("n/a".into(), |v| format!("{v:.4}"))
        ));
        folds.push(summary);
    }
    out.write_json(
        model_dir(label).join("hmm_train.json"),
        &TrainSummary {
            config: cfg.clone(),
            model: "hmm",
            cohort: label.to_string(),
            folds,
        },
    )?;
    Ok(())
}
