use std::collections::BTreeSet;
use std::path::Path;

use glyco::baseline::{CopyLast, LinearRegression};
use glyco::hmm::HmmForecaster;
use glyco::lstm::{load_model, LstmForecaster};
use glyco::metrics::{aggregate, flat_csv, fold_metrics, forecast_pairs, EvalReport, Protocol};
use glyco::pipeline::{Example, PreparedSet};
use glyco::{Forecaster, Pair};
use rayon::prelude::*;
use serde::Serialize;

use super::Context;
use crate::config::{CohortMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{csv_string, Outputs};
use crate::workspace::{self, hmm_file, lstm_file, PrepareManifest};

pub const MODEL_NAMES: [&str; 4] = ["copy_last", "linreg", "hmm", "lstm"];

pub const CONTAMINATION_WARNING: &str = "warning: the generalised model and the per-cohort models use different fold \
splits, so some cohort test sequences were seen by the generalised model during training; \
treat the deltas as optimistic for the generalised model";

#[derive(Serialize)]
struct FoldDefinition {
    fold: usize,
    train_sequences: usize,
    test_sequences: usize,
    test_examples: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    cohort: String,
    folds: Vec<FoldDefinition>,
    models: Vec<EvalReport>,
}

/// Loads the per-fold forecaster for `name`, or `None` when it was never trained.
fn load_forecaster(dir: &Path, cfg: &RunConfig, name: &str, label: &str, fold: usize) -> CliResult<Option<Box<dyn Forecaster<f64>>>> {
    let horizon = cfg.window.horizon;
    Ok(match name {
        "copy_last" => Some(Box::new(CopyLast { horizon })),
        "linreg" => Some(Box::new(LinearRegression {
            fit_window: cfg.linreg_fit_window,
            horizon,
        })),
        "hmm" => {
            let path = dir.join(hmm_file(label, fold));
            if !path.exists() {
                return Ok(None);
            }
            let mut f = HmmForecaster::<f64>::load(&path)?;
            f.horizon = horizon;
            Some(Box::new(f))
        }
        "lstm" => {
            let path = dir.join(lstm_file(label, fold));
            if !path.exists() {
                return Ok(None);
            }
            let (net, _) = load_model::<f64>(&path)?;
            Some(Box::new(LstmForecaster { net, horizon }))
        }
        other => return Err(CliError::config(format!("unknown model {other:?}; expected one of {MODEL_NAMES:?}"))),
    })
}

/// Test-window step used for a model: every window for the LSTM, the
/// non-overlapping subset for everything else.
fn test_step(cfg: &RunConfig, name: &str) -> usize {
    if name == "lstm" {
        cfg.test_step
    } else {
        cfg.baseline_test_step
    }
}

fn test_subset(set: &PreparedSet, step: usize) -> CliResult<Vec<&Example>> {
    let stored = set.provenance.test_step;
    if !step.is_multiple_of(stored) {
        return Err(CliError::config(format!(
            "test step {step} is not a multiple of the prepared test step {stored}"
        )));
    }
    Ok(set.test_examples.iter().filter(|e| e.offset % step == 0).collect())
}

struct Scored {
    report: EvalReport,
    /// `(fold, example, pair)` for the scatter export.
    pairs: Vec<(usize, Example, Pair)>,
}

/// Scores one model on every fold's test set. `models[f]` is the fold-`f` model.
fn score(
    name: &str,
    models: &[Box<dyn Forecaster<f64>>],
    sets: &[PreparedSet],
    cfg: &RunConfig,
    cohort: &str,
    keep_pairs: bool,
) -> CliResult<Scored> {
    let step = test_step(cfg, name);
    let mut folds = Vec::with_capacity(sets.len());
    let mut kept = Vec::new();
    for (f, (set, model)) in sets.iter().zip(models).enumerate() {
        let subset: Vec<Example> = test_subset(set, step)?.into_iter().cloned().collect();
        if subset.is_empty() {
            return Err(CliError::data(format!("fold {f} has no test windows at step {step}")));
        }
        let pairs = forecast_pairs(model.as_ref(), &subset)?;
        folds.push(fold_metrics(f, &pairs, cfg.thresholds)?);
        if keep_pairs {
            kept.extend(subset.into_iter().zip(pairs).map(|(e, p)| (f, e, p)));
        }
    }
    Ok(Scored {
        report: EvalReport {
            model: name.to_string(),
            protocol: Protocol::new(step, cohort),
            aggregate: aggregate(&folds)?,
            folds,
        },
        pairs: kept,
    })
}

fn scatter_csv(pairs: &[(usize, Example, Pair)]) -> CliResult<String> {
    let rows = pairs.iter().flat_map(|(fold, e, p)| {
        p.reference
            .iter()
            .zip(&p.predicted)
            .enumerate()
            .map(move |(step, (r, y))| {
                vec![
                    fold.to_string(),
                    e.source_sequence_id.to_string(),
                    e.offset.to_string(),
                    (step + 1).to_string(),
                    r.to_string(),
                    y.to_string(),
                ]
            })
    });
    csv_string(&["fold", "sequence", "offset", "step", "reference", "predicted"], rows)
}

fn load_sets(ctx: &Context, label: &str) -> CliResult<(PrepareManifest, Vec<PreparedSet>)> {
    let manifest = workspace::load_manifest(&ctx.dir, label)?;
    workspace::check_compatible(&manifest, &ctx.cfg)?;
    let sets = (0..ctx.cfg.k_folds)
        .into_par_iter()
        .map(|f| workspace::load_fold(&ctx.dir, label, f))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((manifest, sets))
}

fn load_all_folds(ctx: &Context, name: &str, label: &str) -> CliResult<Option<Vec<Box<dyn Forecaster<f64>>>>> {
    let mut models = Vec::with_capacity(ctx.cfg.k_folds);
    for f in 0..ctx.cfg.k_folds {
        match load_forecaster(&ctx.dir, &ctx.cfg, name, label, f)? {
            Some(m) => models.push(m),
            None => return Ok(None),
        }
    }
    Ok(Some(models))
}

/// Side-by-side report of the requested models on one cohort's folds.
///
/// With no explicit list, the baselines plus every trained model are scored.
pub fn evaluate(ctx: &Context, requested: Option<&[String]>, scatter: bool) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let label = cfg.cohort_mode()?.label();
    let (manifest, sets) = load_sets(ctx, &label)?;

    let names: Vec<String> = match requested {
        Some(list) => {
            let mut seen = BTreeSet::new();
            list.iter().filter(|n| seen.insert(n.as_str())).cloned().collect()
        }
        None => MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut reports = Vec::new();
    let mut out = Outputs::new(&ctx.dir)?;
    for name in &names {
        let models = match load_all_folds(ctx, name, &label)? {
            Some(m) => m,
            None if requested.is_none() => continue,
            None => {
                return Err(CliError::data(format!(
                    "no trained {name} model for every fold of {label}; run `train --model {name}` first"
                )))
            }
        };
        let scored = score(name, &models, &sets, cfg, &label, scatter)?;
        if scatter {
            out.write(format!("scatter_{name}.csv"), scatter_csv(&scored.pairs)?.as_bytes())?;
        }
        let a = &scored.report.aggregate;
        ctx.say(&format!(
            "{name:>9}: RMSE {:.3} ± {:.3} (pooled {:.3}) over {} test windows",
            a.rmse.mean, a.rmse.sd, a.pooled_rmse, a.n_examples
        ));
        reports.push(scored.report);
    }
    let folds = manifest
        .folds
        .iter()
        .map(|f| FoldDefinition {
            fold: f.fold,
            train_sequences: f.train_sequence_ids.len(),
            test_sequences: f.test_sequence_ids.len(),
            test_examples: f.test_examples,
        })
        .collect();
    out.write(
        "report.csv",
        flat_csv(&reports).as_bytes(),
    )?;
    out.write_json(
        "report.json",
        &Report {
            config: cfg,
            cohort: label,
            folds,
            models: reports,
        },
    )?;
    out.commit();
    Ok(())
}

#[derive(Serialize)]
struct CohortComparison {
    cohort: String,
    generalised: EvalReport,
    cohort_specific: EvalReport,
    /// Cohort-specific minus generalised mean fold RMSE.
    delta_rmse: f64,
    delta_pooled_rmse: f64,
    /// Per fold: cohort test sequences that were in the generalised model's training split.
    contaminated_test_sequences: Vec<usize>,
}

#[derive(Serialize)]
struct CompareReport<'a> {
    config: &'a RunConfig,
    model: String,
    warning: &'static str,
    cohorts: Vec<CohortComparison>,
}

/// Generalised model (trained on all cohorts) against per-cohort models, both
/// scored on each cohort's own test folds.
pub fn compare_cohorts(ctx: &Context, name: &str) -> CliResult<()> {
    let cfg = &ctx.cfg;
    if !MODEL_NAMES.contains(&name) {
        return Err(CliError::config(format!("unknown model {name:?}; expected one of {MODEL_NAMES:?}")));
    }
    let all_label = CohortMode::All.label();
    let all_manifest = workspace::load_manifest(&ctx.dir, &all_label)?;
    workspace::check_compatible(&all_manifest, cfg)?;
    let general = load_all_folds(ctx, name, &all_label)?
        .ok_or_else(|| CliError::data(format!("no trained {name} model for {all_label}; run `train` first")))?;
    eprintln!("{CONTAMINATION_WARNING}");

    let mut rows = Vec::new();
    for c in workspace::cohort_ids(&ctx.dir)? {
        let label = CohortMode::Cohort(c).label();
        let (manifest, sets) = load_sets(ctx, &label)?;
        let specific = load_all_folds(ctx, name, &label)?
            .ok_or_else(|| CliError::data(format!("no trained {name} model for {label}; run `train` first")))?;
        let g = score(name, &general, &sets, cfg, &label, false)?.report;
        let s = score(name, &specific, &sets, cfg, &label, false)?.report;
        let contaminated = manifest
            .folds
            .iter()
            .zip(&all_manifest.folds)
            .map(|(cf, af)| {
                let seen: BTreeSet<usize> = af.train_sequence_ids.iter().copied().collect();
                cf.test_sequence_ids.iter().filter(|i| seen.contains(i)).count()
            })
            .collect();
        ctx.say(&format!(
            "{label}: generalised {:.3}, cohort {:.3}, delta {:+.3}",
            g.aggregate.rmse.mean,
            s.aggregate.rmse.mean,
            s.aggregate.rmse.mean - g.aggregate.rmse.mean
        ));
        rows.push(CohortComparison {
            cohort: label,
            delta_rmse: s.aggregate.rmse.mean - g.aggregate.rmse.mean,
            delta_pooled_rmse: s.aggregate.pooled_rmse - g.aggregate.pooled_rmse,
            generalised: g,
            cohort_specific: s,
            contaminated_test_sequences: contaminated,
        });
    }
    let csv_rows = rows.iter().map(|r| {
        vec![
            r.cohort.clone(),
            name.to_string(),
            r.generalised.aggregate.rmse.mean.to_string(),
            r.cohort_specific.aggregate.rmse.mean.to_string(),
            r.delta_rmse.to_string(),
            r.generalised.aggregate.pooled_rmse.to_string(),
            r.cohort_specific.aggregate.pooled_rmse.to_string(),
            r.delta_pooled_rmse.to_string(),
        ]
    });
    let csv = csv_string(
        &[
            "cohort",
            "model",
            "generalised_rmse",
            "cohort_rmse",
            "delta_rmse",
            "generalised_pooled_rmse",
            "cohort_pooled_rmse",
            "delta_pooled_rmse",
        ],
        csv_rows,
    )?;
    let mut out = Outputs::new(&ctx.dir)?;
    out.write("compare.csv", csv.as_bytes())?;
    out.write_json(
        "compare.json",
        &CompareReport {
            config: cfg,
            model: name.to_string(),
            warning: CONTAMINATION_WARNING,
            cohorts: rows,
        },
    )?;
    out.commit();
    Ok(())
}
