use glyco::lstm::load_model;
use serde::Serialize;

use super::Context;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::workspace::{self, lstm_file};

#[derive(Serialize)]
struct Explanation<'a> {
    config: &'a RunConfig,
    cohort: String,
    fold: usize,
    example: usize,
    sequence: usize,
    offset: usize,
    /// `[layers, timesteps, hidden units]` of `forget_trace.csv`.
    trace_shape: [usize; 3],
    forecast: Vec<f64>,
    reference: Vec<f64>,
}

/// Exports the forget-gate activations of one test example's forecast.
pub fn explain(ctx: &Context, fold: usize, example: usize) -> CliResult<()> {
    let cfg = &ctx.cfg;
    if fold >= cfg.k_folds {
        return Err(CliError::config(format!("fold {fold} out of range for {} folds", cfg.k_folds)));
    }
    let label = cfg.cohort_mode()?.label();
    let set = workspace::load_fold(&ctx.dir, &label, fold)?;
    let ex = set.test_examples.get(example).ok_or_else(|| {
        CliError::config(format!(
            "example {example} out of range; fold {fold} has {} test examples",
            set.test_examples.len()
        ))
    })?;
    let path = ctx.dir.join(lstm_file(&label, fold));
    if !path.exists() {
        return Err(CliError::data(format!(
            "{} not found; run `train --model lstm` first",
            path.display()
        )));
    }
    let (net, _) = load_model::<f64>(&path)?;
    let (forecast, trace) = net.rollout(&ex.input, cfg.window.horizon, true)?;
    let trace = trace.expect("trace requested");
    let (layers, steps, units) = trace.shape();

    let mut out = Outputs::new(&ctx.dir)?;
    out.write("forget_trace.csv", trace.to_csv().as_bytes())?;
    out.write_json(
        "explain.json",
        &Explanation {
            config: cfg,
            cohort: label,
            fold,
            example,
            sequence: ex.source_sequence_id,
            offset: ex.offset,
            trace_shape: [layers, steps, units],
            forecast,
            reference: ex.target.clone(),
        },
    )?;
    ctx.say(&format!("forget trace {layers} x {steps} x {units} for sequence {} offset {}", ex.source_sequence_id, ex.offset));
    out.commit();
    Ok(())
}
