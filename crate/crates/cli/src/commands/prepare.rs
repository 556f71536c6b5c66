use glyco::pipeline::{eligible_ids, kfold_split_ids, prepare as prepare_fold, segment, shared_readings, window_count, write_prepared, PrepareOptions};
use rayon::prelude::*;

use super::Context;
use crate::config::CohortMode;
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::workspace::{self, fold_file, prepared_dir, FoldManifest, PrepareManifest, MANIFEST};

/// Splits and windows the corpus for every cohort in `modes`.
pub fn prepare(ctx: &Context, modes: &[CohortMode]) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let corpus = workspace::load_corpus(&ctx.dir)?;
    let seqs = segment(&corpus.readings, cfg.max_gap_s)?;
    let spec = cfg.spec();
    let mut out = Outputs::new(&ctx.dir)?;
    for mode in modes {
        let label = mode.label();
        let members = workspace::cohort_members(&ctx.dir, mode)?;
        let ids = eligible_ids(&seqs, spec.total(), members.as_ref());
        let splits = kfold_split_ids(&ids, cfg.k_folds, cfg.seed)?;
        let opts = PrepareOptions {
            spec,
            train_step: cfg.train_step,
            test_step: cfg.test_step,
            cohort_label: label.clone(),
            cohort_filter: members.as_ref(),
        };
        let encoded: Vec<(FoldManifest, Vec<u8>)> = splits
            .par_iter()
            .map(|split| {
                let set = prepare_fold(&seqs, split, &opts)?;
                let shared = shared_readings(&set);
                if shared != 0 {
                    return Err(CliError::data(format!(
                        "fold {} of {label} shares {shared} readings between train and test",
                        split.fold_index
                    )));
                }
                let mut bytes = Vec::new();
                write_prepared(&mut bytes, &set)?;
                let m = FoldManifest {
                    fold: split.fold_index,
                    train_sequence_ids: split.train_sequence_ids.iter().copied().collect(),
                    test_sequence_ids: split.test_sequence_ids.iter().copied().collect(),
                    train_examples: set.train_examples.len(),
                    test_examples: set.test_examples.len(),
                    shared_readings: shared,
                };
                Ok((m, bytes))
            })
            .collect::<CliResult<_>>()?;
        let mut folds = Vec::with_capacity(encoded.len());
        for (m, bytes) in encoded {
            out.write(fold_file(&label, m.fold), &bytes)?;
            folds.push(m);
        }
        let manifest = PrepareManifest {
            config: cfg.clone(),
            cohort: label.clone(),
            sequences: seqs.len(),
            eligible_sequences: ids.len(),
            non_overlapping_windows: ids
                .iter()
                .map(|&i| window_count(seqs[i].len(), spec.total(), spec.total()))
                .sum(),
            folds,
        };
        out.write_json(prepared_dir(&label).join(MANIFEST), &manifest)?;
        ctx.say(&format!(
            "{label}: {} eligible sequences, {} folds, {} train / {} test examples",
            ids.len(),
            cfg.k_folds,
            manifest.folds.iter().map(|f| f.train_examples).sum::<usize>(),
            manifest.folds.iter().map(|f| f.test_examples).sum::<usize>()
        ));
    }
    out.commit();
    Ok(())
}
