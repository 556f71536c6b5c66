//! File layout of a working directory and loaders for the artifacts in it.
//!
//! ```text
//! cgm.csv, patients.csv          raw input (written by `synth`)
//! corpus.json                    normalized corpus cache
//! stats.json, daily_profile.csv, length_histogram.csv
//! cohorts.csv, gmm.json
//! prepared/<cohort>/fold{i}.bin, prepared/<cohort>/manifest.json
//! models/<cohort>/lstm_fold{i}.bin, lstm_fold{i}_curve.csv, lstm_train.json
//! models/<cohort>/hmm_fold{i}.json, hmm_train.json
//! report.json, report.csv, scatter_<model>.csv, compare.json, compare.csv
//! forget_trace.csv, explain.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use glyco::ingest::Corpus;
use glyco::pipeline::{load_prepared, PreparedSet};
use serde::{Deserialize, Serialize};

use crate::config::{CohortMode, RunConfig};
use crate::error::{CliError, CliResult};

pub const CORPUS: &str = "corpus.json";
pub const COHORTS: &str = "cohorts.csv";
pub const MANIFEST: &str = "manifest.json";

pub fn prepared_dir(label: &str) -> PathBuf {
    Path::new("prepared").join(label)
}

pub fn fold_file(label: &str, fold: usize) -> PathBuf {
    prepared_dir(label).join(format!("fold{fold}.bin"))
}

pub fn model_dir(label: &str) -> PathBuf {
    Path::new("models").join(label)
}

pub fn lstm_file(label: &str, fold: usize) -> PathBuf {
    model_dir(label).join(format!("lstm_fold{fold}.bin"))
}

pub fn hmm_file(label: &str, fold: usize) -> PathBuf {
    model_dir(label).join(format!("hmm_fold{fold}.json"))
}

fn missing(path: &Path, hint: &str) -> CliError {
    CliError::data(format!("{} not found; {hint}", path.display()))
}

pub fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    let path = dir.join(CORPUS);
    let text = std::fs::read_to_string(&path).map_err(|_| missing(&path, "run `synth` or `ingest` first"))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Patient id → cohort id.
pub fn load_cohorts(dir: &Path) -> CliResult<BTreeMap<String, usize>> {
    let path = dir.join(COHORTS);
    let file = std::fs::File::open(&path).map_err(|_| missing(&path, "run `cluster` first"))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let id: usize = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::data(format!("{}: bad cohort row {rec:?}", path.display())))?;
        out.insert(rec[0].to_string(), id);
    }
    Ok(out)
}

/// Patients in the selected cohort, `None` for the whole corpus.
pub fn cohort_members(dir: &Path, mode: &CohortMode) -> CliResult<Option<BTreeSet<String>>> {
    match mode {
        CohortMode::All => Ok(None),
        CohortMode::Cohort(c) => {
            let members: BTreeSet<String> = load_cohorts(dir)?
                .into_iter()
                .filter(|(_, id)| id == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                return Err(CliError::config(format!("cohort {c} has no patients")));
            }
            Ok(Some(members))
        }
    }
}

/// Distinct cohort ids in `cohorts.csv`, ascending.
pub fn cohort_ids(dir: &Path) -> CliResult<Vec<usize>> {
    let ids: BTreeSet<usize> = load_cohorts(dir)?.into_values().collect();
    Ok(ids.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold: usize,
    pub train_sequence_ids: Vec<usize>,
    pub test_sequence_ids: Vec<usize>,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Raw readings used by both a train and a test example; always 0.
    pub shared_readings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub config: RunConfig,
    pub cohort: String,
    pub sequences: usize,
    pub eligible_sequences: usize,
    /// Non-overlapping full windows over the eligible sequences.
    pub non_overlapping_windows: usize,
    pub folds: Vec<FoldManifest>,
}

pub fn load_manifest(dir: &Path, label: &str) -> CliResult<PrepareManifest> {
    let path = dir.join(prepared_dir(label)).join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|_| missing(&path, "run `prepare` first"))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_fold(dir: &Path, label: &str, fold: usize) -> CliResult<PreparedSet> {
    let path = dir.join(fold_file(label, fold));
    if !path.exists() {
        return Err(missing(&path, "run `prepare` first"));
    }
    Ok(load_prepared(&path)?)
}

/// The prepared data must have been produced with the same split settings as `cfg`.
pub fn check_compatible(manifest: &PrepareManifest, cfg: &RunConfig) -> CliResult<()> {
    let m = &manifest.config;
    if m.seed != cfg.seed || m.k_folds != cfg.k_folds || m.window != cfg.window || m.max_gap_s != cfg.max_gap_s {
        return Err(CliError::config(format!(
            "prepared data for cohort {} used seed {} / {} folds / window {:?} / gap {} s; rerun `prepare` with the current config",
            manifest.cohort, m.seed, m.k_folds, m.window, m.max_gap_s
        )));
    }
    Ok(())
}
