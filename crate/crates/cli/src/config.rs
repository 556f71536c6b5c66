//! Run configuration: defaults, then `GLYCO_SEED`, then a JSON file, then flags.

use std::path::Path;

use glyco::lstm::LossMode;
use glyco::metrics::Thresholds;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SEED_ENV: &str = "GLYCO_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub total: usize,
    pub input: usize,
    pub horizon: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            total: 144,
            input: 132,
            horizon: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub heuristic_test_n: usize,
    /// Global gradient-norm ceiling; `null` disables clipping.
    pub clip: Option<f64>,
    pub loss: LossMode,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            layers: 3,
            epochs: 20,
            batch: 128,
            lr: 0.001,
            heuristic_test_n: 1000,
            clip: Some(5.0),
            loss: LossMode::Recursive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmConfig {
    pub n_states: usize,
    /// Observation alphabet size; `null` uses `n_states`.
    pub n_symbols: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            n_states: 100,
            n_symbols: None,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

impl HmmConfig {
    pub fn symbols(&self) -> usize {
        self.n_symbols.unwrap_or(self.n_states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub features: Vec<String>,
    /// Z-score the features before fitting.
    pub normalize: bool,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 3,
            n_init: 20,
            max_iter: 200,
            tol: 1e-6,
            features: vec!["hba1c".into(), "annual_income_usd".into()],
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k_folds: usize,
    pub window: WindowConfig,
    pub max_gap_s: i64,
    /// Window step over training sequences (1 = full augmentation).
    pub train_step: usize,
    /// Window step over test sequences for the LSTM.
    pub test_step: usize,
    /// Window step over test sequences for the HMM and the baselines.
    pub baseline_test_step: usize,
    pub linreg_fit_window: usize,
    pub lstm: LstmConfig,
    pub hmm: HmmConfig,
    pub gmm: GmmConfig,
    pub thresholds: Thresholds,
    /// `"all"` or `"cohort:<id>"`.
    pub cohort: String,
    /// Features whose variance is at or below this are dropped by `stats`.
    pub variance_tau: f64,
    /// Largest tolerated fraction of malformed CSV rows.
    pub max_malformed: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            k_folds: 5,
            window: WindowConfig::default(),
            max_gap_s: 900,
            train_step: 1,
            test_step: 1,
            baseline_test_step: 144,
            linreg_fit_window: 132,
            lstm: LstmConfig::default(),
            hmm: HmmConfig::default(),
            gmm: GmmConfig::default(),
            thresholds: Thresholds::default(),
            cohort: "all".into(),
            variance_tau: 0.0,
            max_malformed: glyco::ingest::DEFAULT_MAX_MALFORMED,
        }
    }
}

/// Which part of the corpus a command works on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CohortMode {
    All,
    Cohort(usize),
}

impl CohortMode {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.strip_prefix("cohort:")
            .and_then(|id| id.parse().ok())
            .map(Self::Cohort)
            .ok_or_else(|| CliError::config(format!("cohort must be \"all\" or \"cohort:<id>\", got {s:?}")))
    }

    /// Directory name used under `prepared/` and `models/`.
    pub fn label(&self) -> String {
        match self {
            Self::All => "all".into(),
            Self::Cohort(id) => format!("cohort{id}"),
        }
    }
}

impl RunConfig {
    pub fn spec(&self) -> glyco::pipeline::WindowSpec {
        glyco::pipeline::WindowSpec {
            input_len: self.window.input,
            horizon: self.window.horizon,
        }
    }

    pub fn cohort_mode(&self) -> Result<CohortMode, CliError> {
        CohortMode::parse(&self.cohort)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.window;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::config(msg.to_string())) };
        check(w.input + w.horizon == w.total, "window.total must equal window.input + window.horizon")?;
        check(w.input >= 2 && w.horizon >= 1, "window needs input >= 2 and horizon >= 1")?;
        check(self.k_folds >= 2, "k_folds must be >= 2")?;
        check(self.max_gap_s > 0, "max_gap_s must be positive")?;
        check(
            self.train_step >= 1 && self.test_step >= 1 && self.baseline_test_step >= 1,
            "window steps must be >= 1",
        )?;
        check(self.linreg_fit_window >= 2, "linreg_fit_window must be >= 2")?;
        let l = &self.lstm;
        check(l.hidden >= 1 && l.layers >= 1, "lstm.hidden and lstm.layers must be >= 1")?;
        check(l.epochs >= 1 && l.batch >= 1, "lstm.epochs and lstm.batch must be >= 1")?;
        check(l.lr > 0.0 && l.lr.is_finite(), "lstm.lr must be positive")?;
        check(l.clip.is_none_or(|c| c > 0.0), "lstm.clip must be positive or null")?;
        check(self.hmm.n_states >= 1 && self.hmm.symbols() >= 2, "hmm needs >= 1 state and >= 2 symbols")?;
        check(self.hmm.max_iter >= 1, "hmm.max_iter must be >= 1")?;
        check(self.gmm.k >= 1 && self.gmm.n_init >= 1, "gmm.k and gmm.n_init must be >= 1")?;
        check(!self.gmm.features.is_empty(), "gmm.features must not be empty")?;
        check(
            self.thresholds.hypo < self.thresholds.hyper,
            "thresholds.hypo must be below thresholds.hyper",
        )?;
        check((0.0..=1.0).contains(&self.max_malformed), "max_malformed must be in [0, 1]")?;
        self.cohort_mode().map(|_| ())
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses the right-hand side of a `key=value` override: JSON when it parses,
/// a plain string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets a dotted path such as `lstm.epochs`, creating objects as needed.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad config key {path:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("config key {path:?} descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one part")
}

/// Builds the resolved configuration.
///
/// `overrides` are `(dotted key, JSON value)` pairs from the command line and
/// are applied last, in order.
pub fn resolve(
    file: Option<&Path>,
    env_seed: Option<&str>,
    overrides: &[(String, Value)],
) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        set_path(&mut value, "seed", Value::from(seed))?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::config(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    for (key, v) in overrides {
        set_path(&mut value, key, v.clone())?;
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Splits `key=value` from `--set`.
pub fn parse_set(raw: &str) -> Result<(String, Value), CliError> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {raw:?}")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = resolve(None, None, &[]).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.k_folds, 5);
        assert_eq!((c.window.total, c.window.input, c.window.horizon), (144, 132, 12));
        assert_eq!(c.max_gap_s, 900);
        assert_eq!((c.lstm.hidden, c.lstm.layers, c.lstm.epochs, c.lstm.batch), (8, 3, 20, 128));
        assert_eq!(c.lstm.lr, 0.001);
        assert_eq!((c.hmm.n_states, c.hmm.max_iter), (100, 10_000));
        assert_eq!((c.gmm.k, c.gmm.n_init, c.gmm.max_iter), (3, 20, 200));
        assert_eq!((c.thresholds.hypo, c.thresholds.hyper), (70.0, 280.0));
        assert_eq!(c.cohort_mode().unwrap(), CohortMode::All);
    }

    #[test]
    fn precedence_is_env_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"lstm": {"epochs": 7}, "k_folds": 3}"#).unwrap();

        let c = resolve(Some(&path), Some("9"), &[]).unwrap();
        assert_eq!((c.seed, c.lstm.epochs, c.lstm.batch, c.k_folds), (9, 7, 128, 3));

        std::fs::write(&path, r#"{"seed": 5}"#).unwrap();
        assert_eq!(resolve(Some(&path), Some("9"), &[]).unwrap().seed, 5);

        let flags = vec![parse_set("seed=11").unwrap(), parse_set("lstm.epochs=2").unwrap()];
        let c = resolve(Some(&path), Some("9"), &flags).unwrap();
        assert_eq!((c.seed, c.lstm.epochs), (11, 2));
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let bad = |sets: &[&str]| {
            let o: Vec<_> = sets.iter().map(|s| parse_set(s).unwrap()).collect();
            resolve(None, None, &o).unwrap_err().exit_code()
        };
        assert_eq!(bad(&["lstm.epochs=0"]), 2);
        assert_eq!(bad(&["window.input=100"]), 2);
        assert_eq!(bad(&["no_such_key=1"]), 2);
        assert_eq!(bad(&["cohort=cohort:x"]), 2);
        assert_eq!(bad(&["lstm.lr=\"fast\""]), 2);
        assert_eq!(resolve(None, Some("abc"), &[]).unwrap_err().exit_code(), 2);
        assert!(parse_set("novalue").is_err());
    }

    #[test]
    fn cohort_labels() {
        assert_eq!(CohortMode::parse("cohort:2").unwrap().label(), "cohort2");
        assert_eq!(CohortMode::parse("all").unwrap().label(), "all");
    }

    #[test]
    fn set_values_fall_back_to_strings() {
        assert_eq!(parse_set("cohort=cohort:1").unwrap().1, Value::String("cohort:1".into()));
        assert_eq!(parse_set("lstm.clip=null").unwrap().1, Value::Null);
    }
}
