//! Forecast metrics (RMSE, normalized ESOD, threshold precision/recall/F1,
//! Clarke error-grid zones) and per-fold report aggregation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::pipeline::Example;
use crate::scalar::Real;
use crate::units::ForecastPair;

/// Pooled root mean squared error over every point of every pair.
pub fn rmse<T: Real>(pairs: &[ForecastPair<T>]) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("rmse of zero pairs".into()));
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for p in pairs {
        for (a, b) in p.predicted.iter().zip(&p.reference) {
            sum += (*a - *b).powi(2);
            n += 1;
        }
    }
    Ok((sum / T::of_usize(n)).sqrt())
}

fn second_difference_energy<T: Real>(xs: &[T]) -> T {
    xs.windows(3)
        .map(|w| (w[2] - T::of(2.0) * w[1] + w[0]).powi(2))
        .sum()
}

/// Energy of second-order differences of the forecast over that of the
/// reference. `None` when the reference has no curvature.
pub fn esod_n<T: Real>(pair: &ForecastPair<T>) -> Result<Option<T>> {
    if pair.horizon() < 3 {
        return Err(Error::InvalidValue(format!(
            "ESOD needs a horizon of at least 3, got {}",
            pair.horizon()
        )));
    }
    let den = second_difference_energy(&pair.reference);
    if den == T::zero() {
        return Ok(None);
    }
    Ok(Some(second_difference_energy(&pair.predicted) / den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GlycemicClass {
    Hypo,
    Normal,
    Hyper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hypo: f64,
    pub hyper: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            hypo: 70.0,
            hyper: 280.0,
        }
    }
}

/// Values exactly at a threshold count as normal.
pub fn classify<T: Real>(v: T, th: Thresholds) -> GlycemicClass {
    if v < T::of(th.hypo) {
        GlycemicClass::Hypo
    } else if v > T::of(th.hyper) {
        GlycemicClass::Hyper
    } else {
        GlycemicClass::Normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
}

impl Confusion {
    pub fn scores(self) -> Scores {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Scores {
            precision,
            recall,
            f1,
            confusion: self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Positive = hypo or hyper.
    pub abnormal: Scores,
    pub hypo: Scores,
    pub hyper: Scores,
}

/// Per-point threshold classification of predictions against references.
pub fn prf1<T: Real>(pairs: &[ForecastPair<T>], th: Thresholds) -> ClassificationReport {
    let mut abnormal = Confusion::default();
    let mut hypo = Confusion::default();
    let mut hyper = Confusion::default();
    let tally = |c: &mut Confusion, pred: bool, truth: bool| match (pred, truth) {
        (true, true) => c.tp += 1,
        (true, false) => c.fp += 1,
        (false, true) => c.fn_ += 1,
        (false, false) => c.tn += 1,
    };
    for p in pairs {
        for (a, b) in p.predicted.iter().zip(&p.reference) {
            let (pc, rc) = (classify(*a, th), classify(*b, th));
            tally(&mut abnormal, pc != GlycemicClass::Normal, rc != GlycemicClass::Normal);
            tally(&mut hypo, pc == GlycemicClass::Hypo, rc == GlycemicClass::Hypo);
            tally(&mut hyper, pc == GlycemicClass::Hyper, rc == GlycemicClass::Hyper);
        }
    }
    ClassificationReport {
        abnormal: abnormal.scores(),
        hypo: hypo.scores(),
        hyper: hyper.scores(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    C,
    D,
    E,
}

/// Clarke error-grid zone for one (reference, predicted) point in mg/dL.
pub fn clarke_zone<T: Real>(reference: T, predicted: T) -> Zone {
    let (r, p) = (reference.as_f64(), predicted.as_f64());
    if (r <= 70.0 && p <= 70.0) || (p <= 1.2 * r && p >= 0.8 * r) {
        Zone::A
    } else if (r >= 180.0 && p <= 70.0) || (r <= 70.0 && p >= 180.0) {
        Zone::E
    } else if ((70.0..=290.0).contains(&r) && p >= r + 110.0)
        || ((130.0..=180.0).contains(&r) && p <= 7.0 / 5.0 * r - 182.0)
    {
        Zone::C
    } else if (r >= 240.0 && (70.0..=180.0).contains(&p))
        || (r <= 175.0 / 3.0 && (70.0..=180.0).contains(&p))
        || ((175.0 / 3.0..=70.0).contains(&r) && p >= 6.0 / 5.0 * r)
    {
        Zone::D
    } else {
        Zone::B
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneProportions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl ZoneProportions {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c + self.d + self.e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSummary {
    pub zones: Vec<Zone>,
    pub counts: [usize; 5],
    pub proportions: ZoneProportions,
}

pub fn clarke_zones<T: Real>(pairs: &[ForecastPair<T>]) -> ZoneSummary {
    let zones: Vec<Zone> = pairs
        .iter()
        .flat_map(|p| p.reference.iter().zip(&p.predicted).map(|(r, q)| clarke_zone(*r, *q)))
        .collect();
    let mut counts = [0usize; 5];
    for z in &zones {
        counts[*z as usize] += 1;
    }
    let n = zones.len().max(1) as f64;
    let f = |i: usize| counts[i] as f64 / n;
    ZoneSummary {
        proportions: ZoneProportions {
            a: f(0),
            b: f(1),
            c: f(2),
            d: f(3),
            e: f(4),
        },
        zones,
        counts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population s.d. across the contributing folds.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            sd: var.sqrt(),
            n: xs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_examples: usize,
    pub n_points: usize,
    pub rmse: f64,
    /// Mean over pairs with a defined ESOD.
    pub esod_n: Option<f64>,
    pub esod_undefined: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub classification: ClassificationReport,
    pub zones: ZoneProportions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rmse: MeanSd,
    pub esod_n: Option<MeanSd>,
    pub precision: Option<MeanSd>,
    pub recall: Option<MeanSd>,
    pub f1: Option<MeanSd>,
    /// RMSE over every test point of every fold.
    pub pooled_rmse: f64,
    pub esod_undefined: usize,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Window step used for the test examples.
    pub test_step: usize,
    pub cohort: String,
    pub error_grid: String,
    pub spread: String,
}

impl Protocol {
    pub fn new(test_step: usize, cohort: impl Into<String>) -> Self {
        Self {
            test_step,
            cohort: cohort.into(),
            error_grid: "clarke zones A-E (stand-in for the surveillance error grid)".into(),
            spread: "population s.d. across folds".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: Protocol,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: Aggregate,
}

/// Forecasts every example in order. Runs in parallel; output order is stable.
pub fn forecast_pairs<T: Real, F: Forecaster<T> + ?Sized>(model: &F, examples: &[Example]) -> Result<Vec<ForecastPair<T>>> {
    examples
        .par_iter()
        .map(|e| {
            let input: Vec<T> = e.input.iter().map(|v| T::of(*v)).collect();
            let reference: Vec<T> = e.target.iter().map(|v| T::of(*v)).collect();
            let predicted = model.forecast(&input)?;
            if predicted.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "{} produced a non-finite forecast for sequence {} offset {}",
                    model.name(),
                    e.source_sequence_id,
                    e.offset
                )));
            }
            ForecastPair::new(predicted, reference)
        })
        .collect()
}

pub fn fold_metrics<T: Real>(fold: usize, pairs: &[ForecastPair<T>], th: Thresholds) -> Result<FoldMetrics> {
    let rmse = rmse(pairs)?.as_f64();
    let mut esods = Vec::new();
    let mut undefined = 0;
    for p in pairs {
        match esod_n(p)? {
            Some(v) => esods.push(v.as_f64()),
            None => undefined += 1,
        }
    }
    let classification = prf1(pairs, th);
    let a = classification.abnormal;
    Ok(FoldMetrics {
        fold,
        n_examples: pairs.len(),
        n_points: pairs.iter().map(|p| p.horizon()).sum(),
        rmse,
        esod_n: (!esods.is_empty()).then(|| esods.iter().sum::<f64>() / esods.len() as f64),
        esod_undefined: undefined,
        precision: a.precision,
        recall: a.recall,
        f1: a.f1,
        zones: clarke_zones(pairs).proportions,
        classification,
    })
}

/// Mean and s.d. across folds. The pooled RMSE is rebuilt from each fold's RMSE and point count.
pub fn aggregate(folds: &[FoldMetrics]) -> Result<Aggregate> {
    let rmses: Vec<f64> = folds.iter().map(|f| f.rmse).collect();
    let rmse = MeanSd::of(&rmses).ok_or_else(|| Error::InsufficientData("no folds to aggregate".into()))?;
    let collect = |get: fn(&FoldMetrics) -> Option<f64>| -> Option<MeanSd> {
        MeanSd::of(&folds.iter().filter_map(get).collect::<Vec<_>>())
    };
    let points: usize = folds.iter().map(|f| f.n_points).sum();
    let sq: f64 = folds.iter().map(|f| f.rmse * f.rmse * f.n_points as f64).sum();
    Ok(Aggregate {
        rmse,
        esod_n: collect(|f| f.esod_n),
        precision: collect(|f| f.precision),
        recall: collect(|f| f.recall),
        f1: collect(|f| f.f1),
        pooled_rmse: (sq / points.max(1) as f64).sqrt(),
        esod_undefined: folds.iter().map(|f| f.esod_undefined).sum(),
        n_examples: folds.iter().map(|f| f.n_examples).sum(),
    })
}

/// One fold's test examples together with the model trained on that fold.
pub struct FoldInput<'a, T> {
    pub fold: usize,
    pub test: &'a [Example],
    pub model: Option<&'a dyn Forecaster<T>>,
}

pub fn evaluate<T: Real>(name: &str, folds: &[FoldInput<T>], protocol: Protocol, th: Thresholds) -> Result<EvalReport> {
    let mut metrics = Vec::with_capacity(folds.len());
    for f in folds {
        let model = f
            .model
            .ok_or_else(|| Error::InsufficientData(format!("no {name} model for fold {}", f.fold)))?;
        let pairs = forecast_pairs(model, f.test)?;
        metrics.push(fold_metrics(f.fold, &pairs, th)?);
    }
    Ok(EvalReport {
        model: name.to_string(),
        protocol,
        aggregate: aggregate(&metrics)?,
        folds: metrics,
    })
}

/// Flat `model,fold,metric,value` rows; undefined values are left empty.
pub fn flat_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model,fold,metric,value\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        for f in &r.folds {
            let rows: [(&str, Option<f64>); 10] = [
                ("rmse", Some(f.rmse)),
                ("esod_n", f.esod_n),
                ("precision", f.precision),
                ("recall", f.recall),
                ("f1", f.f1),
                ("zone_a", Some(f.zones.a)),
                ("zone_b", Some(f.zones.b)),
                ("zone_c", Some(f.zones.c)),
                ("zone_d", Some(f.zones.d)),
                ("zone_e", Some(f.zones.e)),
            ];
            for (name, v) in rows {
                let _ = writeln!(out, "{},{},{},{}", r.model, f.fold, name, cell(v));
            }
        }
    }
    out
}
