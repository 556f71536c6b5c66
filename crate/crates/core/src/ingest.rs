//! CSV ingestion, corpus statistics and a seeded synthetic corpus generator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ContiguousSequence, GlucoseReading, Hba1c, PatientRecord, Sex};

pub const CGM_HEADER: [&str; 3] = ["patient_id", "timestamp", "glucose_mgdl"];
pub const PATIENT_HEADER: [&str; 9] = [
    "patient_id",
    "age",
    "weight_kg",
    "height_cm",
    "hba1c",
    "hba1c_unit",
    "annual_income_usd",
    "education_level",
    "sex",
];
pub const DEFAULT_MAX_MALFORMED: f64 = 0.01;
pub const SLOTS_PER_DAY: usize = 288;
const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Sorted by `(patient_id, timestamp)`, no duplicate pairs.
    pub readings: Vec<GlucoseReading>,
    pub patients: Vec<PatientRecord>,
}

impl Corpus {
    /// Sorts and deduplicates readings. Returns the number of duplicates removed.
    ///
    /// Duplicate `(patient_id, timestamp)` pairs keep the smallest value, so the
    /// result does not depend on input row order.
    pub fn normalize(&mut self) -> usize {
        self.readings.sort_by(|a, b| {
            a.patient_id
                .cmp(&b.patient_id)
                .then(a.timestamp.cmp(&b.timestamp))
                .then(a.value.total_cmp(&b.value))
        });
        let before = self.readings.len();
        self.readings
            .dedup_by(|b, a| a.patient_id == b.patient_id && a.timestamp == b.timestamp);
        self.patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        before - self.readings.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().map(|r| r.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file; the header is line 1.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: Vec<RejectedRow>,
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(|s| s.trim().trim_start_matches('\u{feff}')).collect();
    if found != expected {
        return Err(Error::Parse(format!(
            "bad header {:?}, expected {:?}",
            found.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn reject_if_too_many(report: &ParseReport, max_fraction: f64) -> Result<()> {
    if report.rows == 0 {
        return Ok(());
    }
    let frac = report.rejected.len() as f64 / report.rows as f64;
    if frac > max_fraction {
        let lines: Vec<String> = report.rejected.iter().map(|r| r.line.to_string()).collect();
        return Err(Error::Parse(format!(
            "{} of {} rows malformed ({:.2}% > {:.2}%), lines {}",
            report.rejected.len(),
            report.rows,
            100.0 * frac,
            100.0 * max_fraction,
            lines.join(",")
        )));
    }
    Ok(())
}

fn parse_cgm_row(rec: &csv::StringRecord) -> Result<GlucoseReading> {
    if rec.len() != 3 {
        return Err(Error::Parse(format!("expected 3 fields, got {}", rec.len())));
    }
    let pid = rec[0].trim();
    if pid.is_empty() {
        return Err(Error::Parse("empty patient_id".into()));
    }
    let ts: i64 = rec[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad timestamp {:?}", &rec[1])))
        .and_then(|t| {
            if t.is_finite() {
                Ok(t.floor() as i64)
            } else {
                Err(Error::Parse(format!("bad timestamp {:?}", &rec[1])))
            }
        })?;
    let v: f64 = rec[2]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad glucose {:?}", &rec[2])))?;
    GlucoseReading::new(pid, ts, v)
}

/// Parses CGM rows from any reader. Malformed rows are listed in the report;
/// more than `max_malformed` (fraction of rows) is a hard error.
pub fn read_cgm_csv<R: Read>(reader: R, max_malformed: f64) -> Result<(Vec<GlucoseReading>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    check_header(&header, &CGM_HEADER)?;

    let mut report = ParseReport::default();
    let mut corpus = Corpus::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        report.rows += 1;
        let parsed = rec
            .map_err(|e| Error::Parse(e.to_string()))
            .and_then(|r| parse_cgm_row(&r));
        match parsed {
            Ok(r) => corpus.readings.push(r),
            Err(e) => report.rejected.push(RejectedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }
    reject_if_too_many(&report, max_malformed)?;
    report.duplicates = corpus.normalize();
    report.accepted = corpus.readings.len();
    Ok((corpus.readings, report))
}

pub fn parse_cgm_csv(path: &Path, max_malformed: f64) -> Result<(Vec<GlucoseReading>, ParseReport)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cgm_csv(std::io::BufReader::new(f), max_malformed)
}

fn opt_f64(s: &str, name: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("non-finite {name}")));
    }
    Ok(Some(v))
}

fn parse_patient_row(rec: &csv::StringRecord) -> Result<PatientRecord> {
    if rec.len() != PATIENT_HEADER.len() {
        return Err(Error::Parse(format!(
            "expected {} fields, got {}",
            PATIENT_HEADER.len(),
            rec.len()
        )));
    }
    let pid = rec[0].trim();
    if pid.is_empty() {
        return Err(Error::Parse("empty patient_id".into()));
    }
    let hba1c = opt_f64(&rec[4], "hba1c")?.map(|value| Hba1c {
        value,
        unit: rec[5].trim().to_string(),
    });
    let education_level = match rec[7].trim() {
        "" => None,
        s => Some(
            s.parse::<i64>()
                .map_err(|_| Error::Parse(format!("bad education_level {s:?}")))?,
        ),
    };
    let sex = match rec[8].trim() {
        "" => None,
        s => Some(s.parse::<Sex>()?),
    };
    Ok(PatientRecord {
        patient_id: pid.to_string(),
        age: opt_f64(&rec[1], "age")?,
        weight_kg: opt_f64(&rec[2], "weight_kg")?,
        height_cm: opt_f64(&rec[3], "height_cm")?,
        hba1c,
        annual_income_usd: opt_f64(&rec[6], "annual_income_usd")?,
        education_level,
        sex,
    })
}

pub fn read_patient_csv<R: Read>(reader: R, max_malformed: f64) -> Result<(Vec<PatientRecord>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    check_header(&header, &PATIENT_HEADER)?;
    let mut report = ParseReport::default();
    let mut out: Vec<PatientRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        report.rows += 1;
        let parsed = rec
            .map_err(|e| Error::Parse(e.to_string()))
            .and_then(|r| parse_patient_row(&r));
        match parsed {
            Ok(p) => out.push(p),
            Err(e) => report.rejected.push(RejectedRow {
                line: i + 2,
                reason: e.to_string(),
            }),
        }
    }
    reject_if_too_many(&report, max_malformed)?;
    out.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let before = out.len();
    out.dedup_by(|b, a| a.patient_id == b.patient_id);
    report.duplicates = before - out.len();
    report.accepted = out.len();
    Ok((out, report))
}

pub fn parse_patient_csv(path: &Path, max_malformed: f64) -> Result<(Vec<PatientRecord>, ParseReport)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_patient_csv(std::io::BufReader::new(f), max_malformed)
}

pub fn write_cgm_csv<W: Write>(writer: W, readings: &[GlucoseReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CGM_HEADER).map_err(csv_err)?;
    for r in readings {
        w.write_record([r.patient_id.as_str(), &r.timestamp.to_string(), &r.value.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_patient_csv<W: Write>(writer: W, patients: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(PATIENT_HEADER).map_err(csv_err)?;
    for p in patients {
        let sex = match p.sex {
            Some(Sex::Female) => "female",
            Some(Sex::Male) => "male",
            Some(Sex::Other) => "other",
            None => "",
        };
        w.write_record([
            p.patient_id.clone(),
            opt(p.age),
            opt(p.weight_kg),
            opt(p.height_cm),
            opt(p.hba1c.as_ref().map(|h| h.value)),
            p.hba1c.as_ref().map(|h| h.unit.clone()).unwrap_or_default(),
            opt(p.annual_income_usd),
            p.education_level.map(|e| e.to_string()).unwrap_or_default(),
            sex.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Summary statistics; `sd` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn value_stats(values: &[f64]) -> Result<CorpusStats> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "statistics need at least 2 readings, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(CorpusStats {
        mean,
        sd: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count: values.len(),
    })
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    let values: Vec<f64> = corpus.values().collect();
    value_stats(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    /// Slot start, minutes after midnight UTC.
    pub minute: u32,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub count: usize,
}

/// Mean and population s.d. of readings per 5-minute slot of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyProfile {
    pub bins: Vec<ProfileBin>,
}

impl DailyProfile {
    /// Populated slot with the lowest mean.
    pub fn min_slot(&self) -> Option<&ProfileBin> {
        self.bins
            .iter()
            .filter(|b| b.mean.is_some())
            .min_by(|a, b| a.mean.unwrap().total_cmp(&b.mean.unwrap()))
    }

    pub fn max_slot(&self) -> Option<&ProfileBin> {
        self.bins
            .iter()
            .filter(|b| b.mean.is_some())
            .max_by(|a, b| a.mean.unwrap().total_cmp(&b.mean.unwrap()))
    }
}

pub fn time_slot(timestamp: i64) -> usize {
    (timestamp.rem_euclid(SECONDS_PER_DAY) / 300) as usize
}

pub fn daily_profile(readings: &[GlucoseReading]) -> DailyProfile {
    let mut sum = [0.0_f64; SLOTS_PER_DAY];
    let mut count = [0_usize; SLOTS_PER_DAY];
    for r in readings {
        let s = time_slot(r.timestamp);
        sum[s] += r.value;
        count[s] += 1;
    }
    let mut sq = [0.0_f64; SLOTS_PER_DAY];
    for r in readings {
        let s = time_slot(r.timestamp);
        let m = sum[s] / count[s] as f64;
        sq[s] += (r.value - m).powi(2);
    }
    let bins = (0..SLOTS_PER_DAY)
        .map(|s| {
            let n = count[s];
            let (mean, sd) = if n == 0 {
                (None, None)
            } else {
                (Some(sum[s] / n as f64), Some((sq[s] / n as f64).sqrt()))
            };
            ProfileBin {
                minute: (s * 5) as u32,
                mean,
                sd,
                count: n,
            }
        })
        .collect();
    DailyProfile { bins }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    /// Exact sequence length → number of sequences.
    pub counts: BTreeMap<usize, usize>,
    pub total: usize,
    pub threshold: usize,
    pub at_least_threshold: usize,
    /// `None` for an empty input.
    pub fraction_at_least: Option<f64>,
}

impl LengthHistogram {
    /// Regroups lengths into buckets `[k*width, (k+1)*width)`, keyed by bucket start.
    pub fn bucketed(&self, width: usize) -> BTreeMap<usize, usize> {
        let width = width.max(1);
        let mut out = BTreeMap::new();
        for (&len, &n) in &self.counts {
            *out.entry(len / width * width).or_insert(0) += n;
        }
        out
    }
}

pub fn sequence_length_histogram(sequences: &[ContiguousSequence], threshold: usize) -> LengthHistogram {
    let mut counts = BTreeMap::new();
    for s in sequences {
        *counts.entry(s.len()).or_insert(0) += 1;
    }
    let at_least = sequences.iter().filter(|s| s.len() >= threshold).count();
    LengthHistogram {
        counts,
        total: sequences.len(),
        threshold,
        at_least_threshold: at_least,
        fraction_at_least: (!sequences.is_empty()).then(|| at_least as f64 / sequences.len() as f64),
    }
}

/// Generator calibration. Values are a test fixture, not a physiological model.
mod synth {
    /// 2019-01-01T00:00:00Z.
    pub const START: i64 = 1_546_300_800;
    pub const BASELINE: f64 = 204.56;
    pub const DAILY_AMPLITUDE: f64 = 13.0;
    /// Minutes after midnight of the daily trough and peak.
    pub const TROUGH_MIN: f64 = 7.0 * 60.0 + 5.0;
    pub const PEAK_MIN: f64 = 21.0 * 60.0 + 40.0;
    pub const MEAL_TIMES_MIN: [f64; 3] = [7.5 * 60.0, 12.5 * 60.0, 19.0 * 60.0];
    pub const MEAL_JITTER_MIN: f64 = 35.0;
    pub const MEAL_PEAK_MIN: f64 = 55.0;
    pub const AR_PHI: f64 = 0.998;
    pub const AR_SD: f64 = 80.0;
    /// Blood-to-interstitial diffusion and sensor filtering, modelled as two
    /// first-order stages that each keep this share of their previous output
    /// (about an 11-minute time constant per stage at 5-minute sampling).
    pub const SENSOR_LAG: f64 = 0.65;
    pub const PATIENT_OFFSET_SD: f64 = 30.0;
    pub const CLIP_LO: f64 = 40.0;
    pub const CLIP_HI: f64 = 600.0;
}

fn daily_shape(minute_of_day: f64) -> f64 {
    use std::f64::consts::PI;
    use synth::{PEAK_MIN, TROUGH_MIN};
    let rise = PEAK_MIN - TROUGH_MIN;
    let fall = 1440.0 - rise;
    let since_trough = (minute_of_day - TROUGH_MIN).rem_euclid(1440.0);
    if since_trough <= rise {
        -(PI * since_trough / rise).cos()
    } else {
        (PI * (since_trough - rise) / fall).cos()
    }
}

fn meal_bump(minutes_since: f64) -> f64 {
    if minutes_since < 0.0 {
        return 0.0;
    }
    let r = minutes_since / synth::MEAL_PEAK_MIN;
    r * (1.0 - r).exp()
}

/// Latent cohort parameters: (hba1c %, income USD, glucose offset mg/dL).
const SYNTH_COHORTS: [(f64, f64, f64); 3] = [(6.6, 92_000.0, -25.0), (8.0, 56_000.0, 0.0), (9.6, 24_000.0, 30.0)];

/// Seeded synthetic CGM corpus on a 5-minute grid with meals, a daily rhythm,
/// AR(1) drift and heavy-tailed dropout gaps.
pub fn synth_corpus(n_patients: usize, days: usize, seed: u64) -> Result<Corpus> {
    if n_patients == 0 || days == 0 {
        return Err(Error::InvalidValue("synth_corpus needs at least 1 patient and 1 day".into()));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation_sd = synth::AR_SD * (1.0 - synth::AR_PHI * synth::AR_PHI).sqrt();
    let steps = days * SLOTS_PER_DAY;
    let mut corpus = Corpus::default();

    for p in 0..n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64 + 1);
        let pid = format!("P{p:04}");
        let cohort = p % SYNTH_COHORTS.len();
        let (hba1c, income, cohort_offset) = SYNTH_COHORTS[cohort];

        let offset = cohort_offset + synth::PATIENT_OFFSET_SD * std_normal.sample(&mut rng);
        let meal_gain = rng.gen_range(0.6..1.4);

        let mut meals: Vec<(f64, f64)> = Vec::new();
        for d in 0..days {
            for &t in &synth::MEAL_TIMES_MIN {
                let at = d as f64 * 1440.0 + t + synth::MEAL_JITTER_MIN * std_normal.sample(&mut rng);
                let size = meal_gain * rng.gen_range(40.0..130.0);
                meals.push((at, size));
            }
        }

        let mut ar = synth::AR_SD * std_normal.sample(&mut rng);
        let mut values = Vec::with_capacity(steps);
        let mut sensed = 0.0;
        let mut interstitial = 0.0;
        for k in 0..steps {
            let minute = k as f64 * 5.0;
            ar = synth::AR_PHI * ar + innovation_sd * std_normal.sample(&mut rng);
            let meal: f64 = meals
                .iter()
                .filter(|(at, _)| minute >= *at && minute - *at < 6.0 * 60.0)
                .map(|(at, size)| size * meal_bump(minute - at))
                .sum();
            let v = synth::BASELINE
                + offset
                + synth::DAILY_AMPLITUDE * daily_shape(minute.rem_euclid(1440.0))
                + meal
                + ar
                - 35.0 * meal_gain;
            let lag = synth::SENSOR_LAG;
            if k == 0 {
                (interstitial, sensed) = (v, v);
            } else {
                interstitial = lag * interstitial + (1.0 - lag) * v;
                sensed = lag * sensed + (1.0 - lag) * interstitial;
            }
            values.push(((sensed.clamp(synth::CLIP_LO, synth::CLIP_HI)) * 10.0).round() / 10.0);
        }

        // Dropouts: heavy-tailed run lengths separated by splitting gaps; a few
        // single missing readings (10-minute gaps) stay inside one run.
        let mut k = 0usize;
        while k < steps {
            let u: f64 = rng.gen_range(1e-4..1.0);
            let run = ((12.0 * u.powf(-1.0 / 1.1)).ceil() as usize).min(steps - k);
            for j in k..k + run {
                if j > k && j + 1 < k + run && rng.gen_bool(0.01) {
                    continue;
                }
                corpus.readings.push(GlucoseReading {
                    patient_id: pid.clone(),
                    timestamp: synth::START + 300 * j as i64,
                    value: values[j],
                });
            }
            k += run + rng.gen_range(4..36);
        }

        let height: f64 = rng.gen_range(155.0..195.0);
        corpus.patients.push(PatientRecord {
            patient_id: pid,
            age: Some(rng.gen_range(18.0_f64..75.0).round()),
            weight_kg: Some((rng.gen_range(55.0..110.0_f64) * 10.0).round() / 10.0),
            height_cm: Some(height.round()),
            hba1c: Some(Hba1c {
                value: ((hba1c + 0.35 * std_normal.sample(&mut rng)) * 100.0).round() / 100.0,
                unit: "%".into(),
            }),
            annual_income_usd: Some((income + 7_000.0 * std_normal.sample(&mut rng)).round()),
            education_level: Some(rng.gen_range(1..=5)),
            sex: Some(if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male }),
        });
    }
    corpus.normalize();
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::segment;

    fn cgm(text: &str) -> Result<(Vec<GlucoseReading>, ParseReport)> {
        read_cgm_csv(text.as_bytes(), DEFAULT_MAX_MALFORMED)
    }

    #[test]
    fn parses_and_sorts_rows() {
        let (r, rep) = cgm("patient_id,timestamp,glucose_mgdl\np1,1300,190.0\np1,1000,180.0\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].timestamp, 1000);
        assert_eq!(r[1].value, 190.0);
        assert_eq!(rep.rejected.len(), 0);
    }

    #[test]
    fn accepts_crlf() {
        let (r, _) = cgm("patient_id,timestamp,glucose_mgdl\r\np1,1000,180\r\np1,1300,181\r\n").unwrap();
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn header_only_is_empty() {
        let (r, rep) = cgm("patient_id,timestamp,glucose_mgdl\n").unwrap();
        assert!(r.is_empty());
        assert_eq!(rep.rejected.len(), 0);
    }

    #[test]
    fn malformed_row_is_reported() {
        let mut text = String::from("patient_id,timestamp,glucose_mgdl\n");
        for i in 0..200 {
            text.push_str(&format!("p1,{},150\n", 1000 + 300 * i));
        }
        text.push_str("p1,999999,abc\n");
        let (r, rep) = cgm(&text).unwrap();
        assert_eq!(r.len(), 200);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 202);
    }

    #[test]
    fn too_many_malformed_rows_is_fatal() {
        let err = cgm("patient_id,timestamp,glucose_mgdl\np1,1000,abc\np1,1300,150\n").unwrap_err();
        assert!(err.to_string().contains("lines 2"), "{err}");
    }

    #[test]
    fn bad_header_is_fatal() {
        assert!(cgm("pid,ts,value\np1,1000,150\n").is_err());
    }

    #[test]
    fn duplicates_are_removed_order_independently() {
        let a = cgm("patient_id,timestamp,glucose_mgdl\np1,1000,150\np1,1000,140\np2,5,100\n").unwrap();
        let b = cgm("patient_id,timestamp,glucose_mgdl\np2,5,100\np1,1000,140\np1,1000,150\n").unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.duplicates, 1);
        assert_eq!(a.0[0].value, 140.0);
    }

    #[test]
    fn patient_csv_keeps_missing_cells() {
        let text = "patient_id,age,weight_kg,height_cm,hba1c,hba1c_unit,annual_income_usd,education_level,sex\n\
                    a,30,70,175,7.1,%,50000,3,female\n\
                    b,,,,,,,,\n";
        let (p, rep) = read_patient_csv(text.as_bytes(), 0.5).unwrap();
        assert_eq!(rep.rejected.len(), 0);
        assert_eq!(p[0].hba1c.as_ref().unwrap().unit, "%");
        assert_eq!(p[0].sex, Some(Sex::Female));
        assert_eq!(p[1], PatientRecord { patient_id: "b".into(), ..Default::default() });
    }

    #[test]
    fn patient_csv_round_trip() {
        let corpus = synth_corpus(4, 1, 3).unwrap();
        let mut buf = Vec::new();
        write_patient_csv(&mut buf, &corpus.patients).unwrap();
        let (back, _) = read_patient_csv(buf.as_slice(), 0.0).unwrap();
        assert_eq!(back, corpus.patients);
    }

    #[test]
    fn stats_examples() {
        let s = value_stats(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!((s.mean, s.sd), (100.0, 0.0));
        let s = value_stats(&[90.0, 110.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.min, s.max, s.count), (100.0, 10.0, 90.0, 110.0, 2));
        assert!(matches!(value_stats(&[1.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn profile_examples() {
        let day = 86_400;
        let p = daily_profile(&[GlucoseReading::new("p", 10 * day + 120, 150.0).unwrap()]);
        assert_eq!(p.bins.len(), SLOTS_PER_DAY);
        assert_eq!(p.bins[0].count, 1);
        assert_eq!(p.bins.iter().filter(|b| b.count == 0).count(), 287);

        let t705 = 7 * 3600 + 5 * 60;
        let p = daily_profile(&[
            GlucoseReading::new("p", 3 * day + t705, 190.0).unwrap(),
            GlucoseReading::new("p", 4 * day + t705 + 10, 194.0).unwrap(),
        ]);
        let slot = &p.bins[t705 as usize / 300];
        assert_eq!(slot.minute, 425);
        assert_eq!(slot.mean, Some(192.0));
        assert_eq!(slot.sd, Some(2.0));
    }

    #[test]
    fn profile_counts_sum_to_readings() {
        let corpus = synth_corpus(2, 2, 5).unwrap();
        let p = daily_profile(&corpus.readings);
        assert_eq!(p.bins.iter().map(|b| b.count).sum::<usize>(), corpus.readings.len());
    }

    #[test]
    fn histogram_examples() {
        let seq = |n| ContiguousSequence {
            patient_id: "p".into(),
            start_timestamp: 1,
            values: vec![100.0; n],
        };
        let h = sequence_length_histogram(&[seq(10), seq(150), seq(150)], 144);
        assert_eq!(h.counts[&150], 2);
        assert_eq!(h.at_least_threshold, 2);
        assert!((h.fraction_at_least.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.bucketed(100)[&100], 2);

        let h = sequence_length_histogram(&[], 144);
        assert!(h.counts.is_empty());
        assert_eq!(h.fraction_at_least, None);
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(synth_corpus(1, 1, 7).unwrap(), synth_corpus(1, 1, 7).unwrap());
        assert_ne!(synth_corpus(1, 1, 7).unwrap(), synth_corpus(1, 1, 8).unwrap());
    }

    #[test]
    fn synth_respects_clipping() {
        let c = synth_corpus(1, 1, 1).unwrap();
        assert!(!c.readings.is_empty());
        assert!(c.values().all(|v| (40.0..=600.0).contains(&v)));
    }

    #[test]
    fn synth_matches_calibration_targets() {
        let c = synth_corpus(20, 30, 1).unwrap();
        let s = corpus_stats(&c).unwrap();
        assert!((s.mean - 204.56).abs() <= 25.0, "mean {}", s.mean);
        assert!((s.sd - 87.0).abs() <= 30.0, "sd {}", s.sd);
        let seqs = segment(&c.readings, 900).unwrap();
        let h = sequence_length_histogram(&seqs, 144);
        // heavy tail: many short runs, a minority of long ones
        assert!(h.total > 100);
        let frac = h.fraction_at_least.unwrap();
        assert!(frac > 0.05 && frac < 0.8, "fraction {frac}");
    }

    #[test]
    fn synth_rejects_empty_request() {
        assert!(synth_corpus(0, 1, 1).is_err());
        assert!(synth_corpus(1, 0, 1).is_err());
    }
}
