use std::path::Path;

use glyco::ingest::{
    corpus_stats, daily_profile, parse_cgm_csv, parse_patient_csv, sequence_length_histogram, synth_corpus,
    write_cgm_csv, write_patient_csv, Corpus, CorpusStats, LengthHistogram, ParseReport, ProfileBin,
};
use glyco::pipeline::{segment, window_count};
use glyco::stats::{correlation_matrix, covariance_matrix, gmm_assign, gmm_fit, variance_threshold, GmmOptions};
use glyco::units::PatientRecord;
use glyco::{Features, Gmm};
use serde::Serialize;

use super::Context;
use crate::error::{CliError, CliResult};
use crate::output::{csv_string, Outputs};
use crate::workspace::{self, COHORTS, CORPUS};

fn write_corpus(out: &mut Outputs, corpus: &Corpus) -> CliResult<()> {
    let text = serde_json::to_string(corpus)?;
    out.write(CORPUS, text.as_bytes())?;
    Ok(())
}

pub fn synth(ctx: &Context, patients: usize, days: usize) -> CliResult<()> {
    let mut corpus = synth_corpus(patients, days, ctx.cfg.seed)?;
    corpus.normalize();
    let mut out = Outputs::new(&ctx.dir)?;
    let mut cgm = Vec::new();
    write_cgm_csv(&mut cgm, &corpus.readings)?;
    out.write("cgm.csv", &cgm)?;
    let mut pat = Vec::new();
    write_patient_csv(&mut pat, &corpus.patients)?;
    out.write("patients.csv", &pat)?;
    write_corpus(&mut out, &corpus)?;
    ctx.say(&format!(
        "synthesized {} readings for {} patients over {days} days",
        corpus.readings.len(),
        corpus.patients.len()
    ));
    out.commit();
    Ok(())
}

#[derive(Serialize)]
struct IngestReport<'a> {
    cgm: &'a ParseReport,
    patients: Option<&'a ParseReport>,
    readings: usize,
    patient_records: usize,
    duplicates_removed: usize,
}

pub fn ingest(ctx: &Context, cgm: &Path, patients: Option<&Path>) -> CliResult<()> {
    let (readings, mut cgm_report) = parse_cgm_csv(cgm, ctx.cfg.max_malformed)?;
    let (records, pat_report) = match patients {
        Some(p) => {
            let (r, rep) = parse_patient_csv(p, ctx.cfg.max_malformed)?;
            (r, Some(rep))
        }
        None => (Vec::new(), None),
    };
    let mut corpus = Corpus {
        readings,
        patients: records,
    };
    let dups = corpus.normalize();
    cgm_report.duplicates += dups;
    if corpus.readings.is_empty() {
        return Err(CliError::data(format!("{} contains no valid readings", cgm.display())));
    }
    let mut out = Outputs::new(&ctx.dir)?;
    write_corpus(&mut out, &corpus)?;
    out.write_json(
        "ingest_report.json",
        &IngestReport {
            cgm: &cgm_report,
            patients: pat_report.as_ref(),
            readings: corpus.readings.len(),
            patient_records: corpus.patients.len(),
            duplicates_removed: dups,
        },
    )?;
    ctx.say(&format!(
        "ingested {} readings ({} rejected rows, {dups} duplicates) and {} patients",
        corpus.readings.len(),
        cgm_report.rejected.len(),
        corpus.patients.len()
    ));
    out.commit();
    Ok(())
}

#[derive(Serialize)]
struct SequenceSummary {
    sequences: usize,
    /// Sequences long enough for one full window.
    at_least_one_window: usize,
    /// Non-overlapping full windows over all sequences.
    non_overlapping_windows: usize,
    length_histogram: LengthHistogram,
}

#[derive(Serialize)]
struct FeatureSummary {
    names: Vec<String>,
    patients_used: usize,
    patients_excluded: usize,
    variances: Vec<f64>,
    /// Row-major, names × names.
    covariance: Vec<f64>,
    correlation: Vec<f64>,
    variance_tau: f64,
    selected: Vec<String>,
}

#[derive(Serialize)]
struct StatsReport<'a> {
    config: &'a crate::config::RunConfig,
    readings: CorpusStats,
    patients: usize,
    daily_min: Option<ProfileBin>,
    daily_max: Option<ProfileBin>,
    sequences: SequenceSummary,
    features: Option<FeatureSummary>,
}

fn feature_summary(patients: &[PatientRecord], tau: f64) -> CliResult<Option<FeatureSummary>> {
    // Features nobody has would exclude every patient; keep the ones present for someone.
    let names: Vec<&str> = PatientRecord::FEATURES
        .iter()
        .copied()
        .filter(|f| patients.iter().any(|p| p.feature(f).is_some()))
        .collect();
    if names.is_empty() {
        return Ok(None);
    }
    let (m, excluded): (Features, usize) = Features::from_patients(patients, &names)?;
    if m.rows() < 2 {
        return Ok(None);
    }
    Ok(Some(FeatureSummary {
        names: m.feature_names.clone(),
        patients_used: m.rows(),
        patients_excluded: excluded,
        variances: m.column_variances(),
        covariance: covariance_matrix(&m)?,
        correlation: correlation_matrix(&m)?,
        variance_tau: tau,
        selected: variance_threshold(&m, tau),
    }))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn stats(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let corpus = workspace::load_corpus(&ctx.dir)?;
    let profile = daily_profile(&corpus.readings);
    let seqs = segment(&corpus.readings, cfg.max_gap_s)?;
    let total = cfg.window.total;
    let report = StatsReport {
        config: cfg,
        readings: corpus_stats(&corpus)?,
        patients: corpus.patients.len(),
        daily_min: profile.min_slot().copied(),
        daily_max: profile.max_slot().copied(),
        sequences: SequenceSummary {
            sequences: seqs.len(),
            at_least_one_window: seqs.iter().filter(|s| s.len() >= total).count(),
            non_overlapping_windows: seqs.iter().map(|s| window_count(s.len(), total, total)).sum(),
            length_histogram: sequence_length_histogram(&seqs, total),
        },
        features: feature_summary(&corpus.patients, cfg.variance_tau)?,
    };
    let mut out = Outputs::new(&ctx.dir)?;
    out.write_json("stats.json", &report)?;
    let profile_csv = csv_string(
        &["minute", "mean", "sd", "count"],
        profile
            .bins
            .iter()
            .map(|b| vec![b.minute.to_string(), opt(b.mean), opt(b.sd), b.count.to_string()]),
    )?;
    out.write("daily_profile.csv", profile_csv.as_bytes())?;
    let hist_csv = csv_string(
        &["length", "count"],
        report
            .sequences
            .length_histogram
            .counts
            .iter()
            .map(|(l, n)| vec![l.to_string(), n.to_string()]),
    )?;
    out.write("length_histogram.csv", hist_csv.as_bytes())?;
    ctx.say(&format!(
        "{} readings, mean {:.2} sd {:.2}; {} sequences, {} with a full window",
        report.readings.count,
        report.readings.mean,
        report.readings.sd,
        report.sequences.sequences,
        report.sequences.at_least_one_window
    ));
    out.commit();
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    config: &'a crate::config::RunConfig,
    features: &'a [String],
    normalized: bool,
    patients_clustered: usize,
    patients_excluded: Vec<String>,
    cohort_sizes: Vec<usize>,
    model: &'a Gmm,
}

pub fn cluster(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let corpus = workspace::load_corpus(&ctx.dir)?;
    let names: Vec<&str> = cfg.gmm.features.iter().map(String::as_str).collect();
    let (raw, _) = Features::from_patients(&corpus.patients, &names)?;
    if raw.rows() < cfg.gmm.k {
        return Err(CliError::data(format!(
            "{} patients have all of {:?}; need at least {} to cluster",
            raw.rows(),
            names,
            cfg.gmm.k
        )));
    }
    let m = if cfg.gmm.normalize { raw.normalize()? } else { raw };
    let opts = GmmOptions {
        k: cfg.gmm.k,
        n_init: cfg.gmm.n_init,
        max_iter: cfg.gmm.max_iter,
        tol: cfg.gmm.tol,
        seed: cfg.seed,
        ..GmmOptions::default()
    };
    let model = gmm_fit(&m, &opts)?;
    let labels = gmm_assign(&model, &m)?;
    let mut sizes = vec![0; cfg.gmm.k];
    for l in &labels {
        sizes[*l] += 1;
    }
    let clustered: std::collections::BTreeSet<&str> = m.patient_ids.iter().map(String::as_str).collect();
    let excluded: Vec<String> = corpus
        .patients
        .iter()
        .filter(|p| !clustered.contains(p.patient_id.as_str()))
        .map(|p| p.patient_id.clone())
        .collect();

    let mut out = Outputs::new(&ctx.dir)?;
    let rows = m.patient_ids.iter().zip(&labels).map(|(p, l)| vec![p.clone(), l.to_string()]);
    out.write(COHORTS, csv_string(&["patient_id", "cohort"], rows)?.as_bytes())?;
    out.write_json(
        "gmm.json",
        &ClusterReport {
            config: cfg,
            features: &cfg.gmm.features,
            normalized: cfg.gmm.normalize,
            patients_clustered: labels.len(),
            patients_excluded: excluded,
            cohort_sizes: sizes.clone(),
            model: &model,
        },
    )?;
    ctx.say(&format!(
        "{} patients in {} cohorts {:?}; mean log-likelihood {:.4}",
        labels.len(),
        cfg.gmm.k,
        sizes,
        model.mean_log_likelihood
    ));
    out.commit();
    Ok(())
}
