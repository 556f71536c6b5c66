//! Library-level workflow: CSV round trip, folds, the three model families and
//! the metrics report, all through the public API.

use glyco::baseline::{CopyLast, LinearRegression};
use glyco::hmm::{baum_welch, BaumWelchOptions, HmmForecaster, Quantizer};
use glyco::ingest::{read_cgm_csv, synth_corpus, value_stats, write_cgm_csv, Corpus};
use glyco::lstm::{load_model, save_model, train, LossMode, LstmForecaster, LstmNetwork, TrainOptions};
use glyco::metrics::{fold_metrics, forecast_pairs, Thresholds};
use glyco::pipeline::{kfold_split, load_prepared, prepare, save_prepared, segment, shared_readings, PrepareOptions, PreparedSet};
use glyco::Forecaster;
use proptest::prelude::*;

fn small_folds() -> (Corpus, Vec<PreparedSet>) {
    let mut corpus = synth_corpus(5, 14, 11).unwrap();
    corpus.normalize();
    let seqs = segment(&corpus.readings, 900).unwrap();
    let folds = kfold_split(&seqs, 144, 3, 11, None).unwrap();
    let opts = PrepareOptions {
        train_step: 12,
        ..PrepareOptions::default()
    };
    let sets = folds.iter().map(|f| prepare(&seqs, f, &opts).unwrap()).collect();
    (corpus, sets)
}

#[test]
fn csv_round_trip_preserves_the_corpus() {
    let mut corpus = synth_corpus(3, 4, 5).unwrap();
    corpus.normalize();
    let mut buf = Vec::new();
    write_cgm_csv(&mut buf, &corpus.readings).unwrap();
    let (readings, report) = read_cgm_csv(buf.as_slice(), 0.0).unwrap();
    assert_eq!(report.rejected.len(), 0);
    assert_eq!(readings, corpus.readings);
}

#[test]
fn prepared_folds_survive_a_save_load_cycle() {
    let (_, sets) = small_folds();
    let dir = tempfile::tempdir().unwrap();
    for (i, set) in sets.iter().enumerate() {
        assert_eq!(shared_readings(set), 0);
        let path = dir.path().join(format!("fold{i}.bin"));
        save_prepared(set, &path).unwrap();
        assert_eq!(&load_prepared(&path).unwrap(), set);
    }
}

#[test]
fn every_model_family_scores_a_fold() {
    let (corpus, sets) = small_folds();
    let set = &sets[0];
    let th = Thresholds::default();

    let copy = CopyLast { horizon: 12 };
    let linreg = LinearRegression {
        fit_window: 132,
        horizon: 12,
    };

    let quantizer = Quantizer::fit(12, corpus.values()).unwrap();
    let seqs: Vec<Vec<usize>> = set
        .train_examples
        .iter()
        .filter(|e| e.offset % 144 == 0)
        .map(|e| e.input.iter().chain(&e.target).map(|v| quantizer.encode(*v)).collect())
        .collect();
    let opts = BaumWelchOptions {
        max_iter: 20,
        ..BaumWelchOptions::default()
    };
    let hmm = HmmForecaster {
        model: baum_welch(&seqs, 6, 12, &opts).unwrap(),
        quantizer,
        horizon: 12,
    };

    let lstm_opts = TrainOptions {
        epochs: 2,
        batch: 32,
        heuristic_test_n: 50,
        seed: 11,
        mode: LossMode::TeacherForcing,
        ..TrainOptions::default()
    };
    let run = train(LstmNetwork::<f64>::new(4, 2, 11), &set.train_examples, &set.test_examples, &lstm_opts).unwrap();
    assert_eq!(run.curve().len(), 2);
    let lstm = LstmForecaster {
        net: run.best_net().clone(),
        horizon: 12,
    };

    let models: [&dyn Forecaster<f64>; 4] = [&copy, &linreg, &hmm, &lstm];
    let sd = value_stats(&corpus.values().collect::<Vec<_>>()).unwrap().sd;
    for m in models {
        let pairs = forecast_pairs(m, &set.test_examples).unwrap();
        assert_eq!(pairs.len(), set.test_examples.len());
        let fm = fold_metrics(0, &pairs, th).unwrap();
        assert!(fm.rmse.is_finite() && fm.rmse < 3.0 * sd, "{}: {}", m.name(), fm.rmse);
        assert!((fm.zones.total() - 1.0).abs() < 1e-9);
    }

    // a saved model forecasts exactly like the one in memory
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&lstm.net, &serde_json::json!({"fold": 0}), &path).unwrap();
    let (back, _) = load_model::<f64>(&path).unwrap();
    let input = &set.test_examples[0].input;
    assert_eq!(back.rollout(input, 12, false).unwrap().0, lstm.forecast(input).unwrap());
}

#[test]
fn the_network_also_runs_in_single_precision() {
    let net = LstmNetwork::<f32>::new(8, 3, 1);
    assert_eq!(net.param_count(), 1513);
    let input: Vec<f32> = (0..132).map(|t| 120.0 + t as f32).collect();
    let (out, trace) = net.rollout(&input, 12, true).unwrap();
    assert_eq!(out.len(), 12);
    assert_eq!(trace.unwrap().shape(), (3, 143, 8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parsing_ignores_row_order(seed in 0u64..1000, rotate in 0usize..500) {
        let corpus = synth_corpus(2, 2, seed).unwrap();
        let mut rows = corpus.readings.clone();
        let k = rotate % rows.len();
        rows.rotate_left(k);
        rows.reverse();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_cgm_csv(&mut a, &corpus.readings).unwrap();
        write_cgm_csv(&mut b, &rows).unwrap();
        let mut ca = Corpus { readings: read_cgm_csv(a.as_slice(), 0.0).unwrap().0, patients: vec![] };
        let mut cb = Corpus { readings: read_cgm_csv(b.as_slice(), 0.0).unwrap().0, patients: vec![] };
        ca.normalize();
        cb.normalize();
        prop_assert_eq!(&ca.readings, &cb.readings);
        let sa = value_stats(&ca.values().collect::<Vec<_>>()).unwrap();
        let sb = value_stats(&cb.values().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(sa, sb);
    }
}
