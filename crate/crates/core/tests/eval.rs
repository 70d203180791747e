mod common;

use std::collections::BTreeMap;

use affect_core::eval::{
    auc, confidence_interval_95, predicted_label, run_cv, stratified_subject_folds, tsat_curve, tspt_curve, CurveBin,
    CvConfig, PredictionTrace, PreparedDataset, TraceEntry,
};
use affect_core::model::{ModelSpec, TrainConfig};
use affect_core::rng::rng_for;
use affect_core::{AffectLabel, Error};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{features, small_synth, small_window};

use AffectLabel::{Alert, Fussy};

fn infants(fractions: &[f64]) -> Vec<(String, f64)> {
    fractions.iter().enumerate().map(|(i, &f)| (format!("inf{i:03}"), f)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_infants_evenly(
        fractions in prop::collection::vec(0.0f64..1.0, 5..60),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let list = infants(&fractions);
        let a = stratified_subject_folds(&list, k, seed).unwrap();
        prop_assert_eq!(a.folds.len(), list.len());
        let sizes: Vec<usize> = (0..k).map(|f| a.members(f).len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), list.len());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (id, _) in &list {
            prop_assert!(a.fold_of(id).unwrap() < k);
        }
        prop_assert_eq!(stratified_subject_folds(&list, k, seed).unwrap(), a);
    }
}

#[test]
fn fold_sizes() {
    let fractions: Vec<f64> = (0..26).map(|i| (i % 7) as f64 / 7.0).collect();
    let a = stratified_subject_folds(&infants(&fractions), 5, 1).unwrap();
    let mut sizes: Vec<usize> = (0..5).map(|f| a.members(f).len()).collect();
    sizes.sort_unstable_by(|x, y| y.cmp(x));
    assert_eq!(sizes, vec![6, 5, 5, 5, 5]);

    let a = stratified_subject_folds(&infants(&[0.1, 0.2, 0.3, 0.4, 0.5]), 5, 1).unwrap();
    assert!((0..5).all(|f| a.members(f).len() == 1));

    assert!(matches!(
        stratified_subject_folds(&infants(&[0.1, 0.2, 0.3, 0.4]), 5, 1),
        Err(Error::TooFewInfants { k: 5, found: 4 })
    ));
}

/// Spread between the most and least fussy fold, by mean fussy fraction.
fn spread(list: &[(String, f64)], fold_of: impl Fn(usize) -> usize, k: usize) -> f64 {
    let means: Vec<f64> = (0..k)
        .map(|f| {
            let v: Vec<f64> = list.iter().enumerate().filter(|(i, _)| fold_of(*i) == f).map(|(_, x)| x.1).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    means.iter().copied().fold(f64::MIN, f64::max) - means.iter().copied().fold(f64::MAX, f64::min)
}

#[test]
fn stratification_balances_better_than_random_splits() {
    let mut rng = rng_for(55, 0);
    let fractions: Vec<f64> = (0..26).map(|_| rng.random::<f64>().powi(2)).collect();
    let list = infants(&fractions);
    let a = stratified_subject_folds(&list, 5, 3).unwrap();
    let ours = spread(&list, |i| a.fold_of(&list[i].0).unwrap(), 5);
    let mut random = Vec::new();
    for _ in 0..100 {
        let mut slots: Vec<usize> = (0..26).map(|i| i % 5).collect();
        slots.shuffle(&mut rng);
        random.push(spread(&list, |i| slots[i], 5));
    }
    let beaten = random.iter().filter(|&&r| ours <= r).count();
    assert!(beaten >= 95, "stratified spread {ours} beats only {beaten}/100 random splits");
}

#[test]
fn auc_basics() {
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
    assert_eq!(auc(&[0.5; 6], &[false, true, false, true, true, false]).unwrap(), 0.5);
    assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    assert_eq!(predicted_label(0.5), Fussy);
    assert_eq!(predicted_label(0.499_999_999), Alert);
}

fn entry(infant: &str, session: &str, end_bin: usize, label: AffectLabel, prob: f64, confident: bool) -> TraceEntry {
    TraceEntry {
        infant_id: infant.into(),
        session_id: session.into(),
        end_bin,
        label,
        prob,
        predicted: predicted_label(prob),
        confident,
    }
}

fn random_trace(seed: u64, n_sessions: usize, len: usize) -> PredictionTrace {
    let mut rng = rng_for(seed, 0);
    let mut entries = Vec::new();
    for s in 0..n_sessions {
        let mut label = Alert;
        for b in 0..len {
            if rng.random::<f64>() < 0.1 {
                label = if label == Alert { Fussy } else { Alert };
            }
            let prob = if rng.random::<f64>() < 0.7 { (label == Fussy) as u8 as f64 * 0.6 + 0.2 } else { rng.random() };
            entries.push(entry(&format!("inf{}", s % 4), &format!("sess{s}"), b + 10, label, prob, rng.random::<f64>() < 0.6));
        }
    }
    PredictionTrace { entries }
}

#[test]
fn confident_auc_equals_auc_of_restricted_trace() {
    for seed in 0..10 {
        let trace = random_trace(seed, 6, 80);
        let a = trace.auc(true).unwrap();
        let b = trace.restrict_confident().auc(false).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(trace.accuracy(true), trace.restrict_confident().accuracy(false));
    }
}

#[test]
fn tspt_zero_bin_counts_session_starts_and_prediction_flips() {
    let trace = random_trace(7, 8, 200);
    let (alert, fussy) = tspt_curve(&trace, 0.25);
    let mut expected = [0usize; 2];
    let mut sessions: BTreeMap<&str, Vec<&TraceEntry>> = BTreeMap::new();
    for e in &trace.entries {
        sessions.entry(&e.session_id).or_default().push(e);
    }
    for entries in sessions.values() {
        for (i, e) in entries.iter().enumerate() {
            if i == 0 || entries[i - 1].predicted != e.predicted {
                expected[e.predicted.is_fussy() as usize] += 1;
            }
        }
    }
    for (curve, n) in [(&alert, expected[0]), (&fussy, expected[1])] {
        let zero = curve.bins.iter().find(|b| b.bin_start_s == 0.0).unwrap();
        assert_eq!(zero.n_samples, n);
    }
}

/// Four infants share the same label runs; every run of length L in state s
/// contributes exactly one sample to each TSAT bin 0..L of that state.
#[test]
fn tsat_bins_partition_each_run() {
    let runs = [(Alert, 10), (Fussy, 6), (Alert, 8), (Fussy, 3), (Alert, 5)];
    let labels: Vec<AffectLabel> = runs.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
    let mut bin_labels = BTreeMap::new();
    let mut entries = Vec::new();
    for i in 0..4 {
        let session = format!("s{i}");
        for (b, &l) in labels.iter().enumerate() {
            entries.push(entry(&format!("inf{i}"), &session, b, l, 0.3, true));
        }
        bin_labels.insert(session, labels.clone());
    }
    let trace = PredictionTrace { entries };
    let (alert, fussy) = tsat_curve(&trace, &bin_labels, 0.25);
    for (curve, state) in [(&alert, Alert), (&fussy, Fussy)] {
        let lengths: Vec<usize> = runs.iter().filter(|r| r.0 == state).map(|r| r.1).collect();
        let longest = *lengths.iter().max().unwrap();
        assert_eq!(curve.bins.len(), longest);
        for (j, bin) in curve.bins.iter().enumerate() {
            assert_eq!(bin.bin_start_s, j as f64 * 0.25);
            assert_eq!(bin.n_samples, 4 * lengths.iter().filter(|&&l| l > j).count());
            assert_eq!(bin.n_infants, 4);
        }
    }
    // predictions are always alert
    assert!(alert.bins.iter().all(|b| b.mean_accuracy == 1.0 && b.ci95_low == 1.0 && b.ci95_high == 1.0));
    assert!(fussy.bins.iter().all(|b| b.mean_accuracy == 0.0 && b.n_correct == 0));
}

#[test]
fn run_starts_use_floor_of_elapsed_bins() {
    // runs start at bin 3; the entry at bin 10 is 7 bins = 1.75 s in
    let labels = [vec![Alert; 3], vec![Fussy; 20]].concat();
    let mut bin_labels = BTreeMap::new();
    let mut entries = Vec::new();
    for i in 0..4 {
        let s = format!("s{i}");
        entries.push(entry(&format!("inf{i}"), &s, 10, Fussy, 0.9, true));
        bin_labels.insert(s, labels.clone());
    }
    let (_, fussy) = tsat_curve(&PredictionTrace { entries }, &bin_labels, 0.25);
    assert_eq!(fussy.bins.len(), 1);
    let CurveBin { bin_start_s, n_samples, mean_accuracy, .. } = fussy.bins[0];
    assert_eq!((bin_start_s, n_samples, mean_accuracy), (1.75, 4, 1.0));
}

#[test]
fn sparse_bins_are_suppressed() {
    let labels = vec![Alert; 10];
    let mut bin_labels = BTreeMap::new();
    let entries: Vec<TraceEntry> = (0..3).map(|i| entry("inf", "s", i, Alert, 0.1, true)).collect();
    bin_labels.insert("s".to_string(), labels);
    let (alert, _) = tsat_curve(&PredictionTrace { entries }, &bin_labels, 0.25);
    assert!(alert.bins.is_empty());
}

#[test]
fn interval_values() {
    let (lo, hi) = confidence_interval_95(&[0.5, 0.7, 0.9]);
    let half = 1.96 * 0.2 / 3f64.sqrt();
    assert!((lo - (0.7 - half)).abs() < 1e-12);
    assert!((hi - (0.7 + half)).abs() < 1e-12);
    assert_eq!(confidence_interval_95(&[0.3; 5]), (0.3, 0.3));
    assert_eq!(confidence_interval_95(&[0.4]), (0.4, 0.4));
    assert_eq!(confidence_interval_95(&[0.0, 1.0]), (0.0, 1.0));
}

#[test]
fn cross_validation_scores_every_sample_once_in_its_own_fold() {
    let window = small_window();
    let (data, _) = PreparedDataset::from_features(features(&small_synth(6, 17)), &window).unwrap();
    let config = CvConfig {
        window,
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        k: 3,
        seed: 4,
        models: vec![ModelSpec::Face, ModelSpec::Late],
    };
    let result = run_cv(&data, &config).unwrap();
    let total: usize = data.sessions.iter().map(|s| s.index.len()).sum();
    for m in &result.models {
        assert_eq!(m.trace.entries.len(), total);
        assert_eq!(m.folds.iter().map(|f| f.n_total).sum::<usize>(), total);
        let mut seen = std::collections::BTreeSet::new();
        for e in &m.trace.entries {
            assert!(seen.insert((e.session_id.clone(), e.end_bin)));
        }
        // fold metrics are computed from the fold's own slice of the trace
        let mut offset = 0;
        for f in &m.folds {
            let slice = &m.trace.entries[offset..offset + f.n_total];
            assert!(slice.iter().all(|e| result.assignment.fold_of(&e.infant_id) == Some(f.fold)));
            offset += f.n_total;
        }
    }
    assert_eq!(run_cv(&data, &config).unwrap(), result);
}
