mod common;

use std::fs;

use affect_core::binning::BinningConfig;
use affect_core::ingest::load_dataset;
use affect_core::synth::{generate_dataset, generate_session, sample_states, OcclusionConfig, SynthConfig};
use affect_core::{AffectLabel, Error};

use common::{sessions, small_synth};

#[test]
fn datasets_are_byte_identical_for_a_seed_and_differ_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_synth(5, 8);
    let a = generate_dataset(&config, &dir.path().join("a")).unwrap();
    let b = generate_dataset(&config, &dir.path().join("b")).unwrap();
    let c = generate_dataset(&SynthConfig { seed: 9, ..config.clone() }, &dir.path().join("c")).unwrap();
    assert_eq!(a.truths, b.truths);
    let mut differing = 0;
    for ((ea, eb), ec) in a.manifest.entries.iter().zip(&b.manifest.entries).zip(&c.manifest.entries) {
        let frames = |p: &std::path::Path| fs::read(p).unwrap();
        assert_eq!(frames(&ea.frames_path), frames(&eb.frames_path));
        assert_eq!(frames(&ea.labels_path), frames(&eb.labels_path));
        differing += (frames(&ea.frames_path) != frames(&ec.frames_path)) as usize;
    }
    assert_eq!(differing, 5);
}

#[test]
fn files_reload_to_the_in_memory_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_synth(5, 2);
    let written = generate_dataset(&config, dir.path()).unwrap();
    let loaded = load_dataset(&written.manifest, &BinningConfig::default());
    assert!(loaded.excluded.is_empty());
    let memory = sessions(&config);
    for (file, (mem, _)) in loaded.sessions.iter().zip(&memory) {
        assert_eq!(file.bins.len(), mem.bins.len());
        let labels = |s: &affect_core::domain::Session| s.bins.iter().map(|b| b.label).collect::<Vec<_>>();
        assert_eq!(labels(file), labels(mem));
    }
}

#[test]
fn too_few_infants_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        generate_dataset(&small_synth(4, 0), dir.path()),
        Err(Error::TooFewInfants { .. })
    ));
}

#[test]
fn long_run_alert_share_matches_dwell_times() {
    let config = SynthConfig {
        n_infants: 100,
        ..SynthConfig::default()
    };
    let (mut alert, mut total) = (0, 0);
    for i in 0..config.n_infants {
        let states = sample_states(&config, i);
        alert += states.iter().filter(|&&s| s == AffectLabel::Alert).count();
        total += states.len();
    }
    let share = alert as f64 / total as f64;
    assert!((share - 0.843).abs() <= 0.03, "alert share {share}");
}

#[test]
fn ten_minute_sessions_have_2400_bins_and_sampled_states_agree() {
    let config = SynthConfig {
        n_infants: 5,
        seed: 3,
        ..SynthConfig::default()
    };
    let s = generate_session(&config, 1).unwrap();
    assert_eq!(s.truth.states.len(), 2400);
    assert_eq!(sample_states(&config, 1), s.truth.states);
    let binned = s.to_session(&BinningConfig::default()).unwrap();
    assert_eq!(binned.bins.len(), 2400);
}

#[test]
fn without_occlusion_every_bin_is_valid() {
    let config = SynthConfig {
        face_occlusion: OcclusionConfig::none(),
        body_occlusion: OcclusionConfig::none(),
        ..small_synth(5, 6)
    };
    for (s, truth) in sessions(&config) {
        assert!(s.bins.iter().all(|b| b.face_valid && b.body_valid));
        assert!(!truth.face_occluded.iter().any(|&o| o));
    }
}

#[test]
fn occluded_bins_are_the_invalid_bins() {
    let mut occluded = 0;
    for (s, truth) in sessions(&small_synth(5, 7)) {
        for (b, bin) in s.bins.iter().enumerate() {
            assert_eq!(bin.face_valid, !truth.face_occluded[b], "face bin {b}");
            assert_eq!(bin.body_valid, !truth.body_occluded[b], "body bin {b}");
        }
        occluded += truth.face_occluded.iter().filter(|&&o| o).count();
    }
    assert!(occluded > 0);
}

#[test]
fn transitions_match_label_changes() {
    for (s, truth) in sessions(&small_synth(5, 9)) {
        let labels: Vec<AffectLabel> = s.bins.iter().map(|b| b.label).collect();
        let states: Vec<bool> = labels.iter().map(|l| l.is_fussy()).collect();
        assert_eq!(states, truth.states.iter().map(|l| l.is_fussy()).collect::<Vec<_>>());
        let changes: Vec<usize> = (1..states.len()).filter(|&b| states[b] != states[b - 1]).collect();
        assert_eq!(changes.len(), truth.transition_times.len());
        for (&b, &t) in changes.iter().zip(&truth.transition_times) {
            assert_eq!((t / 0.25).round() as usize, b);
        }
        assert_eq!(truth.collapsed, 0);
    }
}

#[test]
fn crying_is_written_for_some_fussy_episodes() {
    let config = SynthConfig {
        crying_fraction: 1.0,
        ..small_synth(5, 4)
    };
    let s = generate_session(&config, 0).unwrap();
    let raw: Vec<&str> = s.labels.iter().map(|l| l.raw_label.as_str()).collect();
    assert!(raw.contains(&"crying"));
    assert!(!raw.contains(&"fussy"));
}
