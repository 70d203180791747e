#![allow(dead_code)]

use affect_core::binning::BinningConfig;
use affect_core::domain::Session;
use affect_core::preprocess::PreprocessConfig;
use affect_core::synth::{generate_sessions, GroundTruth, OcclusionConfig, SynthConfig, SynthEffects};
use affect_core::{SessionFeatures, WindowConfig};

/// Windows short enough for one-minute sessions.
pub fn small_window() -> WindowConfig {
    WindowConfig {
        short_s: 0.5,
        long_face_s: 2.0,
        long_body_s: 1.0,
        max_long_s: 4.0,
        ..WindowConfig::default()
    }
}

pub fn small_synth(n_infants: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_infants,
        session_s: 60.0,
        dwell_alert_s: 12.0,
        dwell_fussy_s: 6.0,
        effects: SynthEffects::uniform(1.0),
        face_occlusion: OcclusionConfig {
            rate_per_min: 2.0,
            mean_len_s: 3.0,
        },
        body_occlusion: OcclusionConfig {
            rate_per_min: 1.0,
            mean_len_s: 2.0,
        },
        seed,
        ..SynthConfig::default()
    }
}

pub fn sessions(config: &SynthConfig) -> Vec<(Session, GroundTruth)> {
    generate_sessions(config, &BinningConfig::default()).unwrap()
}

pub fn features(config: &SynthConfig) -> Vec<SessionFeatures> {
    sessions(config)
        .iter()
        .map(|(s, _)| SessionFeatures::from_session(s, &PreprocessConfig::default()).unwrap())
        .collect()
}
