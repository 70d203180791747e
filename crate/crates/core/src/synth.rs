//! Seeded synthetic sessions.
//!
//! A two-state semi-Markov process (exponential dwell, transitions on bin
//! boundaries) drives an intensity that ramps linearly between 0 (alert) and
//! 1 (fussy) after each transition. Face and body landmarks are a per-infant
//! template plus an intensity-scaled state offset, idle motion and Gaussian
//! jitter; AUs are per-infant means plus an intensity-scaled shift and noise.
//! Occlusion bursts cover whole bins of one modality and zero its frames.
//!
//! Effect sizes are in units of the per-frame noise of the channel they act
//! on. `body_speed` is the standardized shift of the mean landmark speed,
//! obtained by scaling body jitter (speeds are Rayleigh-like in the jitter).
//!
//! Infant `i` uses seed `derive_seed(seed, i)`; within an infant the state
//! path, each occlusion mask, the templates and each frame stream draw from
//! separate tagged streams.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{bin_frames, BinningConfig};
use crate::domain::{AffectLabel, FrameRecord, Modality, Point, Session, BODY_POINTS, FACE_POINTS, N_AUS};
use crate::error::{Error, Result};
use crate::ingest::{join_labels, DatasetManifest, FrameWriter, LabelChange, ManifestEntry};
use crate::rng::{derive_seed, rng_for};

pub const MIN_INFANTS: usize = 5;
/// Mean speed over its standard deviation for a 2-D isotropic Gaussian step.
const RAYLEIGH_MEAN_OVER_STD: f64 = 1.913_13;
/// AUs shifted in the fussy state (brow lowerer, cheek raiser, lid
/// tightener, nose wrinkler, upper lip raiser, lip stretcher, lips part, jaw
/// drop).
const FUSSY_AUS: [usize; 8] = [2, 4, 5, 6, 7, 12, 14, 15];

const TAG_STATES: u64 = 0;
const TAG_FACE_OCCLUSION: u64 = 1;
const TAG_BODY_OCCLUSION: u64 = 2;
const TAG_TEMPLATE: u64 = 3;
const TAG_FACE_FRAMES: u64 = 4;
const TAG_BODY_FRAMES: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthEffects {
    pub face_distance: f64,
    pub face_au: f64,
    pub body_distance: f64,
    pub body_speed: f64,
}

impl Default for SynthEffects {
    fn default() -> Self {
        SynthEffects {
            face_distance: 1.0,
            face_au: 0.5,
            body_distance: 1.0,
            body_speed: 0.5,
        }
    }
}

impl SynthEffects {
    pub fn zero() -> Self {
        SynthEffects {
            face_distance: 0.0,
            face_au: 0.0,
            body_distance: 0.0,
            body_speed: 0.0,
        }
    }

    pub fn uniform(size: f64) -> Self {
        SynthEffects {
            face_distance: size,
            face_au: size,
            body_distance: size,
            body_speed: size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub rate_per_min: f64,
    pub mean_len_s: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            rate_per_min: 0.5,
            mean_len_s: 15.0,
        }
    }
}

impl OcclusionConfig {
    pub fn none() -> Self {
        OcclusionConfig {
            rate_per_min: 0.0,
            mean_len_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_infants: usize,
    pub session_s: f64,
    pub dwell_alert_s: f64,
    pub dwell_fussy_s: f64,
    /// Share of fussy episodes written with the raw label "crying".
    pub crying_fraction: f64,
    pub transition_ramp_s: f64,
    pub effects: SynthEffects,
    pub face_occlusion: OcclusionConfig,
    pub body_occlusion: OcclusionConfig,
    pub body_fps: f64,
    pub face_fps_min: f64,
    pub face_fps_max: f64,
    /// Per-frame jitter std, relative to the face normalization length.
    pub face_noise: f64,
    /// Per-frame jitter std, relative to the torso length.
    pub body_noise: f64,
    pub au_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_infants: 26,
            session_s: 600.0,
            dwell_alert_s: 108.0,
            dwell_fussy_s: 20.0,
            crying_fraction: 0.15,
            transition_ramp_s: 2.0,
            effects: SynthEffects::default(),
            face_occlusion: OcclusionConfig::default(),
            body_occlusion: OcclusionConfig {
                rate_per_min: 0.2,
                mean_len_s: 10.0,
            },
            body_fps: 29.97,
            face_fps_min: 20.0,
            face_fps_max: 30.0,
            face_noise: 0.01,
            body_noise: 0.02,
            au_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("session_s", self.session_s),
            ("dwell_alert_s", self.dwell_alert_s),
            ("dwell_fussy_s", self.dwell_fussy_s),
            ("face_occlusion.mean_len_s", self.face_occlusion.mean_len_s),
            ("body_occlusion.mean_len_s", self.body_occlusion.mean_len_s),
            ("body_fps", self.body_fps),
            ("face_fps_min", self.face_fps_min),
            ("face_fps_max", self.face_fps_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("transition_ramp_s", self.transition_ramp_s),
            ("face_occlusion.rate_per_min", self.face_occlusion.rate_per_min),
            ("body_occlusion.rate_per_min", self.body_occlusion.rate_per_min),
            ("face_noise", self.face_noise),
            ("body_noise", self.body_noise),
            ("au_noise", self.au_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.face_fps_min > self.face_fps_max {
            return Err(Error::Config("face_fps_min exceeds face_fps_max".into()));
        }
        if !(0.0..=1.0).contains(&self.crying_fraction) {
            return Err(Error::Config("crying_fraction outside [0, 1]".into()));
        }
        let e = self.effects;
        if ![e.face_distance, e.face_au, e.body_distance, e.body_speed]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("effect sizes must be finite".into()));
        }
        if 1.0 + e.body_speed / RAYLEIGH_MEAN_OVER_STD <= 0.0 {
            return Err(Error::Config("body_speed effect makes fussy jitter non-positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self, bin_width_s: f64) -> usize {
        (self.session_s / bin_width_s).round() as usize
    }

    pub fn alert_fraction_target(&self) -> f64 {
        self.dwell_alert_s / (self.dwell_alert_s + self.dwell_fussy_s)
    }
}

pub fn infant_id(index: usize) -> String {
    format!("infant_{index:02}")
}

/// Ground truth of one synthetic session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub infant_id: String,
    pub session_id: String,
    /// True state per bin (alert or fussy).
    pub states: Vec<AffectLabel>,
    /// Times of state changes, excluding the session start.
    pub transition_times: Vec<f64>,
    pub face_occluded: Vec<bool>,
    pub body_occluded: Vec<bool>,
    /// Episodes shorter than one bin; always 0 because dwell times are
    /// rounded up to one bin.
    pub collapsed: usize,
}

impl GroundTruth {
    pub fn alert_fraction(&self) -> f64 {
        let alert = self.states.iter().filter(|&&s| s == AffectLabel::Alert).count();
        alert as f64 / self.states.len().max(1) as f64
    }
}

/// State episodes as `(start_bin, state, raw_label)`.
fn sample_episodes(config: &SynthConfig, rng: &mut ChaCha8Rng, n_bins: usize, bin_w: f64) -> Vec<(usize, AffectLabel, &'static str)> {
    let mut state = if rng.random::<f64>() < config.alert_fraction_target() {
        AffectLabel::Alert
    } else {
        AffectLabel::Fussy
    };
    let alert_dwell = Exp::new(1.0 / config.dwell_alert_s).expect("validated rate");
    let fussy_dwell = Exp::new(1.0 / config.dwell_fussy_s).expect("validated rate");
    let mut out = Vec::new();
    let mut bin = 0;
    while bin < n_bins {
        let (dwell, raw) = match state {
            AffectLabel::Fussy => {
                let raw = if rng.random::<f64>() < config.crying_fraction {
                    "crying"
                } else {
                    "fussy"
                };
                (fussy_dwell.sample(rng), raw)
            }
            _ => (alert_dwell.sample(rng), "alert"),
        };
        out.push((bin, state, raw));
        bin += ((dwell / bin_w).round() as usize).max(1);
        state = if state == AffectLabel::Fussy {
            AffectLabel::Alert
        } else {
            AffectLabel::Fussy
        };
    }
    out
}

/// Only the per-bin state path of infant `infant_index`; draws the same
/// stream as [`generate_session`].
pub fn sample_states(config: &SynthConfig, infant_index: usize) -> Vec<AffectLabel> {
    let bin_w = BinningConfig::default().bin_width_s;
    let n_bins = config.n_bins(bin_w);
    let seed = derive_seed(config.seed, infant_index as u64);
    let episodes = sample_episodes(config, &mut rng_for(seed, TAG_STATES), n_bins, bin_w);
    expand_states(&episodes, n_bins)
}

fn expand_states(episodes: &[(usize, AffectLabel, &str)], n_bins: usize) -> Vec<AffectLabel> {
    let mut states = Vec::with_capacity(n_bins);
    for (i, &(start, state, _)) in episodes.iter().enumerate() {
        let end = episodes.get(i + 1).map_or(n_bins, |e| e.0).min(n_bins);
        states.extend(std::iter::repeat_n(state, end - start));
    }
    states
}

fn occlusion_mask(occ: &OcclusionConfig, rng: &mut ChaCha8Rng, n_bins: usize, bin_w: f64) -> Vec<bool> {
    let mut mask = vec![false; n_bins];
    if occ.rate_per_min <= 0.0 {
        return mask;
    }
    let gap = Exp::new(occ.rate_per_min / 60.0).expect("positive rate");
    let len = Exp::new(1.0 / occ.mean_len_s).expect("positive length");
    let session = n_bins as f64 * bin_w;
    let mut t = gap.sample(rng);
    while t < session {
        let start = (t / bin_w).round() as usize;
        let bins = ((len.sample(rng) / bin_w).round() as usize).max(1);
        for m in mask.iter_mut().skip(start).take(bins) {
            *m = true;
        }
        t += gap.sample(rng);
    }
    mask
}

/// Piecewise-linear state intensity: after each transition it moves toward
/// the new state's value over the ramp duration.
struct Intensity {
    times: Vec<f64>,
    targets: Vec<f64>,
    starts: Vec<f64>,
    ramp: f64,
}

impl Intensity {
    fn new(episodes: &[(usize, AffectLabel, &str)], bin_w: f64, ramp: f64) -> Self {
        let mut it = Intensity {
            times: Vec::new(),
            targets: Vec::new(),
            starts: Vec::new(),
            ramp,
        };
        for &(bin, state, _) in episodes {
            let t = bin as f64 * bin_w;
            let target = if state == AffectLabel::Fussy { 1.0 } else { 0.0 };
            let start = if it.times.is_empty() { target } else { it.value(t) };
            it.times.push(t);
            it.targets.push(target);
            it.starts.push(start);
        }
        it
    }

    fn value(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        let (t0, v0, target) = (self.times[i], self.starts[i], self.targets[i]);
        if self.ramp <= 0.0 {
            return target;
        }
        v0 + (target - v0) * ((t - t0) / self.ramp).min(1.0)
    }
}

fn ellipse(center: (f64, f64), half_w: f64, half_h: f64, angles: &[f64]) -> Vec<(f64, f64)> {
    angles
        .iter()
        .map(|a| (center.0 + half_w * a.cos(), center.1 + half_h * a.sin()))
        .collect()
}

/// Canonical 68-point face, y down, nose tip at the origin region.
fn face_template() -> Vec<(f64, f64)> {
    let mut p = Vec::with_capacity(FACE_POINTS);
    for i in 0..17 {
        let th = PI - i as f64 * PI / 16.0;
        p.push((0.45 * th.cos(), 0.05 + 0.5 * th.sin()));
    }
    for side in [-1.0, 1.0] {
        let xs: [f64; 5] = if side < 0.0 {
            [-0.35, -0.28, -0.21, -0.14, -0.08]
        } else {
            [0.08, 0.14, 0.21, 0.28, 0.35]
        };
        for (j, x) in xs.iter().enumerate() {
            let bump = [0.0, 0.7, 1.0, 0.7, 0.2];
            let k = if side < 0.0 { j } else { 4 - j };
            p.push((*x, -0.25 - 0.04 * bump[k]));
        }
    }
    for j in 0..4 {
        p.push((0.0, -0.15 + j as f64 * 0.25 / 3.0));
    }
    for j in 0..5 {
        p.push((-0.08 + j as f64 * 0.04, 0.15 + if j == 2 { 0.01 } else { 0.0 }));
    }
    // eye ring: left corner, two upper, right corner, two lower
    let eye_angles = [PI, 1.3 * PI, 1.7 * PI, 0.0, 0.3 * PI, 0.7 * PI];
    p.extend(ellipse((-0.2, -0.12), 0.06, 0.025, &eye_angles));
    p.extend(ellipse((0.2, -0.12), 0.06, 0.025, &eye_angles));
    let outer: Vec<f64> = (0..12).map(|i| PI + i as f64 * 2.0 * PI / 12.0).collect();
    p.extend(ellipse((0.0, 0.32), 0.18, 0.06, &outer));
    let inner: Vec<f64> = (0..8).map(|i| PI + i as f64 * 2.0 * PI / 8.0).collect();
    p.extend(ellipse((0.0, 0.32), 0.12, 0.02, &inner));
    debug_assert_eq!(p.len(), FACE_POINTS);
    p
}

/// Direction of each face landmark in the fussy state: mouth opens, eyes
/// narrow. Scale-defining points (chin, mid-brows, nose tip) stay fixed.
fn face_offsets() -> Vec<(f64, f64)> {
    let mut o = vec![(0.0, 0.0); FACE_POINTS];
    for i in [49, 50, 51, 52, 53, 61, 62, 63] {
        o[i] = (0.0, -0.3);
    }
    for i in [55, 56, 57, 58, 59, 65, 66, 67] {
        o[i] = (0.0, 1.0);
    }
    for i in [48, 60] {
        o[i] = (0.3, 0.0);
    }
    for i in [54, 64] {
        o[i] = (-0.3, 0.0);
    }
    for i in [37, 38, 43, 44] {
        o[i] = (0.0, 0.5);
    }
    for i in [40, 41, 46, 47] {
        o[i] = (0.0, -0.3);
    }
    o
}

/// Canonical 25-point body (supine, head up), neck at the origin and the
/// mid-hip one unit below.
fn body_template() -> Vec<(f64, f64)> {
    vec![
        (0.0, -0.45),
        (0.0, 0.0),
        (-0.3, 0.02),
        (-0.45, 0.35),
        (-0.4, 0.65),
        (0.3, 0.02),
        (0.45, 0.35),
        (0.4, 0.65),
        (0.0, 1.0),
        (-0.15, 1.0),
        (-0.2, 1.45),
        (-0.2, 1.85),
        (0.15, 1.0),
        (0.2, 1.45),
        (0.2, 1.85),
        (-0.07, -0.52),
        (0.07, -0.52),
        (-0.15, -0.45),
        (0.15, -0.45),
        (0.25, 2.0),
        (0.3, 1.98),
        (0.2, 1.9),
        (-0.25, 2.0),
        (-0.3, 1.98),
        (-0.2, 1.9),
    ]
}

/// Fussy state: arms raised and spread, knees drawn up.
fn body_offsets() -> Vec<(f64, f64)> {
    let mut o = vec![(0.0, 0.0); BODY_POINTS];
    o[3] = (-0.5, -0.5);
    o[4] = (-1.0, -1.0);
    o[6] = (0.5, -0.5);
    o[7] = (1.0, -1.0);
    o[10] = (0.0, -0.5);
    o[13] = (0.0, -0.5);
    o
}

/// Landmarks with idle motion and their per-infant phase.
const BODY_IDLE: [usize; 6] = [3, 4, 6, 7, 10, 13];

struct InfantTemplate {
    face: Vec<(f64, f64)>,
    body: Vec<(f64, f64)>,
    au_base: Vec<f64>,
    face_scale_px: f64,
    body_scale_px: f64,
    face_center: (f64, f64),
    body_center: (f64, f64),
    idle_phase: Vec<f64>,
    idle_period_s: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl InfantTemplate {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let face = face_template()
            .into_iter()
            .map(|(x, y)| (x + 0.005 * normal(rng), y + 0.005 * normal(rng)))
            .collect();
        let body = body_template()
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| {
                // neck and mid-hip define the frame; keep them exact
                if i == 1 || i == 8 {
                    (x, y)
                } else {
                    (x + 0.02 * normal(rng), y + 0.02 * normal(rng))
                }
            })
            .collect();
        InfantTemplate {
            face,
            body,
            au_base: (0..N_AUS).map(|_| rng.random_range(0.5..1.5)).collect(),
            face_scale_px: rng.random_range(120.0..180.0),
            body_scale_px: rng.random_range(150.0..250.0),
            face_center: (rng.random_range(250.0..390.0), rng.random_range(150.0..250.0)),
            body_center: (rng.random_range(250.0..390.0), rng.random_range(120.0..200.0)),
            idle_phase: (0..BODY_IDLE.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
            idle_period_s: (0..BODY_IDLE.len()).map(|_| rng.random_range(3.0..6.0)).collect(),
        }
    }
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Frames, label change points and ground truth of one synthetic session.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub infant_id: String,
    pub session_id: String,
    /// Face and body frames merged in time order.
    pub frames: Vec<FrameRecord>,
    pub labels: Vec<LabelChange>,
    pub truth: GroundTruth,
}

impl SynthSession {
    /// Bins the frames in memory, skipping the file round trip.
    pub fn to_session(&self, binning: &BinningConfig) -> Result<Session> {
        let mut frames = self.frames.clone();
        join_labels(&mut frames, &self.labels);
        Ok(Session {
            session_id: self.session_id.clone(),
            infant_id: self.infant_id.clone(),
            bins: bin_frames(&frames, binning)?,
        })
    }
}

pub fn generate_session(config: &SynthConfig, infant_index: usize) -> Result<SynthSession> {
    config.validate()?;
    let binning = BinningConfig::default();
    let bin_w = binning.bin_width_s;
    let n_bins = config.n_bins(bin_w);
    let seed = derive_seed(config.seed, infant_index as u64);
    let infant = infant_id(infant_index);
    let session_id = format!("{infant}_s0");

    let episodes = sample_episodes(config, &mut rng_for(seed, TAG_STATES), n_bins, bin_w);
    let states = expand_states(&episodes, n_bins);
    let face_occluded = occlusion_mask(&config.face_occlusion, &mut rng_for(seed, TAG_FACE_OCCLUSION), n_bins, bin_w);
    let body_occluded = occlusion_mask(&config.body_occlusion, &mut rng_for(seed, TAG_BODY_OCCLUSION), n_bins, bin_w);
    let template = InfantTemplate::sample(&mut rng_for(seed, TAG_TEMPLATE));
    let intensity = Intensity::new(&episodes, bin_w, config.transition_ramp_s);
    let end_s = n_bins as f64 * bin_w;

    let labels: Vec<LabelChange> = episodes
        .iter()
        .map(|&(bin, _, raw)| LabelChange {
            time_s: bin as f64 * bin_w,
            raw_label: raw.to_string(),
        })
        .collect();
    let transition_times = episodes.iter().skip(1).map(|&(bin, _, _)| bin as f64 * bin_w).collect();

    let occluded_frame = |rng: &mut ChaCha8Rng, time_s: f64, modality: Modality| FrameRecord {
        session_id: session_id.clone(),
        time_s,
        modality,
        confidence: round_to(rng.random_range(0.0..0.15), 1e-3),
        points: vec![Point::ZERO; modality.n_points()],
        aus: (modality == Modality::Face).then(|| vec![0.0; N_AUS]),
        raw_label: None,
    };

    // face stream
    let face_shift = face_offsets();
    let fd = config.effects.face_distance * config.face_noise;
    let au_shift = config.effects.face_au * config.au_noise;
    let mut face_frames = Vec::new();
    let mut rng = rng_for(seed, TAG_FACE_FRAMES);
    let mut t = 0.0;
    while t < end_s {
        let time_s = round_to(t, 1e-6);
        let bin = binning.bin_index(time_s);
        if bin >= n_bins {
            break;
        }
        if face_occluded[bin] {
            face_frames.push(occluded_frame(&mut rng, time_s, Modality::Face));
        } else {
            let s = intensity.value(time_s);
            let rot = 0.05 * (2.0 * PI * time_s / 7.0).sin();
            let scale = template.face_scale_px * (1.0 + 0.03 * (2.0 * PI * time_s / 11.0).sin());
            let cx = template.face_center.0 + 10.0 * (2.0 * PI * time_s / 9.0).sin();
            let cy = template.face_center.1 + 6.0 * (2.0 * PI * time_s / 13.0).cos();
            let (sin, cos) = rot.sin_cos();
            let points = template
                .face
                .iter()
                .zip(&face_shift)
                .map(|(&(x, y), &(ox, oy))| {
                    let px = x + s * fd * ox + config.face_noise * normal(&mut rng);
                    let py = y + s * fd * oy + config.face_noise * normal(&mut rng);
                    Point::new(
                        round_to(cx + scale * (cos * px - sin * py), 1e-3),
                        round_to(cy + scale * (sin * px + cos * py), 1e-3),
                    )
                })
                .collect();
            let aus = template
                .au_base
                .iter()
                .enumerate()
                .map(|(a, &base)| {
                    let shift = if FUSSY_AUS.contains(&a) { s * au_shift } else { 0.0 };
                    round_to(base + shift + config.au_noise * normal(&mut rng), 1e-4)
                })
                .collect();
            face_frames.push(FrameRecord {
                session_id: session_id.clone(),
                time_s,
                modality: Modality::Face,
                confidence: round_to(rng.random_range(0.6..0.99), 1e-3),
                points,
                aus: Some(aus),
                raw_label: None,
            });
        }
        t += 1.0 / rng.random_range(config.face_fps_min..=config.face_fps_max);
    }

    // body stream
    let body_shift = body_offsets();
    let bd = config.effects.body_distance * config.body_noise;
    let jitter_gain = config.effects.body_speed / RAYLEIGH_MEAN_OVER_STD;
    let mut body_frames = Vec::new();
    let mut rng = rng_for(seed, TAG_BODY_FRAMES);
    for i in 0.. {
        let time_s = round_to(i as f64 / config.body_fps, 1e-6);
        let bin = binning.bin_index(time_s);
        if time_s >= end_s || bin >= n_bins {
            break;
        }
        if body_occluded[bin] {
            body_frames.push(occluded_frame(&mut rng, time_s, Modality::Body));
            continue;
        }
        let s = intensity.value(time_s);
        let sigma = config.body_noise * (1.0 + s * jitter_gain);
        let scale = template.body_scale_px;
        let cx = template.body_center.0 + 8.0 * (2.0 * PI * time_s / 17.0).sin();
        let cy = template.body_center.1 + 5.0 * (2.0 * PI * time_s / 23.0).cos();
        let points = template
            .body
            .iter()
            .zip(&body_shift)
            .enumerate()
            .map(|(k, (&(x, y), &(ox, oy)))| {
                let (mut px, mut py) = (x + s * bd * ox, y + s * bd * oy);
                if let Some(j) = BODY_IDLE.iter().position(|&b| b == k) {
                    let w = 2.0 * PI * time_s / template.idle_period_s[j] + template.idle_phase[j];
                    px += 0.02 * w.sin();
                    py += 0.02 * w.cos();
                }
                px += sigma * normal(&mut rng);
                py += sigma * normal(&mut rng);
                Point::new(round_to(cx + scale * px, 1e-3), round_to(cy + scale * py, 1e-3))
            })
            .collect();
        body_frames.push(FrameRecord {
            session_id: session_id.clone(),
            time_s,
            modality: Modality::Body,
            confidence: round_to(rng.random_range(0.6..0.99), 1e-3),
            points,
            aus: None,
            raw_label: None,
        });
    }

    let mut frames = Vec::with_capacity(face_frames.len() + body_frames.len());
    let (mut fi, mut bi) = (face_frames.into_iter().peekable(), body_frames.into_iter().peekable());
    loop {
        let take_face = match (fi.peek(), bi.peek()) {
            (Some(f), Some(b)) => f.time_s <= b.time_s,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        frames.push(if take_face { fi.next() } else { bi.next() }.expect("peeked"));
    }

    Ok(SynthSession {
        infant_id: infant.clone(),
        session_id: session_id.clone(),
        frames,
        labels,
        truth: GroundTruth {
            infant_id: infant,
            session_id,
            states,
            transition_times,
            face_occluded,
            body_occluded,
            collapsed: 0,
        },
    })
}

/// Writes `<infant>.frames.csv` and `<infant>.labels.csv` into `dir` and
/// returns the manifest entry (paths relative to `dir`).
pub fn write_synth_session(session: &SynthSession, dir: &Path) -> Result<ManifestEntry> {
    let frames_name = format!("{}.frames.csv", session.infant_id);
    let labels_name = format!("{}.labels.csv", session.infant_id);
    let mut writer = FrameWriter::new(BufWriter::new(File::create(dir.join(&frames_name))?));
    for f in &session.frames {
        writer.write(f)?;
    }
    writer.finish()?;
    crate::ingest::write_labels(BufWriter::new(File::create(dir.join(&labels_name))?), &session.labels)?;
    Ok(ManifestEntry {
        infant_id: session.infant_id.clone(),
        session_id: session.session_id.clone(),
        frames_path: PathBuf::from(frames_name),
        labels_path: PathBuf::from(labels_name),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    /// Manifest with paths resolved against the output directory.
    pub manifest: DatasetManifest,
    pub truths: Vec<GroundTruth>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Generates every infant, writes files and `manifest.json` into `out_dir`
/// (created if missing).
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<SynthDataset> {
    config.validate()?;
    if config.n_infants < MIN_INFANTS {
        return Err(Error::TooFewInfants {
            k: MIN_INFANTS,
            found: config.n_infants,
        });
    }
    std::fs::create_dir_all(out_dir)?;
    let written = (0..config.n_infants)
        .into_par_iter()
        .map(|i| {
            let session = generate_session(config, i)?;
            let entry = write_synth_session(&session, out_dir)?;
            Ok((entry, session.truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let (entries, truths): (Vec<_>, Vec<_>) = written.into_iter().unzip();
    let manifest = DatasetManifest { entries };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    manifest.save(&manifest_path)?;
    let resolved = DatasetManifest::load(&manifest_path)?;
    Ok(SynthDataset {
        manifest_path,
        manifest: resolved,
        truths,
    })
}

/// In-memory counterpart of [`generate_dataset`]: binned sessions plus
/// ground truth, without touching the disk.
pub fn generate_sessions(config: &SynthConfig, binning: &BinningConfig) -> Result<Vec<(Session, GroundTruth)>> {
    config.validate()?;
    (0..config.n_infants)
        .into_par_iter()
        .map(|i| {
            let s = generate_session(config, i)?;
            Ok((s.to_session(binning)?, s.truth))
        })
        .collect()
}
