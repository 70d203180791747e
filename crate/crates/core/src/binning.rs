//! Fixed-rate binning of variable-frame-rate landmark streams.

use serde::{Deserialize, Serialize};

use crate::domain::{
    map_label, AffectLabel, Bin, FrameRecord, Modality, Point, BIN_WIDTH_S, BODY_POINTS,
    CONFIDENCE_THRESHOLD, FACE_POINTS, N_AUS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub bin_width_s: f64,
    pub confidence_threshold: f64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            bin_width_s: BIN_WIDTH_S,
            confidence_threshold: CONFIDENCE_THRESHOLD,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_s > 0.0 && self.bin_width_s.is_finite()) {
            return Err(Error::Config(format!(
                "bin width must be positive, got {}",
                self.bin_width_s
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence threshold must lie in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        Ok(())
    }

    /// Bin `k` covers `[k * width, (k + 1) * width)`.
    pub fn bin_index(&self, time_s: f64) -> usize {
        (time_s / self.bin_width_s).floor() as usize
    }
}

/// Number of frames of each modality that fell into a bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameCounts {
    pub face: usize,
    pub body: usize,
}

#[derive(Default)]
struct Accumulator {
    face_frames: usize,
    face_points: Vec<Point>,
    face_aus: Vec<f64>,
    face_conf: f64,
    body_frames: usize,
    body_points: Vec<Point>,
    body_conf: f64,
    votes: [usize; 3],
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            face_points: vec![Point::ZERO; FACE_POINTS],
            face_aus: vec![0.0; N_AUS],
            body_points: vec![Point::ZERO; BODY_POINTS],
            ..Default::default()
        }
    }

    fn add(&mut self, frame: &FrameRecord) {
        let (points, conf, count) = match frame.modality {
            Modality::Face => (&mut self.face_points, &mut self.face_conf, &mut self.face_frames),
            Modality::Body => (&mut self.body_points, &mut self.body_conf, &mut self.body_frames),
        };
        for (acc, p) in points.iter_mut().zip(&frame.points) {
            acc.x += p.x;
            acc.y += p.y;
        }
        *conf += frame.confidence;
        *count += 1;
        if let (Modality::Face, Some(aus)) = (frame.modality, &frame.aus) {
            for (acc, v) in self.face_aus.iter_mut().zip(aus) {
                *acc += v;
            }
        }
        let label = frame
            .raw_label
            .as_deref()
            .map(map_label)
            .unwrap_or(AffectLabel::Excluded);
        self.votes[label_slot(label)] += 1;
    }

    fn finish(mut self, bin_index: usize, threshold: f64) -> (Bin, FrameCounts) {
        if self.face_frames > 0 {
            let n = self.face_frames as f64;
            for p in &mut self.face_points {
                p.x /= n;
                p.y /= n;
            }
            for v in &mut self.face_aus {
                *v /= n;
            }
            self.face_conf /= n;
        }
        if self.body_frames > 0 {
            let n = self.body_frames as f64;
            for p in &mut self.body_points {
                p.x /= n;
                p.y /= n;
            }
            self.body_conf /= n;
        }
        let bin = Bin {
            bin_index,
            face_valid: self.face_conf > threshold,
            body_valid: self.body_conf > threshold,
            face_points: self.face_points,
            face_aus: self.face_aus,
            face_conf: self.face_conf,
            body_points: self.body_points,
            body_conf: self.body_conf,
            label: majority_label(self.votes),
        };
        let counts = FrameCounts {
            face: self.face_frames,
            body: self.body_frames,
        };
        (bin, counts)
    }
}

fn label_slot(label: AffectLabel) -> usize {
    match label {
        AffectLabel::Fussy => 0,
        AffectLabel::Alert => 1,
        AffectLabel::Excluded => 2,
    }
}

/// Modal label; ties go to Fussy first, then Alert. A bin without votes is
/// Excluded.
fn majority_label(votes: [usize; 3]) -> AffectLabel {
    let order = [AffectLabel::Fussy, AffectLabel::Alert, AffectLabel::Excluded];
    let mut best = AffectLabel::Excluded;
    let mut best_count = 0;
    for label in order {
        let count = votes[label_slot(label)];
        if count > best_count {
            best = label;
            best_count = count;
        }
    }
    best
}

/// Averages frames into fixed-width bins starting at bin 0 and ending at the
/// bin holding the latest frame. Empty bins for a modality carry zeros and
/// confidence 0.
pub fn bin_frames(frames: &[FrameRecord], config: &BinningConfig) -> Result<Vec<Bin>> {
    bin_frames_counted(frames, config).map(|(bins, _)| bins)
}

/// Same as [`bin_frames`], also returning per-bin frame counts.
pub fn bin_frames_counted(
    frames: &[FrameRecord],
    config: &BinningConfig,
) -> Result<(Vec<Bin>, Vec<FrameCounts>)> {
    config.validate()?;
    let Some(first) = frames.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let mut last_face: Option<f64> = None;
    let mut last_body: Option<f64> = None;
    let mut max_bin = 0;
    for frame in frames {
        if frame.session_id != first.session_id {
            return Err(Error::MixedSession {
                first: first.session_id.clone(),
                other: frame.session_id.clone(),
            });
        }
        if !(frame.time_s >= 0.0 && frame.time_s.is_finite()) {
            return Err(Error::Config(format!(
                "frame timestamp must be a non-negative number, got {}",
                frame.time_s
            )));
        }
        let last = match frame.modality {
            Modality::Face => &mut last_face,
            Modality::Body => &mut last_body,
        };
        if let Some(previous_s) = *last {
            if frame.time_s < previous_s {
                return Err(Error::NonMonotonicTime {
                    modality: frame.modality,
                    time_s: frame.time_s,
                    previous_s,
                });
            }
        }
        *last = Some(frame.time_s);
        max_bin = max_bin.max(config.bin_index(frame.time_s));
    }

    let mut accs: Vec<Accumulator> = (0..=max_bin).map(|_| Accumulator::new()).collect();
    for frame in frames {
        accs[config.bin_index(frame.time_s)].add(frame);
    }
    Ok(accs
        .into_iter()
        .enumerate()
        .map(|(k, acc)| acc.finish(k, config.confidence_threshold))
        .unzip())
}
