//! Shared domain types: labels, raw frame records, fixed-rate bins and sessions.

use serde::{Deserialize, Serialize};

/// Landmarks per face frame (68-point convention).
pub const FACE_POINTS: usize = 68;
/// Landmarks per body frame (25-point convention).
pub const BODY_POINTS: usize = 25;
/// Action-unit intensities per face frame.
pub const N_AUS: usize = 17;

/// Default bin width in seconds.
pub const BIN_WIDTH_S: f64 = 0.25;
/// Default extraction-confidence threshold; a bin is valid only when its mean
/// confidence is strictly above it.
pub const CONFIDENCE_THRESHOLD: f64 = 0.20;

/// Binary affect target. Anything that is not alert or fussy is excluded from
/// training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AffectLabel {
    Alert,
    Fussy,
    Excluded,
}

impl AffectLabel {
    pub fn is_labeled(self) -> bool {
        self != AffectLabel::Excluded
    }

    pub fn is_fussy(self) -> bool {
        self == AffectLabel::Fussy
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AffectLabel::Alert => "alert",
            AffectLabel::Fussy => "fussy",
            AffectLabel::Excluded => "excluded",
        }
    }
}

/// Maps a five-point arousal code onto the binary target. Crying merges into
/// fussy; drowsy, sleeping and unknown codes are excluded.
pub fn map_label(raw_label: &str) -> AffectLabel {
    match raw_label.trim().to_ascii_lowercase().as_str() {
        "alert" => AffectLabel::Alert,
        "fussy" | "crying" => AffectLabel::Fussy,
        _ => AffectLabel::Excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Body,
}

impl Modality {
    pub fn n_points(self) -> usize {
        match self {
            Modality::Face => FACE_POINTS,
            Modality::Body => BODY_POINTS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Body => "body",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One extractor output row. `raw_label` is empty until labels are joined.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub session_id: String,
    pub time_s: f64,
    pub modality: Modality,
    pub confidence: f64,
    pub points: Vec<Point>,
    pub aus: Option<Vec<f64>>,
    pub raw_label: Option<String>,
}

/// A fixed-width time slice holding per-modality means.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub bin_index: usize,
    pub face_points: Vec<Point>,
    pub face_aus: Vec<f64>,
    pub face_conf: f64,
    pub body_points: Vec<Point>,
    pub body_conf: f64,
    pub label: AffectLabel,
    pub face_valid: bool,
    pub body_valid: bool,
}

impl Bin {
    /// All-zero, invalid, excluded bin used for gaps.
    pub fn empty(bin_index: usize) -> Self {
        Bin {
            bin_index,
            face_points: vec![Point::ZERO; FACE_POINTS],
            face_aus: vec![0.0; N_AUS],
            face_conf: 0.0,
            body_points: vec![Point::ZERO; BODY_POINTS],
            body_conf: 0.0,
            label: AffectLabel::Excluded,
            face_valid: false,
            body_valid: false,
        }
    }

    pub fn valid(&self, modality: Modality) -> bool {
        match modality {
            Modality::Face => self.face_valid,
            Modality::Body => self.body_valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub infant_id: String,
    pub bins: Vec<Bin>,
}

impl Session {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn labels(&self) -> Vec<AffectLabel> {
        self.bins.iter().map(|b| b.label).collect()
    }
}
