//! Landmark normalization and the four per-bin feature groups.
//!
//! Face landmarks are centered on the nose tip and divided by the face
//! length (chin to mid-brow). Body landmarks lose the legs, are centered on
//! the neck and divided by the torso length (neck to mid-hip). Each modality
//! then yields pairwise landmark distances; the face adds its action units
//! and the body adds per-landmark speeds between consecutive bins.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::domain::{AffectLabel, Modality, Point, Session, BODY_POINTS, FACE_POINTS, N_AUS};
use crate::error::{Error, Result};

/// Scale lengths at or below this are treated as undetected.
pub const DEGENERATE_SCALE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureGroupId {
    FaceDistances,
    FaceAus,
    BodyDistances,
    BodySpeeds,
}

impl FeatureGroupId {
    pub const ALL: [FeatureGroupId; 4] = [
        FeatureGroupId::FaceDistances,
        FeatureGroupId::FaceAus,
        FeatureGroupId::BodyDistances,
        FeatureGroupId::BodySpeeds,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn modality(self) -> Modality {
        match self {
            FeatureGroupId::FaceDistances | FeatureGroupId::FaceAus => Modality::Face,
            FeatureGroupId::BodyDistances | FeatureGroupId::BodySpeeds => Modality::Body,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroupId::FaceDistances => "face_distances",
            FeatureGroupId::FaceAus => "face_aus",
            FeatureGroupId::BodyDistances => "body_distances",
            FeatureGroupId::BodySpeeds => "body_speeds",
        }
    }
}

/// One value per feature group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ByGroup<T>(pub [T; 4]);

impl<T> ByGroup<T> {
    pub fn from_fn(mut f: impl FnMut(FeatureGroupId) -> T) -> Self {
        ByGroup(FeatureGroupId::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureGroupId, &T)> {
        FeatureGroupId::ALL.into_iter().zip(self.0.iter())
    }
}

impl<T> Index<FeatureGroupId> for ByGroup<T> {
    type Output = T;
    fn index(&self, group: FeatureGroupId) -> &T {
        &self.0[group.index()]
    }
}

impl<T> IndexMut<FeatureGroupId> for ByGroup<T> {
    fn index_mut(&mut self, group: FeatureGroupId) -> &mut T {
        &mut self.0[group.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Nose tip.
    pub face_anchor: usize,
    /// The mean of these two points stands in for the top of the head.
    pub face_top: [usize; 2],
    /// Chin.
    pub face_bottom: usize,
    /// Neck.
    pub body_anchor: usize,
    /// Mid-hip.
    pub body_pelvis: usize,
    /// Body landmarks kept after dropping the legs.
    pub body_retained: Vec<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            face_anchor: 30,
            face_top: [19, 24],
            face_bottom: 8,
            body_anchor: 1,
            body_pelvis: 8,
            body_retained: vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 15, 16, 17, 18],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let face = [self.face_anchor, self.face_top[0], self.face_top[1], self.face_bottom];
        if let Some(&index) = face.iter().find(|&&i| i >= FACE_POINTS) {
            return Err(Error::Index {
                index,
                len: FACE_POINTS,
            });
        }
        let body = [self.body_anchor, self.body_pelvis];
        if let Some(&index) = body
            .iter()
            .chain(&self.body_retained)
            .find(|&&i| i >= BODY_POINTS)
        {
            return Err(Error::Index {
                index,
                len: BODY_POINTS,
            });
        }
        if self.body_retained.len() < 2 {
            return Err(Error::Config("at least two body landmarks must be retained".into()));
        }
        Ok(())
    }

    pub fn group_len(&self, group: FeatureGroupId) -> usize {
        let n_body = self.body_retained.len();
        match group {
            FeatureGroupId::FaceDistances => FACE_POINTS * (FACE_POINTS - 1) / 2,
            FeatureGroupId::FaceAus => N_AUS,
            FeatureGroupId::BodyDistances => n_body * (n_body - 1) / 2,
            FeatureGroupId::BodySpeeds => n_body,
        }
    }

    pub fn face_length(&self, points: &[Point]) -> f64 {
        let [a, b] = self.face_top;
        let top = Point::new(
            (points[a].x + points[b].x) / 2.0,
            (points[a].y + points[b].y) / 2.0,
        );
        top.distance(points[self.face_bottom])
    }

    pub fn torso_length(&self, points: &[Point]) -> f64 {
        points[self.body_anchor].distance(points[self.body_pelvis])
    }
}

/// Subtracts the anchor landmark from every landmark.
pub fn center_landmarks(points: &[Point], anchor_index: usize) -> Result<Vec<Point>> {
    let anchor = *points.get(anchor_index).ok_or(Error::Index {
        index: anchor_index,
        len: points.len(),
    })?;
    Ok(points
        .iter()
        .map(|p| Point::new(p.x - anchor.x, p.y - anchor.y))
        .collect())
}

pub fn scale_landmarks(points: &[Point], scale_length: f64) -> Result<Vec<Point>> {
    if !(scale_length > DEGENERATE_SCALE_EPS) {
        return Err(Error::DegenerateScale(scale_length));
    }
    Ok(points
        .iter()
        .map(|p| Point::new(p.x / scale_length, p.y / scale_length))
        .collect())
}

/// Index pairs `(i, j)` with `i < j` in lexicographic order.
pub fn pair_table(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Euclidean distances of all landmark pairs in lexicographic `(i, j)` order.
pub fn pairwise_distances(points: &[Point]) -> Vec<f64> {
    pair_table(points.len())
        .into_iter()
        .map(|(i, j)| points[i].distance(points[j]))
        .collect()
}

/// Distance each landmark moved since the previous bin; zeros without one.
pub fn landmark_speeds(prev_points: Option<&[Point]>, curr_points: &[Point]) -> Result<Vec<f64>> {
    match prev_points {
        None => Ok(vec![0.0; curr_points.len()]),
        Some(prev) if prev.len() != curr_points.len() => Err(Error::LengthMismatch {
            left: prev.len(),
            right: curr_points.len(),
        }),
        Some(prev) => Ok(prev
            .iter()
            .zip(curr_points)
            .map(|(a, b)| a.distance(*b))
            .collect()),
    }
}

/// Centers on the anchor and scales; a degenerate scale yields all-zero
/// points and `false`.
fn normalize(points: &[Point], anchor: usize, scale: f64) -> (Vec<Point>, bool) {
    let scaled = center_landmarks(points, anchor).and_then(|c| scale_landmarks(&c, scale));
    match scaled {
        Ok(p) => (p, true),
        Err(_) => (vec![Point::ZERO; points.len()], false),
    }
}

/// Per-bin feature vectors for all four groups.
#[derive(Debug, Clone, PartialEq)]
pub struct BinFeatures {
    pub bin_index: usize,
    pub groups: ByGroup<Vec<f64>>,
    pub face_valid: bool,
    pub body_valid: bool,
    pub label: AffectLabel,
}

/// Normalized landmarks of one session, from which any base feature series
/// can be produced without materializing every distance of every bin.
#[derive(Debug, Clone)]
pub struct SessionFeatures {
    pub infant_id: String,
    pub session_id: String,
    pub n_bins: usize,
    pub face_valid: Vec<bool>,
    pub body_valid: Vec<bool>,
    pub labels: Vec<AffectLabel>,
    face: Vec<Point>,
    face_aus: Vec<f64>,
    body: Vec<Point>,
    speeds: Vec<f64>,
    n_body: usize,
    face_pairs: Vec<(usize, usize)>,
    body_pairs: Vec<(usize, usize)>,
}

impl SessionFeatures {
    pub fn from_session(session: &Session, config: &PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let n_bins = session.n_bins();
        let n_body = config.body_retained.len();
        let mut face = Vec::with_capacity(n_bins * FACE_POINTS);
        let mut face_aus = Vec::with_capacity(n_bins * N_AUS);
        let mut body = Vec::with_capacity(n_bins * n_body);
        let mut speeds = Vec::with_capacity(n_bins * n_body);
        let mut face_valid = Vec::with_capacity(n_bins);
        let mut body_valid = Vec::with_capacity(n_bins);

        for (k, bin) in session.bins.iter().enumerate() {
            if bin.face_points.len() != FACE_POINTS || bin.body_points.len() != BODY_POINTS {
                return Err(Error::DimensionMismatch(format!(
                    "bin {k} has {} face and {} body points",
                    bin.face_points.len(),
                    bin.body_points.len()
                )));
            }
            let (f, f_ok) = normalize(
                &bin.face_points,
                config.face_anchor,
                config.face_length(&bin.face_points),
            );
            face.extend_from_slice(&f);
            face_aus.extend_from_slice(&bin.face_aus);
            face_valid.push(bin.face_valid && f_ok);

            let centered = center_landmarks(&bin.body_points, config.body_anchor)?;
            let anchor_shift: Vec<Point> = config.body_retained.iter().map(|&i| centered[i]).collect();
            let scale = config.torso_length(&bin.body_points);
            let (b, b_ok) = match scale_landmarks(&anchor_shift, scale) {
                Ok(p) => (p, true),
                Err(_) => (vec![Point::ZERO; n_body], false),
            };
            let prev = (k > 0).then(|| &body[(k - 1) * n_body..k * n_body]);
            let s = landmark_speeds(prev, &b)?;
            speeds.extend_from_slice(&s);
            body.extend_from_slice(&b);
            body_valid.push(bin.body_valid && b_ok);
        }

        Ok(SessionFeatures {
            infant_id: session.infant_id.clone(),
            session_id: session.session_id.clone(),
            n_bins,
            face_valid,
            body_valid,
            labels: session.labels(),
            face,
            face_aus,
            body,
            speeds,
            n_body,
            face_pairs: pair_table(FACE_POINTS),
            body_pairs: pair_table(n_body),
        })
    }

    pub fn base_len(&self, group: FeatureGroupId) -> usize {
        match group {
            FeatureGroupId::FaceDistances => self.face_pairs.len(),
            FeatureGroupId::FaceAus => N_AUS,
            FeatureGroupId::BodyDistances => self.body_pairs.len(),
            FeatureGroupId::BodySpeeds => self.n_body,
        }
    }

    pub fn valid(&self, modality: Modality) -> &[bool] {
        match modality {
            Modality::Face => &self.face_valid,
            Modality::Body => &self.body_valid,
        }
    }

    fn face_points(&self, bin: usize) -> &[Point] {
        &self.face[bin * FACE_POINTS..(bin + 1) * FACE_POINTS]
    }

    fn body_points(&self, bin: usize) -> &[Point] {
        &self.body[bin * self.n_body..(bin + 1) * self.n_body]
    }

    /// Value of one base feature at one bin.
    pub fn value(&self, group: FeatureGroupId, feature: usize, bin: usize) -> f64 {
        match group {
            FeatureGroupId::FaceDistances => {
                let (i, j) = self.face_pairs[feature];
                let p = self.face_points(bin);
                p[i].distance(p[j])
            }
            FeatureGroupId::FaceAus => self.face_aus[bin * N_AUS + feature],
            FeatureGroupId::BodyDistances => {
                let (i, j) = self.body_pairs[feature];
                let p = self.body_points(bin);
                p[i].distance(p[j])
            }
            FeatureGroupId::BodySpeeds => self.speeds[bin * self.n_body + feature],
        }
    }

    /// Writes the series of one base feature over all bins into `out`.
    pub fn fill_series(&self, group: FeatureGroupId, feature: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.n_bins).map(|bin| self.value(group, feature, bin)));
    }

    pub fn bin_features(&self, bin: usize) -> BinFeatures {
        let groups = ByGroup::from_fn(|group| match group {
            FeatureGroupId::FaceDistances => pairwise_distances(self.face_points(bin)),
            FeatureGroupId::FaceAus => self.face_aus[bin * N_AUS..(bin + 1) * N_AUS].to_vec(),
            FeatureGroupId::BodyDistances => pairwise_distances(self.body_points(bin)),
            FeatureGroupId::BodySpeeds => {
                self.speeds[bin * self.n_body..(bin + 1) * self.n_body].to_vec()
            }
        });
        BinFeatures {
            bin_index: bin,
            groups,
            face_valid: self.face_valid[bin],
            body_valid: self.body_valid[bin],
            label: self.labels[bin],
        }
    }

    /// Replaces the per-bin labels, e.g. for permutation controls.
    pub fn with_labels(mut self, labels: Vec<AffectLabel>) -> Result<Self> {
        if labels.len() != self.n_bins {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: self.n_bins,
            });
        }
        self.labels = labels;
        Ok(self)
    }
}

pub fn compute_bin_features(session: &Session, config: &PreprocessConfig) -> Result<Vec<BinFeatures>> {
    let features = SessionFeatures::from_session(session, config)?;
    Ok((0..features.n_bins).map(|k| features.bin_features(k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centering() {
        let same = vec![Point::new(5.0, 5.0); 4];
        assert!(center_landmarks(&same, 0).unwrap().iter().all(|p| *p == Point::ZERO));
        let pts = [Point::new(1.0, 1.0), Point::new(4.0, 5.0)];
        assert_eq!(
            center_landmarks(&pts, 0).unwrap(),
            vec![Point::ZERO, Point::new(3.0, 4.0)]
        );
        assert!(matches!(
            center_landmarks(&pts, 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn scaling() {
        let pts = [Point::new(2.0, 4.0)];
        assert_eq!(scale_landmarks(&pts, 1.0).unwrap(), pts.to_vec());
        assert_eq!(scale_landmarks(&pts, 2.0).unwrap(), vec![Point::new(1.0, 2.0)]);
        assert!(matches!(scale_landmarks(&pts, 0.0), Err(Error::DegenerateScale(_))));
        assert!(matches!(scale_landmarks(&pts, 1e-6), Err(Error::DegenerateScale(_))));
        assert!(matches!(scale_landmarks(&pts, f64::NAN), Err(Error::DegenerateScale(_))));
    }

    #[test]
    fn distances_and_speeds() {
        assert_eq!(pairwise_distances(&[Point::ZERO, Point::new(3.0, 4.0)]), vec![5.0]);
        assert!(pairwise_distances(&[Point::new(1.0, 1.0); 5]).iter().all(|&d| d == 0.0));
        assert_eq!(pairwise_distances(&[Point::ZERO; 13]).len(), 78);

        let pts = [Point::new(1.0, 2.0), Point::new(3.0, 3.0)];
        assert_eq!(landmark_speeds(Some(&pts), &pts).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            landmark_speeds(Some(&[Point::ZERO]), &[Point::new(3.0, 4.0)]).unwrap(),
            vec![5.0]
        );
        assert_eq!(landmark_speeds(None, &pts).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            landmark_speeds(Some(&pts[..1]), &pts),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn group_lengths() {
        let cfg = PreprocessConfig::default();
        assert_eq!(cfg.group_len(FeatureGroupId::FaceDistances), 2278);
        assert_eq!(cfg.group_len(FeatureGroupId::FaceAus), 17);
        assert_eq!(cfg.group_len(FeatureGroupId::BodyDistances), 78);
        assert_eq!(cfg.group_len(FeatureGroupId::BodySpeeds), 13);
    }

    #[test]
    fn undetected_face_bin_is_zero_and_invalid() {
        let mut bin = crate::domain::Bin::empty(0);
        bin.face_conf = 0.9;
        bin.face_valid = true;
        bin.label = AffectLabel::Alert;
        let session = Session {
            session_id: "s".into(),
            infant_id: "i".into(),
            bins: vec![bin],
        };
        let feats = compute_bin_features(&session, &PreprocessConfig::default()).unwrap();
        assert!(!feats[0].face_valid);
        assert!(feats[0].groups[FeatureGroupId::FaceDistances].iter().all(|&v| v == 0.0));
        assert!(feats[0].groups[FeatureGroupId::FaceAus].iter().all(|&v| v == 0.0));
    }
}
