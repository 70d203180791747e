//! Parsing of frame, label and manifest files into binned sessions.
//!
//! Frames file: one record per line,
//! `session_id,time_s,modality,confidence,x1,y1,...,xN,yN[,au1,...,au17]`
//! with N = 68 for `face` rows (AUs required) and N = 25 for `body` rows.
//!
//! Labels file: one `time_s,raw_label` change point per line. Labels are
//! forward-filled onto frames; frames before the first change point carry no
//! label.
//!
//! Manifest: JSON object `{"entries": [{"infant_id", "session_id",
//! "frames_path", "labels_path"}, ...]}`, paths relative to the manifest.
//!
//! Blank lines and lines starting with `#` are ignored in frames and labels
//! files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{bin_frames, BinningConfig};
use crate::domain::{FrameRecord, Modality, Point, Session, N_AUS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub infant_id: String,
    pub session_id: String,
    pub frames_path: PathBuf,
    pub labels_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a manifest and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut manifest.entries {
            if entry.frames_path.is_relative() {
                entry.frames_path = base.join(&entry.frames_path);
            }
            if entry.labels_path.is_relative() {
                entry.labels_path = base.join(&entry.labels_path);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.session_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate session id {:?}",
                    entry.session_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| match line {
            Ok(l) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

fn parse_number(field: &str, what: &str, path: &str, line: usize) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Schema {
        path: path.to_string(),
        line,
        reason: format!("{what} is not a number: {field:?}"),
    })?;
    if !value.is_finite() {
        return Err(Error::Schema {
            path: path.to_string(),
            line,
            reason: format!("{what} is not finite: {field:?}"),
        });
    }
    Ok(value)
}

fn parse_frame_line(text: &str, path: &str, line: usize) -> Result<FrameRecord> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() < 4 {
        return Err(Error::Schema {
            path: path.to_string(),
            line,
            reason: format!("expected at least 4 fields, got {}", fields.len()),
        });
    }
    let session_id = fields[0].trim().to_string();
    if session_id.is_empty() {
        return Err(Error::Schema {
            path: path.to_string(),
            line,
            reason: "empty session id".into(),
        });
    }
    let time_s = parse_number(fields[1], "time_s", path, line)?;
    if time_s < 0.0 {
        return Err(Error::Schema {
            path: path.to_string(),
            line,
            reason: format!("negative time_s {time_s}"),
        });
    }
    let modality = match fields[2].trim() {
        "face" => Modality::Face,
        "body" => Modality::Body,
        other => {
            return Err(Error::Schema {
                path: path.to_string(),
                line,
                reason: format!("unknown modality {other:?}"),
            })
        }
    };
    let confidence = parse_number(fields[3], "confidence", path, line)?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Schema {
            path: path.to_string(),
            line,
            reason: format!("confidence {confidence} outside [0, 1]"),
        });
    }

    let n_points = modality.n_points();
    let expected = match modality {
        Modality::Face => 2 * n_points + N_AUS,
        Modality::Body => 2 * n_points,
    };
    let numeric = &fields[4..];
    if numeric.len() != expected {
        return Err(Error::PointCount {
            path: path.to_string(),
            line,
            modality,
            expected,
            found: numeric.len(),
        });
    }
    let mut values = Vec::with_capacity(expected);
    for (i, field) in numeric.iter().enumerate() {
        values.push(parse_number(field, &format!("field {}", i + 5), path, line)?);
    }
    let points = values[..2 * n_points]
        .chunks_exact(2)
        .map(|xy| Point::new(xy[0], xy[1]))
        .collect();
    let aus = (modality == Modality::Face).then(|| values[2 * n_points..].to_vec());
    Ok(FrameRecord {
        session_id,
        time_s,
        modality,
        confidence,
        points,
        aus,
        raw_label: None,
    })
}

/// Parses frame records from a reader; `name` is used in error messages.
pub fn parse_frames_from<R: Read>(reader: R, name: &str) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    for (line_no, line) in content_lines(BufReader::new(reader)) {
        frames.push(parse_frame_line(&line?, name, line_no)?);
    }
    Ok(frames)
}

pub fn parse_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = File::open(path)?;
    parse_frames_from(file, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelChange {
    pub time_s: f64,
    pub raw_label: String,
}

pub fn parse_labels_from<R: Read>(reader: R, name: &str) -> Result<Vec<LabelChange>> {
    let mut changes = Vec::new();
    for (line_no, line) in content_lines(BufReader::new(reader)) {
        let line = line?;
        let Some((time, label)) = line.split_once(',') else {
            return Err(Error::Schema {
                path: name.to_string(),
                line: line_no,
                reason: "expected `time_s,raw_label`".into(),
            });
        };
        let time_s = parse_number(time, "time_s", name, line_no)?;
        let raw_label = label.trim().to_string();
        if raw_label.is_empty() || raw_label.contains(',') {
            return Err(Error::Schema {
                path: name.to_string(),
                line: line_no,
                reason: format!("bad label {raw_label:?}"),
            });
        }
        changes.push(LabelChange { time_s, raw_label });
    }
    Ok(changes)
}

pub fn parse_labels(path: &Path) -> Result<Vec<LabelChange>> {
    let file = File::open(path)?;
    parse_labels_from(file, &path.display().to_string())
}

/// Forward-fills label change points onto frames by timestamp.
pub fn join_labels(frames: &mut [FrameRecord], changes: &[LabelChange]) {
    let mut sorted: Vec<&LabelChange> = changes.iter().collect();
    sorted.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    for frame in frames {
        let upto = sorted.partition_point(|c| c.time_s <= frame.time_s);
        frame.raw_label = upto.checked_sub(1).map(|i| sorted[i].raw_label.clone());
    }
}

/// Parses, labels and bins one manifest entry. A missing frames or labels
/// file excludes the session.
pub fn load_session(entry: &ManifestEntry, binning: &BinningConfig) -> Result<Session> {
    if !entry.frames_path.is_file() {
        return Err(Error::MissingFrames {
            session_id: entry.session_id.clone(),
            path: entry.frames_path.clone(),
        });
    }
    if !entry.labels_path.is_file() {
        return Err(Error::MissingLabels {
            session_id: entry.session_id.clone(),
            path: entry.labels_path.clone(),
        });
    }
    let mut frames = parse_frames(&entry.frames_path)?;
    if let Some(other) = frames.iter().find(|f| f.session_id != entry.session_id) {
        return Err(Error::MixedSession {
            first: entry.session_id.clone(),
            other: other.session_id.clone(),
        });
    }
    let labels = parse_labels(&entry.labels_path)?;
    join_labels(&mut frames, &labels);
    let bins = bin_frames(&frames, binning)?;
    Ok(Session {
        session_id: entry.session_id.clone(),
        infant_id: entry.infant_id.clone(),
        bins,
    })
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub sessions: Vec<Session>,
    /// Sessions that could not be loaded, with the reason.
    pub excluded: Vec<(String, Error)>,
}

/// Loads every manifest entry; failures are collected as exclusions and never
/// reach downstream stages.
pub fn load_dataset(manifest: &DatasetManifest, binning: &BinningConfig) -> LoadedDataset {
    let results: Vec<(String, Result<Session>)> = manifest
        .entries
        .par_iter()
        .map(|entry| (entry.session_id.clone(), load_session(entry, binning)))
        .collect();
    let mut sessions = Vec::new();
    let mut excluded = Vec::new();
    for (id, result) in results {
        match result {
            Ok(session) => sessions.push(session),
            Err(err) => excluded.push((id, err)),
        }
    }
    LoadedDataset { sessions, excluded }
}

/// Streaming writer for frame files.
pub struct FrameWriter<W: Write> {
    out: W,
    line: String,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W) -> Self {
        FrameWriter {
            out,
            line: String::with_capacity(4096),
        }
    }

    pub fn write(&mut self, frame: &FrameRecord) -> Result<()> {
        use std::fmt::Write as _;
        self.line.clear();
        let _ = write!(
            self.line,
            "{},{},{},{}",
            frame.session_id,
            frame.time_s,
            frame.modality.as_str(),
            frame.confidence
        );
        for p in &frame.points {
            let _ = write!(self.line, ",{},{}", p.x, p.y);
        }
        if let Some(aus) = &frame.aus {
            for v in aus {
                let _ = write!(self.line, ",{v}");
            }
        }
        self.line.push('\n');
        self.out.write_all(self.line.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_labels<W: Write>(mut out: W, changes: &[LabelChange]) -> Result<()> {
    for change in changes {
        writeln!(out, "{},{}", change.time_s, change.raw_label)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a binned session back out as one frame per modality per bin plus
/// label change points, so that re-loading reproduces the same bins.
pub fn write_session(
    session: &Session,
    frames_path: &Path,
    labels_path: &Path,
    binning: &BinningConfig,
) -> Result<()> {
    let mut writer = FrameWriter::new(BufWriter::new(File::create(frames_path)?));
    let mut changes = Vec::new();
    for bin in &session.bins {
        let time_s = bin.bin_index as f64 * binning.bin_width_s;
        writer.write(&FrameRecord {
            session_id: session.session_id.clone(),
            time_s,
            modality: Modality::Face,
            confidence: bin.face_conf,
            points: bin.face_points.clone(),
            aus: Some(bin.face_aus.clone()),
            raw_label: None,
        })?;
        writer.write(&FrameRecord {
            session_id: session.session_id.clone(),
            time_s,
            modality: Modality::Body,
            confidence: bin.body_conf,
            points: bin.body_points.clone(),
            aus: None,
            raw_label: None,
        })?;
        if changes
            .last()
            .is_none_or(|c: &LabelChange| c.raw_label != bin.label.as_str())
        {
            changes.push(LabelChange {
                time_s,
                raw_label: bin.label.as_str().to_string(),
            });
        }
    }
    writer.finish()?;
    write_labels(BufWriter::new(File::create(labels_path)?), &changes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AffectLabel, BODY_POINTS, FACE_POINTS};

    fn face_line(t: f64, n_points: usize) -> String {
        let mut s = format!("s1,{t},face,0.9");
        for i in 0..n_points {
            s.push_str(&format!(",{},{}", i, i + 1));
        }
        for _ in 0..N_AUS {
            s.push_str(",0.5");
        }
        s
    }

    fn body_line(t: f64) -> String {
        let mut s = format!("s1,{t},body,0.8");
        for i in 0..BODY_POINTS {
            s.push_str(&format!(",{},{}", i, 2 * i));
        }
        s
    }

    #[test]
    fn parses_rows_in_order() {
        let text = [face_line(0.0, FACE_POINTS), body_line(0.01), face_line(0.04, FACE_POINTS)]
            .join("\n");
        let frames = parse_frames_from(text.as_bytes(), "mem").unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].modality, Modality::Face);
        assert_eq!(frames[1].modality, Modality::Body);
        assert_eq!(frames[1].points[3], Point::new(3.0, 6.0));
        assert!(frames[1].aus.is_none());
        assert_eq!(frames[2].time_s, 0.04);
        assert_eq!(frames[2].aus.as_ref().unwrap().len(), N_AUS);
    }

    #[test]
    fn short_face_row_is_point_count_error() {
        let text = face_line(0.0, 67);
        let err = parse_frames_from(text.as_bytes(), "mem").unwrap_err();
        assert!(matches!(
            err,
            Error::PointCount {
                line: 1,
                modality: Modality::Face,
                ..
            }
        ));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = format!("# header\n{}\ns1,abc,body,0.5", body_line(0.0));
        let err = parse_frames_from(text.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");

        let err = parse_frames_from("s1,0.0,hand,0.5".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    #[test]
    fn labels_forward_fill() {
        let changes =
            parse_labels_from("0.0,alert\n1.0,crying\n2.5,alert\n".as_bytes(), "mem").unwrap();
        let mut frames: Vec<FrameRecord> = [0.5, 1.0, 2.4, 3.0]
            .iter()
            .map(|&t| FrameRecord {
                session_id: "s".into(),
                time_s: t,
                modality: Modality::Body,
                confidence: 1.0,
                points: vec![Point::ZERO; BODY_POINTS],
                aus: None,
                raw_label: None,
            })
            .collect();
        join_labels(&mut frames, &changes);
        let labels: Vec<_> = frames.iter().map(|f| f.raw_label.clone().unwrap()).collect();
        assert_eq!(labels, ["alert", "crying", "crying", "alert"]);

        let late = parse_labels_from("1.0,alert".as_bytes(), "mem").unwrap();
        join_labels(&mut frames[..1], &late);
        assert_eq!(frames[0].raw_label, None);
    }

    #[test]
    fn missing_files_exclude_the_session() {
        let dir = tempfile::tempdir().unwrap();
        let frames_path = dir.path().join("f.csv");
        std::fs::write(&frames_path, body_line(0.0)).unwrap();
        let entry = ManifestEntry {
            infant_id: "i".into(),
            session_id: "s1".into(),
            frames_path: frames_path.clone(),
            labels_path: dir.path().join("missing.csv"),
        };
        let err = load_session(&entry, &BinningConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingLabels { .. }));

        let manifest = DatasetManifest {
            entries: vec![entry],
        };
        let loaded = load_dataset(&manifest, &BinningConfig::default());
        assert!(loaded.sessions.is_empty());
        assert_eq!(loaded.excluded.len(), 1);
    }

    #[test]
    fn happy_path_session() {
        let dir = tempfile::tempdir().unwrap();
        let frames_path = dir.path().join("f.csv");
        let labels_path = dir.path().join("l.csv");
        let text = [body_line(0.0), face_line(0.1, FACE_POINTS), body_line(0.6)].join("\n");
        std::fs::write(&frames_path, text).unwrap();
        std::fs::write(&labels_path, "0,alert\n0.5,fussy\n").unwrap();
        let manifest = DatasetManifest {
            entries: vec![ManifestEntry {
                infant_id: "i".into(),
                session_id: "s1".into(),
                frames_path: "f.csv".into(),
                labels_path: "l.csv".into(),
            }],
        };
        let manifest_path = dir.path().join("manifest.json");
        manifest.save(&manifest_path).unwrap();
        let manifest = DatasetManifest::load(&manifest_path).unwrap();
        let session = load_session(&manifest.entries[0], &BinningConfig::default()).unwrap();
        assert_eq!(session.n_bins(), 3);
        assert_eq!(
            session.labels(),
            [AffectLabel::Alert, AffectLabel::Excluded, AffectLabel::Fussy]
        );
        assert!(session.bins.iter().enumerate().all(|(i, b)| b.bin_index == i));
    }

    #[test]
    fn duplicate_session_ids_rejected() {
        let entry = ManifestEntry {
            infant_id: "i".into(),
            session_id: "s".into(),
            frames_path: "a".into(),
            labels_path: "b".into(),
        };
        let manifest = DatasetManifest {
            entries: vec![entry.clone(), entry],
        };
        assert!(matches!(manifest.validate(), Err(Error::Manifest(_))));
    }
}
