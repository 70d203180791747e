use affect_core::binning::{bin_frames, bin_frames_counted, BinningConfig};
use affect_core::domain::{BODY_POINTS, FACE_POINTS, N_AUS};
use affect_core::ingest::{join_labels, parse_frames_from, parse_labels_from, write_labels, FrameWriter, LabelChange};
use affect_core::{map_label, AffectLabel, Error, FrameRecord, Modality, Point};
use proptest::prelude::*;

fn frame(modality: Modality, t: f64, conf: f64, seed: f64, label: Option<&str>) -> FrameRecord {
    FrameRecord {
        session_id: "s".into(),
        time_s: t,
        modality,
        confidence: conf,
        points: (0..modality.n_points())
            .map(|i| Point::new(seed + i as f64, seed * 2.0 - i as f64))
            .collect(),
        aus: (modality == Modality::Face).then(|| (0..N_AUS).map(|i| seed * i as f64).collect()),
        raw_label: label.map(str::to_string),
    }
}

#[test]
fn label_mapping() {
    assert_eq!(map_label("alert"), AffectLabel::Alert);
    assert_eq!(map_label("fussy"), AffectLabel::Fussy);
    assert_eq!(map_label("crying"), AffectLabel::Fussy);
    assert_eq!(map_label("drowsy"), AffectLabel::Excluded);
    assert_eq!(map_label("sleeping"), AffectLabel::Excluded);
}

#[test]
fn majority_ties_go_to_fussy() {
    let frames = vec![
        frame(Modality::Body, 0.00, 0.9, 1.0, Some("alert")),
        frame(Modality::Body, 0.05, 0.9, 1.0, Some("crying")),
        frame(Modality::Body, 0.10, 0.9, 1.0, Some("alert")),
        frame(Modality::Body, 0.15, 0.9, 1.0, Some("fussy")),
        frame(Modality::Body, 0.30, 0.9, 1.0, Some("sleeping")),
        frame(Modality::Body, 0.35, 0.9, 1.0, Some("alert")),
    ];
    let bins = bin_frames(&frames, &BinningConfig::default()).unwrap();
    assert_eq!(bins[0].label, AffectLabel::Fussy);
    assert_eq!(bins[1].label, AffectLabel::Alert);
}

#[test]
fn boundary_frames_belong_to_the_later_bin() {
    let frames = vec![
        frame(Modality::Face, 0.0, 0.9, 1.0, None),
        frame(Modality::Face, 0.25, 0.9, 5.0, None),
    ];
    let (bins, counts) = bin_frames_counted(&frames, &BinningConfig::default()).unwrap();
    assert_eq!(bins.len(), 2);
    assert_eq!(counts[0].face, 1);
    assert_eq!(counts[1].face, 1);
    assert_eq!(bins[1].face_points[0], Point::new(5.0, 10.0));
}

#[test]
fn confidence_equal_to_threshold_is_invalid() {
    let frames = vec![
        frame(Modality::Face, 0.0, 0.20, 1.0, None),
        frame(Modality::Body, 0.0, 0.21, 1.0, None),
    ];
    let bins = bin_frames(&frames, &BinningConfig::default()).unwrap();
    assert!(!bins[0].face_valid);
    assert!(bins[0].body_valid);
}

#[test]
fn decreasing_timestamps_are_rejected() {
    let frames = vec![
        frame(Modality::Face, 0.5, 0.9, 1.0, None),
        frame(Modality::Body, 0.1, 0.9, 1.0, None),
        frame(Modality::Face, 0.4, 0.9, 1.0, None),
    ];
    assert!(matches!(
        bin_frames(&frames, &BinningConfig::default()),
        Err(Error::NonMonotonicTime { .. })
    ));
}

/// Brute-force per-bin mean of one modality, straight from the frame list.
fn oracle_mean(frames: &[FrameRecord], modality: Modality, bin: usize) -> Option<(f64, Vec<Point>)> {
    let members: Vec<&FrameRecord> = frames
        .iter()
        .filter(|f| f.modality == modality && (f.time_s / 0.25).floor() as usize == bin)
        .collect();
    if members.is_empty() {
        return None;
    }
    let n = members.len() as f64;
    let conf = members.iter().map(|f| f.confidence).sum::<f64>() / n;
    let points = (0..modality.n_points())
        .map(|i| {
            let x = members.iter().map(|f| f.points[i].x).sum::<f64>() / n;
            let y = members.iter().map(|f| f.points[i].y).sum::<f64>() / n;
            Point::new(x, y)
        })
        .collect();
    Some((conf, points))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[test]
fn variable_rate_means_match_brute_force() {
    // 4 frames in bin 0, 9 in bin 1
    let mut frames: Vec<FrameRecord> = (0..4).map(|i| frame(Modality::Face, i as f64 * 0.06, 0.5 + 0.1 * i as f64, i as f64, None)).collect();
    frames.extend((0..9).map(|i| frame(Modality::Face, 0.25 + i as f64 * 0.027, 0.3 + 0.05 * i as f64, 10.0 - i as f64, None)));
    let bins = bin_frames(&frames, &BinningConfig::default()).unwrap();
    for (k, bin) in bins.iter().enumerate() {
        let (conf, points) = oracle_mean(&frames, Modality::Face, k).unwrap();
        assert!(close(bin.face_conf, conf));
        for (p, q) in bin.face_points.iter().zip(&points) {
            assert!(close(p.x, q.x) && close(p.y, q.y));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binning_matches_oracle_and_keeps_every_frame(
        face_gaps in prop::collection::vec(0.0f64..0.4, 1..40),
        body_gaps in prop::collection::vec(0.0f64..0.4, 1..40),
        confs in prop::collection::vec(0.0f64..1.0, 80),
    ) {
        let mut frames = Vec::new();
        for (modality, gaps) in [(Modality::Face, &face_gaps), (Modality::Body, &body_gaps)] {
            let mut t = 0.0;
            for (i, g) in gaps.iter().enumerate() {
                t += g;
                frames.push(frame(modality, t, confs[i], i as f64 * 0.5, None));
            }
        }
        let config = BinningConfig::default();
        let (bins, counts) = bin_frames_counted(&frames, &config).unwrap();
        let total: usize = counts.iter().map(|c| c.face + c.body).sum();
        prop_assert_eq!(total, frames.len());
        for (k, bin) in bins.iter().enumerate() {
            prop_assert_eq!(bin.bin_index, k);
            for modality in [Modality::Face, Modality::Body] {
                let (conf, points) = match modality {
                    Modality::Face => (bin.face_conf, &bin.face_points),
                    Modality::Body => (bin.body_conf, &bin.body_points),
                };
                match oracle_mean(&frames, modality, k) {
                    Some((c, p)) => {
                        prop_assert!(close(conf, c));
                        prop_assert!(points.iter().zip(&p).all(|(a, b)| close(a.x, b.x) && close(a.y, b.y)));
                    }
                    None => {
                        prop_assert_eq!(conf, 0.0);
                        prop_assert!(points.iter().all(|p| *p == Point::ZERO));
                    }
                }
                prop_assert_eq!(bin.valid(modality), conf > config.confidence_threshold);
            }
        }
    }

    #[test]
    fn rebinning_a_regular_stream_is_idempotent(values in prop::collection::vec(0.0f64..5.0, 1..30)) {
        let config = BinningConfig::default();
        let frames: Vec<FrameRecord> = values
            .iter()
            .enumerate()
            .flat_map(|(k, &v)| {
                let t = k as f64 * 0.25;
                [frame(Modality::Face, t, 0.8, v, Some("alert")), frame(Modality::Body, t, 0.6, v, Some("alert"))]
            })
            .collect();
        let once = bin_frames(&frames, &config).unwrap();
        let replayed: Vec<FrameRecord> = once
            .iter()
            .flat_map(|b| {
                let t = b.bin_index as f64 * 0.25;
                let mut face = frame(Modality::Face, t, b.face_conf, 0.0, Some("alert"));
                face.points = b.face_points.clone();
                face.aus = Some(b.face_aus.clone());
                let mut body = frame(Modality::Body, t, b.body_conf, 0.0, Some("alert"));
                body.points = b.body_points.clone();
                [face, body]
            })
            .collect();
        prop_assert_eq!(bin_frames(&replayed, &config).unwrap(), once);
    }
}

fn frame_row(t: f64, modality: Modality) -> FrameRecord {
    frame(modality, t, 0.75, t, None)
}

#[test]
fn ten_thousand_rows_round_trip_through_the_frame_format() {
    let mut writer = FrameWriter::new(Vec::new());
    let mut written = Vec::new();
    for i in 0..10_000 {
        let modality = if i % 3 == 0 { Modality::Face } else { Modality::Body };
        let f = frame_row(i as f64 / 30.0, modality);
        writer.write(&f).unwrap();
        written.push(f);
    }
    let bytes = writer.finish().unwrap();
    let parsed = parse_frames_from(bytes.as_slice(), "mem").unwrap();
    assert_eq!(parsed.len(), 10_000);
    assert_eq!(parsed.iter().filter(|f| f.modality == Modality::Face).count(), 3334);
    assert_eq!(parsed[1].points.len(), BODY_POINTS);
    assert_eq!(parsed[0].points.len(), FACE_POINTS);
}

#[test]
fn ten_minutes_of_body_video_fill_2400_bins() {
    let frames: Vec<FrameRecord> = (0..17_982)
        .map(|i| frame_row(((i as f64 / 29.97) * 1e6).round() / 1e6, Modality::Body))
        .collect();
    assert!(frames.last().unwrap().time_s < 600.0);
    let bins = bin_frames(&frames, &BinningConfig::default()).unwrap();
    assert_eq!(bins.len(), 2400);
}

#[test]
fn malformed_rows_are_reported_with_their_line() {
    let text = "# header comment\ns,0.0,body,0.9,1,2\n";
    match parse_frames_from(text.as_bytes(), "bad.csv") {
        Err(Error::PointCount { line, expected, found, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(expected, 2 * BODY_POINTS);
            assert_eq!(found, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
    let text = "s,abc,body,0.9\n";
    assert!(matches!(parse_frames_from(text.as_bytes(), "bad.csv"), Err(Error::Schema { .. })));
}

#[test]
fn labels_are_forward_filled_from_change_points() {
    let changes = vec![
        LabelChange {
            time_s: 0.1,
            raw_label: "alert".into(),
        },
        LabelChange {
            time_s: 0.6,
            raw_label: "crying".into(),
        },
    ];
    let mut buf = Vec::new();
    write_labels(&mut buf, &changes).unwrap();
    let parsed = parse_labels_from(buf.as_slice(), "labels").unwrap();
    assert_eq!(parsed, changes);
    let mut frames: Vec<FrameRecord> = [0.0, 0.1, 0.59, 0.6, 2.0].iter().map(|&t| frame_row(t, Modality::Body)).collect();
    join_labels(&mut frames, &parsed);
    let labels: Vec<Option<&str>> = frames.iter().map(|f| f.raw_label.as_deref()).collect();
    assert_eq!(labels, [None, Some("alert"), Some("alert"), Some("crying"), Some("crying")]);
}
