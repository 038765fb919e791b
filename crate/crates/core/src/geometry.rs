//! Box geometry and the MOT-Challenge / JSONL record formats.
//!
//! Boxes live in continuous pixel coordinates with a top-left origin. Nothing
//! is rounded until a record is written back out.

use std::fmt;

use serde::Deserialize;
use thiserror::Error;

/// Kalman measurement vector: centre x, centre y, aspect (w/h), height.
pub type Measurement = [f64; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: {what} has length {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

impl FormatError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        FormatError::MalformedLine {
            line,
            reason: reason.into(),
        }
    }

    /// 1-based line number the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::MalformedLine { line, .. } | FormatError::DimensionMismatch { line, .. } => {
                Some(*line)
            }
            FormatError::InvalidBox(_) => None,
        }
    }
}

/// Axis-aligned box, `(left, top, width, height)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self, FormatError> {
        if !(left.is_finite() && top.is_finite() && width.is_finite() && height.is_finite()) {
            return Err(FormatError::InvalidBox("non-finite coordinate".into()));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(FormatError::InvalidBox(format!(
                "width and height must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            left,
            top,
            width,
            height,
        })
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            left: self.left + dx,
            top: self.top + dy,
            ..*self
        }
    }

    /// Area shared with `other`; zero for disjoint or edge-touching boxes.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.left.max(other.left);
        let ih = self.bottom().min(other.bottom()) - self.top.max(other.top);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union. Boxes that only share an edge score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn bbox_to_measurement(b: &BBox) -> Measurement {
    [
        b.left + b.width / 2.0,
        b.top + b.height / 2.0,
        b.width / b.height,
        b.height,
    ]
}

/// Inverse of [`bbox_to_measurement`]. The caller guarantees a positive
/// aspect and height (the Kalman predict step clamps both).
pub fn measurement_to_bbox(m: &Measurement) -> BBox {
    let [cx, cy, aspect, h] = *m;
    debug_assert!(aspect > 0.0 && h > 0.0, "non-physical measurement {m:?}");
    let w = aspect * h;
    BBox {
        left: cx - w / 2.0,
        top: cy - h / 2.0,
        width: w,
        height: h,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub conf: f64,
    pub embedding: Option<Vec<f64>>,
    pub logits: Option<Vec<f64>>,
    /// Position in the input stream; used for deterministic tie-breaking.
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub class_id: i64,
    pub visibility: f64,
    /// MOT17 flag column was 0: the box takes no part in evaluation.
    pub ignored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
    pub conf: f64,
    pub class_id: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Detection,
    GroundTruth,
    Result,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotRecord {
    Detection(Detection),
    GroundTruth(GtBox),
    Result(TrackRecord),
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T, FormatError> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| FormatError::malformed(line, format!("field `{name}` is not numeric: {raw:?}")))
}

fn parse_frame(raw: &str, line: usize) -> Result<u32, FormatError> {
    let frame: f64 = parse_field(raw, "frame", line)?;
    if frame < 1.0 || frame.fract() != 0.0 || frame > u32::MAX as f64 {
        return Err(FormatError::malformed(line, format!("frame must be a positive integer, got {raw}")));
    }
    Ok(frame as u32)
}

fn parse_id(raw: &str, line: usize) -> Result<u32, FormatError> {
    let id: f64 = parse_field(raw, "id", line)?;
    if id < 1.0 || id.fract() != 0.0 || id > u32::MAX as f64 {
        return Err(FormatError::malformed(line, format!("id must be a positive integer, got {raw}")));
    }
    Ok(id as u32)
}

fn parse_box(fields: &[&str], line: usize) -> Result<BBox, FormatError> {
    let l: f64 = parse_field(fields[0], "left", line)?;
    let t: f64 = parse_field(fields[1], "top", line)?;
    let w: f64 = parse_field(fields[2], "width", line)?;
    let h: f64 = parse_field(fields[3], "height", line)?;
    BBox::new(l, t, w, h).map_err(|e| FormatError::malformed(line, e.to_string()))
}

fn parse_conf(raw: &str, line: usize) -> Result<f64, FormatError> {
    let conf: f64 = parse_field(raw, "conf", line)?;
    if !(0.0..=1.0).contains(&conf) {
        return Err(FormatError::malformed(line, format!("confidence {conf} outside [0,1]")));
    }
    Ok(conf)
}

/// Parses one comma-separated MOT line. `line_no` is 1-based and only used
/// for diagnostics; it also becomes the `source_index` of detections.
pub fn parse_mot_line(line: &str, kind: LineKind, line_no: usize) -> Result<MotRecord, FormatError> {
    let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
    let expected = match kind {
        LineKind::Detection | LineKind::Result => 10,
        LineKind::GroundTruth => 9,
    };
    if fields.len() != expected {
        return Err(FormatError::malformed(
            line_no,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    let frame = parse_frame(fields[0], line_no)?;
    let bbox = parse_box(&fields[2..6], line_no)?;
    match kind {
        LineKind::Detection => {
            let conf = parse_conf(fields[6], line_no)?;
            Ok(MotRecord::Detection(Detection {
                frame,
                bbox,
                conf,
                embedding: None,
                logits: None,
                source_index: line_no.saturating_sub(1),
            }))
        }
        LineKind::GroundTruth => {
            let track_id = parse_id(fields[1], line_no)?;
            let flag: f64 = parse_field(fields[6], "flag", line_no)?;
            let class: f64 = parse_field(fields[7], "class", line_no)?;
            if class.fract() != 0.0 {
                return Err(FormatError::malformed(line_no, format!("class must be an integer, got {}", fields[7])));
            }
            let visibility: f64 = parse_field(fields[8], "visibility", line_no)?;
            if !(0.0..=1.0).contains(&visibility) {
                return Err(FormatError::malformed(line_no, format!("visibility {visibility} outside [0,1]")));
            }
            Ok(MotRecord::GroundTruth(GtBox {
                frame,
                track_id,
                bbox,
                class_id: class as i64,
                visibility,
                ignored: flag == 0.0,
            }))
        }
        LineKind::Result => {
            let track_id = parse_id(fields[1], line_no)?;
            let conf: f64 = parse_field(fields[6], "conf", line_no)?;
            if !conf.is_finite() {
                return Err(FormatError::malformed(line_no, "confidence is not finite"));
            }
            Ok(MotRecord::Result(TrackRecord {
                frame,
                track_id,
                bbox,
                conf,
                class_id: None,
            }))
        }
    }
}

fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a whole MOT detection file, sorted by `(frame, source_index)`.
pub fn parse_mot_detections(text: &str) -> Result<Vec<Detection>, FormatError> {
    let mut out = Vec::new();
    for (no, line) in non_blank_lines(text) {
        if let MotRecord::Detection(d) = parse_mot_line(line, LineKind::Detection, no)? {
            out.push(d);
        }
    }
    out.sort_by_key(|d| (d.frame, d.source_index));
    Ok(out)
}

/// Parses a ground-truth file. `(frame, track_id)` must be unique.
pub fn parse_gt_file(text: &str) -> Result<Vec<GtBox>, FormatError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (no, line) in non_blank_lines(text) {
        if let MotRecord::GroundTruth(g) = parse_mot_line(line, LineKind::GroundTruth, no)? {
            if !seen.insert((g.frame, g.track_id)) {
                return Err(FormatError::malformed(
                    no,
                    format!("duplicate (frame {}, id {})", g.frame, g.track_id),
                ));
            }
            out.push(g);
        }
    }
    Ok(out)
}

/// Parses a tracker result file. `(frame, track_id)` must be unique.
pub fn parse_result_file(text: &str) -> Result<Vec<TrackRecord>, FormatError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (no, line) in non_blank_lines(text) {
        if let MotRecord::Result(r) = parse_mot_line(line, LineKind::Result, no)? {
            if !seen.insert((r.frame, r.track_id)) {
                return Err(FormatError::malformed(
                    no,
                    format!("duplicate (frame {}, id {})", r.frame, r.track_id),
                ));
            }
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonDetection {
    frame: i64,
    bbox: [f64; 4],
    conf: f64,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    logits: Option<Vec<f64>>,
}

const EMBEDDING_NORM_SLACK: f64 = 1e-3;

/// Parses the JSONL detection format, one object per line:
/// `{"frame": 1, "bbox": [l, t, w, h], "conf": 0.9, "embedding": [...], "logits": [...]}`.
///
/// Embedding and logit lengths must agree across the whole stream. Embeddings
/// within 1e-3 of unit norm are renormalized; anything further off is rejected.
pub fn parse_jsonl_detections(text: &str) -> Result<Vec<Detection>, FormatError> {
    let mut out = Vec::new();
    let mut emb_dim: Option<usize> = None;
    let mut logit_dim: Option<usize> = None;
    for (no, line) in non_blank_lines(text) {
        let raw: JsonDetection =
            serde_json::from_str(line).map_err(|e| FormatError::malformed(no, e.to_string()))?;
        if raw.frame < 1 || raw.frame > u32::MAX as i64 {
            return Err(FormatError::malformed(no, format!("frame must be positive, got {}", raw.frame)));
        }
        let [l, t, w, h] = raw.bbox;
        let bbox = BBox::new(l, t, w, h).map_err(|e| FormatError::malformed(no, e.to_string()))?;
        let conf = raw.conf;
        if !(0.0..=1.0).contains(&conf) {
            return Err(FormatError::malformed(no, format!("confidence {conf} outside [0,1]")));
        }
        let embedding = match raw.embedding {
            Some(e) => {
                check_dim(&mut emb_dim, e.len(), "embedding", no)?;
                Some(normalize_embedding(e, no)?)
            }
            None => None,
        };
        if let Some(l) = &raw.logits {
            check_dim(&mut logit_dim, l.len(), "logits", no)?;
            if l.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::malformed(no, "non-finite logit"));
            }
        }
        out.push(Detection {
            frame: raw.frame as u32,
            bbox,
            conf,
            embedding,
            logits: raw.logits,
            source_index: out.len(),
        });
    }
    out.sort_by_key(|d| (d.frame, d.source_index));
    Ok(out)
}

fn check_dim(
    slot: &mut Option<usize>,
    found: usize,
    what: &'static str,
    line: usize,
) -> Result<(), FormatError> {
    match *slot {
        None if found == 0 => Err(FormatError::malformed(line, format!("{what} is empty"))),
        None => {
            *slot = Some(found);
            Ok(())
        }
        Some(expected) if expected != found => Err(FormatError::DimensionMismatch {
            line,
            what,
            expected,
            found,
        }),
        Some(_) => Ok(()),
    }
}

fn normalize_embedding(mut e: Vec<f64>, line: usize) -> Result<Vec<f64>, FormatError> {
    if e.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::malformed(line, "non-finite embedding component"));
    }
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > EMBEDDING_NORM_SLACK {
        return Err(FormatError::malformed(
            line,
            format!("embedding norm {norm:.6} is not unit length"),
        ));
    }
    e.iter_mut().for_each(|v| *v /= norm);
    Ok(e)
}

/// Renders a result-kind MOT line: geometry at 2 decimals, confidence at 4.
pub fn write_track_line(r: &TrackRecord) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.2},{:.2},{:.4},-1,-1,-1",
        r.frame,
        r.track_id,
        r.bbox.left,
        r.bbox.top,
        r.bbox.width,
        r.bbox.height,
        r.conf
    )
}

/// Renders a ground-truth MOT line (flag always 1).
pub fn write_gt_line(g: &GtBox) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.2},{:.2},{},{},{:.4}",
        g.frame,
        g.track_id,
        g.bbox.left,
        g.bbox.top,
        g.bbox.width,
        g.bbox.height,
        if g.ignored { 0 } else { 1 },
        g.class_id,
        g.visibility
    )
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.2}, {:.2}, {:.2}, {:.2})",
            self.left, self.top, self.width, self.height
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    #[test]
    fn iou_fixtures() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(0., 0., 2., 2.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 1., 1.), &bb(5., 5., 1., 1.)), 0.0);
        // intersection 2, union 6
        assert!((iou(&bb(0., 0., 2., 2.), &bb(1., 0., 2., 2.)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn abutting_boxes_do_not_overlap() {
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(2., 0., 2., 2.)), 0.0);
        assert_eq!(iou(&bb(0., 0., 2., 2.), &bb(0., 2., 2., 2.)), 0.0);
    }

    #[test]
    fn measurement_fixtures() {
        assert_eq!(bbox_to_measurement(&bb(0., 0., 2., 2.)), [1., 1., 1., 2.]);
        assert_eq!(bbox_to_measurement(&bb(10., 20., 4., 8.)), [12., 24., 0.5, 8.]);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0., 0., 0., 1.).is_err());
        assert!(BBox::new(0., 0., 1., -1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 1., 1.).is_err());
    }

    #[test]
    fn parses_detection_line() {
        let rec = parse_mot_line("1,-1,10,20,30,40,0.9,-1,-1,-1", LineKind::Detection, 1).unwrap();
        let MotRecord::Detection(d) = rec else { panic!("wrong kind") };
        assert_eq!(d.frame, 1);
        assert_eq!(d.bbox, bb(10., 20., 30., 40.));
        assert_eq!(d.conf, 0.9);
        assert!(d.embedding.is_none());
    }

    #[test]
    fn parses_groundtruth_line() {
        let rec = parse_mot_line("3,7,0,0,10,10,1,1,1.0", LineKind::GroundTruth, 1).unwrap();
        let MotRecord::GroundTruth(g) = rec else { panic!("wrong kind") };
        assert_eq!((g.frame, g.track_id), (3, 7));
        assert_eq!(g.visibility, 1.0);
        assert!(!g.ignored);
        let rec = parse_mot_line("3,7,0,0,10,10,0,1,1.0", LineKind::GroundTruth, 1).unwrap();
        let MotRecord::GroundTruth(g) = rec else { panic!("wrong kind") };
        assert!(g.ignored);
    }

    #[test]
    fn malformed_lines_carry_line_number() {
        let cases = [
            "1,-1,10,20,-5,40,0.9,-1,-1,-1",
            "1,-1,10,20,5,0,0.9,-1,-1,-1",
            "1,-1,10,20,5,40,1.5,-1,-1,-1",
            "1,-1,10,20,5,40,0.9,-1,-1",
            "1,-1,ten,20,5,40,0.9,-1,-1,-1",
            "0,-1,10,20,5,40,0.9,-1,-1,-1",
        ];
        for c in cases {
            let err = parse_mot_line(c, LineKind::Detection, 17).unwrap_err();
            assert_eq!(err.line(), Some(17), "{c}");
            assert!(matches!(err, FormatError::MalformedLine { .. }));
        }
    }

    #[test]
    fn jsonl_minimal_and_logits() {
        let dets = parse_jsonl_detections(
            "{\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.8}\n\
             {\"frame\":2,\"bbox\":[1,1,2,2],\"conf\":0.5,\"logits\":[0.2,0.8]}\n",
        )
        .unwrap();
        assert_eq!(dets.len(), 2);
        assert!(dets[0].embedding.is_none());
        assert_eq!(dets[1].logits.as_deref(), Some(&[0.2, 0.8][..]));
    }

    #[test]
    fn jsonl_dimension_mismatch() {
        let err = parse_jsonl_detections(
            "{\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.8,\"embedding\":[1,0,0,0]}\n\
             {\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.8,\"embedding\":[1,0,0,0,0]}\n",
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::DimensionMismatch { line: 2, .. }));
    }

    #[test]
    fn jsonl_embedding_normalization() {
        let dets = parse_jsonl_detections(
            "{\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.8,\"embedding\":[0.6,0.8005]}",
        )
        .unwrap();
        let e = dets[0].embedding.as_ref().unwrap();
        assert!((e.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let err = parse_jsonl_detections(
            "{\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.8,\"embedding\":[0.5,0.5]}",
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn jsonl_sorted_by_frame_then_input_order() {
        let dets = parse_jsonl_detections(
            "{\"frame\":2,\"bbox\":[0,0,2,2],\"conf\":0.8}\n\
             {\"frame\":1,\"bbox\":[0,0,2,2],\"conf\":0.7}\n\
             {\"frame\":1,\"bbox\":[5,0,2,2],\"conf\":0.6}\n",
        )
        .unwrap();
        let keys: Vec<_> = dets.iter().map(|d| (d.frame, d.source_index)).collect();
        assert_eq!(keys, vec![(1, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn write_fixtures() {
        let r = TrackRecord {
            frame: 1,
            track_id: 5,
            bbox: bb(10., 20., 30., 40.),
            conf: 0.9,
            class_id: None,
        };
        assert_eq!(write_track_line(&r), "1,5,10.00,20.00,30.00,40.00,0.9000,-1,-1,-1");
        let r = TrackRecord { conf: 1.0, ..r };
        assert!(write_track_line(&r).ends_with(",1.0000,-1,-1,-1"));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64)
            .prop_map(|(l, t, w, h)| bb(l, t, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), b in arb_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let before = iou(&a, &b);
            let after = iou(&a.translate(dx, dy), &b.translate(dx, dy));
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn measurement_round_trip(b in arb_box()) {
            let back = measurement_to_bbox(&bbox_to_measurement(&b));
            let scale = b.left().abs().max(b.top().abs()).max(b.width()).max(b.height());
            for (x, y) in [(b.left(), back.left()), (b.top(), back.top()), (b.width(), back.width()), (b.height(), back.height())] {
                prop_assert!((x - y).abs() <= 1e-9 * scale.max(1.0));
            }
        }

        #[test]
        fn result_line_round_trip(frame in 1u32..10_000, id in 1u32..1000,
                                  l in -50_000i64..50_000, t in -50_000i64..50_000,
                                  w in 1i64..50_000, h in 1i64..50_000, c in 0i64..=10_000) {
            let line = format!(
                "{frame},{id},{:.2},{:.2},{:.2},{:.2},{:.4},-1,-1,-1",
                l as f64 / 100.0, t as f64 / 100.0, w as f64 / 100.0, h as f64 / 100.0, c as f64 / 10_000.0
            );
            let MotRecord::Result(r) = parse_mot_line(&line, LineKind::Result, 1).unwrap() else { unreachable!() };
            prop_assert_eq!(write_track_line(&r), line);
        }
    }
}
