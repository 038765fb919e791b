//! A plain single-threshold SORT-style tracker: Kalman prediction, one
//! Hungarian pass on `1 - IoU`, no appearance, no recovery, no smoothing.
//! Kept deliberately separate from [`crate::pipeline`] so the two can be
//! compared.

use crate::assignment::{iou_cost_matrix, solve_lap};
use crate::geometry::{bbox_to_measurement, measurement_to_bbox, BBox, Detection, TrackRecord};
use crate::motion::{kf_init, kf_predict, kf_update, KalmanState, MotionError, NoiseProfile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortConfig {
    /// Detections below this confidence are dropped.
    pub det_threshold: f64,
    pub iou_gate: f64,
    pub init_threshold: f64,
    pub max_age: u32,
    pub min_hits: u32,
    pub noise: NoiseProfile,
}

impl Default for SortConfig {
    fn default() -> Self {
        Self {
            det_threshold: 0.6,
            iou_gate: 0.1,
            init_threshold: 0.7,
            max_age: 30,
            min_hits: 0,
            noise: NoiseProfile::default(),
        }
    }
}

struct SortTrack {
    id: u32,
    kf: KalmanState,
    misses: u32,
    hits: u32,
}

/// Tracks a whole sequence, frames 1 through the last frame with a detection.
pub fn sort_track_sequence(detections: &[Detection], cfg: &SortConfig) -> Result<Vec<TrackRecord>, MotionError> {
    let last = detections.iter().map(|d| d.frame).max().unwrap_or(0);
    let mut tracks: Vec<SortTrack> = Vec::new();
    let mut next_id = 1u32;
    let mut out = Vec::new();

    for frame in 1..=last {
        for t in &mut tracks {
            t.kf = kf_predict(&t.kf, &cfg.noise);
        }
        let mut dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.frame == frame && d.conf >= cfg.det_threshold)
            .collect();
        dets.sort_by(|a, b| b.conf.total_cmp(&a.conf).then(a.source_index.cmp(&b.source_index)));

        let det_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let trk_boxes: Vec<BBox> = tracks.iter().map(|t| measurement_to_bbox(&t.kf.measurement())).collect();
        let solution = solve_lap(&iou_cost_matrix(&det_boxes, &trk_boxes, cfg.iou_gate));

        let mut rows = Vec::new();
        let mut det_used = vec![false; dets.len()];
        let mut trk_used = vec![false; tracks.len()];
        for &(d, t) in &solution.matches {
            let track = &mut tracks[t];
            track.kf = kf_update(&track.kf, &bbox_to_measurement(&dets[d].bbox), &cfg.noise)?;
            track.misses = 0;
            track.hits += 1;
            det_used[d] = true;
            trk_used[t] = true;
            if track.hits >= cfg.min_hits {
                rows.push(row(frame, track.id, dets[d]));
            }
        }

        let mut kept = Vec::with_capacity(tracks.len());
        for (t, used) in tracks.into_iter().zip(trk_used) {
            let mut t = t;
            if !used {
                t.misses += 1;
            }
            if t.misses <= cfg.max_age {
                kept.push(t);
            }
        }
        tracks = kept;

        let mut births: Vec<&Detection> = dets
            .iter()
            .zip(&det_used)
            .filter(|(d, used)| !**used && d.conf >= cfg.init_threshold)
            .map(|(d, _)| *d)
            .collect();
        births.sort_by_key(|d| d.source_index);
        for d in births {
            let t = SortTrack {
                id: next_id,
                kf: kf_init(&bbox_to_measurement(&d.bbox), &cfg.noise),
                misses: 0,
                hits: 1,
            };
            next_id += 1;
            if t.hits >= cfg.min_hits {
                rows.push(row(frame, t.id, d));
            }
            tracks.push(t);
        }
        rows.sort_by_key(|r| r.track_id);
        out.extend(rows);
    }
    Ok(out)
}

fn row(frame: u32, id: u32, d: &Detection) -> TrackRecord {
    TrackRecord {
        frame,
        track_id: id,
        bbox: d.bbox,
        conf: d.conf,
        class_id: None,
    }
}
