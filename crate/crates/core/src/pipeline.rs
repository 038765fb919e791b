//! Per-frame tracker: confidence tiers, iterative association, observation
//! centric recovery and smoothing, and track lifecycle.
//!
//! One [`Tracker`] owns one sequence and must see frames in increasing order.
//! Each frame runs:
//!
//! 1. predict every track (lost ones included);
//! 2. split detections into confidence tiers and associate them tier by tier
//!    with the still-unmatched tracks, appearance cost on the first tier only;
//! 3. match the leftovers against the *last observed* box of every still
//!    unmatched track (recovery);
//! 4. re-run the filter through interpolated observations for any track that
//!    was matched after a gap (smoothing);
//! 5. spawn tracks from confident leftovers and expire stale ones.

use thiserror::Error;

use crate::assignment::{
    fused_cost_matrix, iou_cost_matrix, solve_lap, AssignmentError, CostConfig, TrackView,
};
use crate::geometry::{bbox_to_measurement, measurement_to_bbox, BBox, Detection, Measurement, TrackRecord};
use crate::motion::{kf_init, kf_predict, kf_update, oos_rerun, KalmanState, MotionError, NoiseProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("frame {got} is not after previous frame {previous}")]
    FrameOrderViolation { previous: u32, got: u32 },
    #[error("detection for frame {found} passed while processing frame {expected}")]
    FrameMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Descending confidence boundaries `1.0 = t_0 ≥ t_1 ≥ … ≥ t_n ≥ 0`.
///
/// Tier `m` holds detections with `t_m ≤ conf < t_{m-1}`; tier 1 is closed at
/// 1.0. Detections below `t_n` are discarded. Repeated boundaries are allowed
/// and yield tiers that are always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TierConfig {
    thresholds: Vec<f64>,
}

impl TierConfig {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, TrackError> {
        let invalid = |m: String| Err(TrackError::InvalidConfig(m));
        if thresholds.len() < 2 {
            return invalid("at least one tier (two thresholds) is required".into());
        }
        if thresholds[0] != 1.0 {
            return invalid(format!("first threshold must be 1.0, got {}", thresholds[0]));
        }
        if thresholds.windows(2).any(|w| !(w[1] <= w[0])) {
            return invalid(format!("thresholds must be non-increasing: {thresholds:?}"));
        }
        let last = thresholds[thresholds.len() - 1];
        if !(0.0..1.0).contains(&last) {
            return invalid(format!("lowest threshold must lie in [0,1), got {last}"));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn tier_count(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn floor(&self) -> f64 {
        self.thresholds[self.thresholds.len() - 1]
    }

    /// 0-based tier index for `conf`, or `None` if it falls below the floor.
    pub fn tier_of(&self, conf: f64) -> Option<usize> {
        (1..self.thresholds.len()).find_map(|m| {
            let lower = self.thresholds[m];
            let upper = self.thresholds[m - 1];
            let below_upper = if m == 1 { conf <= upper } else { conf < upper };
            (conf >= lower && below_upper).then_some(m - 1)
        })
    }
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![1.0, 0.6, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleConfig {
    pub init_threshold: f64,
    pub max_age: u32,
    pub min_hits: u32,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            init_threshold: 0.7,
            max_age: 30,
            min_hits: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub tiers: TierConfig,
    pub cost: CostConfig,
    pub lifecycle: LifecycleConfig,
    pub noise: NoiseProfile,
    /// Momentum of the track appearance moving average.
    pub ema_momentum: f64,
    pub use_reid: bool,
    pub use_ocr: bool,
    pub use_oos: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tiers: TierConfig::default(),
            cost: CostConfig::default(),
            lifecycle: LifecycleConfig::default(),
            noise: NoiseProfile::default(),
            ema_momentum: 0.9,
            use_reid: true,
            use_ocr: true,
            use_oos: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: String| Err(TrackError::InvalidConfig(m));
        // Re-run the tier checks in case the struct was built by hand.
        TierConfig::new(self.tiers.thresholds.clone())?;
        if let Err(m) = self.cost.validate() {
            return bad(m);
        }
        if let Err(m) = self.noise.validate() {
            return bad(m);
        }
        let lc = &self.lifecycle;
        if !(0.0..=1.0).contains(&lc.init_threshold) {
            return bad(format!("init_threshold {} outside [0,1]", lc.init_threshold));
        }
        if lc.init_threshold < self.tiers.floor() {
            return bad(format!(
                "init_threshold {} below the lowest tier threshold {}",
                lc.init_threshold,
                self.tiers.floor()
            ));
        }
        if lc.max_age == 0 {
            return bad("max_age must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum {} outside [0,1)", self.ema_momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
}

/// Last real observation of a track and the filter posterior right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: u32,
    pub measurement: Measurement,
    pub bbox: BBox,
    pub posterior: KalmanState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub state: KalmanState,
    pub last_observation: Observation,
    pub embedding: Option<Vec<f64>>,
    pub logits_history: Vec<(u32, Vec<f64>)>,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    pub hit_count: u32,
}

impl Track {
    fn spawn(id: u32, det: &Detection, noise: &NoiseProfile) -> Self {
        let z = bbox_to_measurement(&det.bbox);
        let state = kf_init(&z, noise);
        Self {
            id,
            last_observation: Observation {
                frame: det.frame,
                measurement: z,
                bbox: det.bbox,
                posterior: state.clone(),
            },
            state,
            embedding: det.embedding.clone(),
            logits_history: det.logits.iter().map(|l| (det.frame, l.clone())).collect(),
            status: TrackStatus::Active,
            frames_since_update: 0,
            hit_count: 1,
        }
    }

    /// Box implied by the current (usually predicted) filter mean.
    pub fn predicted_bbox(&self) -> BBox {
        measurement_to_bbox(&self.state.measurement())
    }

    fn view(&self) -> TrackView<'_> {
        TrackView {
            bbox: self.predicted_bbox(),
            embedding: self.embedding.as_deref(),
        }
    }

    /// Folds a matched detection into the track. Returns whether the filter
    /// was re-run through a gap.
    fn absorb(&mut self, det: &Detection, cfg: &TrackerConfig) -> Result<bool, TrackError> {
        let z = bbox_to_measurement(&det.bbox);
        let last = &self.last_observation;
        let smoothed = cfg.use_oos && det.frame > last.frame + 1;
        self.state = if smoothed {
            oos_rerun(&last.posterior, &last.measurement, last.frame, &z, det.frame, &cfg.noise)?
        } else {
            kf_update(&self.state, &z, &cfg.noise)?
        };
        if let (Some(track_emb), Some(det_emb)) = (self.embedding.as_mut(), det.embedding.as_ref()) {
            blend_embedding(track_emb, det_emb, cfg.ema_momentum);
        } else if self.embedding.is_none() {
            self.embedding = det.embedding.clone();
        }
        if let Some(l) = &det.logits {
            self.logits_history.push((det.frame, l.clone()));
        }
        self.last_observation = Observation {
            frame: det.frame,
            measurement: z,
            bbox: det.bbox,
            posterior: self.state.clone(),
        };
        self.frames_since_update = 0;
        self.hit_count += 1;
        self.status = TrackStatus::Active;
        Ok(smoothed)
    }
}

fn blend_embedding(track: &mut [f64], det: &[f64], momentum: f64) {
    if track.len() != det.len() {
        return;
    }
    for (t, d) in track.iter_mut().zip(det) {
        *t = momentum * *t + (1.0 - momentum) * d;
    }
    let norm = track.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        track.iter_mut().for_each(|v| *v /= norm);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameAssignments {
    pub matched: Vec<(u32, Detection)>,
    pub unmatched_tracks: Vec<u32>,
    pub unmatched_detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Partition {
    pub tiers: Vec<Vec<Detection>>,
    pub discarded: Vec<Detection>,
}

pub fn partition_by_confidence(detections: &[Detection], tiers: &TierConfig) -> Partition {
    let mut out = Partition {
        tiers: vec![Vec::new(); tiers.tier_count()],
        discarded: Vec::new(),
    };
    for det in detections {
        match tiers.tier_of(det.conf) {
            Some(m) => out.tiers[m].push(det.clone()),
            None => out.discarded.push(det.clone()),
        }
    }
    for group in &mut out.tiers {
        group.sort_by(|a, b| b.conf.total_cmp(&a.conf).then(a.source_index.cmp(&b.source_index)));
    }
    out
}

/// One association pass between `tracks` (all currently unmatched, already
/// predicted) and one tier of detections. Matched tracks are updated in place.
pub fn associate_tier(
    tracks: &mut [Track],
    detections: Vec<Detection>,
    cfg: &TrackerConfig,
    use_reid: bool,
) -> Result<FrameAssignments, TrackError> {
    associate_tier_counted(tracks, detections, cfg, use_reid).map(|(a, _)| a)
}

fn associate_tier_counted(
    tracks: &mut [Track],
    detections: Vec<Detection>,
    cfg: &TrackerConfig,
    use_reid: bool,
) -> Result<(FrameAssignments, usize), TrackError> {
    let det_refs: Vec<&Detection> = detections.iter().collect();
    let views: Vec<TrackView> = tracks.iter().map(Track::view).collect();
    let costs = fused_cost_matrix(&det_refs, &views, &cfg.cost, use_reid)?;
    let solution = solve_lap(&costs);
    collect_matches(tracks, detections, &solution.matches, cfg)
}

fn collect_matches(
    tracks: &mut [Track],
    detections: Vec<Detection>,
    matches: &[(usize, usize)],
    cfg: &TrackerConfig,
) -> Result<(FrameAssignments, usize), TrackError> {
    let mut det_slots: Vec<Option<Detection>> = detections.into_iter().map(Some).collect();
    let mut track_matched = vec![false; tracks.len()];
    let mut out = FrameAssignments::default();
    let mut smoothed = 0;
    for &(d, t) in matches {
        let det = det_slots[d].take().expect("detection matched twice");
        if tracks[t].absorb(&det, cfg)? {
            smoothed += 1;
        }
        track_matched[t] = true;
        out.matched.push((tracks[t].id, det));
    }
    out.unmatched_tracks = tracks
        .iter()
        .zip(&track_matched)
        .filter(|(_, m)| !**m)
        .map(|(t, _)| t.id)
        .collect();
    out.unmatched_detections = det_slots.into_iter().flatten().collect();
    Ok((out, smoothed))
}

/// Second-chance association of unmatched tracks by their last observed box
/// (not the filter prediction) against the pooled leftovers, pure IoU cost.
pub fn ocr_recover(
    lost_tracks: &mut [Track],
    residual_detections: Vec<Detection>,
    cfg: &TrackerConfig,
) -> Result<FrameAssignments, TrackError> {
    ocr_recover_counted(lost_tracks, residual_detections, cfg).map(|(a, _)| a)
}

fn ocr_recover_counted(
    lost_tracks: &mut [Track],
    residual_detections: Vec<Detection>,
    cfg: &TrackerConfig,
) -> Result<(FrameAssignments, usize), TrackError> {
    let det_boxes: Vec<BBox> = residual_detections.iter().map(|d| d.bbox).collect();
    let last_boxes: Vec<BBox> = lost_tracks.iter().map(|t| t.last_observation.bbox).collect();
    let costs = iou_cost_matrix(&det_boxes, &last_boxes, cfg.cost.iou_gate);
    let solution = solve_lap(&costs);
    collect_matches(lost_tracks, residual_detections, &solution.matches, cfg)
}

/// Outcome of the lifecycle step for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LifecycleOutcome {
    pub tracks: Vec<Track>,
    pub rows: Vec<TrackRecord>,
    pub created: Vec<u32>,
    pub removed: Vec<u32>,
}

/// Spawns tracks from confident unmatched detections, ages and expires
/// unmatched tracks, and emits a row per matched or newborn track that has
/// enough hits. `matched_tracks` must already hold this frame's updates.
pub fn lifecycle_update(
    frame: u32,
    matched_tracks: Vec<Track>,
    unmatched_tracks: Vec<Track>,
    assign: &FrameAssignments,
    cfg: &TrackerConfig,
    next_id: &mut u32,
) -> LifecycleOutcome {
    let lc = &cfg.lifecycle;
    let mut out = LifecycleOutcome::default();

    for (id, det) in &assign.matched {
        let track = matched_tracks
            .iter()
            .find(|t| t.id == *id)
            .expect("matched id without track");
        if track.hit_count >= lc.min_hits {
            out.rows.push(emit(frame, *id, det));
        }
    }
    out.tracks.extend(matched_tracks);

    for mut track in unmatched_tracks {
        track.frames_since_update += 1;
        track.status = TrackStatus::Lost;
        if track.frames_since_update > lc.max_age {
            out.removed.push(track.id);
        } else {
            out.tracks.push(track);
        }
    }

    let mut spawn: Vec<&Detection> = assign
        .unmatched_detections
        .iter()
        .filter(|d| d.conf >= lc.init_threshold)
        .collect();
    spawn.sort_by_key(|d| d.source_index);
    for det in spawn {
        let id = *next_id;
        *next_id += 1;
        let track = Track::spawn(id, det, &cfg.noise);
        if track.hit_count >= lc.min_hits {
            out.rows.push(emit(frame, id, det));
        }
        out.created.push(id);
        out.tracks.push(track);
    }

    out.tracks.sort_by_key(|t| t.id);
    out.rows.sort_by_key(|r| r.track_id);
    out
}

fn emit(frame: u32, id: u32, det: &Detection) -> TrackRecord {
    TrackRecord {
        frame,
        track_id: id,
        bbox: det.bbox,
        conf: det.conf,
        class_id: None,
    }
}

/// Record of one association pass, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassStats {
    pub tier: usize,
    pub tracks: usize,
    pub detections: usize,
    pub matches: usize,
    pub used_reid: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameStats {
    pub frame: u32,
    pub passes: Vec<PassStats>,
    pub recovered: usize,
    pub smoothed: usize,
    pub created: Vec<u32>,
    pub removed: Vec<u32>,
    pub discarded: usize,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u32,
    last_frame: u32,
    stats: FrameStats,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: 0,
            stats: FrameStats::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn last_frame(&self) -> u32 {
        self.last_frame
    }

    /// Instrumentation for the most recently processed frame.
    pub fn last_stats(&self) -> &FrameStats {
        &self.stats
    }

    /// Processes `frame`. Skipped frames since the previous call are run as
    /// empty frames first so that ageing is counted in frames.
    pub fn step_frame(
        &mut self,
        frame: u32,
        detections: Vec<Detection>,
    ) -> Result<Vec<TrackRecord>, TrackError> {
        if frame <= self.last_frame {
            return Err(TrackError::FrameOrderViolation {
                previous: self.last_frame,
                got: frame,
            });
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(TrackError::FrameMismatch {
                expected: frame,
                found: d.frame,
            });
        }
        while self.last_frame + 1 < frame {
            let skipped = self.last_frame + 1;
            self.process(skipped, Vec::new())?;
        }
        self.process(frame, detections)
    }

    fn process(&mut self, frame: u32, detections: Vec<Detection>) -> Result<Vec<TrackRecord>, TrackError> {
        let cfg = &self.config;
        let mut stats = FrameStats {
            frame,
            ..FrameStats::default()
        };

        // Step 1: predict.
        let mut pending: Vec<Track> = std::mem::take(&mut self.tracks);
        for t in &mut pending {
            t.state = kf_predict(&t.state, &cfg.noise);
        }
        let partition = partition_by_confidence(&detections, &cfg.tiers);
        stats.discarded = partition.discarded.len();

        // Step 2: iterate tiers, high confidence first.
        let mut done: Vec<Track> = Vec::new();
        let mut assign = FrameAssignments::default();
        let mut residual: Vec<Detection> = Vec::new();
        for (tier, group) in partition.tiers.into_iter().enumerate() {
            let use_reid = cfg.use_reid && tier == 0;
            let n_dets = group.len();
            let n_tracks = pending.len();
            let (pass, smoothed) = associate_tier_counted(&mut pending, group, cfg, use_reid)?;
            stats.smoothed += smoothed;
            stats.passes.push(PassStats {
                tier: tier + 1,
                tracks: n_tracks,
                detections: n_dets,
                matches: pass.matched.len(),
                used_reid: use_reid,
            });
            move_matched(&mut pending, &mut done, &pass);
            assign.matched.extend(pass.matched);
            residual.extend(pass.unmatched_detections);
        }

        // Step 3 (and 4 for recovered tracks): recovery by last observation.
        if cfg.use_ocr && !pending.is_empty() && !residual.is_empty() {
            let (rec, smoothed) = ocr_recover_counted(&mut pending, std::mem::take(&mut residual), cfg)?;
            stats.recovered = rec.matched.len();
            stats.smoothed += smoothed;
            move_matched(&mut pending, &mut done, &rec);
            assign.matched.extend(rec.matched);
            residual = rec.unmatched_detections;
        }
        assign.unmatched_tracks = pending.iter().map(|t| t.id).collect();
        assign.unmatched_detections = residual;

        // Step 5: lifecycle.
        let outcome = lifecycle_update(frame, done, pending, &assign, cfg, &mut self.next_id);
        stats.created = outcome.created;
        stats.removed = outcome.removed;
        self.tracks = outcome.tracks;
        self.last_frame = frame;
        self.stats = stats;
        Ok(outcome.rows)
    }
}

fn move_matched(pending: &mut Vec<Track>, done: &mut Vec<Track>, pass: &FrameAssignments) {
    if pass.matched.is_empty() {
        return;
    }
    let (matched, rest): (Vec<Track>, Vec<Track>) = std::mem::take(pending)
        .into_iter()
        .partition(|t| pass.matched.iter().any(|(id, _)| *id == t.id));
    *pending = rest;
    done.extend(matched);
}

/// Runs a whole sequence through a fresh tracker, frame 1 through the last
/// frame that carries a detection. Output is ordered by frame, then id.
pub fn track_sequence(
    detections: Vec<Detection>,
    config: &TrackerConfig,
) -> Result<Vec<TrackRecord>, TrackError> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut by_frame = group_by_frame(detections);
    let last = by_frame.last().map_or(0, |(f, _)| *f);
    let mut rows = Vec::new();
    let mut cursor = by_frame.drain(..).peekable();
    for frame in 1..=last {
        let dets = match cursor.peek() {
            Some((f, _)) if *f == frame => cursor.next().map(|(_, d)| d).unwrap_or_default(),
            _ => Vec::new(),
        };
        rows.extend(tracker.step_frame(frame, dets)?);
    }
    Ok(rows)
}

/// Groups detections by frame, ascending, keeping input order inside a frame.
pub fn group_by_frame(mut detections: Vec<Detection>) -> Vec<(u32, Vec<Detection>)> {
    detections.sort_by_key(|d| (d.frame, d.source_index));
    let mut out: Vec<(u32, Vec<Detection>)> = Vec::new();
    for d in detections {
        match out.last_mut() {
            Some((f, group)) if *f == d.frame => group.push(d),
            _ => out.push((d.frame, vec![d])),
        }
    }
    out
}
