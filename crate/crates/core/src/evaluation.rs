//! Tracking metrics (CLEAR-MOT, IDF1, HOTA) and track-based classification.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::assignment::{iou_cost_matrix, solve_lap, CostMatrix};
use crate::geometry::{iou, BBox, Detection, GtBox, TrackRecord};

/// Ground truth below this visibility is left out of evaluation.
pub const MIN_VISIBILITY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth has no evaluable boxes")]
    EmptyGroundTruth,
    #[error("track has no logits")]
    EmptyTrack,
    #[error("duplicate {what} entry for frame {frame}, id {id}")]
    DuplicateEntry { what: &'static str, frame: u32, id: u32 },
    #[error("logit vectors disagree in length ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClearMetrics {
    pub mota: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub gt_count: usize,
}

impl ClearMetrics {
    fn finish(mut self) -> Self {
        let errors = (self.false_positives + self.false_negatives + self.id_switches) as f64;
        self.mota = 1.0 - errors / self.gt_count as f64;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct IdentityMetrics {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    /// Globally matched `(gt id, predicted id, frames in agreement)`, only
    /// pairs that share at least one frame.
    pub matching: Vec<(u32, u32, usize)>,
}

/// Per-threshold HOTA components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HotaAlpha {
    pub alpha: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    /// Sum over true positives of the association score of their pair.
    pub assoc_sum: f64,
}

impl HotaAlpha {
    pub fn det_a(&self) -> f64 {
        let denom = self.tp + self.fn_ + self.fp;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn ass_a(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.assoc_sum / self.tp as f64
        }
    }

    pub fn hota(&self) -> f64 {
        (self.det_a() * self.ass_a()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HotaMetrics {
    pub hota: f64,
    pub alphas: Vec<HotaAlpha>,
}

impl HotaMetrics {
    fn from_alphas(alphas: Vec<HotaAlpha>) -> Self {
        let hota = alphas.iter().map(HotaAlpha::hota).sum::<f64>() / alphas.len() as f64;
        Self { hota, alphas }
    }
}

/// The 19 localization thresholds 0.05, 0.10, …, 0.95.
pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SequenceMetrics {
    pub clear: ClearMetrics,
    pub identity: IdentityMetrics,
    pub hota: HotaMetrics,
    pub pred_count: usize,
}

impl SequenceMetrics {
    pub fn mota(&self) -> f64 {
        self.clear.mota
    }

    pub fn idf1(&self) -> f64 {
        self.identity.idf1
    }

    pub fn hota(&self) -> f64 {
        self.hota.hota
    }
}

struct FrameData<'a> {
    gt: Vec<&'a GtBox>,
    pred: Vec<&'a TrackRecord>,
}

/// Drops ignorable ground truth and groups both sides by frame.
fn prepare<'a>(gt: &'a [GtBox], pred: &'a [TrackRecord]) -> Result<BTreeMap<u32, FrameData<'a>>, EvalError> {
    let mut frames: BTreeMap<u32, FrameData> = BTreeMap::new();
    let mut seen_gt = HashSet::new();
    let mut evaluable = 0usize;
    for g in gt {
        if !seen_gt.insert((g.frame, g.track_id)) {
            return Err(EvalError::DuplicateEntry { what: "ground-truth", frame: g.frame, id: g.track_id });
        }
        if g.ignored || g.visibility < MIN_VISIBILITY {
            continue;
        }
        evaluable += 1;
        frames
            .entry(g.frame)
            .or_insert_with(|| FrameData { gt: Vec::new(), pred: Vec::new() })
            .gt
            .push(g);
    }
    if evaluable == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let mut seen_pred = HashSet::new();
    for p in pred {
        if !seen_pred.insert((p.frame, p.track_id)) {
            return Err(EvalError::DuplicateEntry { what: "prediction", frame: p.frame, id: p.track_id });
        }
        frames
            .entry(p.frame)
            .or_insert_with(|| FrameData { gt: Vec::new(), pred: Vec::new() })
            .pred
            .push(p);
    }
    for f in frames.values_mut() {
        f.gt.sort_by_key(|g| g.track_id);
        f.pred.sort_by_key(|p| p.track_id);
    }
    Ok(frames)
}

fn boxes_gt(gt: &[&GtBox]) -> Vec<BBox> {
    gt.iter().map(|g| g.bbox).collect()
}

fn boxes_pred(pred: &[&TrackRecord]) -> Vec<BBox> {
    pred.iter().map(|p| p.bbox).collect()
}

/// CLEAR-MOT counts and MOTA.
///
/// Per frame, pairs matched in the previous frame are kept while their IoU
/// stays at or above the threshold; the rest are matched by Hungarian on IoU.
/// A ground-truth object whose matched id differs from the last id it was
/// matched to counts one identity switch.
pub fn clear_metrics(gt: &[GtBox], pred: &[TrackRecord], iou_threshold: f64) -> Result<ClearMetrics, EvalError> {
    let frames = prepare(gt, pred)?;
    let mut out = ClearMetrics::default();
    let mut previous_pairs: HashMap<u32, u32> = HashMap::new();
    let mut last_match: HashMap<u32, u32> = HashMap::new();

    for data in frames.values() {
        let mut gt_used = vec![false; data.gt.len()];
        let mut pred_used = vec![false; data.pred.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (gi, g) in data.gt.iter().enumerate() {
            let Some(&pid) = previous_pairs.get(&g.track_id) else { continue };
            let Some(pj) = data.pred.iter().position(|p| p.track_id == pid) else { continue };
            if !pred_used[pj] && iou(&g.bbox, &data.pred[pj].bbox) >= iou_threshold {
                gt_used[gi] = true;
                pred_used[pj] = true;
                pairs.push((gi, pj));
            }
        }

        let free_gt: Vec<usize> = (0..data.gt.len()).filter(|&i| !gt_used[i]).collect();
        let free_pred: Vec<usize> = (0..data.pred.len()).filter(|&j| !pred_used[j]).collect();
        let gt_boxes: Vec<BBox> = free_gt.iter().map(|&i| data.gt[i].bbox).collect();
        let pred_boxes: Vec<BBox> = free_pred.iter().map(|&j| data.pred[j].bbox).collect();
        let solved = solve_lap(&iou_cost_matrix(&gt_boxes, &pred_boxes, iou_threshold));
        pairs.extend(solved.matches.iter().map(|&(r, c)| (free_gt[r], free_pred[c])));

        out.true_positives += pairs.len();
        out.false_negatives += data.gt.len() - pairs.len();
        out.false_positives += data.pred.len() - pairs.len();
        out.gt_count += data.gt.len();

        previous_pairs.clear();
        for &(gi, pj) in &pairs {
            let gid = data.gt[gi].track_id;
            let pid = data.pred[pj].track_id;
            if let Some(prev) = last_match.insert(gid, pid) {
                if prev != pid {
                    out.id_switches += 1;
                }
            }
            previous_pairs.insert(gid, pid);
        }
    }
    Ok(out.finish())
}

/// Identity-level precision/recall: one global one-to-one matching between
/// ground-truth and predicted identities maximizing the number of frames in
/// which the matched pair overlaps at or above the threshold.
pub fn identity_metrics(gt: &[GtBox], pred: &[TrackRecord], iou_threshold: f64) -> Result<IdentityMetrics, EvalError> {
    let frames = prepare(gt, pred)?;
    let mut gt_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pred_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gt_total = 0usize;
    let mut pred_total = 0usize;
    for data in frames.values() {
        for g in &data.gt {
            let n = gt_index.len();
            gt_index.entry(g.track_id).or_insert(n);
        }
        for p in &data.pred {
            let n = pred_index.len();
            pred_index.entry(p.track_id).or_insert(n);
        }
        gt_total += data.gt.len();
        pred_total += data.pred.len();
    }
    // Renumber in id order so the matching does not depend on first appearance.
    let gt_ids: Vec<u32> = gt_index.keys().copied().collect();
    let pred_ids: Vec<u32> = pred_index.keys().copied().collect();
    let gpos: HashMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let ppos: HashMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut overlap = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
    for data in frames.values() {
        for g in &data.gt {
            for p in &data.pred {
                if iou(&g.bbox, &p.bbox) >= iou_threshold {
                    overlap[gpos[&g.track_id]][ppos[&p.track_id]] += 1;
                }
            }
        }
    }
    let costs = CostMatrix::from_rows(
        &overlap
            .iter()
            .map(|row| row.iter().map(|&c| -(c as f64)).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    let solved = if pred_ids.is_empty() { Default::default() } else { solve_lap(&costs) };
    let mut matching = Vec::new();
    let mut idtp = 0;
    for (gi, pj) in solved.matches {
        let c = overlap[gi][pj];
        if c > 0 {
            idtp += c;
            matching.push((gt_ids[gi], pred_ids[pj], c));
        }
    }
    let idfn = gt_total - idtp;
    let idfp = pred_total - idtp;
    let denom = (2 * idtp + idfp + idfn) as f64;
    Ok(IdentityMetrics {
        idf1: if denom > 0.0 { 2.0 * idtp as f64 / denom } else { 0.0 },
        idtp,
        idfp,
        idfn,
        matching,
    })
}

pub fn idf1(gt: &[GtBox], pred: &[TrackRecord], iou_threshold: f64) -> Result<f64, EvalError> {
    identity_metrics(gt, pred, iou_threshold).map(|m| m.idf1)
}

/// HOTA with its per-threshold breakdown. At each α every frame is matched by
/// Hungarian over pairs with IoU ≥ α; DetA and AssA follow from those matches.
pub fn hota_metrics(gt: &[GtBox], pred: &[TrackRecord]) -> Result<HotaMetrics, EvalError> {
    let frames = prepare(gt, pred)?;
    let mut gt_len: HashMap<u32, usize> = HashMap::new();
    let mut pred_len: HashMap<u32, usize> = HashMap::new();
    for data in frames.values() {
        for g in &data.gt {
            *gt_len.entry(g.track_id).or_default() += 1;
        }
        for p in &data.pred {
            *pred_len.entry(p.track_id).or_default() += 1;
        }
    }
    let alphas = hota_alphas()
        .into_iter()
        .map(|alpha| {
            let mut acc = HotaAlpha { alpha, ..HotaAlpha::default() };
            let mut pair_hits: BTreeMap<(u32, u32), usize> = BTreeMap::new();
            for data in frames.values() {
                let solved = solve_lap(&iou_cost_matrix(&boxes_gt(&data.gt), &boxes_pred(&data.pred), alpha));
                let tp = solved.matches.len();
                acc.tp += tp;
                acc.fn_ += data.gt.len() - tp;
                acc.fp += data.pred.len() - tp;
                for (gi, pj) in solved.matches {
                    *pair_hits.entry((data.gt[gi].track_id, data.pred[pj].track_id)).or_default() += 1;
                }
            }
            for ((g, p), tpa) in pair_hits {
                let fna = gt_len[&g] - tpa;
                let fpa = pred_len[&p] - tpa;
                acc.assoc_sum += tpa as f64 * tpa as f64 / (tpa + fna + fpa) as f64;
            }
            acc
        })
        .collect();
    Ok(HotaMetrics::from_alphas(alphas))
}

pub fn hota(gt: &[GtBox], pred: &[TrackRecord]) -> Result<f64, EvalError> {
    hota_metrics(gt, pred).map(|m| m.hota)
}

pub fn evaluate_sequence(gt: &[GtBox], pred: &[TrackRecord], iou_threshold: f64) -> Result<SequenceMetrics, EvalError> {
    Ok(SequenceMetrics {
        clear: clear_metrics(gt, pred, iou_threshold)?,
        identity: identity_metrics(gt, pred, iou_threshold)?,
        hota: hota_metrics(gt, pred)?,
        pred_count: pred.len(),
    })
}

/// Combines per-sequence results by summing the underlying counts, visiting
/// sequences in name order.
pub fn aggregate(sequences: &BTreeMap<String, SequenceMetrics>) -> SequenceMetrics {
    let mut clear = ClearMetrics::default();
    let mut identity = IdentityMetrics::default();
    let mut alphas: Vec<HotaAlpha> = hota_alphas()
        .into_iter()
        .map(|alpha| HotaAlpha { alpha, ..HotaAlpha::default() })
        .collect();
    let mut pred_count = 0;
    for m in sequences.values() {
        clear.true_positives += m.clear.true_positives;
        clear.false_positives += m.clear.false_positives;
        clear.false_negatives += m.clear.false_negatives;
        clear.id_switches += m.clear.id_switches;
        clear.gt_count += m.clear.gt_count;
        identity.idtp += m.identity.idtp;
        identity.idfp += m.identity.idfp;
        identity.idfn += m.identity.idfn;
        for (acc, a) in alphas.iter_mut().zip(&m.hota.alphas) {
            acc.tp += a.tp;
            acc.fn_ += a.fn_;
            acc.fp += a.fp;
            acc.assoc_sum += a.assoc_sum;
        }
        pred_count += m.pred_count;
    }
    let denom = (2 * identity.idtp + identity.idfp + identity.idfn) as f64;
    identity.idf1 = if denom > 0.0 { 2.0 * identity.idtp as f64 / denom } else { 0.0 };
    SequenceMetrics {
        clear: if clear.gt_count > 0 { clear.finish() } else { clear },
        identity,
        hota: HotaMetrics::from_alphas(alphas),
        pred_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteScheme {
    /// Each detection votes for its argmax class; the modal class wins.
    MajorityVote,
    /// Argmax of the element-wise sum of logits.
    LogitSum,
}

fn check_logits(history: &[Vec<f64>]) -> Result<usize, EvalError> {
    let first = history.first().ok_or(EvalError::EmptyTrack)?;
    if first.is_empty() {
        return Err(EvalError::EmptyTrack);
    }
    for l in history {
        if l.len() != first.len() {
            return Err(EvalError::DimensionMismatch(first.len(), l.len()));
        }
    }
    Ok(first.len())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn summed(history: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    for l in history {
        for (s, v) in sums.iter_mut().zip(l) {
            *s += v;
        }
    }
    sums
}

/// Classes ordered from most to least likely under `scheme`.
///
/// Majority vote ranks by vote count, then summed logits, then lower class
/// id. Logit sum ranks by summed logits, then lower class id.
pub fn track_ranking(history: &[Vec<f64>], scheme: VoteScheme) -> Result<Vec<usize>, EvalError> {
    let k = check_logits(history)?;
    let sums = summed(history, k);
    let mut classes: Vec<usize> = (0..k).collect();
    match scheme {
        VoteScheme::LogitSum => {
            classes.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
        }
        VoteScheme::MajorityVote => {
            let mut votes = vec![0usize; k];
            for l in history {
                votes[argmax(l)] += 1;
            }
            classes.sort_by(|&a, &b| {
                votes[b]
                    .cmp(&votes[a])
                    .then(sums[b].total_cmp(&sums[a]))
                    .then(a.cmp(&b))
            });
        }
    }
    Ok(classes)
}

pub fn track_based_prediction(history: &[Vec<f64>], scheme: VoteScheme) -> Result<usize, EvalError> {
    track_ranking(history, scheme).map(|r| r[0])
}

/// Classes of a single detection ordered by logit, ties to the lower id.
pub fn instance_ranking(logits: &[f64]) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..logits.len()).collect();
    classes.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    classes
}

/// Fraction of items whose true class is among the first `k` ranked classes.
pub fn topk_accuracy(predictions: &[Vec<usize>], truth: &[i64], k: usize) -> f64 {
    assert_eq!(predictions.len(), truth.len(), "one truth per ranked list");
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(ranked, t)| ranked.iter().take(k).any(|c| *c as i64 == **t))
        .count();
    hits as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub top1: f64,
    pub top3: f64,
    pub items: usize,
    /// `confusion[truth][predicted]`, over classes `0..K`. Truths outside that
    /// range are counted in accuracy but not here.
    pub confusion: Vec<Vec<usize>>,
}

pub fn classification_report(predictions: &[Vec<usize>], truth: &[i64], n_classes: usize) -> ClassificationReport {
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (ranked, t) in predictions.iter().zip(truth) {
        if let (Some(&p), Ok(t)) = (ranked.first(), usize::try_from(*t)) {
            if t < n_classes && p < n_classes {
                confusion[t][p] += 1;
            }
        }
    }
    ClassificationReport {
        top1: topk_accuracy(predictions, truth, 1),
        top3: topk_accuracy(predictions, truth, 3),
        items: predictions.len(),
        confusion,
    }
}

/// Ranked lists and truths for the classification protocols.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassificationItems {
    pub ranked: Vec<Vec<usize>>,
    pub truth: Vec<i64>,
    pub n_classes: usize,
}

impl ClassificationItems {
    pub fn report(&self) -> ClassificationReport {
        classification_report(&self.ranked, &self.truth, self.n_classes)
    }
}

fn logit_dim(dets: &[Detection]) -> usize {
    dets.iter().find_map(|d| d.logits.as_ref().map(Vec::len)).unwrap_or(0)
}

/// Image-based protocol: one item per detection carrying logits that is
/// matched (per-frame Hungarian, IoU ≥ threshold) to evaluable ground truth.
pub fn image_based_items(gt: &[GtBox], dets: &[Detection], iou_threshold: f64) -> ClassificationItems {
    let mut out = ClassificationItems { n_classes: logit_dim(dets), ..Default::default() };
    let mut gt_by_frame: BTreeMap<u32, Vec<&GtBox>> = BTreeMap::new();
    for g in gt.iter().filter(|g| !g.ignored && g.visibility >= MIN_VISIBILITY) {
        gt_by_frame.entry(g.frame).or_default().push(g);
    }
    let mut det_by_frame: BTreeMap<u32, Vec<&Detection>> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.logits.is_some()) {
        det_by_frame.entry(d.frame).or_default().push(d);
    }
    for (frame, frame_dets) in det_by_frame {
        let Some(frame_gt) = gt_by_frame.get(&frame) else { continue };
        let det_boxes: Vec<BBox> = frame_dets.iter().map(|d| d.bbox).collect();
        let solved = solve_lap(&iou_cost_matrix(&det_boxes, &boxes_gt(frame_gt), iou_threshold));
        for (di, gj) in solved.matches {
            let logits = frame_dets[di].logits.as_ref().expect("filtered above");
            out.ranked.push(instance_ranking(logits));
            out.truth.push(frame_gt[gj].class_id);
        }
    }
    out
}

/// Rebuilds each output track's logit history by pairing every output row
/// with the same-frame detection it was emitted from (highest IoU, at least
/// `min_iou`).
pub fn join_track_logits(tracks: &[TrackRecord], dets: &[Detection], min_iou: f64) -> BTreeMap<u32, Vec<Vec<f64>>> {
    let mut det_by_frame: HashMap<u32, Vec<&Detection>> = HashMap::new();
    for d in dets.iter().filter(|d| d.logits.is_some()) {
        det_by_frame.entry(d.frame).or_default().push(d);
    }
    let mut rows: Vec<&TrackRecord> = tracks.iter().collect();
    rows.sort_by_key(|r| (r.frame, r.track_id));
    let mut out: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let Some(candidates) = det_by_frame.get(&r.frame) else { continue };
        let mut best: Option<(&Detection, f64)> = None;
        for d in candidates {
            let score = iou(&r.bbox, &d.bbox);
            if score >= min_iou && best.is_none_or(|(_, s)| score > s) {
                best = Some((d, score));
            }
        }
        if let Some((d, _)) = best {
            out.entry(r.track_id).or_default().push(d.logits.clone().expect("filtered above"));
        }
    }
    out
}

/// Track-based protocol: one item per ground-truth identity that the global
/// identity matching pairs with an output track. The item's truth is that
/// identity's annotated class; its ranking comes from the paired track's
/// logits under `scheme`. Unpaired output tracks are left out.
pub fn track_based_items(
    gt: &[GtBox],
    tracks: &[TrackRecord],
    dets: &[Detection],
    scheme: VoteScheme,
    iou_threshold: f64,
) -> Result<ClassificationItems, EvalError> {
    let identity = identity_metrics(gt, tracks, iou_threshold)?;
    let histories = join_track_logits(tracks, dets, 0.5);
    let mut class_votes: HashMap<u32, BTreeMap<i64, usize>> = HashMap::new();
    for g in gt.iter().filter(|g| !g.ignored && g.visibility >= MIN_VISIBILITY) {
        *class_votes.entry(g.track_id).or_default().entry(g.class_id).or_default() += 1;
    }
    let mut out = ClassificationItems { n_classes: logit_dim(dets), ..Default::default() };
    for (gt_id, pred_id, _) in identity.matching {
        let Some(history) = histories.get(&pred_id) else { continue };
        let truth = class_votes[&gt_id]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| *c)
            .expect("matched identity has boxes");
        out.ranked.push(track_ranking(history, scheme)?);
        out.truth.push(truth);
    }
    Ok(out)
}

/// Machine-readable metrics report. Fields that do not apply are `null`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub hota: Option<f64>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub ids: Option<usize>,
    pub top1: Option<f64>,
    pub top3: Option<f64>,
}

impl MetricsReport {
    pub fn from_sequence(m: &SequenceMetrics) -> Self {
        Self {
            mota: Some(m.mota()),
            idf1: Some(m.idf1()),
            hota: Some(m.hota()),
            fp: Some(m.clear.false_positives),
            fn_: Some(m.clear.false_negatives),
            ids: Some(m.clear.id_switches),
            ..Self::default()
        }
    }

    pub fn from_classification(r: &ClassificationReport) -> Self {
        Self {
            top1: Some(r.top1),
            top3: Some(r.top3),
            ..Self::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0));
        let cnt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        writeln!(f, "{:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "MOTA", "IDF1", "HOTA", "FP", "FN", "IDs", "Top-1", "Top-3")?;
        writeln!(
            f,
            "{:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            pct(self.mota),
            pct(self.idf1),
            pct(self.hota),
            cnt(self.fp),
            cnt(self.fn_),
            cnt(self.ids),
            pct(self.top1),
            pct(self.top3)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(l: f64, t: f64) -> BBox {
        BBox::new(l, t, 10.0, 20.0).unwrap()
    }

    fn g(frame: u32, id: u32, b: BBox) -> GtBox {
        GtBox { frame, track_id: id, bbox: b, class_id: 0, visibility: 1.0, ignored: false }
    }

    fn p(frame: u32, id: u32, b: BBox) -> TrackRecord {
        TrackRecord { frame, track_id: id, bbox: b, conf: 1.0, class_id: None }
    }

    fn two_targets(frames: u32) -> Vec<GtBox> {
        (1..=frames)
            .flat_map(|f| [g(f, 1, bb(f as f64, 0.)), g(f, 2, bb(100.0 - f as f64, 50.))])
            .collect()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = two_targets(6);
        let pred: Vec<TrackRecord> = gt.iter().map(|x| p(x.frame, x.track_id + 10, x.bbox)).collect();
        let m = evaluate_sequence(&gt, &pred, 0.5).unwrap();
        assert_eq!(m.mota(), 1.0);
        assert_eq!(m.idf1(), 1.0);
        assert!((m.hota() - 1.0).abs() < 1e-12);
        assert_eq!((m.clear.false_positives, m.clear.false_negatives, m.clear.id_switches), (0, 0, 0));
    }

    #[test]
    fn id_switch_fixture() {
        let gt: Vec<GtBox> = (1..=4).map(|f| g(f, 1, bb(0., 0.))).collect();
        let pred: Vec<TrackRecord> = (1..=4).map(|f| p(f, if f < 3 { 1 } else { 2 }, bb(0., 0.))).collect();
        let m = clear_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(m.id_switches, 1);
        assert!((m.mota - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mota_formula_instantiation() {
        let m = ClearMetrics { false_positives: 5, false_negatives: 10, id_switches: 2, gt_count: 100, ..Default::default() }.finish();
        assert!((m.mota - 0.83).abs() < 1e-12);
    }

    #[test]
    fn persistence_keeps_previous_pair() {
        // Frame 2: prediction 2 fits the GT slightly better, but the frame-1
        // pair (1 -> 1) is still above threshold and is kept.
        let gt = vec![g(1, 1, bb(0., 0.)), g(2, 1, bb(0., 0.))];
        let pred = vec![
            p(1, 1, bb(0., 0.)),
            p(2, 1, bb(2., 0.)),
            p(2, 2, bb(1., 0.)),
        ];
        let m = clear_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(m.id_switches, 0);
        assert_eq!(m.false_positives, 1);
    }

    #[test]
    fn ignored_and_invisible_gt_excluded() {
        let mut gt = vec![g(1, 1, bb(0., 0.)), g(1, 2, bb(50., 0.)), g(1, 3, bb(100., 0.))];
        gt[1].ignored = true;
        gt[2].visibility = 0.05;
        let m = clear_metrics(&gt, &[p(1, 1, bb(0., 0.))], 0.5).unwrap();
        assert_eq!(m.gt_count, 1);
        assert_eq!(m.false_negatives, 0);
        assert_eq!(clear_metrics(&gt[1..], &[], 0.5), Err(EvalError::EmptyGroundTruth));
    }

    #[test]
    fn idf1_half_coverage() {
        let gt: Vec<GtBox> = (1..=10).map(|f| g(f, 1, bb(0., 0.))).collect();
        let pred: Vec<TrackRecord> = (1..=5).map(|f| p(f, 9, bb(0., 0.))).collect();
        let m = identity_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!((m.idtp, m.idfp, m.idfn), (5, 0, 5));
        assert!((m.idf1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(idf1(&gt, &[], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn idf1_prefers_total_overlap_over_cardinality() {
        // gt 1 overlaps pred 1 for 10 frames, pred 2 for one; gt 2 overlaps pred 1 once.
        let mut gt: Vec<GtBox> = (1..=10).map(|f| g(f, 1, bb(0., 0.))).collect();
        gt.push(g(11, 1, bb(0., 0.)));
        gt.push(g(12, 2, bb(0., 0.)));
        let mut pred: Vec<TrackRecord> = (1..=10).map(|f| p(f, 1, bb(0., 0.))).collect();
        pred.push(p(11, 2, bb(0., 0.)));
        pred.push(p(12, 1, bb(0., 0.)));
        let m = identity_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(m.idtp, 10);
    }

    #[test]
    fn hota_fixtures() {
        let gt: Vec<GtBox> = (1..=10).map(|f| g(f, 1, bb(0., 0.))).collect();
        let pred: Vec<TrackRecord> = (1..=8).map(|f| p(f, 4, bb(0., 0.))).collect();
        let h = hota_metrics(&gt, &pred).unwrap();
        for a in &h.alphas {
            assert!((a.det_a() - 0.8).abs() < 1e-12);
            assert!((a.ass_a() - 0.8).abs() < 1e-12);
        }
        assert!((h.hota - 0.8).abs() < 1e-9);
        assert_eq!(hota(&gt, &[]).unwrap(), 0.0);
        assert_eq!(h.alphas.len(), 19);
    }

    #[test]
    fn hota_partial_overlap_depends_on_alpha() {
        // IoU between gt and pred is exactly 0.5 (shifted by a third of the width).
        let gt = vec![g(1, 1, BBox::new(0., 0., 30., 10.).unwrap())];
        let pred = vec![p(1, 1, BBox::new(10., 0., 30., 10.).unwrap())];
        let h = hota_metrics(&gt, &pred).unwrap();
        let matched = h.alphas.iter().filter(|a| a.tp == 1).count();
        assert_eq!(matched, 10);
        assert!((h.hota - 10.0 / 19.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_id_relabeling() {
        let gt = two_targets(8);
        let mut pred: Vec<TrackRecord> = gt.iter().map(|x| p(x.frame, x.track_id, x.bbox.translate(1.0, 0.0))).collect();
        // Inject a switch and a false positive so the metrics are non-trivial.
        pred[6].track_id = 7;
        pred.push(p(3, 9, bb(300., 300.)));
        let relabeled: Vec<TrackRecord> = pred.iter().map(|r| TrackRecord { track_id: 1000 - r.track_id, ..r.clone() }).collect();
        let a = evaluate_sequence(&gt, &pred, 0.5).unwrap();
        let b = evaluate_sequence(&gt, &relabeled, 0.5).unwrap();
        assert_eq!(a.mota(), b.mota());
        assert_eq!(a.idf1(), b.idf1());
        assert!((a.hota() - b.hota()).abs() < 1e-12);
    }

    #[test]
    fn mota_identity_holds_exactly() {
        let gt = two_targets(8);
        let pred: Vec<TrackRecord> = gt.iter().skip(3).map(|x| p(x.frame, x.track_id + x.frame % 2, x.bbox)).collect();
        let m = clear_metrics(&gt, &pred, 0.5).unwrap();
        let expected = 1.0 - (m.false_positives + m.false_negatives + m.id_switches) as f64 / m.gt_count as f64;
        assert_eq!(m.mota, expected);
    }

    #[test]
    fn idf1_degrades_as_second_id_takes_over() {
        let gt: Vec<GtBox> = (1..=20).map(|f| g(f, 1, bb(0., 0.))).collect();
        let mut last = 1.0 + f64::EPSILON;
        for switched in 0..=10 {
            let pred: Vec<TrackRecord> = (1..=20).map(|f| p(f, if f <= switched { 2 } else { 1 }, bb(0., 0.))).collect();
            let v = idf1(&gt, &pred, 0.5).unwrap();
            assert!(v < last, "switched {switched}: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn aggregate_sums_counts() {
        let gt = two_targets(5);
        let pred: Vec<TrackRecord> = gt.iter().skip(2).map(|x| p(x.frame, x.track_id, x.bbox)).collect();
        let one = evaluate_sequence(&gt, &pred, 0.5).unwrap();
        let mut seqs = BTreeMap::new();
        seqs.insert("a".to_string(), one.clone());
        seqs.insert("b".to_string(), one.clone());
        let agg = aggregate(&seqs);
        assert_eq!(agg.clear.gt_count, 2 * one.clear.gt_count);
        assert!((agg.mota() - one.mota()).abs() < 1e-12);
        assert!((agg.idf1() - one.idf1()).abs() < 1e-12);
        assert!((agg.hota() - one.hota()).abs() < 1e-12);
    }

    #[test]
    fn voting_schemes_can_disagree() {
        let history = vec![vec![0., 5.], vec![3., 2.], vec![3., 2.]];
        assert_eq!(track_based_prediction(&history, VoteScheme::MajorityVote).unwrap(), 0);
        assert_eq!(track_based_prediction(&history, VoteScheme::LogitSum).unwrap(), 1);
    }

    #[test]
    fn voting_degenerate_cases() {
        let single = vec![vec![0.1, 0.7, 0.2]];
        for s in [VoteScheme::MajorityVote, VoteScheme::LogitSum] {
            assert_eq!(track_based_prediction(&single, s).unwrap(), 1);
        }
        let unanimous = vec![vec![0.1, 0.2, 0.9], vec![0.0, 0.3, 0.4], vec![0.2, 0.1, 0.5]];
        for s in [VoteScheme::MajorityVote, VoteScheme::LogitSum] {
            assert_eq!(track_based_prediction(&unanimous, s).unwrap(), 2);
        }
        assert_eq!(track_based_prediction(&[], VoteScheme::LogitSum), Err(EvalError::EmptyTrack));
    }

    #[test]
    fn majority_ties_fall_back_to_logit_sum_then_id() {
        let history = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert_eq!(track_based_prediction(&history, VoteScheme::MajorityVote).unwrap(), 1);
        let history = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(track_based_prediction(&history, VoteScheme::MajorityVote).unwrap(), 0);
    }

    #[test]
    fn logit_sum_ignores_detection_order() {
        let history = vec![vec![0.3, 0.1, 0.9], vec![1.2, 0.0, 0.1], vec![0.1, 0.8, 0.2]];
        let mut reversed = history.clone();
        reversed.reverse();
        assert_eq!(
            track_ranking(&history, VoteScheme::LogitSum).unwrap(),
            track_ranking(&reversed, VoteScheme::LogitSum).unwrap()
        );
    }

    #[test]
    fn topk_fixtures() {
        assert_eq!(topk_accuracy(&[vec![0, 1, 2], vec![1, 0, 2]], &[0, 1], 1), 1.0);
        assert_eq!(topk_accuracy(&[vec![0, 1, 2], vec![1, 0, 2]], &[0, 1], 3), 1.0);
        // A=0, B=1, C=2
        let ranked = vec![vec![0, 1, 2], vec![2, 1, 0]];
        assert_eq!(topk_accuracy(&ranked, &[0, 1], 1), 0.5);
        assert_eq!(topk_accuracy(&ranked, &[0, 1], 3), 1.0);
        let r = classification_report(&ranked, &[0, 1], 3);
        assert!(r.top1 <= r.top3);
        assert_eq!(r.confusion[1][2], 1);
    }

    #[test]
    fn report_json_keys() {
        let json = MetricsReport { mota: Some(1.0), fn_: Some(0), ..Default::default() }.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["mota", "idf1", "hota", "fp", "fn", "ids", "top1", "top3"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
