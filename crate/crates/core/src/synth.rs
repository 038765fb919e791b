//! Deterministic synthetic sequences: near-identical targets moving at
//! roughly constant velocity inside a walled arena, with pairwise occlusion
//! that collapses detector confidence and corrupts class logits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{write_gt_line, BBox, Detection, GtBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_targets: usize,
    pub n_frames: u32,
    pub arena_width: f64,
    pub arena_height: f64,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub box_width_min: f64,
    pub box_width_max: f64,
    /// Height as a multiple of width.
    pub aspect_min: f64,
    pub aspect_max: f64,
    /// Std of the per-frame positional random walk.
    pub position_sigma: f64,
    /// Number of target pairs forced to meet at one point, at evenly spaced
    /// frames through the sequence.
    pub crossing_pairs: usize,
    /// Covered fraction above which confidence is scaled by visibility.
    pub occlusion_threshold: f64,
    /// Lower bound on the confidence scale factor under occlusion.
    pub occlusion_min_factor: f64,
    pub embedding_dim: usize,
    pub sigma_id: f64,
    pub sigma_frame: f64,
    pub miss_rate: f64,
    /// Probability of one false positive per frame.
    pub fp_rate: f64,
    pub jitter: f64,
    pub conf_mean: f64,
    pub conf_sigma: f64,
    /// Detections below this confidence are not reported.
    pub conf_floor: f64,
    pub fp_conf_max: f64,
    pub n_classes: usize,
    pub logit_signal: f64,
    pub logit_noise: f64,
    /// Logit noise std grows by this multiple of the covered fraction.
    pub logit_occlusion_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_targets: 8,
            n_frames: 300,
            arena_width: 1280.0,
            arena_height: 720.0,
            speed_min: 2.0,
            speed_max: 6.0,
            box_width_min: 60.0,
            box_width_max: 120.0,
            aspect_min: 0.4,
            aspect_max: 0.6,
            position_sigma: 0.5,
            crossing_pairs: 4,
            occlusion_threshold: 0.2,
            occlusion_min_factor: 0.3,
            embedding_dim: 16,
            sigma_id: 0.05,
            sigma_frame: 0.1,
            miss_rate: 0.05,
            fp_rate: 0.1,
            jitter: 1.5,
            conf_mean: 0.85,
            conf_sigma: 0.06,
            conf_floor: 0.1,
            fp_conf_max: 0.5,
            n_classes: 5,
            logit_signal: 2.0,
            logit_noise: 1.0,
            logit_occlusion_gain: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, v) in [
            ("miss_rate", self.miss_rate),
            ("fp_rate", self.fp_rate),
            ("occlusion_threshold", self.occlusion_threshold),
            ("occlusion_min_factor", self.occlusion_min_factor),
            ("conf_mean", self.conf_mean),
            ("conf_floor", self.conf_floor),
            ("fp_conf_max", self.fp_conf_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0,1]"));
            }
        }
        for (name, v) in [
            ("position_sigma", self.position_sigma),
            ("sigma_id", self.sigma_id),
            ("sigma_frame", self.sigma_frame),
            ("jitter", self.jitter),
            ("conf_sigma", self.conf_sigma),
            ("logit_noise", self.logit_noise),
            ("logit_occlusion_gain", self.logit_occlusion_gain),
            ("logit_signal", self.logit_signal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.n_targets == 0 || self.n_frames == 0 {
            return bad("n_targets and n_frames must be positive".into());
        }
        if 2 * self.crossing_pairs > self.n_targets {
            return bad(format!("{} crossing pairs need more than {} targets", self.crossing_pairs, self.n_targets));
        }
        if self.embedding_dim == 0 || self.n_classes == 0 {
            return bad("embedding_dim and n_classes must be positive".into());
        }
        if !(0.0 < self.speed_min && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad("need 0 < speed_min <= speed_max".into());
        }
        if !(1.0 <= self.box_width_min && self.box_width_min <= self.box_width_max) {
            return bad("need 1 <= box_width_min <= box_width_max".into());
        }
        if !(0.0 < self.aspect_min && self.aspect_min <= self.aspect_max) {
            return bad("need 0 < aspect_min <= aspect_max".into());
        }
        if self.arena_width <= self.box_width_max || self.arena_height <= self.box_width_max * self.aspect_max {
            return bad("arena too small for the largest box".into());
        }
        if self.conf_floor > self.fp_conf_max {
            return bad("conf_floor above fp_conf_max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub ground_truth: Vec<GtBox>,
    pub detections: Vec<Detection>,
}

impl SyntheticSequence {
    pub fn gt_text(&self) -> String {
        self.ground_truth.iter().map(|g| write_gt_line(g) + "\n").collect()
    }

    pub fn jsonl_text(&self) -> String {
        #[derive(serde::Serialize)]
        struct Line<'a> {
            frame: u32,
            bbox: [f64; 4],
            conf: f64,
            embedding: &'a Option<Vec<f64>>,
            logits: &'a Option<Vec<f64>>,
        }
        let mut out = String::new();
        for d in &self.detections {
            let b = &d.bbox;
            let line = Line {
                frame: d.frame,
                bbox: [b.left(), b.top(), b.width(), b.height()],
                conf: d.conf,
                embedding: &d.embedding,
                logits: &d.logits,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

struct Target {
    width: f64,
    height: f64,
    /// Top-left position at `anchor_frame`, before folding into the arena.
    anchor: [f64; 2],
    anchor_frame: u32,
    velocity: [f64; 2],
    /// Positional random walk, indexed by frame − 1, zero at the anchor.
    offsets: Vec<[f64; 2]>,
    depth: usize,
    class_id: usize,
    identity_embedding: Vec<f64>,
}

impl Target {
    fn bbox(&self, frame: u32, cfg: &SynthConfig) -> BBox {
        let dt = frame as f64 - self.anchor_frame as f64;
        let off = self.offsets[(frame - 1) as usize];
        let x = fold(self.anchor[0] + self.velocity[0] * dt + off[0], cfg.arena_width - self.width);
        let y = fold(self.anchor[1] + self.velocity[1] * dt + off[1], cfg.arena_height - self.height);
        BBox::new(x, y, self.width, self.height).expect("positive size")
    }
}

/// Maps an unbounded coordinate onto `[0, limit]` as a point bouncing
/// between two walls.
fn fold(u: f64, limit: f64) -> f64 {
    let m = u.rem_euclid(2.0 * limit);
    if m > limit {
        2.0 * limit - m
    } else {
        m
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, std: &Normal<f64>) -> [f64; 2] {
    loop {
        let d = [std.sample(rng), std.sample(rng)];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if n > 1e-6 {
            return [d[0] / n, d[1] / n];
        }
    }
}

fn perturbed(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng, std: &Normal<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = base.iter().map(|b| b + sigma * std.sample(rng)).collect();
    normalize(&mut v);
    v
}

fn sample_targets(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Target>) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut prototype: Vec<f64> = (0..cfg.embedding_dim).map(|_| std.sample(rng)).collect();
    normalize(&mut prototype);

    let mut depths: Vec<usize> = (0..cfg.n_targets).collect();
    depths.shuffle(rng);

    let x_room = cfg.arena_width - cfg.box_width_max;
    let y_room = cfg.arena_height - cfg.box_width_max * cfg.aspect_max;
    let mut targets = Vec::with_capacity(cfg.n_targets);
    for i in 0..cfg.n_targets {
        let width = rng.random_range(cfg.box_width_min..=cfg.box_width_max);
        let height = width * rng.random_range(cfg.aspect_min..=cfg.aspect_max);
        let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
        let pair = i / 2;
        let (anchor, anchor_frame, dir) = if pair < cfg.crossing_pairs && i % 2 == 1 {
            // Partner of the previous target: same meeting point and frame,
            // heading 135 to 180 degrees away from it.
            let prev: &Target = &targets[i - 1];
            let pd = [prev.velocity[0], prev.velocity[1]];
            let pn = (pd[0] * pd[0] + pd[1] * pd[1]).sqrt();
            let (ux, uy) = (pd[0] / pn, pd[1] / pn);
            let s = rng.random_range(-1.0..=1.0);
            let mut d = [-ux - s * uy, -uy + s * ux];
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            d = [d[0] / n, d[1] / n];
            (prev.anchor, prev.anchor_frame, d)
        } else {
            let anchor = [rng.random_range(0.0..=x_room), rng.random_range(0.0..=y_room)];
            let frame = if pair < cfg.crossing_pairs {
                let spacing = cfg.n_frames as f64 / (cfg.crossing_pairs + 1) as f64;
                ((pair + 1) as f64 * spacing).round().max(1.0) as u32
            } else {
                rng.random_range(1..=cfg.n_frames)
            };
            (anchor, frame, unit_direction(rng, &std))
        };
        let mut offsets = vec![[0.0; 2]; cfg.n_frames as usize];
        let a = (anchor_frame - 1) as usize;
        for k in a + 1..offsets.len() {
            offsets[k] = [
                offsets[k - 1][0] + cfg.position_sigma * std.sample(rng),
                offsets[k - 1][1] + cfg.position_sigma * std.sample(rng),
            ];
        }
        for k in (0..a).rev() {
            offsets[k] = [
                offsets[k + 1][0] + cfg.position_sigma * std.sample(rng),
                offsets[k + 1][1] + cfg.position_sigma * std.sample(rng),
            ];
        }
        let class_id = rng.random_range(0..cfg.n_classes);
        let identity_embedding = perturbed(&prototype, cfg.sigma_id, rng, &std);
        targets.push(Target {
            width,
            height,
            anchor,
            anchor_frame,
            velocity: [dir[0] * speed, dir[1] * speed],
            offsets,
            depth: depths[i],
            class_id,
            identity_embedding,
        });
    }
    (prototype, targets)
}

/// Fraction of `boxes[i]` covered by the largest single overlap with a
/// target in front of it.
fn covered_fraction(i: usize, boxes: &[BBox], targets: &[Target]) -> f64 {
    let mut covered: f64 = 0.0;
    for (j, other) in boxes.iter().enumerate() {
        if j != i && targets[j].depth > targets[i].depth {
            covered = covered.max(boxes[i].intersection_area(other) / boxes[i].area());
        }
    }
    covered.min(1.0)
}

/// Generates one sequence. Identical configs give identical output.
pub fn generate_synthetic_sequence(cfg: &SynthConfig) -> Result<SyntheticSequence, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (prototype, targets) = sample_targets(cfg, &mut rng);

    let mut ground_truth = Vec::new();
    let mut detections = Vec::new();
    for frame in 1..=cfg.n_frames {
        let boxes: Vec<BBox> = targets.iter().map(|t| t.bbox(frame, cfg)).collect();
        let mut frame_dets: Vec<Detection> = Vec::new();
        for (i, target) in targets.iter().enumerate() {
            let covered = covered_fraction(i, &boxes, &targets);
            let visibility = 1.0 - covered;
            let gt_box = rounded_box(&boxes[i]);
            ground_truth.push(GtBox {
                frame,
                track_id: (i + 1) as u32,
                bbox: gt_box,
                class_id: target.class_id as i64,
                visibility: round_to(visibility, 4),
                ignored: false,
            });

            let mut conf = (cfg.conf_mean + cfg.conf_sigma * std.sample(&mut rng)).clamp(0.0, 1.0);
            if covered > cfg.occlusion_threshold {
                conf *= visibility.max(cfg.occlusion_min_factor);
            }
            let missed = rng.random::<f64>() < cfg.miss_rate;
            let jitter: [f64; 4] = std::array::from_fn(|_| cfg.jitter * std.sample(&mut rng));
            let embedding = perturbed(&target.identity_embedding, cfg.sigma_frame, &mut rng, &std);
            let noise = cfg.logit_noise * (1.0 + cfg.logit_occlusion_gain * covered);
            let logits: Vec<f64> = (0..cfg.n_classes)
                .map(|k| {
                    let signal = if k == target.class_id { cfg.logit_signal } else { 0.0 };
                    signal + noise * std.sample(&mut rng)
                })
                .collect();
            let conf = round_to(conf, 4);
            if missed || conf < cfg.conf_floor {
                continue;
            }
            let b = &boxes[i];
            let bbox = BBox::new(
                round_to(b.left() + jitter[0], 2),
                round_to(b.top() + jitter[1], 2),
                round_to((b.width() + jitter[2]).max(1.0), 2),
                round_to((b.height() + jitter[3]).max(1.0), 2),
            )
            .expect("positive size");
            frame_dets.push(make_detection(frame, bbox, conf, embedding, logits));
        }

        if rng.random::<f64>() < cfg.fp_rate {
            let w = rng.random_range(cfg.box_width_min..=cfg.box_width_max);
            let h = w * rng.random_range(cfg.aspect_min..=cfg.aspect_max);
            let l = rng.random_range(0.0..=cfg.arena_width - w);
            let t = rng.random_range(0.0..=cfg.arena_height - h);
            let conf = round_to(rng.random_range(cfg.conf_floor..=cfg.fp_conf_max), 4);
            let embedding = perturbed(&prototype, cfg.sigma_frame, &mut rng, &std);
            let logits: Vec<f64> = (0..cfg.n_classes).map(|_| cfg.logit_noise * std.sample(&mut rng)).collect();
            let bbox = BBox::new(round_to(l, 2), round_to(t, 2), round_to(w, 2), round_to(h, 2)).expect("positive size");
            frame_dets.push(make_detection(frame, bbox, conf, embedding, logits));
        }

        frame_dets.shuffle(&mut rng);
        for d in frame_dets {
            let source_index = detections.len();
            detections.push(Detection { source_index, ..d });
        }
    }
    Ok(SyntheticSequence { ground_truth, detections })
}

fn rounded_box(b: &BBox) -> BBox {
    BBox::new(round_to(b.left(), 2), round_to(b.top(), 2), round_to(b.width(), 2), round_to(b.height(), 2))
        .expect("positive size")
}

fn make_detection(frame: u32, bbox: BBox, conf: f64, mut embedding: Vec<f64>, logits: Vec<f64>) -> Detection {
    embedding.iter_mut().for_each(|v| *v = round_to(*v, 6));
    Detection {
        frame,
        bbox,
        conf,
        embedding: Some(embedding),
        logits: Some(logits.into_iter().map(|v| round_to(v, 4)).collect()),
        source_index: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{parse_gt_file, parse_jsonl_detections};

    fn quiet() -> SynthConfig {
        SynthConfig {
            miss_rate: 0.0,
            fp_rate: 0.0,
            jitter: 0.0,
            conf_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn fold_reflects() {
        assert_eq!(fold(5.0, 10.0), 5.0);
        assert_eq!(fold(12.0, 10.0), 8.0);
        assert_eq!(fold(-3.0, 10.0), 3.0);
        assert_eq!(fold(21.0, 10.0), 1.0);
    }

    #[test]
    fn noise_free_single_target_matches_ground_truth() {
        let cfg = SynthConfig { n_targets: 1, crossing_pairs: 0, n_frames: 50, ..quiet() };
        let seq = generate_synthetic_sequence(&cfg).unwrap();
        assert_eq!(seq.detections.len(), 50);
        for (d, g) in seq.detections.iter().zip(&seq.ground_truth) {
            assert_eq!(d.frame, g.frame);
            assert_eq!(d.bbox, g.bbox);
            assert_eq!(d.conf, cfg.conf_mean);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig { n_frames: 60, ..SynthConfig::default() };
        let a = generate_synthetic_sequence(&cfg).unwrap();
        let b = generate_synthetic_sequence(&cfg).unwrap();
        assert_eq!(a.gt_text(), b.gt_text());
        assert_eq!(a.jsonl_text(), b.jsonl_text());
        let c = generate_synthetic_sequence(&SynthConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.jsonl_text(), c.jsonl_text());
    }

    #[test]
    fn crossing_collapses_confidence_between_tiers() {
        // Equal box sizes: at the meeting frame the rear target is fully
        // covered, so its confidence is conf_mean * min_factor = 0.85 * 0.3.
        let cfg = SynthConfig {
            n_targets: 2,
            crossing_pairs: 1,
            n_frames: 40,
            box_width_min: 80.0,
            box_width_max: 80.0,
            aspect_min: 0.5,
            aspect_max: 0.5,
            ..quiet()
        };
        let seq = generate_synthetic_sequence(&cfg).unwrap();
        let meet = 20;
        let at_meet: Vec<&Detection> = seq.detections.iter().filter(|d| d.frame == meet).collect();
        assert_eq!(at_meet.len(), 2);
        assert_eq!(at_meet[0].bbox, at_meet[1].bbox);
        let mut confs: Vec<f64> = at_meet.iter().map(|d| d.conf).collect();
        confs.sort_by(f64::total_cmp);
        assert!((confs[0] - 0.255).abs() < 1e-12, "{confs:?}");
        assert_eq!(confs[1], 0.85);
        assert!(confs[0] < 0.6 && confs[0] >= 0.1);
        let hidden = seq.ground_truth.iter().filter(|g| g.frame == meet).map(|g| g.visibility).fold(1.0, f64::min);
        assert_eq!(hidden, 0.0);
    }

    #[test]
    fn written_files_parse_back() {
        let cfg = SynthConfig { n_frames: 30, ..SynthConfig::default() };
        let seq = generate_synthetic_sequence(&cfg).unwrap();
        let gt = parse_gt_file(&seq.gt_text()).unwrap();
        assert_eq!(gt, seq.ground_truth);
        let dets = parse_jsonl_detections(&seq.jsonl_text()).unwrap();
        assert_eq!(dets.len(), seq.detections.len());
        for (a, b) in dets.iter().zip(&seq.detections) {
            assert_eq!((a.frame, a.bbox, a.conf, &a.logits), (b.frame, b.bbox, b.conf, &b.logits));
        }
    }

    #[test]
    fn targets_stay_in_arena() {
        let cfg = SynthConfig::default();
        let seq = generate_synthetic_sequence(&cfg).unwrap();
        for g in &seq.ground_truth {
            assert!(g.bbox.left() >= 0.0 && g.bbox.right() <= cfg.arena_width + 1e-9);
            assert!(g.bbox.top() >= 0.0 && g.bbox.bottom() <= cfg.arena_height + 1e-9);
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let cfg = SynthConfig { miss_rate: 1.5, ..SynthConfig::default() };
        assert!(generate_synthetic_sequence(&cfg).is_err());
        let cfg = SynthConfig { crossing_pairs: 5, ..SynthConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
