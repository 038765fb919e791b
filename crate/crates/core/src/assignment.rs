//! Fused IoU / appearance costs and gated minimum-cost linear assignment.

use thiserror::Error;

use crate::geometry::{iou, BBox, Detection};

/// Marker for inadmissible cells.
pub const FORBIDDEN: f64 = f64::INFINITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("embedding lengths differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("re-identification enabled but {side} {index} has no embedding")]
    MissingEmbedding { side: &'static str, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    pub lambda_iou: f64,
    pub lambda_reid: f64,
    /// Pairs with IoU below this are never matched.
    pub iou_gate: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            lambda_iou: 0.5,
            lambda_reid: 0.5,
            iou_gate: 0.1,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_iou >= 0.0 && self.lambda_reid >= 0.0) {
            return Err("cost weights must be non-negative".into());
        }
        if !(self.lambda_iou + self.lambda_reid > 0.0) {
            return Err("cost weights must not both be zero".into());
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(format!("iou_gate {} outside [0,1]", self.iou_gate));
        }
        Ok(())
    }

    /// Effective `(w_iou, w_reid)` after renormalization. `None` means pure IoU.
    fn reid_weights(&self, use_reid: bool) -> Option<(f64, f64)> {
        if use_reid && self.lambda_reid > 0.0 {
            let total = self.lambda_iou + self.lambda_reid;
            Some((self.lambda_iou / total, self.lambda_reid / total))
        } else {
            None
        }
    }
}

/// Dense row-major cost matrix. Cells holding [`FORBIDDEN`] are inadmissible.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![FORBIDDEN; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_admissible(&self, r: usize, c: usize) -> bool {
        self.get(r, c) != FORBIDDEN
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_columns: Vec<usize>,
    pub total_cost: f64,
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, AssignmentError> {
    if u.len() != v.len() {
        return Err(AssignmentError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

/// What the cost builder needs to know about a track.
#[derive(Debug, Clone, Copy)]
pub struct TrackView<'a> {
    pub bbox: BBox,
    pub embedding: Option<&'a [f64]>,
}

/// Builds the detection × track cost matrix
/// `w_iou · (1 − IoU) + w_reid · cosine_distance`, with the weights
/// renormalized to sum to one and pure IoU when appearance is off.
/// Cells whose IoU falls below the gate are [`FORBIDDEN`].
pub fn fused_cost_matrix(
    detections: &[&Detection],
    tracks: &[TrackView<'_>],
    cfg: &CostConfig,
    use_reid: bool,
) -> Result<CostMatrix, AssignmentError> {
    let weights = cfg.reid_weights(use_reid);
    if weights.is_some() {
        if let Some(i) = detections.iter().position(|d| d.embedding.is_none()) {
            return Err(AssignmentError::MissingEmbedding { side: "detection", index: i });
        }
        if let Some(j) = tracks.iter().position(|t| t.embedding.is_none()) {
            return Err(AssignmentError::MissingEmbedding { side: "track", index: j });
        }
    }
    let mut m = CostMatrix::new(detections.len(), tracks.len());
    for (i, det) in detections.iter().enumerate() {
        for (j, trk) in tracks.iter().enumerate() {
            let overlap = iou(&det.bbox, &trk.bbox);
            if overlap < cfg.iou_gate {
                continue;
            }
            let cost = match weights {
                None => 1.0 - overlap,
                Some((w_iou, w_reid)) => {
                    let (Some(de), Some(te)) = (det.embedding.as_deref(), trk.embedding) else {
                        unreachable!("checked above")
                    };
                    w_iou * (1.0 - overlap) + w_reid * cosine_distance(de, te)?
                }
            };
            m.set(i, j, cost);
        }
    }
    Ok(m)
}

/// Pure `1 − IoU` costs between two box lists, gated at `gate`.
pub fn iou_cost_matrix(rows: &[BBox], cols: &[BBox], gate: f64) -> CostMatrix {
    let mut m = CostMatrix::new(rows.len(), cols.len());
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in cols.iter().enumerate() {
            let overlap = iou(a, b);
            if overlap >= gate {
                m.set(i, j, 1.0 - overlap);
            }
        }
    }
    m
}

/// Optimal assignment over the admissible cells.
///
/// The matching has maximum cardinality among admissible pairs and, among
/// those, minimum total cost. Rows are processed in index order and columns
/// scanned in index order with strict comparisons, so ties resolve toward
/// lower indices.
pub fn solve_lap(costs: &CostMatrix) -> AssignmentResult {
    let (nr, nc) = (costs.rows, costs.cols);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in costs.data.iter().filter(|v| **v != FORBIDDEN) {
        debug_assert!(v.is_finite(), "non-finite admissible cost {v}");
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return AssignmentResult {
            matches: Vec::new(),
            unmatched_rows: (0..nr).collect(),
            unmatched_columns: (0..nc).collect(),
            total_cost: 0.0,
        };
    }

    // Pad to a square problem. Forbidden and dummy cells share a penalty large
    // enough that one more admissible pair always beats any cost difference.
    let n = nr.max(nc);
    let range = hi - lo;
    let penalty = (n as f64 + 1.0) * (range + 1.0);
    let square: Vec<f64> = (0..n * n)
        .map(|k| {
            let (r, c) = (k / n, k % n);
            if r < nr && c < nc && costs.is_admissible(r, c) {
                costs.get(r, c) - lo
            } else {
                penalty
            }
        })
        .collect();

    let col_for_row = hungarian(&square, n);

    let mut result = AssignmentResult::default();
    let mut col_used = vec![false; nc];
    for (r, &c) in col_for_row.iter().enumerate().take(nr) {
        if c < nc && costs.is_admissible(r, c) {
            result.matches.push((r, c));
            result.total_cost += costs.get(r, c);
            col_used[c] = true;
        } else {
            result.unmatched_rows.push(r);
        }
    }
    result.unmatched_columns = (0..nc).filter(|&c| !col_used[c]).collect();
    result
}

/// Shortest-augmenting-path Hungarian method with row/column potentials on a
/// dense `n × n` matrix. Returns the column assigned to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = cost[(r0 - 1) * n + (c - 1)] - u[r0] - v[c];
                if reduced < min_slack[c] {
                    min_slack[c] = reduced;
                    way[c] = col0;
                }
                if min_slack[c] < delta {
                    delta = min_slack[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[row_of_col[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_slack[c] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut col_for_row = vec![0usize; n];
    for c in 1..=n {
        col_for_row[row_of_col[c] - 1] = c - 1;
    }
    col_for_row
}
