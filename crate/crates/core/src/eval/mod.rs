//! Temporal IoU metrics (mIoU, IoU@R) and the random segment baseline.
//! The frame-level FLP baseline lives in [`flp`].

pub mod flp;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::rng::RngState;

/// 1-based inclusive frame segment. Ground truth requires s <= e;
/// predictions may violate the order and then score as empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub s: usize,
    pub e: usize,
}

impl Segment {
    pub fn new(s: usize, e: usize) -> Self {
        Segment { s, e }
    }

    /// Validated ordered segment for ground truth ingestion.
    pub fn ordered(s: usize, e: usize) -> Result<Self> {
        if s == 0 || e < s {
            return Err(SailError::invalid("Segment", format!("invalid ordered segment ({s},{e})")));
        }
        Ok(Segment { s, e })
    }

    /// Inclusive length; empty (e < s) segments have length 0.
    pub fn len(&self) -> usize {
        if self.e >= self.s {
            self.e - self.s + 1
        } else {
            0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intersection over union under the inclusive-index convention. `b` must
/// be ordered; an unordered `a` contributes length 0 and scores 0.
pub fn iou(a: Segment, b: Segment) -> f64 {
    let inter_hi = a.e.min(b.e) as i64;
    let inter_lo = a.s.max(b.s) as i64;
    let inter = (inter_hi - inter_lo + 1).max(0) as f64;
    let union = a.len() as f64 + b.len() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ThresholdHit {
    pub r: f64,
    pub frac: f64,
}

/// mIoU plus the strict-threshold hit rates over one test split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub miou: f64,
    pub iou_at: Vec<ThresholdHit>,
}

impl EvalReport {
    pub fn hit_rate(&self, r: f64) -> Option<f64> {
        self.iou_at.iter().find(|t| (t.r - r).abs() < 1e-12).map(|t| t.frac)
    }

    /// One aligned table row: label, mIoU, then one column per threshold.
    pub fn render_row(&self, label: &str) -> String {
        let mut row = format!("{label:<12} {:>8.4}", self.miou);
        for t in &self.iou_at {
            row.push_str(&format!(" {:>8.4}", t.frac));
        }
        row
    }

    pub fn table_header(&self) -> String {
        let mut h = format!("{:<12} {:>8}", "method", "mIoU");
        for t in &self.iou_at {
            h.push_str(&format!(" {:>8}", format!("IoU@{}", t.r)));
        }
        h
    }
}

/// Mean IoU and IoU@R (fraction with IoU strictly greater than R) over
/// paired predictions and ground truths.
pub fn evaluate(preds: &[Segment], gts: &[Segment], thresholds: &[f64]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(SailError::invalid(
            "evaluate",
            format!("{} predictions vs {} ground truths", preds.len(), gts.len()),
        ));
    }
    if preds.is_empty() {
        return Err(SailError::invalid("evaluate", "empty evaluation set"));
    }
    for g in gts {
        if g.s == 0 || g.e < g.s {
            return Err(SailError::invalid("evaluate", format!("unordered ground truth ({},{})", g.s, g.e)));
        }
    }
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| iou(*p, *g)).collect();
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    let iou_at = thresholds
        .iter()
        .map(|&r| ThresholdHit {
            r,
            frac: ious.iter().filter(|&&x| x > r).count() as f64 / ious.len() as f64,
        })
        .collect();
    Ok(EvalReport { samples: preds.len(), miou, iou_at })
}

/// Uniformly random segment predictions: s uniform in [1, n], e uniform in
/// [s, n].
pub fn random_baseline(items: &[(usize, Segment)], seed: u64, thresholds: &[f64]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(SailError::invalid("random_baseline", "empty dataset"));
    }
    let mut rng = RngState::new(seed);
    let preds: Vec<Segment> = items
        .iter()
        .map(|&(n, _)| {
            let s = rng.uniform_usize(1, n.max(1));
            let e = rng.uniform_usize(s, n.max(1));
            Segment::new(s, e)
        })
        .collect();
    let gts: Vec<Segment> = items.iter().map(|&(_, g)| g).collect();
    evaluate(&preds, &gts, thresholds)
}

/// Monte-Carlo estimate of the random baseline's expected mIoU and its
/// standard deviation across draws.
pub fn random_baseline_expectation(
    items: &[(usize, Segment)],
    seed: u64,
    reps: usize,
) -> Result<(f64, f64)> {
    if items.is_empty() || reps == 0 {
        return Err(SailError::invalid("random_baseline_expectation", "empty input"));
    }
    let mut rng = RngState::new(seed);
    let mut mious = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut total = 0.0;
        for &(n, gt) in items {
            let s = rng.uniform_usize(1, n.max(1));
            let e = rng.uniform_usize(s, n.max(1));
            total += iou(Segment::new(s, e), gt);
        }
        mious.push(total / items.len() as f64);
    }
    let mean = mious.iter().sum::<f64>() / reps as f64;
    let var = mious.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / reps as f64;
    Ok((mean, var.sqrt()))
}
