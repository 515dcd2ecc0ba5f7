//! Instance and semantic segmentation metrics.
//!
//! Instance metrics start from a single contingency pass over the two
//! labelings ([`iou_table`]) and a one-to-one matching per IoU threshold
//! ([`match_at_threshold`]). A pair matches when its IoU is strictly above
//! the threshold; for thresholds >= 0.5 every object then has at most one
//! candidate partner, so greedy matching is optimal.
//!
//! Empty-case convention: when both labelings are empty every ratio is 1,
//! when only one is empty the ratios are 0.

mod report;
mod semantic;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use report::{EvaluationReport, ImageEvaluation, ReportRow, MEAN_ROW_ID};
pub use semantic::{
    dice, semantic_argmax, soft_dice, weighted_dice, SemanticReport, SemanticRow, SemanticTable,
};

use crate::error::{Error, Result};
use crate::types::{check_same, LabelImage};

/// IoU thresholds 0.5, 0.55, ..., 0.95.
pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Pairwise overlaps between ground-truth and predicted objects.
#[derive(Debug, Clone, Default)]
pub struct IouTable {
    gt_sizes: BTreeMap<u32, u64>,
    pred_sizes: BTreeMap<u32, u64>,
    intersections: HashMap<(u32, u32), u64>,
}

impl IouTable {
    pub fn num_gt(&self) -> usize {
        self.gt_sizes.len()
    }

    pub fn num_pred(&self) -> usize {
        self.pred_sizes.len()
    }

    pub fn gt_sizes(&self) -> &BTreeMap<u32, u64> {
        &self.gt_sizes
    }

    pub fn pred_sizes(&self) -> &BTreeMap<u32, u64> {
        &self.pred_sizes
    }

    pub fn intersection(&self, gt: u32, pred: u32) -> u64 {
        self.intersections.get(&(gt, pred)).copied().unwrap_or(0)
    }

    pub fn iou(&self, gt: u32, pred: u32) -> f64 {
        let inter = self.intersection(gt, pred);
        if inter == 0 {
            return 0.0;
        }
        let union = self.gt_sizes[&gt] + self.pred_sizes[&pred] - inter;
        inter as f64 / union as f64
    }

    /// Overlapping pairs `(gt, pred, iou)` sorted by ids.
    pub fn pairs(&self) -> Vec<(u32, u32, f64)> {
        let mut v: Vec<(u32, u32, f64)> = self
            .intersections
            .keys()
            .map(|&(g, p)| (g, p, self.iou(g, p)))
            .collect();
        v.sort_by_key(|a| (a.0, a.1));
        v
    }
}

/// Build the overlap table in one pass over the pixels. Background (id 0)
/// is excluded on both sides.
pub fn iou_table(pred: &LabelImage, gt: &LabelImage) -> Result<IouTable> {
    check_same(pred.dims(), gt.dims())?;
    let mut t = IouTable::default();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if g != 0 {
            *t.gt_sizes.entry(g).or_default() += 1;
        }
        if p != 0 {
            *t.pred_sizes.entry(p).or_default() += 1;
        }
        if g != 0 && p != 0 {
            *t.intersections.entry((g, p)).or_default() += 1;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchedPair>,
}

impl MatchRow {
    /// TP / (TP + FP + FN), with 1 when there are no objects at all.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, self.is_empty_case())
    }

    fn is_empty_case(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchTable {
    pub thresholds: Vec<f64>,
    pub rows: Vec<MatchRow>,
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.5..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::UnsupportedThreshold(t))
    }
}

/// One-to-one matching of pairs with IoU strictly above `t`, taken greedily
/// by descending IoU (ties by ascending gt id, then pred id).
pub fn match_at_threshold(table: &IouTable, t: f64) -> Result<MatchRow> {
    check_threshold(t)?;
    let mut candidates: Vec<(u32, u32, f64)> = table
        .pairs()
        .into_iter()
        .filter(|&(_, _, iou)| iou > t)
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut used_gt = std::collections::HashSet::new();
    let mut used_pred = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for (g, p, iou) in candidates {
        if used_gt.contains(&g) || used_pred.contains(&p) {
            continue;
        }
        used_gt.insert(g);
        used_pred.insert(p);
        pairs.push(MatchedPair {
            gt_id: g,
            pred_id: p,
            iou,
        });
    }
    let tp = pairs.len();
    Ok(MatchRow {
        threshold: t,
        tp,
        fp: table.num_pred() - tp,
        fn_: table.num_gt() - tp,
        pairs,
    })
}

pub fn match_table(table: &IouTable, thresholds: &[f64]) -> Result<MatchTable> {
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("threshold list"));
    }
    let rows = thresholds
        .iter()
        .map(|&t| match_at_threshold(table, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchTable {
        thresholds: thresholds.to_vec(),
        rows,
    })
}

/// Mean over thresholds of TP / (TP + FP + FN).
pub fn mean_segmentation_accuracy(
    pred: &LabelImage,
    gt: &LabelImage,
    thresholds: &[f64],
) -> Result<f64> {
    let table = iou_table(pred, gt)?;
    let m = match_table(&table, thresholds)?;
    Ok(m.rows.iter().map(MatchRow::accuracy).sum::<f64>() / m.rows.len() as f64)
}

/// Mean segmentation accuracy over [`DEFAULT_THRESHOLDS`].
pub fn msa(pred: &LabelImage, gt: &LabelImage) -> Result<f64> {
    mean_segmentation_accuracy(pred, gt, &DEFAULT_THRESHOLDS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub points: Vec<DetectionPoint>,
}

/// Raw TP/FP/FN counts; summed across images for pooled statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: DetectionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.both_empty())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.both_empty())
    }

    pub fn f1(&self) -> f64 {
        ratio(
            2 * self.tp,
            2 * self.tp + self.fp + self.fn_,
            self.both_empty(),
        )
    }

    pub fn point(&self, threshold: f64) -> DetectionPoint {
        DetectionPoint {
            threshold,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

impl From<&MatchRow> for DetectionCounts {
    fn from(r: &MatchRow) -> Self {
        Self {
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
        }
    }
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn detection_metrics(
    pred: &LabelImage,
    gt: &LabelImage,
    thresholds: &[f64],
) -> Result<DetectionCurve> {
    let table = iou_table(pred, gt)?;
    let m = match_table(&table, thresholds)?;
    Ok(DetectionCurve {
        points: m
            .rows
            .iter()
            .map(|r| DetectionCounts::from(r).point(r.threshold))
            .collect(),
    })
}

/// Detection counts at a single threshold.
pub fn detection_counts(
    pred: &LabelImage,
    gt: &LabelImage,
    threshold: f64,
) -> Result<DetectionCounts> {
    let table = iou_table(pred, gt)?;
    Ok((&match_at_threshold(&table, threshold)?).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub sample_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub mean: f64,
    pub rows: Vec<ImageScore>,
}

/// Arithmetic mean over images; rows are kept for the report.
pub fn aggregate_dataset(scores: Vec<ImageScore>) -> Result<DatasetAggregate> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("per-image scores"));
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64;
    Ok(DatasetAggregate { mean, rows: scores })
}
