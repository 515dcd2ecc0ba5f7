use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::instance_segmentation;
use crate::error::{Error, Result};
use crate::metrics::{detection_counts, DetectionCounts};
use crate::types::{AisParams, LabelImage, PredictionStack};

/// 0.3, 0.4, ..., 0.9.
pub fn default_grid() -> Vec<f32> {
    (3..=9).map(|k| k as f32 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchRow {
    pub center_threshold: f32,
    pub boundary_threshold: f32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_samples: usize,
    /// Instance count summed over samples.
    pub n_instances: usize,
    #[serde(skip)]
    pub counts: DetectionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchTable {
    /// Sorted by (center_threshold, boundary_threshold).
    pub rows: Vec<GridSearchRow>,
    /// Index of the highest-f1 row; ties keep the first in sort order.
    pub best: usize,
    pub iou_threshold: f64,
}

impl GridSearchTable {
    pub fn best_row(&self) -> &GridSearchRow {
        &self.rows[self.best]
    }

    pub fn cell(&self, center: f32, boundary: f32) -> Option<&GridSearchRow> {
        self.rows
            .iter()
            .find(|r| r.center_threshold == center && r.boundary_threshold == boundary)
    }

    /// Columns: center_threshold, boundary_threshold, precision, recall,
    /// f1, n_samples, best.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "center_threshold",
            "boundary_threshold",
            "precision",
            "recall",
            "f1",
            "n_samples",
            "best",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                r.center_threshold.to_string(),
                r.boundary_threshold.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.n_samples.to_string(),
                (i == self.best).to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Evaluate every (center, boundary) threshold pair: segment each sample
/// with `base` overridden at that cell, then pool TP/FP/FN over samples at
/// `iou_threshold`.
pub fn grid_search(
    samples: &[(PredictionStack, LabelImage)],
    center_grid: &[f32],
    boundary_grid: &[f32],
    base: &AisParams,
    iou_threshold: f64,
    jobs: usize,
) -> Result<GridSearchTable> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("grid search samples"));
    }
    if center_grid.is_empty() || boundary_grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    let mut cells: Vec<(f32, f32)> = center_grid
        .iter()
        .flat_map(|&c| boundary_grid.iter().map(move |&b| (c, b)))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut params = Vec::with_capacity(cells.len());
    for &(c, b) in &cells {
        let p = AisParams {
            center_threshold: c,
            boundary_threshold: b,
            ..*base
        };
        p.validate()?;
        params.push(p);
    }
    let pool = crate::thread_pool(jobs)?;
    let rows = pool.install(|| {
        params
            .par_iter()
            .map(|p| evaluate_cell(samples, p, iou_threshold))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.f1 > rows[best].f1 {
            best = i;
        }
    }
    Ok(GridSearchTable {
        rows,
        best,
        iou_threshold,
    })
}

fn evaluate_cell(
    samples: &[(PredictionStack, LabelImage)],
    params: &AisParams,
    iou_threshold: f64,
) -> Result<GridSearchRow> {
    let mut total = DetectionCounts::default();
    let mut n_instances = 0;
    for (stack, gt) in samples {
        let seg = instance_segmentation(stack, params);
        n_instances += seg.max_id() as usize;
        total.add(detection_counts(&seg, gt, iou_threshold)?);
    }
    Ok(GridSearchRow {
        center_threshold: params.center_threshold,
        boundary_threshold: params.boundary_threshold,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        n_samples: samples.len(),
        n_instances,
        counts: total,
    })
}
