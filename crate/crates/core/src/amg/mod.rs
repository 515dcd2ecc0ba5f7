//! Automatic mask generation: prompt a predictor with a regular point grid,
//! filter and deduplicate the returned masks, and paint the survivors into
//! an instance label image.

mod predictor;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, LabelImage, Point, Prompt};

pub use predictor::{
    checked_predict, Capabilities, ImageContext, MaskBankEntry, MaskBankFile, MaskBankPredictor,
    OraclePredictor, Prediction, Predictor, RegionGrowPredictor, DEFAULT_GROWTH_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmgParams {
    pub points_per_side: usize,
    /// Masks with confidence below this are dropped.
    pub confidence_min: f32,
    /// A mask overlapping an already kept mask with IoU at or above this is
    /// a duplicate.
    pub dedup_iou: f64,
    pub min_area: usize,
}

impl Default for AmgParams {
    fn default() -> Self {
        Self {
            points_per_side: 32,
            confidence_min: 0.5,
            dedup_iou: 0.7,
            min_area: 25,
        }
    }
}

impl AmgParams {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_side == 0 {
            return Err(Error::InvalidValue(
                "points per side must be positive".into(),
            ));
        }
        if !self.confidence_min.is_finite() {
            return Err(Error::InvalidValue(
                "confidence threshold must be finite".into(),
            ));
        }
        if !(self.dedup_iou > 0.0 && self.dedup_iou <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "dedup IoU {} outside (0, 1]",
                self.dedup_iou
            )));
        }
        Ok(())
    }
}

/// `n x n` cell-centred points, x varying fastest:
/// `x_i = floor((2i + 1) * width / 2n)`, likewise for y.
pub fn point_grid(n: usize, width: usize, height: usize) -> Vec<Point> {
    if n == 0 || width == 0 || height == 0 {
        return Vec::new();
    }
    let coord = |i: usize, len: usize| ((2 * i + 1) * len) / (2 * n);
    (0..n)
        .flat_map(|j| (0..n).map(move |i| Point::new(coord(i, width), coord(j, height))))
        .collect()
}

/// A grid point whose prediction failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub point: Point,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmgResult {
    pub labels: LabelImage,
    pub n_points: usize,
    /// Predictions that passed the confidence and area filters.
    pub n_candidates: usize,
    pub n_kept: usize,
    pub failures: Vec<PointFailure>,
}

/// Pixel list plus bounding box, for fast overlap tests between small masks.
struct SparseMask {
    pixels: Vec<u32>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl SparseMask {
    fn from_mask(mask: &BinaryMask) -> Self {
        let w = mask.width();
        let pixels: Vec<u32> = mask
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| i as u32)
            .collect();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &p in &pixels {
            let (x, y) = (p as usize % w, p as usize / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Self {
            pixels,
            x0,
            y0,
            x1,
            y1,
        }
    }

    fn iou(&self, other: &Self) -> f64 {
        if self.x0 > other.x1 || other.x0 > self.x1 || self.y0 > other.y1 || other.y0 > self.y1 {
            return 0.0;
        }
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        inter as f64 / (a.len() + b.len() - inter) as f64
    }
}

/// Run the predictor on every point of the grid (in parallel on the current
/// rayon pool), keep masks with confidence `>= confidence_min` and area
/// `>= min_area`, then visit them by descending confidence (ties: prompt
/// point in row-major order) dropping any whose IoU with a kept mask
/// reaches `dedup_iou`. Kept masks are painted in that order, a pixel
/// keeping the first mask painted on it, and the result is numbered 1..N
/// by first pixel in row-major order. Per-point failures are collected,
/// not fatal.
pub fn amg_generate(
    predictor: &dyn Predictor,
    image: &ImageContext,
    params: &AmgParams,
) -> Result<AmgResult> {
    params.validate()?;
    let points = point_grid(params.points_per_side, image.width, image.height);
    amg_generate_at(predictor, image, &points, params)
}

/// [`amg_generate`] with an explicit list of prompt points.
pub fn amg_generate_at(
    predictor: &dyn Predictor,
    image: &ImageContext,
    points: &[Point],
    params: &AmgParams,
) -> Result<AmgResult> {
    params.validate()?;
    let outcomes: Vec<Result<Prediction>> = points
        .par_iter()
        .map(|&p| checked_predict(predictor, image, &[Prompt::PositivePoint(p)], None))
        .collect();

    let mut failures = Vec::new();
    let mut candidates = Vec::new();
    for (&point, outcome) in points.iter().zip(outcomes) {
        match outcome {
            Ok(pred) => {
                if pred.confidence >= params.confidence_min
                    && pred.mask.area() >= params.min_area.max(1)
                {
                    candidates.push((point, pred));
                }
            }
            Err(e) => {
                log::warn!("prediction at ({}, {}) failed: {e}", point.x, point.y);
                failures.push(PointFailure {
                    point,
                    error: e.to_string(),
                });
            }
        }
    }
    let n_candidates = candidates.len();
    candidates.sort_by(|(pa, a), (pb, b)| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((pa.y, pa.x).cmp(&(pb.y, pb.x)))
    });

    let mut kept: Vec<SparseMask> = Vec::new();
    for (_, pred) in &candidates {
        let s = SparseMask::from_mask(&pred.mask);
        if kept.iter().all(|k| k.iou(&s) < params.dedup_iou) {
            kept.push(s);
        }
    }

    let mut labels = LabelImage::zeros(image.width, image.height);
    {
        let out = labels.as_mut_slice();
        for (k, m) in kept.iter().enumerate() {
            let id = k as u32 + 1;
            for &p in &m.pixels {
                let v = &mut out[p as usize];
                if *v == 0 {
                    *v = id;
                }
            }
        }
    }
    // Masks fully shadowed by earlier ones leave gaps in the id range.
    labels.relabel_sequential();
    Ok(AmgResult {
        n_kept: labels.max_id() as usize,
        labels,
        n_points: points.len(),
        n_candidates,
        failures,
    })
}
