//! Automatic instance segmentation from decoder rasters.
//!
//! Channel conventions: `center_distance` is 0 at an object's center and
//! rises to 1 at its far edge, `boundary_proximity` is 1 on the boundary and
//! falls toward the interior. Seeds are pixels where both are below their
//! thresholds and the foreground probability is above its threshold; the
//! seeds are then grown over `boundary_proximity` inside the foreground mask.

mod grid;
mod targets;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub use grid::{default_grid, grid_search, GridSearchRow, GridSearchTable};
pub use targets::generate_targets;

use crate::error::{Error, Result};
use crate::raster_ops::{connected_components, gaussian_smooth, neighbors4};
use crate::types::{check_same, AisParams, BinaryMask, LabelImage, PredictionStack};

/// Labeled seed components (4-connected, row-major discovery order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMap(pub LabelImage);

impl SeedMap {
    pub fn labels(&self) -> &LabelImage {
        &self.0
    }

    pub fn num_seeds(&self) -> usize {
        self.0.max_id() as usize
    }

    pub fn mask(&self) -> BinaryMask {
        self.0.foreground()
    }
}

/// Smooth both distance channels with `sigma`; foreground is untouched.
pub fn smooth_stack(stack: &PredictionStack, sigma: f32) -> PredictionStack {
    if sigma <= 0.0 {
        return stack.clone();
    }
    let (w, h) = stack.dims();
    let mut out = stack.clone();
    out.center_distance = gaussian_smooth(stack.center_distance(), w, h, sigma);
    out.boundary_proximity = gaussian_smooth(stack.boundary_proximity(), w, h, sigma);
    out
}

/// The raw seed predicate, without smoothing or labeling.
pub fn seed_mask(stack: &PredictionStack, params: &AisParams) -> BinaryMask {
    let (w, h) = stack.dims();
    let data = stack
        .foreground()
        .iter()
        .zip(stack.center_distance())
        .zip(stack.boundary_proximity())
        .map(|((&fg, &cd), &bp)| {
            cd < params.center_threshold
                && bp < params.boundary_threshold
                && fg > params.foreground_threshold
        })
        .collect();
    BinaryMask::new(w, h, data).expect("same dims")
}

/// Smooth (when `smoothing_sigma > 0`), threshold and label seeds.
pub fn compute_seeds(stack: &PredictionStack, params: &AisParams) -> SeedMap {
    let smoothed = smooth_stack(stack, params.smoothing_sigma);
    SeedMap(connected_components(&seed_mask(&smoothed, params)).0)
}

#[derive(Debug, PartialEq)]
struct QueueEntry {
    height: f32,
    seq: u64,
    index: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // BinaryHeap is a max-heap; invert so the lowest (height, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .height
            .total_cmp(&self.height)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-flood watershed: grows `seeds` over `height` within `mask`.
///
/// Pixels are claimed in ascending `(height, insertion sequence)` order and
/// seeds enter the queue in row-major order, so plateaus resolve
/// deterministically. Masked pixels unreachable from any seed stay 0.
pub fn seeded_watershed(height: &[f32], seeds: &SeedMap, mask: &BinaryMask) -> Result<LabelImage> {
    let seed_labels = seeds.labels();
    check_same(seed_labels.dims(), mask.dims())?;
    let (w, h) = mask.dims();
    if height.len() != w * h {
        return Err(Error::dims((height.len(), 1), (w * h, 1)));
    }
    let m = mask.as_slice();
    let mut labels = seed_labels.as_slice().to_vec();
    if let Some(i) = labels
        .iter()
        .zip(m)
        .position(|(&l, &inside)| l != 0 && !inside)
    {
        return Err(Error::Precondition(format!(
            "seed pixel ({}, {}) lies outside the mask",
            i % w,
            i / w
        )));
    }
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            heap.push(QueueEntry {
                height: height[i],
                seq,
                index: i,
            });
            seq += 1;
        }
    }
    while let Some(QueueEntry { index, .. }) = heap.pop() {
        let label = labels[index];
        for n in neighbors4(index, w, h) {
            if m[n] && labels[n] == 0 {
                labels[n] = label;
                heap.push(QueueEntry {
                    height: height[n],
                    seq,
                    index: n,
                });
                seq += 1;
            }
        }
    }
    LabelImage::new(w, h, labels)
}

/// Full pipeline: smooth, seed, flood over `boundary_proximity` inside the
/// foreground mask, drop small instances, relabel 1..N by first pixel.
pub fn instance_segmentation(stack: &PredictionStack, params: &AisParams) -> LabelImage {
    let smoothed = smooth_stack(stack, params.smoothing_sigma);
    let seeds = SeedMap(connected_components(&seed_mask(&smoothed, params)).0);
    let (w, h) = stack.dims();
    let mask = BinaryMask::new(
        w,
        h,
        stack
            .foreground()
            .iter()
            .map(|&fg| fg > params.foreground_threshold)
            .collect(),
    )
    .expect("same dims");
    let mut labels = seeded_watershed(smoothed.boundary_proximity(), &seeds, &mask)
        .expect("seeds satisfy the foreground predicate");
    remove_small_instances(&mut labels, params.min_instance_size);
    labels.relabel_sequential();
    labels
}

/// Zero out instances with fewer than `min_size` pixels.
pub fn remove_small_instances(labels: &mut LabelImage, min_size: usize) {
    if min_size == 0 {
        return;
    }
    let mut sizes = std::collections::HashMap::<u32, usize>::new();
    for &v in labels.as_slice() {
        if v != 0 {
            *sizes.entry(v).or_default() += 1;
        }
    }
    for v in labels.as_mut_slice() {
        if *v != 0 && sizes[v] < min_size {
            *v = 0;
        }
    }
}

/// Segment many stacks on a pool of `jobs` threads; output order follows
/// input order and is independent of `jobs`.
pub fn segment_batch(
    stacks: &[PredictionStack],
    params: &AisParams,
    jobs: usize,
) -> Result<Vec<LabelImage>> {
    use rayon::prelude::*;
    let pool = crate::thread_pool(jobs)?;
    Ok(pool.install(|| {
        stacks
            .par_iter()
            .map(|s| instance_segmentation(s, params))
            .collect()
    }))
}
