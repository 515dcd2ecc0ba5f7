//! Deterministic post-processing and evaluation for promptable nucleus
//! segmentation models.
//!
//! The crate covers everything downstream of the network: seeded-watershed
//! instance segmentation from decoder rasters ([`ais`]), grid-prompt mask
//! generation through a pluggable predictor ([`amg`]), simulated
//! interactive correction ([`interactive`]), tile-and-stitch processing of
//! whole-slide rasters ([`wsi`]) and the instance/semantic metric stack
//! ([`metrics`]). [`ais::generate_targets`] turns ground truth into decoder
//! rasters, so every stage can be exercised without a model.

pub mod ais;
pub mod amg;
pub mod error;
pub mod interactive;
pub mod metrics;
pub mod raster_io;
pub mod raster_ops;
pub mod rle;
pub mod types;
pub mod wsi;

pub use error::{Error, FormatError, Result};
pub use rle::{label_image_to_masks, mask_to_rle, masks_to_label_image, rle_to_mask, MaskRle};
pub use types::{
    bounding_box_of, AisParams, BinaryMask, BoundingBox, LabelImage, MaskPrompt, Point,
    PredictionStack, Prompt, Rect, SemanticLabelImage, SemanticProbMap, CONNECTIVITY,
};

/// Dedicated rayon pool; `jobs == 0` means one thread per available core.
pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    let n = if jobs == 0 {
        default_parallelism()
    } else {
        jobs
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidValue(format!("thread pool: {e}")))
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
