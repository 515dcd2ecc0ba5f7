//! Uncompressed COCO-style run-length encoding.
//!
//! Runs alternate background/foreground in column-major pixel order and the
//! first run always counts background pixels (possibly zero).

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::types::{BinaryMask, LabelImage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl MaskRle {
    pub fn validate(&self) -> Result<(), FormatError> {
        let sum: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = (self.width as u64) * (self.height as u64);
        if sum != expected {
            return Err(FormatError::RleCountMismatch { sum, expected });
        }
        Ok(())
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }
}

pub fn mask_to_rle(mask: &BinaryMask) -> MaskRle {
    let (w, h) = mask.dims();
    let data = mask.as_slice();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = data[y * w + x];
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    MaskRle {
        width: w,
        height: h,
        counts,
    }
}

pub fn rle_to_mask(rle: &MaskRle) -> Result<BinaryMask, FormatError> {
    rle.validate()?;
    let (w, h) = (rle.width, rle.height);
    let mut data = vec![false; w * h];
    let mut pos = 0usize;
    let mut value = false;
    for &c in &rle.counts {
        if value {
            for k in pos..pos + c as usize {
                let (x, y) = (k / h, k % h);
                data[y * w + x] = true;
            }
        }
        pos += c as usize;
        value = !value;
    }
    // Length was validated above.
    Ok(BinaryMask::new(w, h, data).expect("validated length"))
}

/// One mask per nonzero id, ids ascending.
pub fn label_image_to_masks(labels: &LabelImage) -> Vec<(u32, MaskRle)> {
    labels
        .ids()
        .into_iter()
        .map(|id| (id, mask_to_rle(&labels.mask_of(id))))
        .collect()
}

/// Paint masks in descending id order onto a blank labeling; for disjoint
/// masks the order is irrelevant.
pub fn masks_to_label_image(
    width: usize,
    height: usize,
    masks: &[(u32, MaskRle)],
) -> Result<LabelImage, FormatError> {
    let mut out = LabelImage::zeros(width, height);
    let mut order: Vec<&(u32, MaskRle)> = masks.iter().collect();
    order.sort_by_key(|m| std::cmp::Reverse(m.0));
    for (id, rle) in order {
        let m = rle_to_mask(rle)?;
        for (dst, &set) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
            if set {
                *dst = *id;
            }
        }
    }
    Ok(out)
}
