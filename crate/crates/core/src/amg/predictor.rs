//! The predictor contract and the model-free predictors behind it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_ops::neighbors4;
use crate::rle::{rle_to_mask, MaskRle};
use crate::types::{BinaryMask, BoundingBox, LabelImage, MaskPrompt, Point, Prompt};

/// Handle describing the image a predictor works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageContext {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub name: &'static str,
    pub negative_points: bool,
    pub boxes: bool,
    pub mask_prior: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: BinaryMask,
    pub confidence: f32,
}

impl Prediction {
    pub fn empty(ctx: &ImageContext) -> Self {
        Self {
            mask: BinaryMask::empty(ctx.width, ctx.height),
            confidence: 0.0,
        }
    }
}

/// Anything that maps prompts on an image to a mask and a confidence.
/// Implementations must be callable from several threads at once.
pub trait Predictor: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn predict(
        &self,
        image: &ImageContext,
        prompts: &[Prompt],
        prior: Option<&MaskPrompt>,
    ) -> Result<Prediction>;
}

/// Validate prompts, call the predictor and enforce its output contract.
pub fn checked_predict(
    predictor: &dyn Predictor,
    image: &ImageContext,
    prompts: &[Prompt],
    prior: Option<&MaskPrompt>,
) -> Result<Prediction> {
    for p in prompts {
        p.validate(image.width, image.height)?;
    }
    let out = predictor.predict(image, prompts, prior)?;
    if out.mask.dims() != (image.width, image.height) {
        return Err(Error::Predictor(format!(
            "{} returned a {:?} mask for a {}x{} image",
            predictor.capabilities().name,
            out.mask.dims(),
            image.width,
            image.height
        )));
    }
    if !out.confidence.is_finite() {
        return Err(Error::Predictor(format!(
            "{} returned a non-finite confidence",
            predictor.capabilities().name
        )));
    }
    Ok(out)
}

fn first_box(prompts: &[Prompt]) -> Option<BoundingBox> {
    prompts.iter().find_map(|p| match p {
        Prompt::Box(b) => Some(*b),
        _ => None,
    })
}

fn positives(prompts: &[Prompt]) -> impl Iterator<Item = Point> + '_ {
    prompts.iter().filter_map(|p| match p {
        Prompt::PositivePoint(pt) => Some(*pt),
        _ => None,
    })
}

fn negatives(prompts: &[Prompt]) -> impl Iterator<Item = Point> + '_ {
    prompts.iter().filter_map(|p| match p {
        Prompt::NegativePoint(pt) => Some(*pt),
        _ => None,
    })
}

/// Returns ground-truth instances: the instance under the first positive
/// point, or for a box the instance with maximal IoU against the box.
/// Negative points and mask priors are ignored.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    gt: LabelImage,
}

impl OraclePredictor {
    pub fn new(gt: LabelImage) -> Self {
        Self { gt }
    }

    fn best_box_instance(&self, b: &BoundingBox) -> Option<u32> {
        let w = self.gt.width();
        let mut sizes = std::collections::BTreeMap::<u32, (u64, u64)>::new();
        for (i, &id) in self.gt.as_slice().iter().enumerate() {
            if id == 0 {
                continue;
            }
            let e = sizes.entry(id).or_default();
            e.0 += 1;
            if b.contains(i % w, i / w) {
                e.1 += 1;
            }
        }
        let box_area = b.area() as u64;
        let mut best: Option<(u32, f64)> = None;
        for (id, (size, inter)) in sizes {
            if inter == 0 {
                continue;
            }
            let iou = inter as f64 / (size + box_area - inter) as f64;
            if best.is_none_or(|(_, v)| iou > v) {
                best = Some((id, iou));
            }
        }
        best.map(|(id, _)| id)
    }
}

impl Predictor for OraclePredictor {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "oracle",
            negative_points: false,
            boxes: true,
            mask_prior: false,
        }
    }

    fn predict(
        &self,
        image: &ImageContext,
        prompts: &[Prompt],
        _prior: Option<&MaskPrompt>,
    ) -> Result<Prediction> {
        if (image.width, image.height) != self.gt.dims() {
            return Err(Error::dims((image.width, image.height), self.gt.dims()));
        }
        let id = match first_box(prompts) {
            Some(b) => self.best_box_instance(&b),
            None => positives(prompts)
                .next()
                .map(|p| self.gt.get(p.x, p.y))
                .filter(|&id| id != 0),
        };
        Ok(match id {
            Some(id) => Prediction {
                mask: self.gt.mask_of(id),
                confidence: 1.0,
            },
            None => Prediction::empty(image),
        })
    }
}

#[derive(Debug, PartialEq)]
struct GrowEntry {
    cost: f32,
    seq: u64,
    index: usize,
    positive: bool,
    seed_value: f32,
}

impl Eq for GrowEntry {}

impl Ord for GrowEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for GrowEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub const DEFAULT_GROWTH_THRESHOLD: f32 = 0.1;

/// Competitive seeded region growing over a scalar guidance raster.
///
/// Positive and negative points seed regions that grow over 4-connected
/// pixels whose guidance lies within `threshold` of their seed value; each
/// pixel goes to the region reaching it at the lowest cost
/// `|g - g_seed|` (ties: earlier insertion). A box adds a positive seed at
/// its center and confines growth to the box. The mask is the positively
/// claimed region, plus any prior-mask pixels not claimed negatively.
/// Confidence is the mean affinity `1 - cost / threshold` over the
/// positively grown pixels.
#[derive(Debug, Clone)]
pub struct RegionGrowPredictor {
    width: usize,
    height: usize,
    guidance: Vec<f32>,
    threshold: f32,
}

impl RegionGrowPredictor {
    pub fn new(width: usize, height: usize, guidance: Vec<f32>, threshold: f32) -> Result<Self> {
        crate::types::check_len(width, height, guidance.len())?;
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidValue(format!("growth threshold {threshold}")));
        }
        if guidance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite guidance value".into()));
        }
        Ok(Self {
            width,
            height,
            guidance,
            threshold,
        })
    }

    /// Read the guidance raster from a single-channel PSF3 file.
    pub fn load(path: impl AsRef<Path>, threshold: f32) -> Result<Self> {
        let path = path.as_ref();
        let (header, mut planes) = crate::raster_io::load_psf3(path)?;
        if header.channels != 1 {
            return Err(Error::Precondition(format!(
                "{}: guidance raster needs 1 channel, file has {}",
                path.display(),
                header.channels
            )));
        }
        Self::new(header.width, header.height, planes.remove(0), threshold)
    }

    pub fn guidance(&self) -> &[f32] {
        &self.guidance
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

impl Predictor for RegionGrowPredictor {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "regiongrow",
            negative_points: true,
            boxes: true,
            mask_prior: true,
        }
    }

    fn predict(
        &self,
        image: &ImageContext,
        prompts: &[Prompt],
        prior: Option<&MaskPrompt>,
    ) -> Result<Prediction> {
        let (w, h) = (self.width, self.height);
        if (image.width, image.height) != (w, h) {
            return Err(Error::dims((image.width, image.height), (w, h)));
        }
        let region = first_box(prompts);
        let allowed = |i: usize| region.is_none_or(|b| b.contains(i % w, i / w));
        let g = &self.guidance;

        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push_seed = |heap: &mut BinaryHeap<GrowEntry>, p: Point, positive: bool| {
            let index = p.y * w + p.x;
            heap.push(GrowEntry {
                cost: 0.0,
                seq,
                index,
                positive,
                seed_value: g[index],
            });
            seq += 1;
        };
        for p in positives(prompts) {
            push_seed(&mut heap, p, true);
        }
        if let Some(b) = region {
            push_seed(&mut heap, b.center(), true);
        }
        for p in negatives(prompts) {
            push_seed(&mut heap, p, false);
        }

        // 0 = unclaimed, 1 = positive, 2 = negative
        let mut owner = vec![0u8; w * h];
        let mut affinity_sum = 0.0f64;
        let mut grown = 0usize;
        while let Some(e) = heap.pop() {
            if owner[e.index] != 0 {
                continue;
            }
            owner[e.index] = if e.positive { 1 } else { 2 };
            if e.positive {
                grown += 1;
                affinity_sum += if self.threshold > 0.0 {
                    1.0 - (e.cost / self.threshold) as f64
                } else {
                    1.0
                };
            }
            for n in neighbors4(e.index, w, h) {
                if owner[n] != 0 || !allowed(n) {
                    continue;
                }
                let cost = (g[n] - e.seed_value).abs();
                if cost <= self.threshold {
                    heap.push(GrowEntry {
                        cost,
                        seq,
                        index: n,
                        positive: e.positive,
                        seed_value: e.seed_value,
                    });
                    seq += 1;
                }
            }
        }

        let prior = prior.map(|p| p.to_mask(w, h));
        let data: Vec<bool> = owner
            .iter()
            .enumerate()
            .map(|(i, &o)| o == 1 || (o == 0 && prior.as_ref().is_some_and(|m| m.as_slice()[i])))
            .collect();
        let mask = BinaryMask::new(w, h, data)?;
        let confidence = if grown == 0 {
            0.0
        } else {
            (affinity_sum / grown as f64) as f32
        };
        Ok(Prediction { mask, confidence })
    }
}

/// A fixed bank of candidate masks, e.g. exported from an external model.
/// A positive point selects the highest-confidence mask containing it that
/// contains none of the negative points (ties: first listed); a box selects
/// the mask with maximal IoU against the box.
#[derive(Debug, Clone)]
pub struct MaskBankPredictor {
    width: usize,
    height: usize,
    masks: Vec<(BinaryMask, f32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskBankEntry {
    pub rle: MaskRle,
    pub confidence: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskBankFile {
    pub width: usize,
    pub height: usize,
    pub masks: Vec<MaskBankEntry>,
}

impl MaskBankPredictor {
    pub fn new(width: usize, height: usize, masks: Vec<(BinaryMask, f32)>) -> Result<Self> {
        for (m, c) in &masks {
            if m.dims() != (width, height) {
                return Err(Error::dims(m.dims(), (width, height)));
            }
            if !c.is_finite() {
                return Err(Error::InvalidValue("non-finite mask confidence".into()));
            }
        }
        Ok(Self {
            width,
            height,
            masks,
        })
    }

    pub fn from_file_contents(file: MaskBankFile) -> Result<Self> {
        let masks = file
            .masks
            .into_iter()
            .map(|e| {
                if (e.rle.width, e.rle.height) != (file.width, file.height) {
                    return Err(Error::dims(
                        (e.rle.width, e.rle.height),
                        (file.width, file.height),
                    ));
                }
                Ok((rle_to_mask(&e.rle)?, e.confidence))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.width, file.height, masks)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = crate::raster_io::read_file(path.as_ref())?;
        Self::from_file_contents(serde_json::from_slice(&bytes)?)
    }
}

impl Predictor for MaskBankPredictor {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "masks",
            negative_points: true,
            boxes: true,
            mask_prior: false,
        }
    }

    fn predict(
        &self,
        image: &ImageContext,
        prompts: &[Prompt],
        _prior: Option<&MaskPrompt>,
    ) -> Result<Prediction> {
        if (image.width, image.height) != (self.width, self.height) {
            return Err(Error::dims(
                (image.width, image.height),
                (self.width, self.height),
            ));
        }
        let negs: Vec<Point> = negatives(prompts).collect();
        let clean = |m: &BinaryMask| negs.iter().all(|p| !m.get(p.x, p.y));
        let mut best: Option<(usize, f64)> = None;
        if let Some(b) = first_box(prompts) {
            let box_mask = BinaryMask::from_fn(self.width, self.height, |x, y| b.contains(x, y));
            for (i, (m, _)) in self.masks.iter().enumerate() {
                let iou = m.iou(&box_mask)?;
                if iou > 0.0 && clean(m) && best.is_none_or(|(_, v)| iou > v) {
                    best = Some((i, iou));
                }
            }
        } else if let Some(p) = positives(prompts).next() {
            for (i, (m, c)) in self.masks.iter().enumerate() {
                let c = *c as f64;
                if m.get(p.x, p.y) && clean(m) && best.is_none_or(|(_, v)| c > v) {
                    best = Some((i, c));
                }
            }
        }
        Ok(match best {
            Some((i, _)) => Prediction {
                mask: self.masks[i].0.clone(),
                confidence: self.masks[i].1,
            },
            None => Prediction::empty(image),
        })
    }
}
