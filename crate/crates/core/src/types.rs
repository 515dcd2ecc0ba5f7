//! Domain rasters and prompt vocabulary shared by every pipeline stage.
//!
//! Construction is the only validation point: once a value exists its
//! invariants hold, so downstream code indexes without re-checking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connectivity used for seeds, instances and error components.
pub const CONNECTIVITY: usize = 4;

/// Per-pixel instance ids, row-major, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        check_len(width, height, labels.len())?;
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: u32) {
        self.labels[y * self.width + x] = id;
    }

    pub fn max_id(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct nonzero ids.
    pub fn ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.labels.iter().copied().filter(|&v| v != 0).collect();
        set.into_iter().collect()
    }

    pub fn num_instances(&self) -> usize {
        self.ids().len()
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&v| v == id && id != 0).collect(),
        }
    }

    /// Copy out the window `rect`; the rect must lie inside the image.
    pub fn crop(&self, rect: Rect) -> LabelImage {
        let mut out = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            let row = y * self.width;
            out.extend_from_slice(&self.labels[row + rect.x..row + rect.x + rect.width]);
        }
        LabelImage {
            width: rect.width,
            height: rect.height,
            labels: out,
        }
    }

    /// Renumber ids to 1..N in order of each instance's first pixel in
    /// row-major order. Returns the number of instances.
    pub fn relabel_sequential(&mut self) -> usize {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        for v in self.labels.iter_mut() {
            if *v == 0 {
                continue;
            }
            let id = *map.entry(*v).or_insert_with(|| {
                next += 1;
                next
            });
            *v = id;
        }
        next as usize
    }
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_same(self.dims(), other.dims())?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        })
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        check_same(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// IoU of two masks; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }
}

/// Decoder output: foreground probability, normalized distance to the
/// object center, and proximity to the object boundary. Planar, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    width: usize,
    height: usize,
    pub(crate) foreground: Vec<f32>,
    pub(crate) center_distance: Vec<f32>,
    pub(crate) boundary_proximity: Vec<f32>,
}

impl PredictionStack {
    /// Strict constructor: every value must be finite and inside [0, 1].
    pub fn new(
        width: usize,
        height: usize,
        foreground: Vec<f32>,
        center_distance: Vec<f32>,
        boundary_proximity: Vec<f32>,
    ) -> Result<Self> {
        for plane in [&foreground, &center_distance, &boundary_proximity] {
            check_len(width, height, plane.len())?;
            if let Some(v) = plane.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidValue(format!(
                    "prediction value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            foreground,
            center_distance,
            boundary_proximity,
        })
    }

    /// Ingest constructor: clamps finite values into [0, 1] and returns how
    /// many were clamped. Non-finite values are rejected.
    pub fn new_clamped(
        width: usize,
        height: usize,
        mut foreground: Vec<f32>,
        mut center_distance: Vec<f32>,
        mut boundary_proximity: Vec<f32>,
    ) -> Result<(Self, usize)> {
        let mut clamped = 0;
        for plane in [
            &mut foreground,
            &mut center_distance,
            &mut boundary_proximity,
        ] {
            check_len(width, height, plane.len())?;
            for v in plane.iter_mut() {
                if !v.is_finite() {
                    return Err(Error::InvalidValue("non-finite prediction value".into()));
                }
                if *v < 0.0 || *v > 1.0 {
                    *v = v.clamp(0.0, 1.0);
                    clamped += 1;
                }
            }
        }
        Ok((
            Self {
                width,
                height,
                foreground,
                center_distance,
                boundary_proximity,
            },
            clamped,
        ))
    }

    /// All-background stack: zero foreground, distance channels at 1.
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            foreground: vec![0.0; n],
            center_distance: vec![1.0; n],
            boundary_proximity: vec![1.0; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn foreground(&self) -> &[f32] {
        &self.foreground
    }

    pub fn center_distance(&self) -> &[f32] {
        &self.center_distance
    }

    pub fn boundary_proximity(&self) -> &[f32] {
        &self.boundary_proximity
    }

    pub fn planes(&self) -> [&[f32]; 3] {
        [
            &self.foreground,
            &self.center_distance,
            &self.boundary_proximity,
        ]
    }

    pub fn crop(&self, rect: Rect) -> PredictionStack {
        let cut = |plane: &[f32]| {
            let mut out = Vec::with_capacity(rect.width * rect.height);
            for y in rect.y..rect.y + rect.height {
                let row = y * self.width;
                out.extend_from_slice(&plane[row + rect.x..row + rect.x + rect.width]);
            }
            out
        };
        PredictionStack {
            width: rect.width,
            height: rect.height,
            foreground: cut(&self.foreground),
            center_distance: cut(&self.center_distance),
            boundary_proximity: cut(&self.boundary_proximity),
        }
    }
}

/// Per-class probabilities, channel 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticProbMap {
    width: usize,
    height: usize,
    channels: Vec<Vec<f32>>,
}

impl SemanticProbMap {
    pub const SUM_TOLERANCE: f32 = 1e-4;

    pub fn new(width: usize, height: usize, channels: Vec<Vec<f32>>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::InvalidValue(
                "semantic map needs background plus at least one class".into(),
            ));
        }
        for c in &channels {
            check_len(width, height, c.len())?;
        }
        for i in 0..width * height {
            let sum: f32 = channels.iter().map(|c| c[i]).sum();
            if !sum.is_finite() || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                return Err(Error::InvalidValue(format!(
                    "class probabilities at pixel {i} sum to {sum}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of foreground classes (channels minus background).
    pub fn num_classes(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }
}

/// Per-pixel semantic class ids in 0..=num_classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticLabelImage {
    width: usize,
    height: usize,
    num_classes: usize,
    classes: Vec<u32>,
}

impl SemanticLabelImage {
    pub fn new(width: usize, height: usize, num_classes: usize, classes: Vec<u32>) -> Result<Self> {
        check_len(width, height, classes.len())?;
        if let Some(&c) = classes.iter().find(|&&c| c as usize > num_classes) {
            return Err(Error::InvalidValue(format!(
                "class id {c} exceeds class count {num_classes}"
            )));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            classes,
        })
    }

    pub fn from_labels(labels: &LabelImage, num_classes: usize) -> Result<Self> {
        Self::new(
            labels.width(),
            labels.height(),
            num_classes,
            labels.as_slice().to_vec(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.classes
    }
}

/// Half-open pixel box: `x_min..x_max`, `y_min..y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidValue(format!(
                "degenerate box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    /// Center pixel, rounded toward the top-left.
    pub fn center(&self) -> Point {
        Point {
            x: (self.x_min + self.x_max - 1) / 2,
            y: (self.y_min + self.y_max - 1) / 2,
        }
    }
}

/// Tight box around the set pixels of `mask`.
pub fn bounding_box_of(mask: &BinaryMask) -> Result<BoundingBox> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        let row = &mask.as_slice()[y * w..(y + 1) * w];
        let Some(first) = row.iter().position(|&v| v) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v).unwrap_or(first);
        x0 = x0.min(first);
        x1 = x1.max(last + 1);
        y0 = y0.min(y);
        y1 = y + 1;
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyObject);
    }
    BoundingBox::new(x0, y0, x1, y1)
}

/// Axis-aligned window `x..x+width`, `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn x_end(&self) -> usize {
        self.x + self.width
    }

    pub fn y_end(&self) -> usize {
        self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x_end() && y >= self.y && y < self.y_end()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x_end() <= self.x_end()
            && other.y_end() <= self.y_end()
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x = self.x.max(other.x);
        let y = self.y.max(other.y);
        let xe = self.x_end().min(other.x_end());
        let ye = self.y_end().min(other.y_end());
        (x < xe && y < ye).then(|| Rect::new(x, y, xe - x, ye - y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Low-resolution (or full-resolution) mask prompt. `values` is row-major
/// with the declared `width` x `height`; the image is covered by integer
/// downscaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPrompt {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl MaskPrompt {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask
                .as_slice()
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Upsample (nearest neighbour) to image dims and threshold at 0.5.
    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            let sx = x * self.width / width;
            let sy = y * self.height / height;
            self.values[sy * self.width + sx] > 0.5
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prompt {
    PositivePoint(Point),
    NegativePoint(Point),
    Box(BoundingBox),
    Mask(MaskPrompt),
}

impl Prompt {
    /// Checks the prompt against the image it refers to.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = match self {
            Prompt::PositivePoint(p) | Prompt::NegativePoint(p) => p.x < width && p.y < height,
            Prompt::Box(b) => b.x_max <= width && b.y_max <= height,
            Prompt::Mask(m) => {
                m.width > 0
                    && m.height > 0
                    && m.width <= width
                    && m.height <= height
                    && m.values.len() == m.width * m.height
                    && m.values.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue(format!(
                "prompt {self:?} outside {width}x{height} image"
            )))
        }
    }
}

/// Thresholds and post-processing for seeded-watershed segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisParams {
    pub center_threshold: f32,
    pub boundary_threshold: f32,
    pub foreground_threshold: f32,
    pub smoothing_sigma: f32,
    pub min_instance_size: usize,
}

impl Default for AisParams {
    fn default() -> Self {
        Self {
            center_threshold: 0.5,
            boundary_threshold: 0.6,
            foreground_threshold: 0.5,
            smoothing_sigma: 1.6,
            min_instance_size: 25,
        }
    }
}

impl AisParams {
    pub fn new(
        center_threshold: f32,
        boundary_threshold: f32,
        foreground_threshold: f32,
        smoothing_sigma: f32,
        min_instance_size: usize,
    ) -> Result<Self> {
        let p = Self {
            center_threshold,
            boundary_threshold,
            foreground_threshold,
            smoothing_sigma,
            min_instance_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("center_threshold", self.center_threshold),
            ("boundary_threshold", self.boundary_threshold),
            ("foreground_threshold", self.foreground_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidValue(format!(
                    "{name} = {t} must lie strictly inside (0, 1)"
                )));
            }
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "smoothing_sigma = {} must be finite and >= 0",
                self.smoothing_sigma
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    match width.checked_mul(height) {
        Some(n) if n == len => Ok(()),
        _ => Err(Error::InvalidValue(format!(
            "buffer of {len} values does not match {width}x{height}"
        ))),
    }
}

pub(crate) fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dims(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_single_pixel() {
        let m = BinaryMask::from_fn(12, 12, |x, y| x == 5 && y == 7);
        assert_eq!(
            bounding_box_of(&m).unwrap(),
            BoundingBox::new(5, 7, 6, 8).unwrap()
        );
    }

    #[test]
    fn bbox_full() {
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(
            bounding_box_of(&m).unwrap(),
            BoundingBox::new(0, 0, 10, 10).unwrap()
        );
    }

    #[test]
    fn bbox_empty_is_error() {
        assert!(matches!(
            bounding_box_of(&BinaryMask::empty(4, 4)),
            Err(Error::EmptyObject)
        ));
    }

    #[test]
    fn bbox_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (w, h) = (rng.gen_range(1..30), rng.gen_range(1..30));
            let m = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.05));
            let pixels: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x, y))
                .collect();
            match bounding_box_of(&m) {
                Err(_) => assert!(pixels.is_empty()),
                Ok(b) => {
                    assert_eq!(b.x_min, pixels.iter().map(|p| p.0).min().unwrap());
                    assert_eq!(b.x_max, pixels.iter().map(|p| p.0).max().unwrap() + 1);
                    assert_eq!(b.y_min, pixels.iter().map(|p| p.1).min().unwrap());
                    assert_eq!(b.y_max, pixels.iter().map(|p| p.1).max().unwrap() + 1);
                }
            }
        }
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(LabelImage::new(2, 2, vec![0; 3]).is_err());
        assert!(PredictionStack::new(1, 1, vec![1.5], vec![0.0], vec![0.0]).is_err());
        assert!(BoundingBox::new(3, 0, 3, 1).is_err());
        assert!(AisParams::new(1.2, 0.5, 0.5, 0.0, 0).is_err());
        assert!(AisParams::new(0.5, 0.0, 0.5, 0.0, 0).is_err());
        assert!(SemanticLabelImage::new(1, 1, 2, vec![3]).is_err());
        assert!(SemanticProbMap::new(1, 1, vec![vec![0.5], vec![0.4]]).is_err());
    }

    #[test]
    fn clamped_stack_counts() {
        let (s, n) =
            PredictionStack::new_clamped(2, 1, vec![1.5, 0.2], vec![-0.1, 0.0], vec![0.3, 0.3])
                .unwrap();
        assert_eq!(n, 2);
        assert_eq!(s.foreground(), &[1.0, 0.2]);
        assert_eq!(s.center_distance(), &[0.0, 0.0]);
        assert!(PredictionStack::new_clamped(1, 1, vec![f32::NAN], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn relabel_sequential_orders_by_first_pixel() {
        let mut l = LabelImage::new(3, 2, vec![0, 9, 9, 4, 0, 7]).unwrap();
        assert_eq!(l.relabel_sequential(), 3);
        assert_eq!(l.as_slice(), &[0, 1, 1, 2, 0, 3]);
    }

    #[test]
    fn mask_prompt_upsamples() {
        let p = MaskPrompt {
            width: 2,
            height: 1,
            values: vec![1.0, 0.0],
        };
        let m = p.to_mask(4, 2);
        assert_eq!(m.area(), 4);
        assert!(m.get(1, 1) && !m.get(2, 0));
    }
}
