//! Simulated interactive segmentation: prompts derived from annotations,
//! iterative correction rounds, and per-dataset score tables.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amg::{checked_predict, ImageContext, Predictor};
use crate::error::{Error, Result};
use crate::raster_io::{load_label_image, DatasetManifest, Sample};
use crate::raster_ops::{interior_most_pixel, largest_component};
use crate::rle::{mask_to_rle, MaskRle};
use crate::types::{bounding_box_of, BinaryMask, LabelImage, MaskPrompt, Point, Prompt};

pub const DEFAULT_CORRECTIONS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Point,
    Box,
}

/// How prompt points are chosen inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    /// The pixel farthest from the region boundary. Fully deterministic.
    InteriorMost,
    /// A uniformly random pixel of the region, from a seeded generator.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractiveSettings {
    /// Restrict evaluation to one start kind; `None` runs both.
    #[serde(default)]
    pub start: Option<StartKind>,
    pub n_corrections: usize,
    /// Pass the previous prediction back as a mask prompt.
    pub use_mask_prompt: bool,
    pub sampling: Sampling,
}

impl Default for InteractiveSettings {
    fn default() -> Self {
        Self {
            start: None,
            n_corrections: DEFAULT_CORRECTIONS,
            use_mask_prompt: false,
            sampling: Sampling::InteriorMost,
        }
    }
}

fn random_pixel(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> Option<Point> {
    let area = mask.area();
    if area == 0 {
        return None;
    }
    let k = rng.gen_range(0..area);
    let i = mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .nth(k)
        .map(|(i, _)| i)?;
    Some(Point::new(i % mask.width(), i / mask.width()))
}

/// Point start: the interior-most pixel of the object. Box start: its
/// tight bounding box.
pub fn initial_prompt(gt_mask: &BinaryMask, kind: StartKind) -> Result<Prompt> {
    match kind {
        StartKind::Point => interior_most_pixel(gt_mask)
            .map(Prompt::PositivePoint)
            .ok_or(Error::EmptyObject),
        StartKind::Box => Ok(Prompt::Box(bounding_box_of(gt_mask)?)),
    }
}

/// A positive point in the largest false-negative component and a negative
/// point in the largest false-positive component, each at the component's
/// interior-most pixel; either is absent when its error region is empty.
pub fn correction_prompts(
    pred: &BinaryMask,
    gt: &BinaryMask,
) -> Result<(Option<Point>, Option<Point>)> {
    let fn_region = gt.difference(pred)?;
    let fp_region = pred.difference(gt)?;
    let pick = |m: &BinaryMask| largest_component(m).and_then(|c| interior_most_pixel(&c));
    Ok((pick(&fn_region), pick(&fp_region)))
}

fn sampled_corrections(
    pred: &BinaryMask,
    gt: &BinaryMask,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<Point>, Option<Point>)> {
    let fn_region = gt.difference(pred)?;
    let fp_region = pred.difference(gt)?;
    Ok((random_pixel(&fn_region, rng), random_pixel(&fp_region, rng)))
}

/// One prediction round: the accumulated prompts, the mask and its IoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub prompts: Vec<Prompt>,
    pub mask_rle: MaskRle,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveTrace {
    pub object_id: u32,
    pub start: StartKind,
    /// Iteration 0 is the initial prompt; at most `1 + n_corrections`.
    pub entries: Vec<TraceEntry>,
    /// The prediction matched the object before corrections ran out.
    pub early_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InteractiveTrace {
    /// Scores for iterations `0..=n_corrections`, the last recorded score
    /// carried forward (0 when nothing was recorded).
    pub fn scores(&self, n_corrections: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_corrections + 1);
        let mut last = 0.0;
        for k in 0..=n_corrections {
            if let Some(e) = self.entries.get(k) {
                last = e.score;
            }
            out.push(last);
        }
        out
    }
}

/// Run the correction protocol for a single object. Each round re-predicts
/// with every prompt issued so far (initial prompt first, then one
/// positive and/or one negative point per round) and, when enabled, the
/// previous prediction as a mask prior. Stops early once the prediction
/// equals the object. A predictor error truncates the trace and is
/// recorded in it.
pub fn iterative_eval(
    predictor: &dyn Predictor,
    gt_mask: &BinaryMask,
    object_id: u32,
    start: StartKind,
    settings: &InteractiveSettings,
) -> Result<InteractiveTrace> {
    let mut rng = match settings.sampling {
        Sampling::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Sampling::InteriorMost => None,
    };
    let first = match (&mut rng, start) {
        (Some(rng), StartKind::Point) => {
            Prompt::PositivePoint(random_pixel(gt_mask, rng).ok_or(Error::EmptyObject)?)
        }
        _ => initial_prompt(gt_mask, start)?,
    };
    let ctx = ImageContext {
        width: gt_mask.width(),
        height: gt_mask.height(),
    };
    let mut trace = InteractiveTrace {
        object_id,
        start,
        entries: Vec::new(),
        early_stop: false,
        error: None,
    };
    let mut prompts = vec![first];
    let mut prior: Option<MaskPrompt> = None;
    for round in 0..=settings.n_corrections {
        let pred = match checked_predict(predictor, &ctx, &prompts, prior.as_ref()) {
            Ok(p) => p.mask,
            Err(e) => {
                trace.error = Some(e.to_string());
                break;
            }
        };
        let score = pred.iou(gt_mask)?;
        trace.entries.push(TraceEntry {
            prompts: prompts.clone(),
            mask_rle: mask_to_rle(&pred),
            score,
        });
        if round == settings.n_corrections {
            break;
        }
        let (pos, neg) = match &mut rng {
            Some(rng) => sampled_corrections(&pred, gt_mask, rng)?,
            None => correction_prompts(&pred, gt_mask)?,
        };
        if pos.is_none() && neg.is_none() {
            trace.early_stop = true;
            break;
        }
        prompts.extend(pos.map(Prompt::PositivePoint));
        prompts.extend(neg.map(Prompt::NegativePoint));
        if settings.use_mask_prompt {
            prior = Some(MaskPrompt::from_mask(&pred));
        }
    }
    Ok(trace)
}

/// Per-image means over objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInteractive {
    pub dataset: String,
    pub sample_id: String,
    pub n_objects: usize,
    pub point_curve: Vec<f64>,
    pub box_curve: Vec<f64>,
    /// Traces that hit a predictor error.
    pub n_trace_errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-dataset means over images; `point` / `box` are iteration 0 of the
/// point-start / box-start curves, `I_P` / `I_B` their final iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInteractiveRow {
    pub dataset: String,
    pub n_images: usize,
    pub n_objects: usize,
    pub point: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    #[serde(rename = "I_P")]
    pub i_p: f64,
    #[serde(rename = "I_B")]
    pub i_b: f64,
    pub point_curve: Vec<f64>,
    pub box_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveReport {
    pub settings: InteractiveSettings,
    /// Sorted by dataset name.
    pub datasets: Vec<DatasetInteractiveRow>,
    /// Sorted by (dataset, sample id).
    pub images: Vec<ImageInteractive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl InteractiveReport {
    /// Images that failed outright or contain failed traces.
    pub fn n_errors(&self) -> usize {
        self.images
            .iter()
            .filter(|i| i.error.is_some() || i.n_trace_errors > 0)
            .count()
    }

    /// Columns: dataset, n_objects, point, box, I_P, I_B, iter_0..iter_n
    /// (point start), box_iter_0..box_iter_n.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.settings.n_corrections;
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["dataset", "n_objects", "point", "box", "I_P", "I_B"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..=n).map(|k| format!("iter_{k}")));
        header.extend((0..=n).map(|k| format!("box_iter_{k}")));
        w.write_record(&header)?;
        for r in &self.datasets {
            let mut rec = vec![
                r.dataset.clone(),
                r.n_objects.to_string(),
                r.point.to_string(),
                r.box_.to_string(),
                r.i_p.to_string(),
                r.i_b.to_string(),
            ];
            rec.extend(r.point_curve.iter().map(f64::to_string));
            rec.extend(r.box_curve.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Curves skipped by a start restriction are empty and average to NaN.
fn mean_curves(curves: &[&Vec<f64>], len: usize) -> Vec<f64> {
    if curves.is_empty() || curves.iter().any(|c| c.len() != len) {
        return vec![f64::NAN; len];
    }
    (0..len)
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn trace_seed(base: u64, image_index: usize, object_id: u32, start: StartKind) -> u64 {
    // splitmix64 over the trace coordinates
    let mut z = base
        ^ (image_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((object_id as u64) << 1 | (start == StartKind::Box) as u64)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run point-start and box-start traces for every object of one image and
/// average them over objects. Objects are processed in parallel on the
/// current rayon pool.
pub fn evaluate_image(
    predictor: &dyn Predictor,
    gt: &LabelImage,
    dataset: &str,
    sample_id: &str,
    image_index: usize,
    settings: &InteractiveSettings,
) -> Result<ImageInteractive> {
    let n = settings.n_corrections;
    let ids = gt.ids();
    let jobs: Vec<(u32, StartKind)> = ids
        .iter()
        .flat_map(|&id| [(id, StartKind::Point), (id, StartKind::Box)])
        .filter(|&(_, start)| settings.start.is_none_or(|s| s == start))
        .collect();
    let traces = jobs
        .par_iter()
        .map(|&(id, start)| {
            let mut s = *settings;
            if let Sampling::Random { seed } = s.sampling {
                s.sampling = Sampling::Random {
                    seed: trace_seed(seed, image_index, id, start),
                };
            }
            iterative_eval(predictor, &gt.mask_of(id), id, start, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut point = vec![0.0; n + 1];
    let mut boxed = vec![0.0; n + 1];
    for t in &traces {
        let target = match t.start {
            StartKind::Point => &mut point,
            StartKind::Box => &mut boxed,
        };
        for (acc, s) in target.iter_mut().zip(t.scores(n)) {
            *acc += s;
        }
    }
    let k = ids.len().max(1) as f64;
    let finish = |curve: Vec<f64>, kind: StartKind| -> Vec<f64> {
        if settings.start.is_none_or(|s| s == kind) {
            curve.into_iter().map(|v| v / k).collect()
        } else {
            Vec::new()
        }
    };
    Ok(ImageInteractive {
        dataset: dataset.to_string(),
        sample_id: sample_id.to_string(),
        n_objects: ids.len(),
        point_curve: finish(point, StartKind::Point),
        box_curve: finish(boxed, StartKind::Box),
        n_trace_errors: traces.iter().filter(|t| t.error.is_some()).count(),
        error: None,
    })
}

/// Aggregate per-image results into per-dataset rows. Images without
/// objects or with a load error do not enter the means.
pub fn aggregate_interactive(
    mut images: Vec<ImageInteractive>,
    settings: &InteractiveSettings,
) -> Result<InteractiveReport> {
    if images.is_empty() {
        return Err(Error::EmptyInput("interactive evaluation samples"));
    }
    images.sort_by(|a, b| (&a.dataset, &a.sample_id).cmp(&(&b.dataset, &b.sample_id)));
    let len = settings.n_corrections + 1;
    let mut groups: BTreeMap<&str, Vec<&ImageInteractive>> = BTreeMap::new();
    for img in &images {
        groups.entry(img.dataset.as_str()).or_default();
        if img.error.is_none() && img.n_objects > 0 {
            groups.get_mut(img.dataset.as_str()).unwrap().push(img);
        }
    }
    let datasets = groups
        .into_iter()
        .map(|(name, imgs)| {
            let pc: Vec<&Vec<f64>> = imgs.iter().map(|i| &i.point_curve).collect();
            let bc: Vec<&Vec<f64>> = imgs.iter().map(|i| &i.box_curve).collect();
            let (point_curve, box_curve) = (mean_curves(&pc, len), mean_curves(&bc, len));
            DatasetInteractiveRow {
                dataset: name.to_string(),
                n_images: imgs.len(),
                n_objects: imgs.iter().map(|i| i.n_objects).sum(),
                point: point_curve[0],
                box_: box_curve[0],
                i_p: point_curve[len - 1],
                i_b: box_curve[len - 1],
                point_curve,
                box_curve,
            }
        })
        .collect();
    Ok(InteractiveReport {
        settings: *settings,
        datasets,
        images,
        config: None,
    })
}

/// Builds the predictor for one sample from its manifest entry and ground
/// truth (the oracle needs the labels, guidance-driven predictors a file).
pub type PredictorFactory<'a> =
    dyn Fn(&Sample, &LabelImage) -> Result<Box<dyn Predictor>> + Sync + 'a;

/// Interactive evaluation over every sample of a manifest. Per-sample load
/// or predictor construction failures are recorded on the image, not fatal.
pub fn dataset_interactive_report(
    manifest: &DatasetManifest,
    make_predictor: &PredictorFactory<'_>,
    settings: &InteractiveSettings,
) -> Result<InteractiveReport> {
    let samples = manifest.sorted_samples();
    let images = samples
        .par_iter()
        .enumerate()
        .map(|(index, sample)| {
            let dataset = sample.dataset_name(manifest);
            let run = || -> Result<ImageInteractive> {
                let gt = load_label_image(&sample.gt_labels_path)?;
                let predictor = make_predictor(sample, &gt)?;
                evaluate_image(
                    predictor.as_ref(),
                    &gt,
                    dataset,
                    &sample.sample_id,
                    index,
                    settings,
                )
            };
            run().unwrap_or_else(|e| {
                log::warn!("sample {}: {e}", sample.sample_id);
                ImageInteractive {
                    dataset: dataset.to_string(),
                    sample_id: sample.sample_id.clone(),
                    n_objects: 0,
                    point_curve: Vec::new(),
                    box_curve: Vec::new(),
                    n_trace_errors: 0,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    aggregate_interactive(images, settings)
}
