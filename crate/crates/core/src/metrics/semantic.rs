use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_same, BinaryMask, SemanticLabelImage, SemanticProbMap};

/// Dice of two binary masks; two empty masks score 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_same(pred.dims(), gt.dims())?;
    let inter = pred.intersection_area(gt)?;
    let total = pred.area() + gt.area();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Dice with per-pixel prediction values in [0, 1] against a binary target.
pub fn soft_dice(pred: &[f32], width: usize, height: usize, gt: &BinaryMask) -> Result<f64> {
    if pred.len() != width * height {
        return Err(Error::InvalidValue("prediction buffer length".into()));
    }
    check_same((width, height), gt.dims())?;
    let (mut inter, mut sum_p, mut sum_t) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(gt.as_slice()) {
        let p = p as f64;
        sum_p += p;
        if t {
            inter += p;
            sum_t += 1.0;
        }
    }
    let total = sum_p + sum_t;
    Ok(if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    })
}

/// Per-pixel argmax over class channels; ties go to the lowest class index.
pub fn semantic_argmax(probs: &SemanticProbMap) -> SemanticLabelImage {
    let n = probs.width() * probs.height();
    let classes = (0..n)
        .map(|i| {
            let mut best = 0usize;
            for c in 1..probs.channels().len() {
                if probs.channel(c)[i] > probs.channel(best)[i] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    SemanticLabelImage::new(probs.width(), probs.height(), probs.num_classes(), classes)
        .expect("argmax within class range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    /// One-vs-rest dice for classes 0..=C (0 = background).
    pub per_class_dice: Vec<f64>,
    /// Ground-truth pixel frequency of each class; sums to 1.
    pub class_frequency: Vec<f64>,
    pub weighted_dice: f64,
}

/// Per-class dice weighted by ground-truth class frequency (background
/// included). Classes absent from the ground truth get weight 0.
pub fn weighted_dice(
    pred: &SemanticLabelImage,
    gt: &SemanticLabelImage,
    num_classes: usize,
) -> Result<SemanticReport> {
    check_same(pred.dims(), gt.dims())?;
    let k = num_classes + 1;
    let mut pred_count = vec![0u64; k];
    let mut gt_count = vec![0u64; k];
    let mut inter = vec![0u64; k];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (p, g) = (p as usize, g as usize);
        if p >= k || g >= k {
            return Err(Error::InvalidValue(format!(
                "class id {} exceeds class count {num_classes}",
                p.max(g)
            )));
        }
        pred_count[p] += 1;
        gt_count[g] += 1;
        if p == g {
            inter[p] += 1;
        }
    }
    let n = gt.as_slice().len() as f64;
    let per_class_dice: Vec<f64> = (0..k)
        .map(|c| {
            let total = pred_count[c] + gt_count[c];
            if total == 0 {
                1.0
            } else {
                2.0 * inter[c] as f64 / total as f64
            }
        })
        .collect();
    let class_frequency: Vec<f64> = gt_count
        .iter()
        .map(|&c| if n == 0.0 { 0.0 } else { c as f64 / n })
        .collect();
    let weighted = per_class_dice
        .iter()
        .zip(&class_frequency)
        .map(|(d, f)| d * f)
        .sum();
    Ok(SemanticReport {
        per_class_dice,
        class_frequency,
        weighted_dice: weighted,
    })
}

/// Semantic scores for one sample, or the error that prevented them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRow {
    pub sample_id: String,
    #[serde(flatten)]
    pub report: Option<SemanticReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTable {
    pub num_classes: usize,
    /// Sorted by sample id.
    pub rows: Vec<SemanticRow>,
    /// Mean weighted dice over samples that evaluated successfully.
    pub mean_weighted_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl SemanticTable {
    pub fn new(num_classes: usize, mut rows: Vec<SemanticRow>) -> Self {
        rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let scores: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.report.as_ref().map(|r| r.weighted_dice))
            .collect();
        let mean_weighted_dice =
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        Self {
            num_classes,
            rows,
            mean_weighted_dice,
            config: None,
        }
    }

    pub fn n_errors(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Columns: sample_id, weighted_dice, dice_0..dice_C, error; a final
    /// `__mean__` row carries the mean weighted dice.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let k = self.num_classes + 1;
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["sample_id".to_string(), "weighted_dice".to_string()];
        header.extend((0..k).map(|c| format!("dice_{c}")));
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.sample_id.clone()];
            match &r.report {
                Some(rep) => {
                    rec.push(rep.weighted_dice.to_string());
                    rec.extend(rep.per_class_dice.iter().map(f64::to_string));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), k + 1)),
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let mut mean = vec![
            super::report::MEAN_ROW_ID.to_string(),
            self.mean_weighted_dice
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ];
        mean.extend(std::iter::repeat_n(String::new(), k + 1));
        w.write_record(&mean)?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}
