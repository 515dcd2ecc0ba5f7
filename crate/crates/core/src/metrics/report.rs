use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{detection_metrics, iou_table, match_table, DetectionCurve, MatchRow};
use crate::error::Result;
use crate::types::LabelImage;

/// Metrics for one image, or the error that prevented computing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvaluation {
    pub sample_id: String,
    /// Ground truth has no objects; the image is scored under the
    /// empty-case convention and flagged.
    pub empty_gt: bool,
    pub msa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<DetectionCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ImageEvaluation {
    pub fn compute(
        sample_id: impl Into<String>,
        pred: &LabelImage,
        gt: &LabelImage,
        thresholds: &[f64],
        with_curve: bool,
    ) -> Self {
        let sample_id = sample_id.into();
        let run = || -> Result<(f64, Option<DetectionCurve>)> {
            let table = iou_table(pred, gt)?;
            let m = match_table(&table, thresholds)?;
            let msa = m.rows.iter().map(MatchRow::accuracy).sum::<f64>() / m.rows.len() as f64;
            let curve = if with_curve {
                Some(detection_metrics(pred, gt, thresholds)?)
            } else {
                None
            };
            Ok((msa, curve))
        };
        match run() {
            Ok((msa, curve)) => Self {
                sample_id,
                empty_gt: gt.as_slice().iter().all(|&v| v == 0),
                msa: Some(msa),
                curve,
                error: None,
            },
            Err(e) => Self::failed(sample_id, e.to_string()),
        }
    }

    pub fn failed(sample_id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            empty_gt: false,
            msa: None,
            curve: None,
            error: Some(error.into()),
        }
    }
}

/// One CSV row: `sample_id,metric,threshold,value,empty_gt,error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_id: String,
    pub metric: String,
    pub threshold: Option<f64>,
    pub value: Option<f64>,
    pub empty_gt: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub thresholds: Vec<f64>,
    /// Sorted by sample id.
    pub images: Vec<ImageEvaluation>,
    /// Mean mSA over images that evaluated successfully.
    pub mean_msa: Option<f64>,
    pub n_errors: usize,
    pub n_empty_gt: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Sample id used for the dataset-mean row in CSV output.
pub const MEAN_ROW_ID: &str = "__mean__";

impl EvaluationReport {
    pub fn from_images(mut images: Vec<ImageEvaluation>, thresholds: &[f64]) -> Self {
        images.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let scores: Vec<f64> = images.iter().filter_map(|i| i.msa).collect();
        let mean_msa =
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        Self {
            thresholds: thresholds.to_vec(),
            n_errors: images.iter().filter(|i| i.error.is_some()).count(),
            n_empty_gt: images.iter().filter(|i| i.empty_gt).count(),
            images,
            mean_msa,
            config: None,
        }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for img in &self.images {
            let base = |metric: &str, threshold: Option<f64>, value: Option<f64>| ReportRow {
                sample_id: img.sample_id.clone(),
                metric: metric.to_string(),
                threshold,
                value,
                empty_gt: img.empty_gt,
                error: img.error.clone().unwrap_or_default(),
            };
            rows.push(base("msa", None, img.msa));
            if let Some(curve) = &img.curve {
                for p in &curve.points {
                    rows.push(base("precision", Some(p.threshold), Some(p.precision)));
                    rows.push(base("recall", Some(p.threshold), Some(p.recall)));
                    rows.push(base("f1", Some(p.threshold), Some(p.f1)));
                }
            }
        }
        rows.push(ReportRow {
            sample_id: MEAN_ROW_ID.into(),
            metric: "msa".into(),
            threshold: None,
            value: self.mean_msa,
            empty_gt: false,
            error: String::new(),
        });
        rows
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::DEFAULT_THRESHOLDS;

    #[test]
    fn csv_layout() {
        let l = LabelImage::new(2, 1, vec![1, 0]).unwrap();
        let e = LabelImage::zeros(2, 1);
        let images = vec![
            ImageEvaluation::compute("b", &l, &l, &DEFAULT_THRESHOLDS, false),
            ImageEvaluation::compute("a", &e, &e, &DEFAULT_THRESHOLDS, false),
            ImageEvaluation::compute(
                "c",
                &l,
                &LabelImage::zeros(3, 1),
                &DEFAULT_THRESHOLDS,
                false,
            ),
        ];
        let r = EvaluationReport::from_images(images, &DEFAULT_THRESHOLDS);
        assert_eq!(r.n_errors, 1);
        assert_eq!(r.n_empty_gt, 1);
        assert_eq!(r.mean_msa, Some(1.0));
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,metric,threshold,value,empty_gt,error");
        assert_eq!(lines[1], "a,msa,,1.0,true,");
        assert_eq!(lines[2], "b,msa,,1.0,false,");
        assert!(lines[3].starts_with("c,msa,,,false,\"dimension mismatch"));
        assert_eq!(lines[4], "__mean__,msa,,1.0,false,");
    }

    #[test]
    fn curve_rows() {
        let l = LabelImage::new(2, 1, vec![1, 0]).unwrap();
        let img = ImageEvaluation::compute("s", &l, &l, &DEFAULT_THRESHOLDS, true);
        let r = EvaluationReport::from_images(vec![img], &DEFAULT_THRESHOLDS);
        // msa + 3 per threshold + mean row
        assert_eq!(r.rows().len(), 1 + 30 + 1);
    }
}
