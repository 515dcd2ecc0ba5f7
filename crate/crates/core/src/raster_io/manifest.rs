use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_file;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub gt_labels_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_stack_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_prob_path: Option<PathBuf>,
    /// Scalar raster (PSF3, channel 0) used by the region-growing predictor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_path: Option<PathBuf>,
    /// Dataset this sample belongs to; defaults to the manifest name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default = "default_name")]
    pub name: String,
    pub samples: Vec<Sample>,
}

fn default_name() -> String {
    "dataset".to_string()
}

/// Which optional files a command needs for every sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileRequirement {
    pub gt_labels: bool,
    pub prediction_stack: bool,
    pub semantic_gt: bool,
    pub semantic_prob: bool,
    pub guidance: bool,
}

impl Sample {
    pub fn dataset_name<'a>(&'a self, manifest: &'a DatasetManifest) -> &'a str {
        self.dataset.as_deref().unwrap_or(&manifest.name)
    }
}

impl DatasetManifest {
    /// Parse and validate a manifest from JSON text; relative paths are
    /// resolved against `base`.
    pub fn from_json(text: &[u8], base: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            serde_json::from_slice(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut seen = HashSet::new();
        for s in &mut m.samples {
            if s.sample_id.is_empty() {
                return Err(Error::Schema("empty sample_id".into()));
            }
            if !seen.insert(s.sample_id.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate sample_id {:?}",
                    s.sample_id
                )));
            }
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            resolve(&mut s.gt_labels_path);
            for p in [
                &mut s.prediction_stack_path,
                &mut s.semantic_gt_path,
                &mut s.semantic_prob_path,
                &mut s.guidance_path,
            ]
            .into_iter()
            .flatten()
            {
                resolve(p);
            }
        }
        Ok(m)
    }

    /// Samples sorted by id; the deterministic processing order.
    pub fn sorted_samples(&self) -> Vec<&Sample> {
        let mut v: Vec<&Sample> = self.samples.iter().collect();
        v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        v
    }

    /// Check that every file a command needs is declared and exists.
    pub fn check_files(&self, req: FileRequirement) -> Result<()> {
        for s in &self.samples {
            let checks: [(bool, &str, Option<&PathBuf>); 5] = [
                (req.gt_labels, "gt_labels_path", Some(&s.gt_labels_path)),
                (
                    req.prediction_stack,
                    "prediction_stack_path",
                    s.prediction_stack_path.as_ref(),
                ),
                (
                    req.semantic_gt,
                    "semantic_gt_path",
                    s.semantic_gt_path.as_ref(),
                ),
                (
                    req.semantic_prob,
                    "semantic_prob_path",
                    s.semantic_prob_path.as_ref(),
                ),
                (req.guidance, "guidance_path", s.guidance_path.as_ref()),
            ];
            for (needed, field, path) in checks {
                if !needed {
                    continue;
                }
                match path {
                    None => {
                        return Err(Error::Schema(format!(
                            "sample {:?} lacks required field {field}",
                            s.sample_id
                        )))
                    }
                    Some(p) if !p.exists() => {
                        return Err(Error::Schema(format!(
                            "sample {:?}: {field} {} does not exist",
                            s.sample_id,
                            p.display()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    DatasetManifest::from_json(&text, base)
}
