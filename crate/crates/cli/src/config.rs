//! Run configuration: built-in defaults, overlaid by an optional JSON file,
//! overlaid by command-line flags. The merged value is echoed into every
//! report.

use std::path::{Path, PathBuf};

use pathoseg::amg::{AmgParams, DEFAULT_GROWTH_THRESHOLD};
use pathoseg::interactive::{StartKind, DEFAULT_CORRECTIONS};
use pathoseg::metrics::DEFAULT_THRESHOLDS;
use pathoseg::wsi::{DEFAULT_HALO, DEFAULT_MERGE_IOU, DEFAULT_TILE};
use pathoseg::AisParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveConfig {
    /// `None` runs both start kinds.
    pub start: Option<StartKind>,
    pub iterations: usize,
    pub mask_prompt: bool,
    /// Sample prompt points uniformly (seeded) instead of interior-most.
    pub random_sampling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsiConfig {
    pub tile: usize,
    pub halo: usize,
    pub merge_iou: f64,
    pub tiled_output: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub center: Vec<f32>,
    pub boundary: Vec<f32>,
    /// IoU threshold for the detection f1 of each cell.
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub stack: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub guidance: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub ais: AisParams,
    pub amg: AmgParams,
    pub interactive: InteractiveConfig,
    pub wsi: WsiConfig,
    pub grid: GridConfig,
    pub thresholds: Vec<f64>,
    /// Emit per-threshold precision / recall / f1 rows.
    pub curve: bool,
    pub predictor: String,
    pub growth_threshold: f32,
    pub classes: Option<usize>,
    /// 0 = all available cores.
    pub jobs: usize,
    pub seed: Option<u64>,
    pub format: OutputFormat,
    pub paths: Paths,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let grid = pathoseg::ais::default_grid();
        Self {
            command: command.to_string(),
            ais: AisParams::default(),
            amg: AmgParams::default(),
            interactive: InteractiveConfig {
                start: None,
                iterations: DEFAULT_CORRECTIONS,
                mask_prompt: false,
                random_sampling: false,
            },
            wsi: WsiConfig {
                tile: DEFAULT_TILE,
                halo: DEFAULT_HALO,
                merge_iou: DEFAULT_MERGE_IOU,
                tiled_output: false,
            },
            grid: GridConfig {
                center: grid.clone(),
                boundary: grid,
                iou_threshold: 0.5,
            },
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            curve: false,
            predictor: "oracle".into(),
            growth_threshold: DEFAULT_GROWTH_THRESHOLD,
            classes: None,
            jobs: 0,
            seed: None,
            format: OutputFormat::Csv,
            paths: Paths::default(),
        }
    }

    /// Defaults for `command`, overlaid by the JSON file at `path` if any.
    pub fn load(command: &str, path: Option<&Path>) -> Result<Self, CliError> {
        let defaults = Self::defaults(command);
        let Some(path) = path else {
            return Ok(defaults);
        };
        let text = std::fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_slice(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(&defaults).expect("config serializes");
        overlay(&mut merged, file, "")
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_value(merged)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.command = command.to_string();
        Ok(cfg)
    }

    /// The config as JSON. Goes through text so f32 fields read back as
    /// their shortest decimal form (0.4, not 0.4000000059604645).
    pub fn to_value(&self) -> Value {
        let text = serde_json::to_vec(self).expect("config serializes");
        serde_json::from_slice(&text).expect("config reparses")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: pathoseg::Error| CliError::Usage(e.to_string());
        self.ais.validate().map_err(usage)?;
        self.amg.validate().map_err(usage)?;
        for &t in &self.thresholds {
            if !(0.5..1.0).contains(&t) {
                return Err(CliError::Usage(format!(
                    "IoU threshold {t} outside [0.5, 1.0)"
                )));
            }
        }
        if self.thresholds.is_empty() {
            return Err(CliError::Usage("threshold list is empty".into()));
        }
        if self.wsi.tile == 0 {
            return Err(CliError::Usage("tile size must be positive".into()));
        }
        if !(self.wsi.merge_iou > 0.0 && self.wsi.merge_iou <= 1.0) {
            return Err(CliError::Usage(format!(
                "merge IoU {} outside (0, 1]",
                self.wsi.merge_iou
            )));
        }
        if self.interactive.random_sampling && self.seed.is_none() {
            return Err(CliError::Usage(
                "random prompt sampling needs --seed".into(),
            ));
        }
        Ok(())
    }
}

/// Recursively replace entries of `base` by those of `file`. Keys absent
/// from `base` are rejected so typos do not pass silently.
fn overlay(base: &mut Value, file: Value, prefix: &str) -> Result<(), String> {
    match (base, file) {
        (Value::Object(b), Value::Object(f)) => {
            for (k, v) in f {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v, &key)?,
                    Some(slot) => *slot = v,
                    None => return Err(format!("unknown key `{key}`")),
                }
            }
            Ok(())
        }
        (b, f) => {
            *b = f;
            Ok(())
        }
    }
}
