//! `pathoseg`: instance segmentation post-processing, simulation and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 partial failure (some samples failed; the report lists them).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathoseg::interactive::StartKind;

use crate::config::{OutputFormat, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl From<pathoseg::Error> for CliError {
    fn from(e: pathoseg::Error) -> Self {
        if e.is_config_error() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

/// How a command that ran to completion went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some samples failed; the report lists them.
    Partial,
}

#[derive(Debug, Parser)]
#[command(
    name = "pathoseg",
    version,
    about = "Nucleus instance segmentation post-processing and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for random prompt sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args, Default)]
struct AisArgs {
    #[arg(long)]
    center_threshold: Option<f32>,
    #[arg(long)]
    boundary_threshold: Option<f32>,
    #[arg(long)]
    foreground_threshold: Option<f32>,
    /// Gaussian smoothing of the distance channels (0 disables).
    #[arg(long)]
    sigma: Option<f32>,
    /// Instances smaller than this many pixels are removed.
    #[arg(long)]
    min_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive a prediction stack (PSF3) from a ground-truth labeling.
    Targets {
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Seeded-watershed segmentation of one stack or a manifest of stacks.
    Segment {
        #[arg(long, conflicts_with = "manifest")]
        stack: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Ground truth to score a single-stack result against.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        ais: AisArgs,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Report path (manifest mode); defaults to report.<format> in --out.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sweep center and boundary thresholds and report detection scores.
    GridSearch {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated values used for both thresholds.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f32>>,
        #[arg(long, value_delimiter = ',')]
        center_grid: Option<Vec<f32>>,
        #[arg(long, value_delimiter = ',')]
        boundary_grid: Option<Vec<f32>>,
        /// IoU threshold for the per-cell detection scores.
        #[arg(long)]
        iou_threshold: Option<f64>,
        #[command(flatten)]
        ais: AisArgs,
    },
    /// Score predicted labelings against a manifest's ground truth.
    Evaluate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory holding <sample_id>.lbl or <sample_id>.pgm files.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Add precision, recall and f1 rows per IoU threshold.
        #[arg(long)]
        curve: bool,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Automatic mask generation from a point grid.
    Amg {
        /// oracle, regiongrow or masks.
        #[arg(long)]
        predictor: Option<String>,
        /// Ground truth: the oracle's source, and scored against when given.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Single-channel PSF3 guidance raster for regiongrow.
        #[arg(long)]
        guidance: Option<PathBuf>,
        /// Mask bank JSON for the masks predictor.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        points_per_side: Option<usize>,
        #[arg(long)]
        confidence_min: Option<f32>,
        #[arg(long)]
        dedup_iou: Option<f64>,
        #[arg(long)]
        min_area: Option<usize>,
        #[arg(long)]
        growth_threshold: Option<f32>,
        /// JSON summary of the run.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Simulated interactive segmentation with iterative corrections.
    Interactive {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// oracle or regiongrow.
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long, value_enum)]
        start: Option<StartArg>,
        /// Correction rounds after the initial prompt.
        #[arg(long)]
        iterations: Option<usize>,
        /// Feed the previous prediction back as a mask prompt.
        #[arg(long)]
        mask_prompt: bool,
        /// Sample prompt points uniformly at random (needs --seed).
        #[arg(long)]
        random_sampling: bool,
        #[arg(long)]
        growth_threshold: Option<f32>,
        /// Single-object mode: ground-truth labeling.
        #[arg(long, conflicts_with = "manifest")]
        gt: Option<PathBuf>,
        /// Single-object mode: guidance raster for regiongrow.
        #[arg(long)]
        guidance: Option<PathBuf>,
        /// Single-object mode: the object id to trace.
        #[arg(long, requires = "gt")]
        object: Option<u32>,
    },
    /// Tile-and-stitch segmentation of a large prediction stack.
    Wsi {
        #[arg(long)]
        stack: Option<PathBuf>,
        #[command(flatten)]
        ais: AisArgs,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        halo: Option<usize>,
        #[arg(long)]
        merge_iou: Option<f64>,
        /// Write one LBL1 per tile plus a stitch table into --out.
        #[arg(long)]
        tiled_output: bool,
        /// Resource report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-class and frequency-weighted dice of semantic predictions.
    SemanticEval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Semantic ground truth (label file of class ids).
        #[arg(long, conflicts_with = "manifest")]
        gt: Option<PathBuf>,
        /// Prediction: PSF3 probability map or label file of class ids.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Number of foreground classes.
        #[arg(long)]
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StartArg {
    Point,
    Box,
}

impl From<StartArg> for StartKind {
    fn from(s: StartArg) -> Self {
        match s {
            StartArg::Point => StartKind::Point,
            StartArg::Box => StartKind::Box,
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_ais(cfg: &mut RunConfig, a: AisArgs) {
    set(&mut cfg.ais.center_threshold, a.center_threshold);
    set(&mut cfg.ais.boundary_threshold, a.boundary_threshold);
    set(&mut cfg.ais.foreground_threshold, a.foreground_threshold);
    set(&mut cfg.ais.smoothing_sigma, a.sigma);
    set(&mut cfg.ais.min_instance_size, a.min_size);
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Targets { .. } => "targets",
        Command::Segment { .. } => "segment",
        Command::GridSearch { .. } => "grid-search",
        Command::Evaluate { .. } => "evaluate",
        Command::Amg { .. } => "amg",
        Command::Interactive { .. } => "interactive",
        Command::Wsi { .. } => "wsi",
        Command::SemanticEval { .. } => "semantic-eval",
    }
}

/// Merge defaults, config file and flags into one run configuration.
fn resolve(cli: Cli) -> Result<(RunConfig, Option<u32>), CliError> {
    let name = command_name(&cli.command);
    let mut cfg = RunConfig::load(name, cli.config.as_deref())?;
    set(&mut cfg.jobs, cli.jobs);
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    set(&mut cfg.format, cli.format);
    set_path(&mut cfg.paths.out, cli.out);
    let mut object = None;
    match cli.command {
        Command::Targets { gt } => set_path(&mut cfg.paths.gt, gt),
        Command::Segment {
            stack,
            manifest,
            gt,
            ais,
            thresholds,
            report,
        } => {
            set_path(&mut cfg.paths.stack, stack);
            set_path(&mut cfg.paths.manifest, manifest);
            set_path(&mut cfg.paths.gt, gt);
            set_path(&mut cfg.paths.report, report);
            apply_ais(&mut cfg, ais);
            set(&mut cfg.thresholds, thresholds);
        }
        Command::GridSearch {
            manifest,
            grid,
            center_grid,
            boundary_grid,
            iou_threshold,
            ais,
        } => {
            set_path(&mut cfg.paths.manifest, manifest);
            if let Some(g) = grid {
                cfg.grid.center = g.clone();
                cfg.grid.boundary = g;
            }
            set(&mut cfg.grid.center, center_grid);
            set(&mut cfg.grid.boundary, boundary_grid);
            set(&mut cfg.grid.iou_threshold, iou_threshold);
            apply_ais(&mut cfg, ais);
        }
        Command::Evaluate {
            manifest,
            pred,
            curve,
            thresholds,
        } => {
            set_path(&mut cfg.paths.manifest, manifest);
            set_path(&mut cfg.paths.pred, pred);
            set(&mut cfg.thresholds, thresholds);
            if curve {
                cfg.curve = true;
            }
        }
        Command::Amg {
            predictor,
            gt,
            guidance,
            masks,
            points_per_side,
            confidence_min,
            dedup_iou,
            min_area,
            growth_threshold,
            report,
        } => {
            set(&mut cfg.predictor, predictor);
            set_path(&mut cfg.paths.gt, gt);
            set_path(&mut cfg.paths.guidance, guidance);
            set_path(&mut cfg.paths.masks, masks);
            set_path(&mut cfg.paths.report, report);
            set(&mut cfg.amg.points_per_side, points_per_side);
            set(&mut cfg.amg.confidence_min, confidence_min);
            set(&mut cfg.amg.dedup_iou, dedup_iou);
            set(&mut cfg.amg.min_area, min_area);
            set(&mut cfg.growth_threshold, growth_threshold);
        }
        Command::Interactive {
            manifest,
            predictor,
            start,
            iterations,
            mask_prompt,
            random_sampling,
            growth_threshold,
            gt,
            guidance,
            object: obj,
        } => {
            set_path(&mut cfg.paths.manifest, manifest);
            set(&mut cfg.predictor, predictor);
            if let Some(s) = start {
                cfg.interactive.start = Some(s.into());
            }
            set(&mut cfg.interactive.iterations, iterations);
            cfg.interactive.mask_prompt |= mask_prompt;
            cfg.interactive.random_sampling |= random_sampling;
            set(&mut cfg.growth_threshold, growth_threshold);
            set_path(&mut cfg.paths.gt, gt);
            set_path(&mut cfg.paths.guidance, guidance);
            object = obj;
        }
        Command::Wsi {
            stack,
            ais,
            tile,
            halo,
            merge_iou,
            tiled_output,
            report,
        } => {
            set_path(&mut cfg.paths.stack, stack);
            apply_ais(&mut cfg, ais);
            set(&mut cfg.wsi.tile, tile);
            set(&mut cfg.wsi.halo, halo);
            set(&mut cfg.wsi.merge_iou, merge_iou);
            cfg.wsi.tiled_output |= tiled_output;
            set_path(&mut cfg.paths.report, report);
        }
        Command::SemanticEval {
            manifest,
            gt,
            pred,
            classes,
        } => {
            set_path(&mut cfg.paths.manifest, manifest);
            set_path(&mut cfg.paths.gt, gt);
            set_path(&mut cfg.paths.pred, pred);
            if classes.is_some() {
                cfg.classes = classes;
            }
        }
    }
    cfg.validate()?;
    Ok((cfg, object))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (cfg, object) = resolve(cli)?;
    let pool = pathoseg::thread_pool(cfg.jobs)?;
    pool.install(|| match cfg.command.as_str() {
        "targets" => commands::targets(&cfg),
        "segment" => commands::segment(&cfg),
        "grid-search" => commands::grid_search(&cfg),
        "evaluate" => commands::evaluate(&cfg),
        "amg" => commands::amg(&cfg),
        "interactive" => commands::interactive(&cfg, object),
        "wsi" => commands::wsi(&cfg),
        "semantic-eval" => commands::semantic_eval(&cfg),
        other => unreachable!("unhandled command {other}"),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Data(_) => 2,
            })
        }
    }
}
