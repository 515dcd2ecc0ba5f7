//! One function per subcommand. Each reads its inputs from the merged
//! [`RunConfig`] and runs on the caller's thread pool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pathoseg::ais::{generate_targets, grid_search as run_grid_search, instance_segmentation};
use pathoseg::amg::{
    amg_generate, ImageContext, MaskBankPredictor, OraclePredictor, Predictor, RegionGrowPredictor,
};
use pathoseg::interactive::{
    dataset_interactive_report, iterative_eval, InteractiveSettings, Sampling, StartKind,
};
use pathoseg::metrics::{
    semantic_argmax, weighted_dice, EvaluationReport, ImageEvaluation, SemanticRow, SemanticTable,
};
use pathoseg::raster_io::{
    decode_label_image, decode_psf3, load_label_image, load_manifest, load_prediction_stack,
    save_label_image, save_prediction_stack, DatasetManifest, LabelFormat, Sample, PSF3_MAGIC,
};
use pathoseg::wsi::{
    build_report, make_tile_grid, paint_stitched, segment_tiles, stitch_table, stitched_tile,
    Psf3Source,
};
use pathoseg::{LabelImage, SemanticLabelImage, SemanticProbMap};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::{CliError, Outcome};

const PREDICTORS: &[&str] = &["oracle", "regiongrow", "masks"];

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, command: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command} needs --{flag}")))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Write a report to `path` (stdout when `None`) and, next to a file, the
/// merged config as `<name>.config.json`.
fn emit<F>(path: Option<&Path>, cfg: &RunConfig, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> pathoseg::Result<()>,
{
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let mut f = std::io::BufWriter::new(fs::File::create(p).map_err(|e| io_err(p, e))?);
            write(&mut f)?;
            f.flush().map_err(|e| io_err(p, e))?;
            let mut sidecar = p.as_os_str().to_owned();
            sidecar.push(".config.json");
            let sidecar = PathBuf::from(sidecar);
            let text = serde_json::to_vec_pretty(cfg).expect("config serializes");
            fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().ok();
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, w: &mut dyn Write) -> pathoseg::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w).map_err(|e| pathoseg::Error::io("<output>", e))?;
    Ok(())
}

/// Partial when some but not all samples failed; a data error when all did.
fn outcome(n_errors: usize, n_total: usize) -> Result<Outcome, CliError> {
    if n_errors == 0 {
        Ok(Outcome::Success)
    } else if n_errors < n_total {
        Ok(Outcome::Partial)
    } else {
        Err(CliError::Data(format!(
            "all {n_total} samples failed; see report"
        )))
    }
}

pub fn targets(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let gt_path = need(&cfg.paths.gt, "gt", "targets")?;
    let out = need(&cfg.paths.out, "out", "targets")?;
    let gt = load_label_image(gt_path)?;
    let stack = generate_targets(&gt);
    save_prediction_stack(&stack, out)?;
    log::info!("{} instances -> {}", gt.num_instances(), out.display());
    Ok(Outcome::Success)
}

fn load_stack(path: &Path) -> pathoseg::Result<pathoseg::PredictionStack> {
    let (stack, clamped) = load_prediction_stack(path)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} values into [0, 1]", path.display());
    }
    Ok(stack)
}

fn label_path(dir: &Path, sample: &Sample) -> PathBuf {
    dir.join(format!(
        "{}.{}",
        sample.sample_id,
        LabelFormat::Lbl1.extension()
    ))
}

pub fn segment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let out = need(&cfg.paths.out, "out", "segment")?;
    if let Some(stack_path) = &cfg.paths.stack {
        let stack = load_stack(stack_path)?;
        let labels = instance_segmentation(&stack, &cfg.ais);
        save_label_image(&labels, out, LabelFormat::from_path(out))?;
        let mut summary = serde_json::json!({
            "instances": labels.max_id(),
            "out": out,
        });
        if let Some(gt_path) = &cfg.paths.gt {
            let gt = load_label_image(gt_path)?;
            let score =
                pathoseg::metrics::mean_segmentation_accuracy(&labels, &gt, &cfg.thresholds)?;
            summary["msa"] = score.into();
        }
        println!("{summary}");
        return Ok(Outcome::Success);
    }
    let manifest = load_manifest(need(&cfg.paths.manifest, "stack or --manifest", "segment")?)?;
    create_dir(out)?;
    let samples = manifest.sorted_samples();
    let images: Vec<ImageEvaluation> = samples
        .par_iter()
        .map(|s| {
            let run = || -> pathoseg::Result<ImageEvaluation> {
                let stack_path = s.prediction_stack_path.as_ref().ok_or_else(|| {
                    pathoseg::Error::Schema(format!(
                        "sample {} has no prediction_stack_path",
                        s.sample_id
                    ))
                })?;
                let labels = instance_segmentation(&load_stack(stack_path)?, &cfg.ais);
                save_label_image(&labels, label_path(out, s), LabelFormat::Lbl1)?;
                let gt = load_label_image(&s.gt_labels_path)?;
                Ok(ImageEvaluation::compute(
                    &s.sample_id,
                    &labels,
                    &gt,
                    &cfg.thresholds,
                    cfg.curve,
                ))
            };
            run().unwrap_or_else(|e| {
                log::warn!("sample {}: {e}", s.sample_id);
                ImageEvaluation::failed(&s.sample_id, e.to_string())
            })
        })
        .collect();
    let mut report = EvaluationReport::from_images(images, &cfg.thresholds);
    report.config = Some(cfg.to_value());
    let report_path = cfg.paths.report.clone().unwrap_or_else(|| {
        out.join(match cfg.format {
            OutputFormat::Csv => "report.csv",
            OutputFormat::Json => "report.json",
        })
    });
    emit(Some(&report_path), cfg, |w| match cfg.format {
        OutputFormat::Csv => report.write_csv(w),
        OutputFormat::Json => report.write_json(w),
    })?;
    outcome(report.n_errors, samples.len())
}

pub fn grid_search(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let manifest = load_manifest(need(&cfg.paths.manifest, "manifest", "grid-search")?)?;
    let samples = manifest
        .sorted_samples()
        .par_iter()
        .map(|s| {
            let stack_path = s.prediction_stack_path.as_ref().ok_or_else(|| {
                pathoseg::Error::Schema(format!(
                    "sample {} has no prediction_stack_path",
                    s.sample_id
                ))
            })?;
            Ok((
                load_stack(stack_path)?,
                load_label_image(&s.gt_labels_path)?,
            ))
        })
        .collect::<pathoseg::Result<Vec<_>>>()?;
    let table = run_grid_search(
        &samples,
        &cfg.grid.center,
        &cfg.grid.boundary,
        &cfg.ais,
        cfg.grid.iou_threshold,
        cfg.jobs,
    )?;
    let best = table.best_row();
    log::info!(
        "best cell center {} boundary {}: f1 {:.4}",
        best.center_threshold,
        best.boundary_threshold,
        best.f1
    );
    emit(cfg.paths.out.as_deref(), cfg, |w| match cfg.format {
        OutputFormat::Csv => table.write_csv(w),
        OutputFormat::Json => write_json(
            &serde_json::json!({ "table": table, "config": cfg.to_value() }),
            w,
        ),
    })?;
    Ok(Outcome::Success)
}

fn find_prediction(dir: &Path, sample: &Sample) -> pathoseg::Result<PathBuf> {
    for ext in ["lbl", "pgm"] {
        let p = dir.join(format!("{}.{ext}", sample.sample_id));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(pathoseg::Error::Schema(format!(
        "no prediction {0}.lbl or {0}.pgm in {1}",
        sample.sample_id,
        dir.display()
    )))
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let manifest = load_manifest(need(&cfg.paths.manifest, "manifest", "evaluate")?)?;
    let pred_dir = need(&cfg.paths.pred, "pred", "evaluate")?;
    let samples = manifest.sorted_samples();
    let images: Vec<ImageEvaluation> = samples
        .par_iter()
        .map(|s| {
            let run = || -> pathoseg::Result<ImageEvaluation> {
                let pred = load_label_image(find_prediction(pred_dir, s)?)?;
                let gt = load_label_image(&s.gt_labels_path)?;
                Ok(ImageEvaluation::compute(
                    &s.sample_id,
                    &pred,
                    &gt,
                    &cfg.thresholds,
                    cfg.curve,
                ))
            };
            run().unwrap_or_else(|e| ImageEvaluation::failed(&s.sample_id, e.to_string()))
        })
        .collect();
    let mut report = EvaluationReport::from_images(images, &cfg.thresholds);
    report.config = Some(cfg.to_value());
    for img in report.images.iter().filter(|i| i.error.is_some()) {
        log::warn!(
            "sample {}: {}",
            img.sample_id,
            img.error.as_deref().unwrap_or("")
        );
    }
    emit(cfg.paths.out.as_deref(), cfg, |w| match cfg.format {
        OutputFormat::Csv => report.write_csv(w),
        OutputFormat::Json => report.write_json(w),
    })?;
    outcome(report.n_errors, samples.len())
}

fn unknown_predictor(name: &str, valid: &[&str]) -> CliError {
    CliError::Usage(format!(
        "unknown predictor `{name}`; valid predictors: {}",
        valid.join(", ")
    ))
}

pub fn amg(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let out = need(&cfg.paths.out, "out", "amg")?;
    let gt = cfg.paths.gt.as_deref().map(load_label_image).transpose()?;
    let (predictor, ctx): (Box<dyn Predictor>, ImageContext) = match cfg.predictor.as_str() {
        "oracle" => {
            let gt = gt
                .clone()
                .ok_or_else(|| CliError::Usage("the oracle predictor needs --gt".into()))?;
            let ctx = ImageContext {
                width: gt.width(),
                height: gt.height(),
            };
            (Box::new(OraclePredictor::new(gt)), ctx)
        }
        "regiongrow" => {
            let p = RegionGrowPredictor::load(
                need(
                    &cfg.paths.guidance,
                    "guidance",
                    "amg --predictor regiongrow",
                )?,
                cfg.growth_threshold,
            )?;
            let (w, h) = (p.width(), p.height());
            (
                Box::new(p),
                ImageContext {
                    width: w,
                    height: h,
                },
            )
        }
        "masks" => {
            let p =
                MaskBankPredictor::load(need(&cfg.paths.masks, "masks", "amg --predictor masks")?)?;
            let (w, h) = (p.width(), p.height());
            (
                Box::new(p),
                ImageContext {
                    width: w,
                    height: h,
                },
            )
        }
        other => return Err(unknown_predictor(other, PREDICTORS)),
    };
    let result = amg_generate(predictor.as_ref(), &ctx, &cfg.amg)?;
    save_label_image(&result.labels, out, LabelFormat::from_path(out))?;
    let score = gt
        .as_ref()
        .map(|g| pathoseg::metrics::mean_segmentation_accuracy(&result.labels, g, &cfg.thresholds))
        .transpose()?;
    let summary = serde_json::json!({
        "points": result.n_points,
        "candidates": result.n_candidates,
        "instances": result.n_kept,
        "failures": result.failures,
        "msa": score,
        "config": cfg.to_value(),
    });
    match &cfg.paths.report {
        Some(p) => emit(Some(p), cfg, |w| write_json(&summary, w))?,
        None => println!(
            "{}",
            serde_json::json!({
                "instances": result.n_kept,
                "failures": result.failures.len(),
                "msa": score,
            })
        ),
    }
    Ok(if result.failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}

fn settings(cfg: &RunConfig) -> InteractiveSettings {
    InteractiveSettings {
        start: cfg.interactive.start,
        n_corrections: cfg.interactive.iterations,
        use_mask_prompt: cfg.interactive.mask_prompt,
        sampling: match (cfg.interactive.random_sampling, cfg.seed) {
            (true, Some(seed)) => Sampling::Random { seed },
            _ => Sampling::InteriorMost,
        },
    }
}

fn interactive_predictor(
    name: &str,
    gt: &LabelImage,
    guidance: Option<&Path>,
    threshold: f32,
) -> pathoseg::Result<Box<dyn Predictor>> {
    match name {
        "oracle" => Ok(Box::new(OraclePredictor::new(gt.clone()))),
        "regiongrow" => {
            let path = guidance.ok_or_else(|| {
                pathoseg::Error::Schema("regiongrow needs a guidance raster".into())
            })?;
            let p = RegionGrowPredictor::load(path, threshold)?;
            if (p.width(), p.height()) != gt.dims() {
                return Err(pathoseg::Error::DimensionMismatch {
                    left: (p.width(), p.height()),
                    right: gt.dims(),
                });
            }
            Ok(Box::new(p))
        }
        other => Err(pathoseg::Error::InvalidValue(format!(
            "unknown predictor `{other}`; valid predictors: oracle, regiongrow"
        ))),
    }
}

pub fn interactive(cfg: &RunConfig, object: Option<u32>) -> Result<Outcome, CliError> {
    let valid = &PREDICTORS[..2];
    if !valid.contains(&cfg.predictor.as_str()) {
        return Err(unknown_predictor(&cfg.predictor, valid));
    }
    let s = settings(cfg);
    if let Some(gt_path) = &cfg.paths.gt {
        // Single-object trace.
        let gt = load_label_image(gt_path)?;
        let id =
            object.ok_or_else(|| CliError::Usage("single-object mode needs --object".into()))?;
        let mask = gt.mask_of(id);
        if mask.is_empty() {
            return Err(CliError::Data(format!(
                "object {id} not present in {}",
                gt_path.display()
            )));
        }
        let predictor = interactive_predictor(
            &cfg.predictor,
            &gt,
            cfg.paths.guidance.as_deref(),
            cfg.growth_threshold,
        )?;
        let start = cfg.interactive.start.unwrap_or(StartKind::Point);
        let trace = iterative_eval(predictor.as_ref(), &mask, id, start, &s)?;
        emit(cfg.paths.out.as_deref(), cfg, |w| {
            write_json(&trace.entries, w)
        })?;
        if let Some(e) = &trace.error {
            log::warn!("trace truncated: {e}");
            return Ok(Outcome::Partial);
        }
        return Ok(Outcome::Success);
    }
    let manifest: DatasetManifest = load_manifest(need(
        &cfg.paths.manifest,
        "manifest or --gt",
        "interactive",
    )?)?;
    let factory = |sample: &Sample, gt: &LabelImage| {
        interactive_predictor(
            &cfg.predictor,
            gt,
            sample.guidance_path.as_deref(),
            cfg.growth_threshold,
        )
    };
    let mut report = dataset_interactive_report(&manifest, &factory, &s)?;
    report.config = Some(cfg.to_value());
    emit(cfg.paths.out.as_deref(), cfg, |w| match cfg.format {
        OutputFormat::Csv => report.write_csv(w),
        OutputFormat::Json => report.write_json(w),
    })?;
    outcome(report.n_errors(), report.images.len())
}

#[derive(Serialize)]
struct TileFile {
    index: usize,
    row: usize,
    col: usize,
    inner: pathoseg::Rect,
    file: String,
}

pub fn wsi(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let out = need(&cfg.paths.out, "out", "wsi")?;
    let load_start = Instant::now();
    let source = Psf3Source::open(need(&cfg.paths.stack, "stack", "wsi")?)?;
    let (w, h) = pathoseg::wsi::StackSource::dims(&source);
    let grid = make_tile_grid(w, h, cfg.wsi.tile, cfg.wsi.halo)?;
    log::info!(
        "{}x{} raster, {} tiles ({} s to open)",
        w,
        h,
        grid.num_tiles(),
        load_start.elapsed().as_secs_f64()
    );
    let seg = segment_tiles(&source, &grid, &cfg.ais, cfg.jobs)?;
    let t0 = Instant::now();
    let table = stitch_table(&seg.tiles, &grid, cfg.wsi.merge_iou)?;
    let mut report = build_report(&grid, seg.stages.clone(), &table, t0.elapsed());

    let t1 = Instant::now();
    if cfg.wsi.tiled_output {
        create_dir(out)?;
        let mut files = Vec::with_capacity(grid.num_tiles());
        for t in &grid.tiles {
            let name = format!("tile_{:05}.lbl", t.index);
            let labels = stitched_tile(&seg.tiles, &grid, &table, t.index);
            save_label_image(&labels, out.join(&name), LabelFormat::Lbl1)?;
            files.push(TileFile {
                index: t.index,
                row: t.row,
                col: t.col,
                inner: t.inner,
                file: name,
            });
        }
        let index = serde_json::json!({
            "width": grid.width,
            "height": grid.height,
            "tile": grid.tile,
            "halo": grid.halo,
            "rows": grid.rows,
            "cols": grid.cols,
            "num_instances": table.num_instances,
            "truncated_instances": table.truncated,
            "tiles": files,
        });
        let p = out.join("stitch_table.json");
        fs::write(&p, serde_json::to_vec_pretty(&index).expect("json"))
            .map_err(|e| io_err(&p, e))?;
        report.record_write(t1.elapsed(), grid.num_tiles());
    } else {
        let labels = paint_stitched(&seg.tiles, &grid, &table);
        save_label_image(&labels, out, LabelFormat::from_path(out))?;
        report.record_write(t1.elapsed(), 1);
    }
    print!("{}", report.table());
    if let Some(p) = &cfg.paths.report {
        let value = serde_json::json!({ "report": report, "config": cfg.to_value() });
        emit(Some(p), cfg, |w| write_json(&value, w))?;
    }
    Ok(Outcome::Success)
}

/// A PSF3 file is read as class probabilities (argmax); anything else as a
/// label file of class ids.
fn load_semantic_pred(path: &Path, classes: usize) -> pathoseg::Result<SemanticLabelImage> {
    let bytes = fs::read(path).map_err(|e| pathoseg::Error::io(path, e))?;
    let with_path = |source| pathoseg::Error::Format {
        path: path.to_path_buf(),
        source,
    };
    if bytes.starts_with(PSF3_MAGIC) {
        let (header, planes) = decode_psf3(&bytes).map_err(with_path)?;
        let probs = SemanticProbMap::new(header.width, header.height, planes)?;
        if probs.num_classes() != classes {
            return Err(pathoseg::Error::Precondition(format!(
                "{}: {} probability channels for {classes} classes",
                path.display(),
                header.channels
            )));
        }
        Ok(semantic_argmax(&probs))
    } else {
        let labels = decode_label_image(&bytes).map_err(with_path)?;
        SemanticLabelImage::from_labels(&labels, classes)
    }
}

fn semantic_row(sample_id: &str, gt: &Path, pred: Option<&Path>, classes: usize) -> SemanticRow {
    let run = || -> pathoseg::Result<pathoseg::metrics::SemanticReport> {
        let pred = pred.ok_or_else(|| {
            pathoseg::Error::Schema(format!("sample {sample_id} has no semantic prediction"))
        })?;
        let gt = SemanticLabelImage::from_labels(&load_label_image(gt)?, classes)?;
        let pred = load_semantic_pred(pred, classes)?;
        weighted_dice(&pred, &gt, classes)
    };
    match run() {
        Ok(report) => SemanticRow {
            sample_id: sample_id.to_string(),
            report: Some(report),
            error: None,
        },
        Err(e) => SemanticRow {
            sample_id: sample_id.to_string(),
            report: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn semantic_eval(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let classes = cfg
        .classes
        .ok_or_else(|| CliError::Usage("semantic-eval needs --classes".into()))?;
    if classes == 0 {
        return Err(CliError::Usage("--classes must be at least 1".into()));
    }
    let rows: Vec<SemanticRow> = if let Some(gt) = &cfg.paths.gt {
        let pred = need(&cfg.paths.pred, "pred", "semantic-eval")?;
        let id = gt
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sample".into());
        let row = semantic_row(&id, gt, Some(pred), classes);
        if let Some(e) = &row.error {
            return Err(CliError::Data(e.clone()));
        }
        vec![row]
    } else {
        let manifest = load_manifest(need(
            &cfg.paths.manifest,
            "manifest or --gt",
            "semantic-eval",
        )?)?;
        manifest
            .sorted_samples()
            .par_iter()
            .map(|s| match &s.semantic_gt_path {
                Some(gt) => {
                    semantic_row(&s.sample_id, gt, s.semantic_prob_path.as_deref(), classes)
                }
                None => SemanticRow {
                    sample_id: s.sample_id.clone(),
                    report: None,
                    error: Some("no semantic_gt_path".into()),
                },
            })
            .collect()
    };
    let n = rows.len();
    let mut table = SemanticTable::new(classes, rows);
    table.config = Some(cfg.to_value());
    emit(cfg.paths.out.as_deref(), cfg, |w| match cfg.format {
        OutputFormat::Csv => table.write_csv(w),
        OutputFormat::Json => table.write_json(w),
    })?;
    outcome(table.n_errors(), n)
}
