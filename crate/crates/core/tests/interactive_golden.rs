//! Region-growing interactive traces on a committed two-lobe fixture,
//! compared against frozen golden traces.
//!
//! Set `PATHOSEG_UPDATE_GOLDEN=1` to rewrite the fixture and golden files.

use std::path::PathBuf;

use pathoseg::amg::RegionGrowPredictor;
use pathoseg::interactive::{iterative_eval, InteractiveSettings, StartKind, TraceEntry};
use pathoseg::raster_io::{load_label_image, load_psf3, save_label_image, save_psf3, LabelFormat};
use pathoseg::{LabelImage, Prompt};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/interactive")
}

fn updating() -> bool {
    std::env::var_os("PATHOSEG_UPDATE_GOLDEN").is_some()
}

const W: usize = 48;
const H: usize = 32;

/// Object 1: two discs joined by a neck, with guidance 0.9 / 0.75 / 0.6 on
/// left lobe / neck / right lobe and a 0.85 background patch touching the
/// left lobe. Object 2: a plain disc at 0.4.
fn build_fixture() -> (LabelImage, Vec<f32>) {
    let mut gt = LabelImage::zeros(W, H);
    let mut g = vec![0.1f32; W * H];
    let in_disc = |x: usize, y: usize, cx: f64, cy: f64, r: f64| {
        (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
    };
    for y in 0..H {
        for x in 0..W {
            let i = y * W + x;
            if (10..18).contains(&x) && (1..8).contains(&y) {
                g[i] = 0.85;
            }
            if in_disc(x, y, 13.0, 15.0, 7.0) {
                gt.set(x, y, 1);
                g[i] = 0.9;
            } else if in_disc(x, y, 31.0, 15.0, 7.0) {
                gt.set(x, y, 1);
                g[i] = 0.6;
            } else if (19..26).contains(&x) && (13..18).contains(&y) {
                gt.set(x, y, 1);
                g[i] = 0.75;
            } else if in_disc(x, y, 42.0, 27.0, 4.0) {
                gt.set(x, y, 2);
                g[i] = 0.4;
            }
        }
    }
    (gt, g)
}

fn load_fixture() -> (LabelImage, RegionGrowPredictor) {
    let dir = fixture_dir();
    if updating() {
        std::fs::create_dir_all(&dir).unwrap();
        let (gt, g) = build_fixture();
        save_label_image(&gt, dir.join("gt.pgm"), LabelFormat::Pgm).unwrap();
        save_psf3(dir.join("guidance.psf3"), W, H, &[&g]).unwrap();
    }
    let gt = load_label_image(dir.join("gt.pgm")).unwrap();
    let (_, planes) = load_psf3(dir.join("guidance.psf3")).unwrap();
    assert_eq!(planes.len(), 1);
    let predictor =
        RegionGrowPredictor::new(gt.width(), gt.height(), planes[0].clone(), 0.1).unwrap();
    (gt, predictor)
}

fn check_golden(name: &str, entries: &[TraceEntry]) {
    let path = fixture_dir().join(name);
    if updating() {
        let text = serde_json::to_string_pretty(entries).unwrap();
        std::fs::write(&path, text + "\n").unwrap();
    }
    let golden: Vec<TraceEntry> = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(
        entries,
        golden.as_slice(),
        "trace differs from {}",
        path.display()
    );
}

#[test]
fn committed_fixture_matches_builder() {
    let (gt, predictor) = load_fixture();
    let (built_gt, built_g) = build_fixture();
    assert_eq!(gt, built_gt);
    assert_eq!(predictor.guidance(), built_g.as_slice());
}

#[test]
fn point_start_trace_is_golden() {
    let (gt, predictor) = load_fixture();
    let settings = InteractiveSettings::default();
    let trace = iterative_eval(&predictor, &gt.mask_of(1), 1, StartKind::Point, &settings).unwrap();
    assert!(trace.error.is_none());
    assert!(trace.entries.len() <= 8);
    let scores = trace.scores(7);
    // Corrections recover the lobes and neck the first prompt misses.
    assert!(scores[7] > scores[0], "{scores:?}");
    assert!(trace.entries[1..]
        .iter()
        .flat_map(|e| &e.prompts)
        .any(|p| matches!(p, Prompt::NegativePoint(_))));
    check_golden("trace_point.json", &trace.entries);
}

#[test]
fn box_start_trace_is_golden() {
    let (gt, predictor) = load_fixture();
    let settings = InteractiveSettings::default();
    let trace = iterative_eval(&predictor, &gt.mask_of(1), 1, StartKind::Box, &settings).unwrap();
    assert!(trace.error.is_none());
    check_golden("trace_box.json", &trace.entries);
}

#[test]
fn prompts_respect_error_regions() {
    let (gt, predictor) = load_fixture();
    let mask = gt.mask_of(1);
    let settings = InteractiveSettings {
        use_mask_prompt: true,
        ..Default::default()
    };
    for start in [StartKind::Point, StartKind::Box] {
        let trace = iterative_eval(&predictor, &mask, 1, start, &settings).unwrap();
        for pair in trace.entries.windows(2) {
            let prev = pathoseg::rle_to_mask(&pair[0].mask_rle).unwrap();
            for p in &pair[1].prompts[pair[0].prompts.len()..] {
                match p {
                    Prompt::PositivePoint(q) => assert!(mask.get(q.x, q.y) && !prev.get(q.x, q.y)),
                    Prompt::NegativePoint(q) => assert!(!mask.get(q.x, q.y) && prev.get(q.x, q.y)),
                    other => panic!("unexpected correction prompt {other:?}"),
                }
            }
        }
        // early stop iff the last prediction equals the object
        let last = pathoseg::rle_to_mask(&trace.entries.last().unwrap().mask_rle).unwrap();
        if trace.early_stop {
            assert_eq!(last, mask);
        }
        for e in &trace.entries[..trace.entries.len() - 1] {
            assert_ne!(pathoseg::rle_to_mask(&e.mask_rle).unwrap(), mask);
        }
    }
}
