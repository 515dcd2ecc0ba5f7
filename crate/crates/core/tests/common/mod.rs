//! Synthetic data and brute-force reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use pathoseg::{BinaryMask, LabelImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn paint_disk(l: &mut LabelImage, cx: f64, cy: f64, r: f64, id: u32) {
    paint_ellipse(l, cx, cy, r, r, 0.0, id);
}

/// Filled ellipse with semi-axes `a`, `b` rotated by `theta`.
pub fn paint_ellipse(l: &mut LabelImage, cx: f64, cy: f64, a: f64, b: f64, theta: f64, id: u32) {
    let (s, c) = theta.sin_cos();
    let r = a.max(b).ceil() as isize + 1;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx.round() as isize + dx, cy.round() as isize + dy);
            if x < 0 || y < 0 || x as usize >= l.width() || y as usize >= l.height() {
                continue;
            }
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let u = px * c + py * s;
            let v = -px * s + py * c;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                l.set(x as usize, y as usize, id);
            }
        }
    }
}

/// Random overlapping rectangles and discs; later objects overwrite
/// earlier ones, so some ids may vanish or split.
pub fn random_labeling(rng: &mut ChaCha8Rng, w: usize, h: usize, max_objects: usize) -> LabelImage {
    let mut l = LabelImage::zeros(w, h);
    let n = rng.gen_range(0..=max_objects);
    for k in 0..n {
        let id = k as u32 + 1;
        if rng.gen_bool(0.5) {
            let x0 = rng.gen_range(0..w);
            let y0 = rng.gen_range(0..h);
            let x1 = (x0 + rng.gen_range(1..=w / 2 + 1)).min(w);
            let y1 = (y0 + rng.gen_range(1..=h / 2 + 1)).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    l.set(x, y, id);
                }
            }
        } else {
            let r = rng.gen_range(1.0..(w.min(h) as f64 / 3.0).max(1.5));
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            paint_disk(&mut l, cx, cy, r, id);
        }
    }
    l
}

/// A prediction derived from `gt`: instances shifted, eroded or dropped,
/// spurious ones added, ids permuted.
pub fn perturb(rng: &mut ChaCha8Rng, gt: &LabelImage) -> LabelImage {
    let (w, h) = gt.dims();
    let mut out = LabelImage::zeros(w, h);
    let mut next = 1u32;
    for id in gt.ids() {
        if rng.gen_bool(0.15) {
            continue;
        }
        let (dx, dy) = (rng.gen_range(-3i64..=3), rng.gen_range(-3i64..=3));
        let new_id = next * 7 % 97 + 1;
        next += 1;
        for y in 0..h {
            for x in 0..w {
                if gt.get(x, y) != id {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0
                    && ny >= 0
                    && (nx as usize) < w
                    && (ny as usize) < h
                    && rng.gen_bool(0.97)
                {
                    out.set(nx as usize, ny as usize, new_id);
                }
            }
        }
    }
    if out.num_instances() <= 4 && rng.gen_bool(0.3) {
        let extra = random_labeling(rng, w, h, 2);
        for (o, &e) in out.as_mut_slice().iter_mut().zip(extra.as_slice()) {
            if e != 0 && *o == 0 {
                *o = 200 + e;
            }
        }
    }
    out
}

/// Pixel-count IoU of one gt and one predicted instance.
fn pair_iou(pred: &LabelImage, gt: &LabelImage, p: u32, g: u32) -> f64 {
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&pv, &gv) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (ip, ig) = (pv == p, gv == g);
        a += ip as u64;
        b += ig as u64;
        inter += (ip && ig) as u64;
    }
    inter as f64 / (a + b - inter) as f64
}

/// Largest number of disjoint (gt, pred) pairs with IoU above `t`, by
/// exhaustive search over assignments.
fn max_matching(adj: &[Vec<bool>], row: usize, used: &mut Vec<bool>) -> usize {
    if row == adj.len() {
        return 0;
    }
    let mut best = max_matching(adj, row + 1, used);
    for j in 0..used.len() {
        if adj[row][j] && !used[j] {
            used[j] = true;
            best = best.max(1 + max_matching(adj, row + 1, used));
            used[j] = false;
        }
    }
    best
}

/// mSA by exhaustive optimal matching and the direct formula.
pub fn brute_force_msa(pred: &LabelImage, gt: &LabelImage, thresholds: &[f64]) -> f64 {
    let gids = gt.ids();
    let pids = pred.ids();
    let ious: Vec<Vec<f64>> = gids
        .iter()
        .map(|&g| pids.iter().map(|&p| pair_iou(pred, gt, p, g)).collect())
        .collect();
    let mut total = 0.0;
    for &t in thresholds {
        let adj: Vec<Vec<bool>> = ious
            .iter()
            .map(|r| r.iter().map(|&v| v > t).collect())
            .collect();
        let tp = max_matching(&adj, 0, &mut vec![false; pids.len()]);
        let fp = pids.len() - tp;
        let fn_ = gids.len() - tp;
        total += if tp + fp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp + fn_) as f64
        };
    }
    total / thresholds.len() as f64
}

/// Convex blobs (ellipses) with at least `gap` background pixels between
/// any two and between blobs and the border. Returns the labeling; stops
/// early if placement keeps failing.
pub fn blob_image(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    n: usize,
    radius: (f64, f64),
    gap: usize,
) -> LabelImage {
    let mut l = LabelImage::zeros(w, h);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n && attempts < n * 200 {
        attempts += 1;
        let a = rng.gen_range(radius.0..radius.1);
        let b = rng.gen_range(radius.0.max(a * 0.6)..=a);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let margin = a + gap as f64 + 1.0;
        if margin * 2.0 >= w as f64 || margin * 2.0 >= h as f64 {
            break;
        }
        let cx = rng.gen_range(margin..w as f64 - margin);
        let cy = rng.gen_range(margin..h as f64 - margin);
        let id = placed as u32 + 1;
        if try_place(&mut l, cx, cy, a, b, theta, id, gap) {
            placed += 1;
        }
    }
    l
}

/// Paint the ellipse if it stays `gap` pixels clear of other objects.
#[allow(clippy::too_many_arguments)]
pub fn try_place(
    l: &mut LabelImage,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    id: u32,
    gap: usize,
) -> bool {
    let mut probe = LabelImage::zeros(l.width(), l.height());
    paint_ellipse(&mut probe, cx, cy, a, b, theta, 1);
    let g = gap as isize;
    let (w, h) = (l.width() as isize, l.height() as isize);
    for y in 0..h {
        for x in 0..w {
            if probe.get(x as usize, y as usize) == 0 {
                continue;
            }
            for dy in -g..=g {
                for dx in -g..=g {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0
                        && ny >= 0
                        && nx < w
                        && ny < h
                        && l.get(nx as usize, ny as usize) != 0
                    {
                        return false;
                    }
                }
            }
        }
    }
    for (o, &p) in l.as_mut_slice().iter_mut().zip(probe.as_slice()) {
        if p != 0 {
            *o = id;
        }
    }
    true
}

/// Number of 4-connected components of one instance.
pub fn component_count(mask: &BinaryMask) -> usize {
    pathoseg::raster_ops::connected_components(mask).1
}

/// Brute-force Euclidean distance from each pixel to the nearest pixel
/// where `target` is true.
pub fn brute_distance(w: usize, h: usize, target: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let pts: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| target(x, y))
        .collect();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            pts.iter()
                .map(|&(px, py)| {
                    ((x as f64 - px as f64).powi(2) + (y as f64 - py as f64).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
