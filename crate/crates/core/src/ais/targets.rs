use std::collections::BTreeMap;

use crate::raster_ops::squared_distance_transform;
use crate::types::{LabelImage, PredictionStack};

struct ObjectExtent {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    sum_x: f64,
    sum_y: f64,
    count: usize,
}

/// Synthesize decoder-style targets from a ground-truth labeling.
///
/// Per object: `center_distance` is the Euclidean distance to the object
/// pixel nearest its centroid, normalized by the largest such distance;
/// `boundary_proximity` is `1 - d / d_max` where `d` is the distance to the
/// nearest boundary pixel of the same object. Boundary pixels are object
/// pixels with a 4-neighbour outside the object (the image border counts as
/// outside). Background is 0 foreground and 1 in both distance channels.
pub fn generate_targets(gt: &LabelImage) -> PredictionStack {
    let (w, h) = gt.dims();
    let labels = gt.as_slice();
    let mut stack = PredictionStack::background(w, h);

    let mut objects: BTreeMap<u32, ObjectExtent> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let id = labels[y * w + x];
            if id == 0 {
                continue;
            }
            let e = objects.entry(id).or_insert(ObjectExtent {
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
                sum_x: 0.0,
                sum_y: 0.0,
                count: 0,
            });
            e.x0 = e.x0.min(x);
            e.x1 = e.x1.max(x + 1);
            e.y1 = y + 1;
            e.sum_x += x as f64;
            e.sum_y += y as f64;
            e.count += 1;
        }
    }

    for (&id, e) in &objects {
        // Crop padded by one pixel so every boundary test stays in range.
        let cx0 = e.x0 as isize - 1;
        let cy0 = e.y0 as isize - 1;
        let cw = e.x1 - e.x0 + 2;
        let ch = e.y1 - e.y0 + 2;
        let inside = |cx: usize, cy: usize| -> bool {
            let (x, y) = (cx0 + cx as isize, cy0 + cy as isize);
            x >= 0
                && y >= 0
                && (x as usize) < w
                && (y as usize) < h
                && labels[y as usize * w + x as usize] == id
        };
        let is_boundary = |cx: usize, cy: usize| -> bool {
            inside(cx, cy)
                && (!inside(cx - 1, cy)
                    || !inside(cx + 1, cy)
                    || !inside(cx, cy - 1)
                    || !inside(cx, cy + 1))
        };
        let sq = squared_distance_transform(cw, ch, |i| is_boundary(i % cw, i / cw));

        let (mx, my) = (e.sum_x / e.count as f64, e.sum_y / e.count as f64);
        let mut center = (0usize, 0usize);
        let mut best = f64::INFINITY;
        let mut max_boundary = 0.0f64;
        for cy in 1..ch - 1 {
            for cx in 1..cw - 1 {
                if !inside(cx, cy) {
                    continue;
                }
                let (x, y) = ((cx0 + cx as isize) as usize, (cy0 + cy as isize) as usize);
                let d = (x as f64 - mx).powi(2) + (y as f64 - my).powi(2);
                if d < best {
                    best = d;
                    center = (x, y);
                }
                max_boundary = max_boundary.max(sq[cy * cw + cx].sqrt());
            }
        }
        let mut max_center = 0.0f64;
        for cy in 1..ch - 1 {
            for cx in 1..cw - 1 {
                if inside(cx, cy) {
                    let (x, y) = ((cx0 + cx as isize) as usize, (cy0 + cy as isize) as usize);
                    max_center = max_center.max(dist(x, y, center));
                }
            }
        }
        for cy in 1..ch - 1 {
            for cx in 1..cw - 1 {
                if !inside(cx, cy) {
                    continue;
                }
                let (x, y) = ((cx0 + cx as isize) as usize, (cy0 + cy as isize) as usize);
                let i = y * w + x;
                stack.foreground[i] = 1.0;
                stack.center_distance[i] = if max_center > 0.0 {
                    (dist(x, y, center) / max_center) as f32
                } else {
                    0.0
                };
                stack.boundary_proximity[i] = if max_boundary > 0.0 {
                    (1.0 - sq[cy * cw + cx].sqrt() / max_boundary) as f32
                } else {
                    1.0
                };
            }
        }
    }
    stack
}

fn dist(x: usize, y: usize, c: (usize, usize)) -> f64 {
    ((x as f64 - c.0 as f64).powi(2) + (y as f64 - c.1 as f64).powi(2)).sqrt()
}
