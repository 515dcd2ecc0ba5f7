//! Raster primitives: connected components, exact Euclidean distance
//! transform and separable Gaussian smoothing.

use std::collections::VecDeque;

use crate::types::{BinaryMask, LabelImage, Point};

/// Label the 4-connected components of `mask`. Ids are assigned 1..N in
/// row-major discovery order.
pub fn connected_components(mask: &BinaryMask) -> (LabelImage, usize) {
    let (w, h) = mask.dims();
    let data = mask.as_slice();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for n in neighbors4(i, w, h) {
                if data[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }
    (
        LabelImage::new(w, h, labels).expect("same dims"),
        next as usize,
    )
}

/// 4-neighbours of row-major index `i` in the order up, left, right, down.
#[inline]
pub(crate) fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let up = (y > 0).then(|| i - w);
    let left = (x > 0).then(|| i - 1);
    let right = (x + 1 < w).then(|| i + 1);
    let down = (y + 1 < h).then(|| i + w);
    [up, left, right, down].into_iter().flatten()
}

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `is_feature` holds (Felzenszwalb & Huttenlocher lower-envelope method).
/// Pixels are at infinite distance when no feature exists.
pub fn squared_distance_transform(
    width: usize,
    height: usize,
    is_feature: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..width * height)
        .map(|i| if is_feature(i) { 0.0 } else { f64::INFINITY })
        .collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Find first finite sample; with none, everything stays infinite.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        let intersect = |p: usize| {
            let pf = p as f64;
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        let mut s = intersect(v[k]);
        // z[0] is -inf, so the scan always stops at k >= 0.
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Distance from each set pixel of `mask` to the nearest unset pixel, with
/// everything outside the image counted as unset. Unset pixels get 0.
pub fn distance_to_background(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let data = mask.as_slice();
    let sq = squared_distance_transform(pw, ph, |i| {
        let (x, y) = (i % pw, i / pw);
        x == 0 || y == 0 || x == pw - 1 || y == ph - 1 || !data[(y - 1) * w + (x - 1)]
    });
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = sq[(y + 1) * pw + (x + 1)].sqrt();
        }
    }
    out
}

/// The set pixel farthest from the mask's complement; ties go to the
/// smallest row-major index.
pub fn interior_most_pixel(mask: &BinaryMask) -> Option<Point> {
    let w = mask.width();
    let dist = distance_to_background(mask);
    let mut best: Option<(usize, f64)> = None;
    for (i, (&set, &d)) in mask.as_slice().iter().zip(&dist).enumerate() {
        if set && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| Point::new(i % w, i / w))
}

/// The largest 4-connected component of `mask`; ties go to the component
/// discovered first in row-major order.
pub fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (labels, n) = connected_components(mask);
    if n == 0 {
        return None;
    }
    let mut sizes = vec![0usize; n + 1];
    for &l in labels.as_slice() {
        sizes[l as usize] += 1;
    }
    let mut best = 1;
    for id in 2..=n {
        if sizes[id] > sizes[best] {
            best = id;
        }
    }
    Some(labels.mask_of(best as u32))
}

/// Reflect an out-of-range index into `0..n` with edge repetition
/// (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / s2).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Two-pass separable Gaussian blur with kernel radius `ceil(3 sigma)` and
/// reflect padding. `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth(plane: &[f32], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 || plane.is_empty() {
        return plane.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0f32;
            for (k, &wgt) in kernel.iter().enumerate() {
                acc += wgt * row[reflect(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f32;
            for (k, &wgt) in kernel.iter().enumerate() {
                acc += wgt * tmp[reflect(y as isize + k as isize - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}
