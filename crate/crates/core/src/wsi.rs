//! Tile-and-stitch instance segmentation for rasters too large to process
//! in one piece.
//!
//! Every tile is segmented on its halo-expanded outer window. Instances of
//! neighbouring tiles are merged when their IoU, restricted to the strip
//! where the two outer windows overlap, reaches a threshold. Each output
//! pixel is then taken from the tile whose inner rect contains it.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ais::instance_segmentation;
use crate::error::{Error, Result};
use crate::raster_io::Psf3Reader;
use crate::types::{AisParams, LabelImage, PredictionStack, Rect};

pub const DEFAULT_TILE: usize = 512;
pub const DEFAULT_HALO: usize = 64;
pub const DEFAULT_MERGE_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub inner: Rect,
    pub outer: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile: usize,
    pub halo: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub tiles: Vec<Tile>,
}

/// Square `tile` x `tile` inner rects (the last row and column may be
/// smaller), each expanded by `halo` on every side and clamped to the image.
pub fn make_tile_grid(width: usize, height: usize, tile: usize, halo: usize) -> Result<TileGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue(format!(
            "zero-sized image {width}x{height}"
        )));
    }
    if tile == 0 {
        return Err(Error::InvalidValue("tile size must be positive".into()));
    }
    let rows = height.div_ceil(tile);
    let cols = width.div_ceil(tile);
    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let (x, y) = (col * tile, row * tile);
            let inner = Rect::new(x, y, tile.min(width - x), tile.min(height - y));
            let ox = x.saturating_sub(halo);
            let oy = y.saturating_sub(halo);
            let outer = Rect::new(
                ox,
                oy,
                (inner.x_end() + halo).min(width) - ox,
                (inner.y_end() + halo).min(height) - oy,
            );
            tiles.push(Tile {
                index: tiles.len(),
                row,
                col,
                inner,
                outer,
            });
        }
    }
    Ok(TileGrid {
        width,
        height,
        tile,
        halo,
        rows,
        cols,
        tiles,
    })
}

impl TileGrid {
    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_at(&self, row: usize, col: usize) -> &Tile {
        &self.tiles[row * self.cols + col]
    }

    /// Pairs of tiles (lower index first) whose outer rects overlap,
    /// including diagonal neighbours, in ascending order.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize, Rect)> {
        let mut out = Vec::new();
        for t in &self.tiles {
            let (r, c) = (t.row as isize, t.col as isize);
            for (dr, dc) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr as usize >= self.rows || nc as usize >= self.cols {
                    continue;
                }
                let other = self.tile_at(nr as usize, nc as usize);
                if let Some(strip) = t.outer.intersect(&other.outer) {
                    out.push((t.index, other.index, strip));
                }
            }
        }
        out.sort_by_key(|&(a, b, _)| (a, b));
        out
    }
}

/// Random-access provider of prediction-stack windows.
pub trait StackSource: Sync {
    fn dims(&self) -> (usize, usize);
    fn read_window(&self, rect: Rect) -> Result<PredictionStack>;
}

impl StackSource for PredictionStack {
    fn dims(&self) -> (usize, usize) {
        PredictionStack::dims(self)
    }

    fn read_window(&self, rect: Rect) -> Result<PredictionStack> {
        let (w, h) = self.dims();
        if rect.x_end() > w || rect.y_end() > h {
            return Err(Error::Precondition(format!(
                "window {rect:?} outside {w}x{h} stack"
            )));
        }
        Ok(self.crop(rect))
    }
}

/// Windows streamed from a 3-channel PSF3 file.
#[derive(Debug)]
pub struct Psf3Source {
    reader: Mutex<Psf3Reader>,
    dims: (usize, usize),
}

impl Psf3Source {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let reader = Psf3Reader::open(path)?;
        let h = reader.header();
        if h.channels != 3 {
            return Err(Error::Precondition(format!(
                "prediction stack needs 3 channels, file has {}",
                h.channels
            )));
        }
        Ok(Self {
            dims: (h.width, h.height),
            reader: Mutex::new(reader),
        })
    }
}

impl StackSource for Psf3Source {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn read_window(&self, rect: Rect) -> Result<PredictionStack> {
        let mut reader = self.reader.lock().unwrap_or_else(|p| p.into_inner());
        let (stack, clamped) = reader.read_stack_window(rect)?;
        if clamped > 0 {
            log::warn!("window {rect:?}: clamped {clamped} out-of-range values");
        }
        Ok(stack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Load and segment run interleaved per tile; each gets the share of
    /// the joint wall time matching its share of busy time.
    pub wall_time_s: f64,
    /// Summed per-tile time across threads.
    pub busy_time_s: f64,
    pub tiles_processed: usize,
    /// Largest estimated per-tile working set.
    pub peak_tile_bytes: u64,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub width: usize,
    pub height: usize,
    pub tile: usize,
    pub halo: usize,
    pub num_tiles: usize,
    pub num_instances: usize,
    /// Instances no single tile window holds clear of its interior edges;
    /// they may be split at inner-rect boundaries.
    pub truncated_instances: Vec<u32>,
    pub stages: Vec<StageReport>,
}

impl ResourceReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn record_write(&mut self, elapsed: Duration, tiles: usize) {
        let parallelism = self.stages.first().map_or(1, |s| s.parallelism);
        self.stages.retain(|s| s.stage != "write");
        self.stages.push(StageReport {
            stage: "write".into(),
            wall_time_s: elapsed.as_secs_f64(),
            busy_time_s: elapsed.as_secs_f64(),
            tiles_processed: tiles,
            peak_tile_bytes: 0,
            parallelism: parallelism.min(1),
        });
    }

    /// Plain-text table: stage, time, tiles, peak memory.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>10} {:>8} {:>14} {:>8}\n",
            "stage", "time_s", "tiles", "peak_tile_MiB", "threads"
        );
        for st in &self.stages {
            s.push_str(&format!(
                "{:<8} {:>10.3} {:>8} {:>14.2} {:>8}\n",
                st.stage,
                st.wall_time_s,
                st.tiles_processed,
                st.peak_tile_bytes as f64 / (1024.0 * 1024.0),
                st.parallelism
            ));
        }
        s.push_str(&format!(
            "{} tiles, {} instances, {} truncated\n",
            self.num_tiles,
            self.num_instances,
            self.truncated_instances.len()
        ));
        s
    }
}

/// Bytes per outer-window pixel while a tile is segmented: input and
/// smoothed planes, label and seed rasters, mask, flood queue.
const TILE_BYTES_PER_PIXEL: u64 = 3 * 4 + 2 * 4 + 4 + 4 + 1 + 24;

/// Per-tile labelings on the outer windows, plus the stage timings.
#[derive(Debug, Clone)]
pub struct TileSegmentation {
    pub tiles: Vec<LabelImage>,
    pub stages: Vec<StageReport>,
}

/// Load and segment every tile's outer window on a pool of `parallelism`
/// threads (0 = all cores). The first failing tile, by index, aborts the
/// run.
pub fn segment_tiles(
    source: &dyn StackSource,
    grid: &TileGrid,
    params: &AisParams,
    parallelism: usize,
) -> Result<TileSegmentation> {
    params.validate()?;
    if source.dims() != (grid.width, grid.height) {
        return Err(Error::dims(source.dims(), (grid.width, grid.height)));
    }
    let pool = crate::thread_pool(parallelism)?;
    let threads = pool.current_num_threads();
    let start = Instant::now();
    let results: Vec<Result<(LabelImage, Duration, Duration)>> = pool.install(|| {
        grid.tiles
            .par_iter()
            .map(|t| {
                let t0 = Instant::now();
                let stack = source.read_window(t.outer).map_err(|e| Error::Tile {
                    tile: t.index,
                    source: Box::new(e),
                })?;
                let t1 = Instant::now();
                let labels = instance_segmentation(&stack, params);
                Ok((labels, t1 - t0, t1.elapsed()))
            })
            .collect()
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut tiles = Vec::with_capacity(results.len());
    let (mut load, mut seg) = (0.0, 0.0);
    for r in results {
        let (labels, l, s) = r?;
        load += l.as_secs_f64();
        seg += s.as_secs_f64();
        tiles.push(labels);
    }
    let peak_area = grid
        .tiles
        .iter()
        .map(|t| t.outer.area() as u64)
        .max()
        .unwrap_or(0);
    let busy = (load + seg).max(f64::MIN_POSITIVE);
    let stage = |name: &str, busy_s: f64, bytes: u64| StageReport {
        stage: name.into(),
        wall_time_s: elapsed * busy_s / busy,
        busy_time_s: busy_s,
        tiles_processed: grid.num_tiles(),
        peak_tile_bytes: bytes,
        parallelism: threads,
    };
    Ok(TileSegmentation {
        tiles,
        stages: vec![
            stage("load", load, peak_area * 3 * 4),
            stage("segment", seg, peak_area * TILE_BYTES_PER_PIXEL),
        ],
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // smaller root wins so the structure is independent of pair order
    if ra < rb {
        parent[rb] = ra;
    } else if rb < ra {
        parent[ra] = rb;
    }
}

/// Maps every tile-local instance id to its final global id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchTable {
    /// `ids[tile][local]` is the global id (0 when the instance owns no
    /// pixel); index 0 is background.
    pub ids: Vec<Vec<u32>>,
    pub num_instances: usize,
    /// Global ids whose extent no tile window holds clear of its interior
    /// edges.
    pub truncated: Vec<u32>,
}

/// Merge instances across adjacent tiles and number the result 1..N in
/// row-major order of first owned pixel.
pub fn stitch_table(tiles: &[LabelImage], grid: &TileGrid, merge_iou: f64) -> Result<StitchTable> {
    if tiles.len() != grid.num_tiles() {
        return Err(Error::Precondition(format!(
            "{} tile labelings for a grid of {}",
            tiles.len(),
            grid.num_tiles()
        )));
    }
    for (t, l) in grid.tiles.iter().zip(tiles) {
        if l.dims() != (t.outer.width, t.outer.height) {
            return Err(Error::Precondition(format!(
                "tile {} labeling is {:?}, outer rect is {}x{}",
                t.index,
                l.dims(),
                t.outer.width,
                t.outer.height
            )));
        }
    }
    if !(merge_iou > 0.0 && merge_iou <= 1.0) {
        return Err(Error::InvalidValue(format!(
            "merge IoU {merge_iou} outside (0, 1]"
        )));
    }

    let mut offsets = Vec::with_capacity(tiles.len() + 1);
    offsets.push(0usize);
    for l in tiles {
        offsets.push(offsets.last().unwrap() + l.max_id() as usize + 1);
    }
    let mut parent: Vec<usize> = (0..*offsets.last().unwrap()).collect();

    for (a, b, strip) in grid.adjacent_pairs() {
        let (ta, tb) = (&grid.tiles[a], &grid.tiles[b]);
        let mut size_a: HashMap<u32, u64> = HashMap::new();
        let mut size_b: HashMap<u32, u64> = HashMap::new();
        let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
        for y in strip.y..strip.y_end() {
            for x in strip.x..strip.x_end() {
                let la = tiles[a].get(x - ta.outer.x, y - ta.outer.y);
                let lb = tiles[b].get(x - tb.outer.x, y - tb.outer.y);
                if la != 0 {
                    *size_a.entry(la).or_default() += 1;
                }
                if lb != 0 {
                    *size_b.entry(lb).or_default() += 1;
                }
                if la != 0 && lb != 0 {
                    *inter.entry((la, lb)).or_default() += 1;
                }
            }
        }
        let mut pairs: Vec<_> = inter.into_iter().collect();
        pairs.sort_unstable();
        for ((la, lb), n) in pairs {
            let iou = n as f64 / (size_a[&la] + size_b[&lb] - n) as f64;
            if iou >= merge_iou {
                union(
                    &mut parent,
                    offsets[a] + la as usize,
                    offsets[b] + lb as usize,
                );
            }
        }
    }

    // Row-major scan over inner rects assigns final ids and extents.
    let mut root_id: HashMap<usize, u32> = HashMap::new();
    let mut extents: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut ids: Vec<Vec<u32>> = tiles
        .iter()
        .map(|l| vec![0; l.max_id() as usize + 1])
        .collect();
    for y in 0..grid.height {
        let row = y / grid.tile;
        for col in 0..grid.cols {
            let t = grid.tile_at(row, col);
            let labels = &tiles[t.index];
            for x in t.inner.x..t.inner.x_end() {
                let local = labels.get(x - t.outer.x, y - t.outer.y);
                if local == 0 {
                    continue;
                }
                let root = find(&mut parent, offsets[t.index] + local as usize);
                let next = root_id.len() as u32 + 1;
                let id = *root_id.entry(root).or_insert(next);
                if id == next {
                    extents.push((x, y, x, y));
                }
                ids[t.index][local as usize] = id;
                let e = &mut extents[id as usize - 1];
                e.0 = e.0.min(x);
                e.1 = e.1.min(y);
                e.2 = e.2.max(x);
                e.3 = e.3.max(y);
            }
        }
    }

    // halo-only copies of owned instances
    for (t, map) in ids.iter_mut().enumerate() {
        for (local, id) in map.iter_mut().enumerate().skip(1) {
            if *id == 0 {
                let root = find(&mut parent, offsets[t] + local);
                *id = root_id.get(&root).copied().unwrap_or(0);
            }
        }
    }

    let truncated = extents
        .iter()
        .enumerate()
        .filter(|(_, &(x0, y0, x1, y1))| !held_by_some_tile(grid, x0, y0, x1, y1))
        .map(|(i, _)| i as u32 + 1)
        .collect();
    Ok(StitchTable {
        ids,
        num_instances: extents.len(),
        truncated,
    })
}

/// Whether some tile's outer window contains the inclusive extent without
/// touching one of its edges that lies inside the image.
fn held_by_some_tile(grid: &TileGrid, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
    let (r0, r1) = (y0 / grid.tile, y1 / grid.tile);
    let (c0, c1) = (x0 / grid.tile, x1 / grid.tile);
    (r0..=r1).any(|r| {
        (c0..=c1).any(|c| {
            let o = grid.tile_at(r, c).outer;
            let left = o.x == 0 || x0 > o.x;
            let top = o.y == 0 || y0 > o.y;
            let right = o.x_end() == grid.width || x1 + 1 < o.x_end();
            let bottom = o.y_end() == grid.height || y1 + 1 < o.y_end();
            o.contains(x0, y0) && o.contains(x1, y1) && left && top && right && bottom
        })
    })
}

/// Paint the stitched labeling into one raster.
pub fn paint_stitched(tiles: &[LabelImage], grid: &TileGrid, table: &StitchTable) -> LabelImage {
    let mut out = LabelImage::zeros(grid.width, grid.height);
    for t in &grid.tiles {
        let labels = &tiles[t.index];
        let map = &table.ids[t.index];
        for y in t.inner.y..t.inner.y_end() {
            for x in t.inner.x..t.inner.x_end() {
                let local = labels.get(x - t.outer.x, y - t.outer.y);
                if local != 0 {
                    out.set(x, y, map[local as usize]);
                }
            }
        }
    }
    out
}

/// One tile's inner rect with global ids, for tiled on-disk output.
pub fn stitched_tile(
    tiles: &[LabelImage],
    grid: &TileGrid,
    table: &StitchTable,
    index: usize,
) -> LabelImage {
    let t = &grid.tiles[index];
    let map = &table.ids[index];
    let inner_local = tiles[index].crop(Rect::new(
        t.inner.x - t.outer.x,
        t.inner.y - t.outer.y,
        t.inner.width,
        t.inner.height,
    ));
    let data = inner_local
        .as_slice()
        .iter()
        .map(|&l| map[l as usize])
        .collect();
    LabelImage::new(t.inner.width, t.inner.height, data).expect("inner dims")
}

pub fn stitch(tiles: &[LabelImage], grid: &TileGrid, merge_iou: f64) -> Result<LabelImage> {
    let table = stitch_table(tiles, grid, merge_iou)?;
    Ok(paint_stitched(tiles, grid, &table))
}

/// Segment, stitch and report. `parallelism` 0 means all cores; the output
/// does not depend on it.
pub fn segment_tiled(
    source: &dyn StackSource,
    grid: &TileGrid,
    params: &AisParams,
    merge_iou: f64,
    parallelism: usize,
) -> Result<(LabelImage, ResourceReport)> {
    let seg = segment_tiles(source, grid, params, parallelism)?;
    let t0 = Instant::now();
    let table = stitch_table(&seg.tiles, grid, merge_iou)?;
    let labels = paint_stitched(&seg.tiles, grid, &table);
    let report = build_report(grid, seg.stages, &table, t0.elapsed());
    Ok((labels, report))
}

pub fn build_report(
    grid: &TileGrid,
    mut stages: Vec<StageReport>,
    table: &StitchTable,
    stitch_time: Duration,
) -> ResourceReport {
    let outer_pixels: u64 = grid
        .tiles
        .iter()
        .map(|t| t.outer.area() as u64)
        .max()
        .unwrap_or(0);
    stages.push(StageReport {
        stage: "stitch".into(),
        wall_time_s: stitch_time.as_secs_f64(),
        busy_time_s: stitch_time.as_secs_f64(),
        tiles_processed: grid.num_tiles(),
        // two neighbouring tile labelings compared at a time
        peak_tile_bytes: outer_pixels * 4 * 2,
        parallelism: 1,
    });
    ResourceReport {
        width: grid.width,
        height: grid.height,
        tile: grid.tile,
        halo: grid.halo,
        num_tiles: grid.num_tiles(),
        num_instances: table.num_instances,
        truncated_instances: table.truncated.clone(),
        stages,
    }
}
