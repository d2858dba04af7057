//! HOG feature pyramids.
//!
//! Each pyramid level is a grid of per-cell features: gradient orientation
//! histograms (centered differences, bilinear interpolation in space and
//! orientation) that are 2x2-block L2-normalized with clipping and averaged
//! back to one F-dimensional vector per cell. A patch is an 8x8-cell window
//! whose 10x10-cell support (one normalization border cell on each side)
//! must lie inside the level grid, i.e. at least 80x80 pixels at that scale.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::RectF;

/// Cells per patch window side.
pub const WINDOW_CELLS: usize = 8;
/// Cells per patch support side (window plus a 1-cell border).
pub const SUPPORT_CELLS: usize = 10;

/// Stabilizer added to squared block energy before normalization; small
/// enough to keep descriptors invariant to global intensity gain.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HogConfig {
    /// Cell side in pixels (stride equals the cell side).
    pub cell_size: usize,
    /// Unsigned gradient orientation bins per cell.
    pub orientation_bins: usize,
    /// Maximum number of pyramid levels; level 0 is native resolution.
    pub num_levels: usize,
    /// Per-level downsample ratio.
    pub scale_step: f64,
    /// Block-normalization clipping value.
    pub block_clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            orientation_bins: 9,
            num_levels: 7,
            scale_step: std::f64::consts::SQRT_2,
            block_clip: 0.2,
        }
    }
}

impl HogConfig {
    /// Features per cell (F).
    pub fn features_per_cell(&self) -> usize {
        self.orientation_bins
    }

    /// Flattened patch descriptor length: 8 * 8 * F.
    pub fn descriptor_len(&self) -> usize {
        WINDOW_CELLS * WINDOW_CELLS * self.features_per_cell()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 || self.orientation_bins == 0 {
            return Err(Error::InvalidConfig("cell_size and orientation_bins must be positive".into()));
        }
        if self.num_levels < 1 {
            return Err(Error::InvalidConfig("num_levels must be >= 1".into()));
        }
        if self.scale_step <= 1.0 {
            return Err(Error::InvalidConfig("scale_step must be > 1".into()));
        }
        Ok(())
    }
}

/// Raw (unnormalized) per-cell orientation histograms for one image.
#[derive(Debug, Clone)]
pub struct CellHistograms {
    pub cells_w: usize,
    pub cells_h: usize,
    pub bins: usize,
    /// `[cy][cx][bin]`, row-major.
    pub data: Vec<f64>,
}

impl CellHistograms {
    pub fn cell(&self, cx: usize, cy: usize) -> &[f64] {
        let i = (cy * self.cells_w + cx) * self.bins;
        &self.data[i..i + self.bins]
    }

    /// Total gradient mass per orientation bin, summed over all cells.
    pub fn orientation_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.bins];
        for chunk in self.data.chunks_exact(self.bins) {
            for (m, v) in mass.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        mass
    }
}

/// Compute raw cell histograms: centered-difference gradients (borders
/// clamped), magnitude split bilinearly between the two nearest unsigned
/// orientation bins (bin centers at k*pi/bins) and among the four nearest
/// cell centers.
pub fn cell_histograms(img: &GrayImage, cfg: &HogConfig) -> CellHistograms {
    let cell = cfg.cell_size;
    let bins = cfg.orientation_bins;
    let cells_w = img.width() as usize / cell;
    let cells_h = img.height() as usize / cell;
    let mut data = vec![0.0f64; cells_w * cells_h * bins];
    if cells_w == 0 || cells_h == 0 {
        return CellHistograms {
            cells_w,
            cells_h,
            bins,
            data,
        };
    }

    let w = img.width() as i64;
    let h = img.height() as i64;
    let px_w = (cells_w * cell) as i64;
    let px_h = (cells_h * cell) as i64;
    let pixels = img.pixels();
    let at = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w - 1) as usize;
        let y = y.clamp(0, h - 1) as usize;
        pixels[y * w as usize + x] as f64
    };

    for y in 0..px_h {
        for x in 0..px_w {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // Unsigned orientation in [0, pi).
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            let pos = theta / std::f64::consts::PI * bins as f64;
            let b0 = pos.floor() as usize % bins;
            let tb = pos - pos.floor();
            let b1 = (b0 + 1) % bins;

            // Bilinear sharing among the four nearest cell centers.
            let u = (x as f64 + 0.5) / cell as f64 - 0.5;
            let v = (y as f64 + 0.5) / cell as f64 - 0.5;
            let c0x = u.floor();
            let c0y = v.floor();
            let tu = u - c0x;
            let tv = v - c0y;
            for (dcx, wx) in [(0i64, 1.0 - tu), (1, tu)] {
                for (dcy, wy) in [(0i64, 1.0 - tv), (1, tv)] {
                    let cx = c0x as i64 + dcx;
                    let cy = c0y as i64 + dcy;
                    if cx < 0 || cy < 0 || cx >= cells_w as i64 || cy >= cells_h as i64 {
                        continue;
                    }
                    let wgt = wx * wy * mag;
                    if wgt == 0.0 {
                        continue;
                    }
                    let base = (cy as usize * cells_w + cx as usize) * bins;
                    data[base + b0] += wgt * (1.0 - tb);
                    data[base + b1] += wgt * tb;
                }
            }
        }
    }

    CellHistograms {
        cells_w,
        cells_h,
        bins,
        data,
    }
}

/// One pyramid level: normalized per-cell features plus raw cell energies.
#[derive(Debug, Clone)]
pub struct HogLevel {
    /// Native pixels per level pixel, horizontally / vertically.
    pub scale_x: f64,
    pub scale_y: f64,
    pub cells_w: usize,
    pub cells_h: usize,
    features_per_cell: usize,
    /// Normalized features, `[cy][cx][f]` row-major.
    features: Vec<f64>,
    /// Raw squared histogram mass per cell (pre-normalization).
    cell_energy: Vec<f64>,
}

impl HogLevel {
    pub fn cell_features(&self, cx: usize, cy: usize) -> &[f64] {
        let f = self.features_per_cell;
        let i = (cy * self.cells_w + cx) * f;
        &self.features[i..i + f]
    }

    pub fn cell_energy(&self, cx: usize, cy: usize) -> f64 {
        self.cell_energy[cy * self.cells_w + cx]
    }

    /// Number of valid window origins along x (window plus 1-cell border).
    pub fn window_positions_x(&self) -> usize {
        self.cells_w.saturating_sub(SUPPORT_CELLS - 1)
    }

    pub fn window_positions_y(&self) -> usize {
        self.cells_h.saturating_sub(SUPPORT_CELLS - 1)
    }

    pub fn num_windows(&self) -> usize {
        self.window_positions_x() * self.window_positions_y()
    }

    /// Whether `(cx, cy)` is a valid window origin on this level.
    pub fn window_in_bounds(&self, cx: usize, cy: usize) -> bool {
        cx >= 1
            && cy >= 1
            && cx + WINDOW_CELLS + 1 <= self.cells_w
            && cy + WINDOW_CELLS + 1 <= self.cells_h
    }

    /// Mean squared raw histogram value over the window's cells.
    pub fn window_energy(&self, cx: usize, cy: usize, features_per_cell: usize) -> f64 {
        let mut sum = 0.0;
        for wy in 0..WINDOW_CELLS {
            let row = (cy + wy) * self.cells_w + cx;
            for wx in 0..WINDOW_CELLS {
                sum += self.cell_energy[row + wx];
            }
        }
        sum / (WINDOW_CELLS * WINDOW_CELLS * features_per_cell) as f64
    }
}

/// Identity of an 8x8-cell patch window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    pub image_id: Arc<str>,
    pub level: usize,
    /// Top-left cell coordinates of the window within the level grid.
    pub cx: usize,
    pub cy: usize,
}

/// Flattened feature vector of a patch window.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    pub values: Vec<f64>,
    pub source: PatchRef,
}

#[derive(Debug, Clone)]
pub struct HogPyramid {
    pub image_id: Arc<str>,
    pub levels: Vec<HogLevel>,
    features_per_cell: usize,
    /// Cell side in pixels at level scale.
    cell_px: u32,
    /// Source image size in native pixels.
    native_w: u32,
    native_h: u32,
}

impl HogPyramid {
    pub fn features_per_cell(&self) -> usize {
        self.features_per_cell
    }

    /// Source image dimensions in native pixels.
    pub fn native_size(&self) -> (u32, u32) {
        (self.native_w, self.native_h)
    }

    pub fn descriptor_len(&self) -> usize {
        WINDOW_CELLS * WINDOW_CELLS * self.features_per_cell
    }

    pub fn num_windows(&self) -> usize {
        self.levels.iter().map(|l| l.num_windows()).sum()
    }

    /// All valid window refs, in (level, cy, cx) order.
    pub fn windows(&self) -> impl Iterator<Item = PatchRef> + '_ {
        self.levels.iter().enumerate().flat_map(move |(li, level)| {
            (1..=level.cells_h.saturating_sub(WINDOW_CELLS + 1)).flat_map(move |cy| {
                (1..=level.cells_w.saturating_sub(WINDOW_CELLS + 1)).map(move |cx| PatchRef {
                    image_id: self.image_id.clone(),
                    level: li,
                    cx,
                    cy,
                })
            })
        })
    }

    pub fn window_in_bounds(&self, r: &PatchRef) -> bool {
        self.levels
            .get(r.level)
            .map(|l| l.window_in_bounds(r.cx, r.cy))
            .unwrap_or(false)
    }

    /// Map a flat index in `[0, num_windows)` to a window ref, following
    /// the same (level, cy, cx) order as [`HogPyramid::windows`].
    pub fn window_at(&self, mut idx: usize) -> Option<PatchRef> {
        for (li, level) in self.levels.iter().enumerate() {
            let count = level.num_windows();
            if idx < count {
                let px = level.window_positions_x();
                return Some(PatchRef {
                    image_id: self.image_id.clone(),
                    level: li,
                    cx: 1 + idx % px,
                    cy: 1 + idx / px,
                });
            }
            idx -= count;
        }
        None
    }

    /// The valid window whose footprint best matches `rect` (highest IoU);
    /// ties broken by (level, cy, cx) order.
    pub fn best_window_for(&self, rect: &RectF) -> Option<PatchRef> {
        let mut best: Option<(f64, PatchRef)> = None;
        for r in self.windows() {
            let iou = self.footprint(&r).ok()?.iou(rect);
            match &best {
                Some((b, _)) if *b >= iou => {}
                _ => best = Some((iou, r)),
            }
        }
        best.map(|(_, r)| r)
    }

    /// Native-pixel footprint of a window (the 8x8 descriptor cells).
    pub fn footprint(&self, r: &PatchRef) -> Result<RectF> {
        let level = self
            .levels
            .get(r.level)
            .ok_or_else(|| Error::OutOfBounds(format!("{r:?}")))?;
        if !level.window_in_bounds(r.cx, r.cy) {
            return Err(Error::OutOfBounds(format!("{r:?}")));
        }
        let cs = self.cell_px as f64;
        Ok(RectF::new(
            r.cx as f64 * cs * level.scale_x,
            r.cy as f64 * cs * level.scale_y,
            WINDOW_CELLS as f64 * cs * level.scale_x,
            WINDOW_CELLS as f64 * cs * level.scale_y,
        ))
    }

    /// Copy the window's features (row-major cell concatenation) into `buf`.
    pub fn descriptor_into(&self, r: &PatchRef, buf: &mut [f64]) -> Result<()> {
        let level = self
            .levels
            .get(r.level)
            .ok_or_else(|| Error::OutOfBounds(format!("{r:?}")))?;
        if !level.window_in_bounds(r.cx, r.cy) {
            return Err(Error::OutOfBounds(format!("{r:?}")));
        }
        let f = self.features_per_cell;
        let row_len = WINDOW_CELLS * f;
        debug_assert_eq!(buf.len(), WINDOW_CELLS * row_len);
        for wy in 0..WINDOW_CELLS {
            let src = ((r.cy + wy) * level.cells_w + r.cx) * f;
            buf[wy * row_len..(wy + 1) * row_len]
                .copy_from_slice(&level.features[src..src + row_len]);
        }
        Ok(())
    }
}

/// Extract the flattened descriptor of `r`; pure function of its inputs.
pub fn extract_descriptor(pyramid: &HogPyramid, r: &PatchRef) -> Result<PatchDescriptor> {
    let mut values = vec![0.0; pyramid.descriptor_len()];
    pyramid.descriptor_into(r, &mut values)?;
    Ok(PatchDescriptor {
        values,
        source: r.clone(),
    })
}

fn normalize_level(hist: &CellHistograms, clip: f64) -> (Vec<f64>, Vec<f64>) {
    let (cw, ch, bins) = (hist.cells_w, hist.cells_h, hist.bins);
    let mut cell_energy = vec![0.0f64; cw * ch];
    for (i, chunk) in hist.data.chunks_exact(bins).enumerate() {
        cell_energy[i] = chunk.iter().map(|v| v * v).sum();
    }

    // Squared energy of each 2x2 block anchored at (bx, by).
    let bw = cw.saturating_sub(1);
    let bh = ch.saturating_sub(1);
    let mut block_energy = vec![0.0f64; bw * bh];
    for by in 0..bh {
        for bx in 0..bw {
            block_energy[by * bw + bx] = cell_energy[by * cw + bx]
                + cell_energy[by * cw + bx + 1]
                + cell_energy[(by + 1) * cw + bx]
                + cell_energy[(by + 1) * cw + bx + 1];
        }
    }

    let mut features = vec![0.0f64; cw * ch * bins];
    for cy in 0..ch {
        for cx in 0..cw {
            let src = hist.cell(cx, cy);
            let dst = &mut features[(cy * cw + cx) * bins..(cy * cw + cx + 1) * bins];
            let mut used = 0.0;
            for (bx, by) in [
                (cx as i64 - 1, cy as i64 - 1),
                (cx as i64, cy as i64 - 1),
                (cx as i64 - 1, cy as i64),
                (cx as i64, cy as i64),
            ] {
                if bx < 0 || by < 0 || bx >= bw as i64 || by >= bh as i64 {
                    continue;
                }
                let denom = (block_energy[by as usize * bw + bx as usize] + NORM_EPS).sqrt();
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += (s / denom).min(clip);
                }
                used += 1.0;
            }
            if used > 0.0 {
                for d in dst.iter_mut() {
                    *d /= used;
                }
            }
        }
    }
    (features, cell_energy)
}

fn compute_level(img: &GrayImage, cfg: &HogConfig, scale_x: f64, scale_y: f64) -> Option<HogLevel> {
    let hist = cell_histograms(img, cfg);
    if hist.cells_w < SUPPORT_CELLS || hist.cells_h < SUPPORT_CELLS {
        return None;
    }
    let (features, cell_energy) = normalize_level(&hist, cfg.block_clip);
    Some(HogLevel {
        scale_x,
        scale_y,
        cells_w: hist.cells_w,
        cells_h: hist.cells_h,
        features_per_cell: cfg.orientation_bins,
        features,
        cell_energy,
    })
}

/// Pixel and cell geometry of one pyramid level, derivable from image
/// dimensions and config alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGeometry {
    pub width_px: u32,
    pub height_px: u32,
    pub scale_x: f64,
    pub scale_y: f64,
    pub cells_w: usize,
    pub cells_h: usize,
}

/// Level geometries for an image of the given size: level L is downsampled
/// by `scale_step^L`; levels whose cell grid cannot host a single windowed
/// patch (fewer than 10x10 cells) are omitted.
pub fn level_geometries(width: u32, height: u32, cfg: &HogConfig) -> Vec<LevelGeometry> {
    let mut out = Vec::new();
    for li in 0..cfg.num_levels {
        let factor = cfg.scale_step.powi(li as i32);
        let lw = (width as f64 / factor).round().max(1.0) as u32;
        let lh = (height as f64 / factor).round().max(1.0) as u32;
        if (lw as usize) < SUPPORT_CELLS * cfg.cell_size
            || (lh as usize) < SUPPORT_CELLS * cfg.cell_size
        {
            break;
        }
        out.push(LevelGeometry {
            width_px: lw,
            height_px: lh,
            scale_x: width as f64 / lw as f64,
            scale_y: height as f64 / lh as f64,
            cells_w: lw as usize / cfg.cell_size,
            cells_h: lh as usize / cfg.cell_size,
        });
    }
    out
}

/// Native-pixel footprint of a window from level geometry alone.
pub fn footprint_from_geometry(
    geoms: &[LevelGeometry],
    r: &PatchRef,
    cfg: &HogConfig,
) -> Result<RectF> {
    let g = geoms
        .get(r.level)
        .ok_or_else(|| Error::OutOfBounds(format!("{r:?}")))?;
    if r.cx < 1
        || r.cy < 1
        || r.cx + WINDOW_CELLS + 1 > g.cells_w
        || r.cy + WINDOW_CELLS + 1 > g.cells_h
    {
        return Err(Error::OutOfBounds(format!("{r:?}")));
    }
    let cs = cfg.cell_size as f64;
    Ok(RectF::new(
        r.cx as f64 * cs * g.scale_x,
        r.cy as f64 * cs * g.scale_y,
        WINDOW_CELLS as f64 * cs * g.scale_x,
        WINDOW_CELLS as f64 * cs * g.scale_y,
    ))
}

/// Compute the multi-scale HOG pyramid of an image. Levels whose cell grid
/// cannot host a single windowed patch (fewer than 10x10 cells) are omitted.
pub fn compute_pyramid(img: &GrayImage, image_id: impl Into<Arc<str>>, cfg: &HogConfig) -> HogPyramid {
    let image_id = image_id.into();
    let mut levels = Vec::new();
    for (li, geom) in level_geometries(img.width(), img.height(), cfg).iter().enumerate() {
        let level_img;
        let level_ref = if li == 0 {
            img
        } else {
            level_img = img.resize(geom.width_px, geom.height_px);
            &level_img
        };
        match compute_level(level_ref, cfg, geom.scale_x, geom.scale_y) {
            Some(level) => {
                debug_assert_eq!((level.cells_w, level.cells_h), (geom.cells_w, geom.cells_h));
                levels.push(level);
            }
            None => break,
        }
    }
    HogPyramid {
        image_id,
        levels,
        features_per_cell: cfg.orientation_bins,
        cell_px: cfg.cell_size as u32,
        native_w: img.width(),
        native_h: img.height(),
    }
}
