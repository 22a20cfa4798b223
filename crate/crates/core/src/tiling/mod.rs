//! Frame tiling: tile origins with a guaranteed minimum overlap, the optimal
//! inference area of each tile, object-coverage verification and slicing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Border, in pixels, excluded from each tile's optimal inference area.
pub const DEFAULT_MARGIN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum TilingError {
    #[error("overlap fraction {0} must be in [0, 1)")]
    InvalidOverlap(f64),
    #[error("tile {tile} with overlap {overlap} leaves no stride")]
    ZeroStride { tile: usize, overlap: f64 },
    #[error("tile {tile} larger than frame extent {extent}")]
    TileLargerThanFrame { tile: usize, extent: usize },
    #[error("extent and tile size must be >= 1 (extent {extent}, tile {tile})")]
    Empty { extent: usize, tile: usize },
    #[error("margin {margin} leaves no optimal area in a {tile} px tile")]
    MarginTooLarge { margin: usize, tile: usize },
    #[error("frame is {got_w}x{got_h}, plan expects {want_w}x{want_h}")]
    FrameMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
}

/// Tile origins along one axis.
///
/// `n = 1 + ceil((L - T) / floor(T (1 - ω)))` tiles, spread evenly from 0 to
/// `L - T` and rounded half-up. The spacing never exceeds the stride, so
/// consecutive tiles overlap by at least `ω T`. When `T > L` a single
/// zero-padded tile is returned, unless `strict`.
pub fn axis_tiles(extent: usize, tile: usize, overlap: f64, strict: bool) -> Result<Vec<usize>, TilingError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(TilingError::InvalidOverlap(overlap));
    }
    if extent == 0 || tile == 0 {
        return Err(TilingError::Empty { extent, tile });
    }
    if tile >= extent {
        if tile > extent && strict {
            return Err(TilingError::TileLargerThanFrame { tile, extent });
        }
        return Ok(vec![0]);
    }
    // the epsilon keeps e.g. 640 * (1 - 0.3) from flooring to 447
    let stride = (tile as f64 * (1.0 - overlap) + 1e-9).floor() as usize;
    if stride == 0 {
        return Err(TilingError::ZeroStride { tile, overlap });
    }
    let span = extent - tile;
    let n = 1 + span.div_ceil(stride);
    let d = n - 1;
    Ok((0..n).map(|i| (2 * i * span + d) / (2 * d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Area {
    A1A2,
    A3,
}

impl std::str::FromStr for Area {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a1a2" | "a1" | "a2" => Ok(Area::A1A2),
            "a3" => Ok(Area::A3),
            _ => Err(format!("unknown area profile `{s}` (expected a1a2 or a3)")),
        }
    }
}

/// Tiling policy of an operational area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaProfile {
    pub area: Area,
    pub tile_size: usize,
    pub min_overlap: f64,
    /// Model input size; tiles are resized to it when it differs from `tile_size`.
    pub input_size: usize,
    pub max_object_size: usize,
    /// Resize percentage quoted for the profile, when one is quoted.
    pub nominal_resize_percent: Option<f64>,
}

impl AreaProfile {
    /// Large objects far away: 1080 px tiles, 50 % overlap, resized to 640.
    pub fn a1a2() -> Self {
        Self { area: Area::A1A2, tile_size: 1080, min_overlap: 0.5, input_size: 640, max_object_size: 400, nominal_resize_percent: Some(56.0) }
    }

    /// Small objects close by: 640 px tiles, 30 % overlap, no resize.
    pub fn a3() -> Self {
        Self { area: Area::A3, tile_size: 640, min_overlap: 0.3, input_size: 640, max_object_size: 100, nominal_resize_percent: None }
    }

    pub fn for_area(area: Area) -> Self {
        match area {
            Area::A1A2 => Self::a1a2(),
            Area::A3 => Self::a3(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub frame_width: usize,
    pub frame_height: usize,
    pub tile_size: usize,
    pub min_overlap: f64,
    pub margin: usize,
    pub input_size: usize,
    /// Scale applied to a tile before inference, `input_size / tile_size`.
    pub resize_factor: f64,
    pub x_origins: Vec<usize>,
    pub y_origins: Vec<usize>,
    /// `(x, y)` per tile, row by row.
    pub origins: Vec<(usize, usize)>,
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.origins.len()
    }

    pub fn tile_rect(&self, i: usize) -> Rect {
        let (x, y) = self.origins[i];
        Rect { x, y, w: self.tile_size.min(self.frame_width), h: self.tile_size.min(self.frame_height) }
    }

    /// Smallest overlap between consecutive tiles per axis, `None` for a single tile.
    pub fn min_overlap_px(&self) -> (Option<usize>, Option<usize>) {
        let f = |o: &[usize]| o.windows(2).map(|w| self.tile_size - (w[1] - w[0])).min();
        (f(&self.x_origins), f(&self.y_origins))
    }
}

pub fn make_plan(profile: &AreaProfile, frame_width: usize, frame_height: usize) -> Result<TilePlan, TilingError> {
    make_plan_with(profile.tile_size, profile.min_overlap, profile.input_size, DEFAULT_MARGIN, frame_width, frame_height)
}

pub fn make_plan_with(
    tile: usize,
    overlap: f64,
    input_size: usize,
    margin: usize,
    frame_width: usize,
    frame_height: usize,
) -> Result<TilePlan, TilingError> {
    let xs = axis_tiles(frame_width, tile, overlap, false)?;
    let ys = axis_tiles(frame_height, tile, overlap, false)?;
    let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    Ok(TilePlan {
        frame_width,
        frame_height,
        tile_size: tile,
        min_overlap: overlap,
        margin,
        input_size,
        resize_factor: input_size as f64 / tile as f64,
        x_origins: xs,
        y_origins: ys,
        origins,
    })
}

/// `[start, end)` optimal intervals along one axis.
fn axis_optimal(origins: &[usize], tile: usize, extent: usize, margin: usize) -> Vec<(usize, usize)> {
    origins
        .iter()
        .map(|&o| {
            let end = (o + tile).min(extent);
            let a = if o == 0 { 0 } else { o + margin };
            let b = if end >= extent { extent } else { end - margin };
            (a, b)
        })
        .collect()
}

/// Each tile shrunk by `margin` on every side that does not touch the frame border.
pub fn optimal_areas(plan: &TilePlan, margin: usize) -> Result<Vec<Rect>, TilingError> {
    if 2 * margin >= plan.tile_size {
        return Err(TilingError::MarginTooLarge { margin, tile: plan.tile_size });
    }
    let xs = axis_optimal(&plan.x_origins, plan.tile_size, plan.frame_width, margin);
    let ys = axis_optimal(&plan.y_origins, plan.tile_size, plan.frame_height, margin);
    Ok(ys
        .iter()
        .flat_map(|&(y0, y1)| xs.iter().map(move |&(x0, x1)| Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: bool,
    /// Top-left corner of an object position that no optimal area contains.
    pub witness: Option<(f64, f64)>,
    pub explanation: String,
}

/// First object start position on `[0, extent - s]` not covered by any
/// interval `[a, b - s]`, if any. Positions are continuous.
fn axis_gap(intervals: &[(usize, usize)], extent: usize, s: usize) -> Option<(f64, String)> {
    // furthest start position covered so far, as an exclusive bound on the gap
    let mut reach: Option<usize> = None;
    for (i, &(a, b)) in intervals.iter().enumerate() {
        if b < a + s {
            continue;
        }
        match reach {
            None if a > 0 => return Some((0.0, "no optimal area is flush with the frame edge".into())),
            Some(r) if a > r => {
                return Some((
                    (r + a) as f64 / 2.0,
                    format!("optimal interval {i} starts at {a}, objects starting after {r} fit in no earlier interval"),
                ))
            }
            _ => {}
        }
        reach = Some(reach.map_or(b - s, |r| r.max(b - s)));
    }
    match reach {
        None => Some((0.0, format!("no optimal interval is at least {s} px long"))),
        Some(r) if r < extent - s => Some(((r + extent - s) as f64 / 2.0, "last optimal area does not reach the frame edge".into())),
        _ => None,
    }
}

/// Whether every `s × s` box inside the frame lies entirely inside some optimal area.
///
/// Optimal areas are a product of per-axis intervals, so the check is
/// separable: an axis is covered when consecutive optimal intervals overlap
/// by at least `s` and the outer ones are flush with the frame.
pub fn verify_object_coverage(plan: &TilePlan, margin: usize, s: usize) -> Result<CoverageReport, TilingError> {
    if 2 * margin >= plan.tile_size {
        return Err(TilingError::MarginTooLarge { margin, tile: plan.tile_size });
    }
    if s == 0 {
        return Ok(CoverageReport { covered: true, witness: None, explanation: "empty object".into() });
    }
    let interior = plan.tile_size - 2 * margin;
    let frame_min = plan.frame_width.min(plan.frame_height);
    if s > interior {
        return Ok(CoverageReport {
            covered: false,
            witness: None,
            explanation: format!("object size {s} exceeds the {interior} px interior optimal area (tile {} - 2 x margin {margin})", plan.tile_size),
        });
    }
    if s > frame_min {
        return Ok(CoverageReport {
            covered: false,
            witness: None,
            explanation: format!("object size {s} does not fit in the {}x{} frame", plan.frame_width, plan.frame_height),
        });
    }
    let xs = axis_optimal(&plan.x_origins, plan.tile_size, plan.frame_width, margin);
    let ys = axis_optimal(&plan.y_origins, plan.tile_size, plan.frame_height, margin);
    if let Some((x, why)) = axis_gap(&xs, plan.frame_width, s) {
        return Ok(CoverageReport { covered: false, witness: Some((x, 0.0)), explanation: format!("horizontal: {why}") });
    }
    if let Some((y, why)) = axis_gap(&ys, plan.frame_height, s) {
        return Ok(CoverageReport { covered: false, witness: Some((0.0, y)), explanation: format!("vertical: {why}") });
    }
    Ok(CoverageReport {
        covered: true,
        witness: None,
        explanation: format!("every {s}x{s} object lies inside at least one optimal area"),
    })
}

fn bilinear_resize(src: &[f32], size: usize, c: usize, out: usize) -> Vec<f32> {
    let scale = size as f64 / out as f64;
    let coords: Vec<(usize, usize, f32)> = (0..out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(size - 1), (s - i0 as f64) as f32)
        })
        .collect();
    let mut dst = vec![0.0f32; out * out * c];
    for (oy, &(y0, y1, fy)) in coords.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in coords.iter().enumerate() {
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * size + x) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                dst[(oy * out + ox) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    dst
}

/// Crops every tile (zero-padded past the frame edge) and resizes it
/// bilinearly to the model input size. Output order follows `plan.origins`.
pub fn slice_frame(frame: &Tensor, plan: &TilePlan) -> Result<Vec<Tensor>, TilingError> {
    let (h, w, c) = frame.shape();
    if (w, h) != (plan.frame_width, plan.frame_height) {
        return Err(TilingError::FrameMismatch { got_w: w, got_h: h, want_w: plan.frame_width, want_h: plan.frame_height });
    }
    let data = frame.to_f32_vec();
    let t = plan.tile_size;
    Ok(plan
        .origins
        .par_iter()
        .map(|&(ox, oy)| {
            let mut crop = vec![0.0f32; t * t * c];
            for y in 0..t.min(h - oy) {
                let src = ((oy + y) * w + ox) * c;
                let n = t.min(w - ox) * c;
                crop[y * t * c..y * t * c + n].copy_from_slice(&data[src..src + n]);
            }
            let pixels = if plan.input_size == t { crop } else { bilinear_resize(&crop, t, c, plan.input_size) };
            Tensor::from_f32(plan.input_size, plan.input_size, c, pixels).expect("tile buffer sized from plan")
        })
        .collect())
}
