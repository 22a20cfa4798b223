//! 2×2 mosaics of jittered cells, and HSV value-channel brightness jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::coverage::window_labels;
use super::{AugmentConfig, AugmentError, LabeledBox, LabeledImage, Rgb8Image};

/// Geometry variation applied to a square cell. Rotations are clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellTransform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl CellTransform {
    pub const ALL: [CellTransform; 6] = [
        CellTransform::Identity,
        CellTransform::FlipHorizontal,
        CellTransform::FlipVertical,
        CellTransform::Rotate90,
        CellTransform::Rotate180,
        CellTransform::Rotate270,
    ];

    /// Destination of source pixel `(x, y)` in an `n × n` cell.
    pub fn map_pixel(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        match self {
            CellTransform::Identity => (x, y),
            CellTransform::FlipHorizontal => (n - 1 - x, y),
            CellTransform::FlipVertical => (x, n - 1 - y),
            CellTransform::Rotate90 => (n - 1 - y, x),
            CellTransform::Rotate180 => (n - 1 - x, n - 1 - y),
            CellTransform::Rotate270 => (y, n - 1 - x),
        }
    }

    pub fn map_box(self, b: LabeledBox, n: u32) -> LabeledBox {
        let (x, y, w, h) = match self {
            CellTransform::Identity => (b.x, b.y, b.w, b.h),
            CellTransform::FlipHorizontal => (n - b.x - b.w, b.y, b.w, b.h),
            CellTransform::FlipVertical => (b.x, n - b.y - b.h, b.w, b.h),
            CellTransform::Rotate90 => (n - b.y - b.h, b.x, b.h, b.w),
            CellTransform::Rotate180 => (n - b.x - b.w, n - b.y - b.h, b.w, b.h),
            CellTransform::Rotate270 => (b.y, n - b.x - b.w, b.h, b.w),
        };
        LabeledBox { class: b.class, x, y, w, h }
    }

    pub fn apply(self, img: &Rgb8Image) -> Rgb8Image {
        let n = img.width();
        assert_eq!(n, img.height(), "cell transforms need a square image");
        let mut out = Rgb8Image::filled(n, n, [0, 0, 0]);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = self.map_pixel(x, y, n);
                out.put(dx, dy, img.pixel(x, y));
            }
        }
        out
    }
}

/// Shifts the HSV value of every pixel by `delta`, clamped to `[0, 255]`.
///
/// Channels are scaled by `V' / V`, which keeps hue and saturation; black
/// pixels (no hue) become grey of value `V'`.
pub fn brightness_jitter(img: &Rgb8Image, delta: i32) -> Rgb8Image {
    if delta == 0 {
        return img.clone();
    }
    let mut data = img.data().to_vec();
    for px in data.chunks_exact_mut(3) {
        let v = px[0].max(px[1]).max(px[2]) as i32;
        let nv = (v + delta).clamp(0, 255);
        if v == 0 {
            px.fill(nv as u8);
        } else {
            for c in px.iter_mut() {
                // round half up, in integers
                *c = ((2 * *c as i32 * nv + v) / (2 * v)) as u8;
            }
        }
    }
    Rgb8Image::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Per-cell choices for one mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellParams {
    /// Top-left of the cell-sized crop in the sample.
    pub crop: (usize, usize),
    pub transform: CellTransform,
    pub delta: i32,
}

/// Assembles four samples into a 2×2 mosaic. Cell `i` goes to column `i % 2`, row `i / 2`.
pub fn mosaic_with(samples: &[&LabeledImage], params: &[CellParams], cfg: &AugmentConfig) -> Result<LabeledImage, AugmentError> {
    if samples.len() < 4 || params.len() < 4 {
        return Err(AugmentError::NotEnoughSamples { needed: 4, got: samples.len().min(params.len()) });
    }
    let n = cfg.cell_size;
    let mut canvas = Rgb8Image::filled(2 * n, 2 * n, [0, 0, 0]);
    let mut boxes = Vec::new();
    let mut ids = Vec::new();
    for (i, (s, p)) in samples.iter().zip(params).take(4).enumerate() {
        let (cx, cy) = p.crop;
        if cx + n > s.image.width() || cy + n > s.image.height() {
            return Err(AugmentError::CellTooSmall { id: s.id.clone(), width: s.image.width(), height: s.image.height(), cell: n });
        }
        let cell = brightness_jitter(&p.transform.apply(&s.image.crop(cx, cy, n, n)), p.delta);
        let (ox, oy) = ((i % 2) * n, (i / 2) * n);
        canvas.blit(&cell, ox, oy);
        for b in window_labels(&s.boxes, cx as u32, cy as u32, n as u32, cfg.min_visible) {
            let t = p.transform.map_box(b, n as u32);
            boxes.push(LabeledBox { x: t.x + ox as u32, y: t.y + oy as u32, ..t });
        }
        ids.push(s.id.as_str());
    }
    Ok(LabeledImage { id: ids.join("+"), image: canvas, boxes })
}

pub fn random_cell_params<R: Rng>(sample: &LabeledImage, cfg: &AugmentConfig, rng: &mut R) -> Result<CellParams, AugmentError> {
    let n = cfg.cell_size;
    let (w, h) = (sample.image.width(), sample.image.height());
    if w < n || h < n {
        return Err(AugmentError::CellTooSmall { id: sample.id.clone(), width: w, height: h, cell: n });
    }
    Ok(CellParams {
        crop: (rng.random_range(0..=w - n), rng.random_range(0..=h - n)),
        transform: CellTransform::ALL[rng.random_range(0..CellTransform::ALL.len())],
        delta: rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1),
    })
}

pub fn mosaic<R: Rng>(samples: &[&LabeledImage], cfg: &AugmentConfig, rng: &mut R) -> Result<LabeledImage, AugmentError> {
    if samples.len() < 4 {
        return Err(AugmentError::NotEnoughSamples { needed: 4, got: samples.len() });
    }
    let params: Vec<CellParams> = samples[..4].iter().map(|s| random_cell_params(s, cfg, rng)).collect::<Result<_, _>>()?;
    mosaic_with(samples, &params, cfg)
}
