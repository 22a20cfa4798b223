//! Spatial coverage: place the source in the middle of a 3×3 collage, then
//! crop a target-sized window drawn uniformly among the windows that contain
//! a chosen object. Objects are never rescaled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentConfig, AugmentError, LabeledBox, LabeledImage, Rgb8Image};

/// What fills the eight cells around the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollationMode {
    /// A background image drawn from the pool for each neighbour.
    #[default]
    Background,
    /// The source itself, nine times.
    Replicate,
}

impl std::str::FromStr for CollationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "background" => Ok(Self::Background),
            "replicate" => Ok(Self::Replicate),
            _ => Err(format!("unknown collation mode `{s}` (expected background or replicate)")),
        }
    }
}

pub const STRICT_WIDTH: usize = 1920;
pub const STRICT_HEIGHT: usize = 1080;

/// Virtual `3H × 3W` collage; pixels are looked up, never materialised.
pub struct Collage<'a> {
    source: &'a LabeledImage,
    /// Row-major 3×3 cells; `None` is the source.
    cells: [Option<&'a Rgb8Image>; 9],
}

impl<'a> Collage<'a> {
    /// `neighbours` are pool indices for the eight outer cells in row-major order (skipping the centre).
    pub fn new(source: &'a LabeledImage, pool: &'a [Rgb8Image], mode: CollationMode, neighbours: &[usize]) -> Result<Self, AugmentError> {
        let mut cells = [None; 9];
        if mode == CollationMode::Background {
            if pool.is_empty() {
                return Err(AugmentError::EmptyBackgroundPool);
            }
            if neighbours.len() != 8 {
                return Err(AugmentError::InvalidConfig(format!("collage needs 8 neighbours, got {}", neighbours.len())));
            }
            let outer = (0..9).filter(|&c| c != 4);
            for (cell, &bg) in outer.zip(neighbours) {
                cells[cell] = Some(pool.get(bg).ok_or_else(|| AugmentError::InvalidConfig(format!("background {bg} not in pool")))?);
            }
        }
        Ok(Self { source, cells })
    }

    pub fn width(&self) -> usize {
        3 * self.source.image.width()
    }

    pub fn height(&self) -> usize {
        3 * self.source.image.height()
    }

    /// Background images are tiled when their size differs from the source.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let (w, h) = (self.source.image.width(), self.source.image.height());
        let (cx, cy) = (x / w, y / h);
        let (lx, ly) = (x % w, y % h);
        match self.cells[cy * 3 + cx] {
            None => self.source.image.pixel(lx, ly),
            Some(bg) => bg.pixel(lx % bg.width(), ly % bg.height()),
        }
    }

    /// Labels in collage coordinates: the centre copy first, then replicas in cell order.
    pub fn boxes(&self) -> Vec<LabeledBox> {
        let (w, h) = (self.source.image.width() as u32, self.source.image.height() as u32);
        let mut cells: Vec<usize> = vec![4];
        cells.extend((0..9).filter(|&c| c != 4 && self.cells[c].is_none()));
        cells
            .iter()
            .flat_map(|&c| {
                let (ox, oy) = ((c % 3) as u32 * w, (c / 3) as u32 * h);
                self.source.boxes.iter().map(move |b| LabeledBox { x: b.x + ox, y: b.y + oy, ..*b })
            })
            .collect()
    }

    pub fn crop(&self, wx: usize, wy: usize, size: usize) -> Rgb8Image {
        Rgb8Image::from_fn(size, size, |x, y| self.pixel(wx + x, wy + y))
    }
}

/// Labels visible in a window: intersections covering at least `min_visible`
/// of the original box are kept, clipped and shifted into window coordinates.
pub fn window_labels(boxes: &[LabeledBox], wx: u32, wy: u32, size: u32, min_visible: f64) -> Vec<LabeledBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let x0 = b.x.max(wx);
            let y0 = b.y.max(wy);
            let x1 = (b.x + b.w).min(wx + size);
            let y1 = (b.y + b.h).min(wy + size);
            if x1 <= x0 || y1 <= y0 {
                return None;
            }
            let visible = ((x1 - x0) as u64 * (y1 - y0) as u64) as f64 / b.area() as f64;
            (visible >= min_visible).then(|| LabeledBox { class: b.class, x: x0 - wx, y: y0 - wy, w: x1 - x0, h: y1 - y0 })
        })
        .collect()
}

/// Result of one spatial-coverage draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOutcome {
    pub image: LabeledImage,
    /// Window origin in collage coordinates.
    pub window: (usize, usize),
    /// Index of the object the window was constrained to, if any.
    pub chosen: Option<usize>,
    pub neighbours: Vec<usize>,
}

fn check_source(img: &LabeledImage, cfg: &AugmentConfig) -> Result<(), AugmentError> {
    let (w, h) = (img.image.width(), img.image.height());
    if cfg.relaxed {
        if 3 * w.min(h) < cfg.target_size {
            return Err(AugmentError::SourceTooSmall { width: w, height: h, target: cfg.target_size });
        }
    } else if (w, h) != (STRICT_WIDTH, STRICT_HEIGHT) {
        return Err(AugmentError::StrictSize { width: w, height: h });
    }
    Ok(())
}

/// Range of window origins on one axis that keep `[pos, pos + len)` inside `[o, o + s)` within `[0, extent)`.
fn window_range(pos: usize, len: usize, s: usize, extent: usize) -> (usize, usize) {
    ((pos + len).saturating_sub(s), pos.min(extent - s))
}

/// Deterministic core: crop the collage at `window`, keeping the chosen object whole.
pub fn spatial_coverage_at(
    img: &LabeledImage,
    cfg: &AugmentConfig,
    pool: &[Rgb8Image],
    neighbours: &[usize],
    window: (usize, usize),
    chosen: Option<usize>,
) -> Result<CoverageOutcome, AugmentError> {
    check_source(img, cfg)?;
    let collage = Collage::new(img, pool, cfg.collation, neighbours)?;
    let s = cfg.target_size;
    let (wx, wy) = window;
    if wx + s > collage.width() || wy + s > collage.height() {
        return Err(AugmentError::InvalidConfig(format!("window ({wx}, {wy}) leaves the collage")));
    }
    let all = collage.boxes();
    let mut labels = Vec::new();
    if let Some(k) = chosen {
        let b = *all.get(k).ok_or_else(|| AugmentError::InvalidConfig(format!("object {k} does not exist")))?;
        if b.x < wx as u32 || b.y < wy as u32 || (b.x + b.w) as usize > wx + s || (b.y + b.h) as usize > wy + s {
            return Err(AugmentError::InvalidConfig(format!("window ({wx}, {wy}) does not contain object {k}")));
        }
        labels.push(LabeledBox { x: b.x - wx as u32, y: b.y - wy as u32, ..b });
    }
    let others: Vec<LabeledBox> = all.iter().enumerate().filter(|&(i, _)| Some(i) != chosen).map(|(_, b)| *b).collect();
    labels.extend(window_labels(&others, wx as u32, wy as u32, s as u32, cfg.min_visible));
    let image = LabeledImage { id: img.id.clone(), image: collage.crop(wx, wy, s), boxes: labels };
    Ok(CoverageOutcome { image, window, chosen, neighbours: neighbours.to_vec() })
}

/// Collates the source, picks one of its objects uniformly (none for a
/// background image) and crops a window drawn uniformly among those that
/// fully contain it.
pub fn spatial_coverage<R: Rng>(
    img: &LabeledImage,
    cfg: &AugmentConfig,
    pool: &[Rgb8Image],
    rng: &mut R,
) -> Result<CoverageOutcome, AugmentError> {
    check_source(img, cfg)?;
    let s = cfg.target_size;
    if let Some(b) = img.boxes.iter().find(|b| b.w as usize > s || b.h as usize > s) {
        return Err(AugmentError::ObjectTooLarge { width: b.w, height: b.h, target: s });
    }
    let neighbours: Vec<usize> = match cfg.collation {
        CollationMode::Background if pool.is_empty() => return Err(AugmentError::EmptyBackgroundPool),
        CollationMode::Background => (0..8).map(|_| rng.random_range(0..pool.len())).collect(),
        CollationMode::Replicate => Vec::new(),
    };
    let (cw, ch) = (3 * img.image.width(), 3 * img.image.height());
    let (chosen, (x0, x1), (y0, y1)) = if img.boxes.is_empty() {
        (None, (0, cw - s), (0, ch - s))
    } else {
        let k = rng.random_range(0..img.boxes.len());
        let b = img.boxes[k];
        let (bx, by) = (b.x as usize + img.image.width(), b.y as usize + img.image.height());
        (Some(k), window_range(bx, b.w as usize, s, cw), window_range(by, b.h as usize, s, ch))
    };
    let window = (rng.random_range(x0..=x1), rng.random_range(y0..=y1));
    spatial_coverage_at(img, cfg, pool, &neighbours, window, chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn drone_image() -> LabeledImage {
        let img = Rgb8Image::from_fn(1920, 1080, |x, y| [(x % 251) as u8, (y % 241) as u8, 7]);
        LabeledImage::new("d", img, vec![LabeledBox::new(0, 921, 486, 20, 12)]).unwrap()
    }

    fn replicate() -> AugmentConfig {
        AugmentConfig { collation: CollationMode::Replicate, ..AugmentConfig::default() }
    }

    #[test]
    fn worked_window() {
        let src = drone_image();
        // window origin (col 411, row 0) of the source, i.e. offset by one cell in the collage
        let out = spatial_coverage_at(&src, &replicate(), &[], &[], (1920 + 411, 1080), Some(0)).unwrap();
        assert_eq!(out.image.boxes[0], LabeledBox::new(0, 510, 486, 20, 12));
        assert_eq!(out.image.image.pixel(510, 486), src.image.pixel(921, 486));
    }

    #[test]
    fn centered_window_centers_object() {
        let src = drone_image();
        let b = src.boxes[0];
        let wx = 1920 + b.x as usize + b.w as usize / 2 - 320;
        let wy = 1080 + b.y as usize + b.h as usize / 2 - 320;
        let out = spatial_coverage_at(&src, &replicate(), &[], &[], (wx, wy), Some(0)).unwrap();
        assert_eq!(out.image.boxes[0].center(), (320.0, 320.0));
    }

    #[test]
    fn sizes_preserved_and_labels_inside() {
        let src = drone_image();
        let pool = vec![Rgb8Image::filled(300, 200, [9, 9, 9])];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [CollationMode::Background, CollationMode::Replicate] {
            let cfg = AugmentConfig { collation: mode, ..AugmentConfig::default() };
            for _ in 0..50 {
                let out = spatial_coverage(&src, &cfg, &pool, &mut rng).unwrap();
                let first = out.image.boxes[0];
                assert_eq!((first.w, first.h), (20, 12));
                assert!(out.image.boxes.iter().all(|b| b.inside(640, 640)));
            }
        }
    }

    #[test]
    fn error_cases() {
        let src = drone_image();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(spatial_coverage(&src, &AugmentConfig::default(), &[], &mut rng), Err(AugmentError::EmptyBackgroundPool)));
        let big = LabeledImage::new("b", src.image.clone(), vec![LabeledBox::new(0, 0, 0, 700, 10)]).unwrap();
        assert!(matches!(spatial_coverage(&big, &replicate(), &[], &mut rng), Err(AugmentError::ObjectTooLarge { .. })));
        let small = LabeledImage::new("s", Rgb8Image::filled(200, 300, [0, 0, 0]), vec![]).unwrap();
        assert!(matches!(spatial_coverage(&small, &replicate(), &[], &mut rng), Err(AugmentError::SourceTooSmall { .. })));
        let strict = AugmentConfig { relaxed: false, ..replicate() };
        let odd = LabeledImage::new("o", Rgb8Image::filled(800, 800, [0, 0, 0]), vec![]).unwrap();
        assert!(matches!(spatial_coverage(&odd, &strict, &[], &mut rng), Err(AugmentError::StrictSize { .. })));
    }

    #[test]
    fn partially_visible_neighbours() {
        let boxes = [LabeledBox::new(1, 0, 0, 10, 10), LabeledBox::new(2, 96, 0, 10, 10), LabeledBox::new(3, 94, 0, 10, 10)];
        let kept = window_labels(&boxes, 0, 0, 100, 0.5);
        // 40 % of the second box is visible, 60 % of the third
        assert_eq!(kept, vec![LabeledBox::new(1, 0, 0, 10, 10), LabeledBox::new(3, 94, 0, 6, 10)]);
    }
}
