use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AugmentError;

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, AugmentError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(AugmentError::InvalidImage(format!("{width}x{height} RGB needs {} bytes, got {}", width * height * 3, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Sub-raster; the rectangle must lie inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Rgb8Image {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside image");
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let s = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[s..s + w * 3]);
        }
        Rgb8Image { width: w, height: h, data }
    }

    /// Copies `src` with its top-left corner at `(x, y)`; must fit.
    pub fn blit(&mut self, src: &Rgb8Image, x: usize, y: usize) {
        assert!(x + src.width <= self.width && y + src.height <= self.height, "blit outside image");
        for row in 0..src.height {
            let d = ((y + row) * self.width + x) * 3;
            self.data[d..d + src.width * 3].copy_from_slice(&src.data[row * src.width * 3..(row + 1) * src.width * 3]);
        }
    }

    /// Per-channel mean, rounded.
    pub fn mean_color(&self) -> [u8; 3] {
        let mut sum = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        let n = (self.width * self.height) as u64;
        sum.map(|s| ((s + n / 2) / n) as u8)
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let img = image::open(path).map_err(|e| AugmentError::Io(format!("{}: {e}", path.display())))?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Format follows the extension (`.bmp` or `.png`).
    pub fn save(&self, path: &Path) -> Result<(), AugmentError> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        buf.save(path).map_err(|e| AugmentError::Io(format!("{}: {e}", path.display())))
    }
}

/// Object label in absolute pixels: top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledBox {
    pub class: usize,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl LabeledBox {
    pub fn new(class: usize, x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { class, x, y, w, h }
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && (self.x + self.w) as usize <= width && (self.y + self.h) as usize <= height
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    /// Side length used for size statistics.
    pub fn size(&self) -> u32 {
        self.w.max(self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Rgb8Image,
    pub boxes: Vec<LabeledBox>,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, image: Rgb8Image, boxes: Vec<LabeledBox>) -> Result<Self, AugmentError> {
        let id = id.into();
        if let Some(b) = boxes.iter().find(|b| !b.inside(image.width(), image.height())) {
            return Err(AugmentError::BoxOutside { id, label: *b, width: image.width(), height: image.height() });
        }
        Ok(Self { id, image, boxes })
    }
}

/// Sidecar text: one `class x y w h` line per box.
pub fn format_labels(boxes: &[LabeledBox]) -> String {
    boxes.iter().map(|b| format!("{} {} {} {} {}\n", b.class, b.x, b.y, b.w, b.h)).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<LabeledBox>, AugmentError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<&str> = line.split_whitespace().collect();
        let bad = || AugmentError::Labels(format!("line {}: expected `class x y w h`, got `{line}`", n + 1));
        if v.len() != 5 {
            return Err(bad());
        }
        let class = v[0].parse().map_err(|_| bad())?;
        let nums: Vec<u32> = v[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        out.push(LabeledBox::new(class, nums[0], nums[1], nums[2], nums[3]));
    }
    Ok(out)
}
