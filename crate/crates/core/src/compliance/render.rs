use super::HistogramBin;
use crate::augment::Rgb8Image;

/// Heat map of a count grid, `cell` px per cell, white (0) to red (max).
pub fn render_heat_map(grid: &[Vec<u64>], cell: usize) -> Rgb8Image {
    let rows = grid.len().max(1);
    let cols = grid.first().map_or(1, |r| r.len().max(1));
    let max = grid.iter().flatten().copied().max().unwrap_or(0).max(1);
    Rgb8Image::from_fn(cols * cell, rows * cell, |x, y| {
        let v = grid.get(y / cell).and_then(|r| r.get(x / cell)).copied().unwrap_or(0);
        let t = 255 - (v * 255 / max) as u8;
        [255, t, t]
    })
}

/// Bar chart of a size histogram, one `bar`-px-wide bar per bin.
pub fn render_size_histogram(bins: &[HistogramBin], bar: usize, height: usize) -> Rgb8Image {
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1);
    Rgb8Image::from_fn(bins.len().max(1) * bar, height, |x, y| {
        let count = bins.get(x / bar).map_or(0, |b| b.count);
        let top = height - (count as usize * height / max as usize);
        if y >= top && x % bar != bar - 1 {
            [40, 90, 200]
        } else {
            [255, 255, 255]
        }
    })
}
