use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::augment::Rgb8Image;

/// Share of the non-DC power spectrum of the luma image at wavelengths of at
/// least `cutoff` px, i.e. radial frequency `sqrt(fx² + fy²) <= 1 / cutoff`
/// cycles per px. A constant image has no non-DC energy and scores 1.
pub fn low_frequency_fraction(img: &Rgb8Image, cutoff: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let luma: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let mean = luma.iter().sum::<f64>() / luma.len() as f64;
    let var = luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / luma.len() as f64;
    if var < 1e-12 {
        return 1.0;
    }
    let mut buf: Vec<Complex<f64>> = luma.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let limit = 1.0 / (cutoff * cutoff);
    let (mut low, mut total) = (0.0f64, 0.0f64);
    for v in 0..h {
        let fy = v.min(h - v) as f64 / h as f64;
        for u in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let fx = u.min(w - u) as f64 / w as f64;
            let p = buf[v * w + u].norm_sqr();
            total += p;
            if fx * fx + fy * fy <= limit * (1.0 + 1e-12) {
                low += p;
            }
        }
    }
    if total <= 0.0 {
        1.0
    } else {
        low / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoid(n: usize, wavelength: f64) -> Rgb8Image {
        Rgb8Image::from_fn(n, n, |x, _| {
            let v = (128.0 + 100.0 * (2.0 * std::f64::consts::PI * x as f64 / wavelength).sin()).round() as u8;
            [v, v, v]
        })
    }

    #[test]
    fn constant_and_sinusoids() {
        assert_eq!(low_frequency_fraction(&Rgb8Image::filled(64, 48, [10, 200, 30]), 20.0), 1.0);
        assert!(low_frequency_fraction(&sinusoid(640, 40.0), 20.0) > 0.99);
        assert!(low_frequency_fraction(&sinusoid(640, 8.0), 20.0) < 0.01);
    }

    #[test]
    fn two_lines_split_energy() {
        // equal amplitudes at wavelengths 64 and 8: half the energy is low frequency
        let img = Rgb8Image::from_fn(128, 128, |x, _| {
            let t = 2.0 * std::f64::consts::PI * x as f64;
            let v = 128.0 + 60.0 * (t / 64.0).cos() + 60.0 * (t / 8.0).cos();
            [v as u8; 3]
        });
        assert!((low_frequency_fraction(&img, 20.0) - 0.5).abs() < 0.02);
    }
}
