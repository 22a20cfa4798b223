use super::{KernelError, Matrix};
use crate::tensor::Tensor;

/// Output extent of a `size`-wide window sliding with `stride` over `extent + 2 * pad`.
pub fn conv_output_extent(extent: usize, size: usize, stride: usize, pad: usize) -> Result<usize, KernelError> {
    if size == 0 || stride == 0 {
        return Err(KernelError::InvalidParams(format!("kernel size {size} and stride {stride} must be >= 1")));
    }
    let padded = extent + 2 * pad;
    if padded < size || (padded - size) % stride != 0 {
        return Err(KernelError::NonIntegralOutput { extent, size, stride, pad });
    }
    Ok((padded - size) / stride + 1)
}

/// Unfolds receptive fields into columns.
///
/// Row `c * k² + ky * k + kx`, column `oy * Wout + ox` holds input
/// `(oy * s + ky - p, ox * s + kx - p, c)`, or zero when that falls in the padding.
pub fn im2col(t: &Tensor, size: usize, stride: usize, pad: usize) -> Result<Matrix, KernelError> {
    let (h, w, c) = t.shape();
    let out_h = conv_output_extent(h, size, stride, pad)?;
    let out_w = conv_output_extent(w, size, stride, pad)?;
    let input = t.to_f32_vec();
    let cols = out_h * out_w;
    let mut data = vec![0.0f32; c * size * size * cols];
    for ch in 0..c {
        for ky in 0..size {
            for kx in 0..size {
                let row = (ch * size + ky) * size + kx;
                let dst = &mut data[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * out_w + ox] = input[(src_row + ix as usize) * c + ch];
                        }
                    }
                }
            }
        }
    }
    Matrix::new(c * size * size, cols, data)
}
