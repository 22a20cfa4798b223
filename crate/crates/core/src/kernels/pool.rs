use super::KernelError;
use crate::model::{Activation, MaxPoolSpec};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.1;

#[inline]
pub fn leaky_relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn activate(data: &mut [f32], act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Leaky => data.iter_mut().for_each(|v| *v = leaky_relu(*v)),
        Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
    }
}

fn wrap(r: Result<Tensor, crate::tensor::TensorError>) -> Result<Tensor, KernelError> {
    r.map_err(|e| KernelError::Shape(e.to_string()))
}

/// Darknet max pooling: output `(e + padding - size) / stride + 1`, windows
/// start `padding / 2` before the edge, out-of-range taps are ignored.
pub fn maxpool(t: &Tensor, spec: &MaxPoolSpec) -> Result<Tensor, KernelError> {
    let (h, w, c) = t.shape();
    if spec.size == 0 || spec.stride == 0 {
        return Err(KernelError::InvalidParams(format!("maxpool size {} stride {}", spec.size, spec.stride)));
    }
    if h + spec.padding < spec.size || w + spec.padding < spec.size {
        return Err(KernelError::Shape(format!("maxpool window {} larger than {h}x{w}", spec.size)));
    }
    let out_h = (h + spec.padding - spec.size) / spec.stride + 1;
    let out_w = (w + spec.padding - spec.size) / spec.stride + 1;
    let off = (spec.padding / 2) as isize;
    let input = t.to_f32_vec();
    let mut out = vec![f32::NEG_INFINITY; out_h * out_w * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dst = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for ky in 0..spec.size {
                let iy = (oy * spec.stride + ky) as isize - off;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..spec.size {
                    let ix = (ox * spec.stride + kx) as isize - off;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &input[(iy as usize * w + ix as usize) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = d.max(s);
                    }
                }
            }
        }
    }
    wrap(Tensor::from_f32(out_h, out_w, c, out))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample(t: &Tensor, stride: usize) -> Result<Tensor, KernelError> {
    if stride == 0 {
        return Err(KernelError::InvalidParams("upsample stride 0".into()));
    }
    let (h, w, c) = t.shape();
    let input = t.to_f32_vec();
    let (oh, ow) = (h * stride, w * stride);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let src = ((y / stride) * w + x / stride) * c;
            out.extend_from_slice(&input[src..src + c]);
        }
    }
    wrap(Tensor::from_f32(oh, ow, c, out))
}

/// Channel concatenation of same-sized tensors, in argument order.
pub fn route_concat(parts: &[&Tensor]) -> Result<Tensor, KernelError> {
    let first = parts.first().ok_or_else(|| KernelError::Shape("route without sources".into()))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = parts.iter().find(|t| t.height() != h || t.width() != w) {
        return Err(KernelError::Shape(format!("route sources {h}x{w} and {}x{}", bad.height(), bad.width())));
    }
    let total: usize = parts.iter().map(|t| t.channels()).sum();
    let flats: Vec<Vec<f32>> = parts.iter().map(|t| t.to_f32_vec()).collect();
    let mut out = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for (t, f) in parts.iter().zip(&flats) {
            let c = t.channels();
            out.extend_from_slice(&f[p * c..(p + 1) * c]);
        }
    }
    wrap(Tensor::from_f32(h, w, total, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(size: usize, stride: usize, padding: usize) -> MaxPoolSpec {
        MaxPoolSpec { size, stride, padding }
    }

    #[test]
    fn constant_halves() {
        let t = Tensor::filled(6, 4, 3, 2.5).unwrap();
        let o = maxpool(&t, &pool(2, 2, 0)).unwrap();
        assert_eq!(o.shape(), (3, 2, 3));
        assert!(o.to_f32_vec().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn same_size_stride_one() {
        // size 2, stride 1, padding 1 keeps the extent; the last column sees only itself
        let t = Tensor::from_fn(1, 3, 1, |_, x, _| [3.0, 1.0, 2.0][x]).unwrap();
        let o = maxpool(&t, &pool(2, 1, 1)).unwrap();
        assert_eq!(o.to_f32_vec(), vec![3.0, 2.0, 2.0]);
    }

    #[test]
    fn leaky_values() {
        assert_eq!(leaky_relu(-1.0), -0.1);
        assert_eq!(leaky_relu(2.0), 2.0);
    }

    #[test]
    fn concat_orders_channels() {
        let a = Tensor::filled(2, 2, 1, 1.0).unwrap();
        let b = Tensor::filled(2, 2, 2, 2.0).unwrap();
        let o = route_concat(&[&a, &b]).unwrap();
        assert_eq!(&o.to_f32_vec()[..6], &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        assert!(route_concat(&[&a, &Tensor::zeros(3, 2, 1).unwrap()]).is_err());
    }

    proptest! {
        #[test]
        fn upsample_then_pool_is_identity(h in 1usize..8, w in 1usize..8, c in 1usize..4, seed in any::<u32>()) {
            let t = Tensor::from_fn(h, w, c, |y, x, ch| ((y * 131 + x * 17 + ch * 7) as u32 ^ seed) as f32 / 1e6).unwrap();
            let back = maxpool(&upsample(&t, 2).unwrap(), &pool(2, 2, 0)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
