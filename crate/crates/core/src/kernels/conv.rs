use serde::{Deserialize, Serialize};

use super::pool::activate;
use super::{gemm_blocked, im2col, GemmShape, KernelError, Matrix, RegimeRule};
use crate::model::{Activation, BatchNorm, ConvParams, ConvSpec, DscParams, DscSpec};
use crate::tensor::{ElementKind, Tensor};

/// Numeric format and block-parameter policy for every GEMM in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemmConfig {
    pub format: ElementKind,
    pub rule: RegimeRule,
}

impl Default for GemmConfig {
    fn default() -> Self {
        Self { format: ElementKind::F32, rule: RegimeRule::default() }
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), KernelError> {
    if got != expected {
        return Err(KernelError::Shape(format!("{what}: expected {expected} values, got {got}")));
    }
    Ok(())
}

/// Per-output-channel `(multiplier, offset)` for bias and optional batch norm.
fn epilogue(biases: &[f32], bn: Option<&BatchNorm>) -> (Vec<f32>, Vec<f32>) {
    match bn {
        Some(bn) => bn.fold(biases),
        None => (vec![1.0; biases.len()], biases.to_vec()),
    }
}

/// `C(F, P)` from the GEMM back to HWC, with epilogue and activation.
fn finish(c: &Matrix, out_h: usize, out_w: usize, mul: &[f32], off: &[f32], act: Activation) -> Result<Tensor, KernelError> {
    let (f, p) = (c.rows(), c.cols());
    let cd = c.data();
    let mut data = vec![0.0f32; f * p];
    for ch in 0..f {
        let row = &cd[ch * p..(ch + 1) * p];
        for (pos, &v) in row.iter().enumerate() {
            data[pos * f + ch] = v * mul[ch] + off[ch];
        }
    }
    activate(&mut data, act);
    Tensor::from_f32(out_h, out_w, f, data).map_err(|e| KernelError::Shape(e.to_string()))
}

fn gemm_layer(weights: Matrix, cols: Matrix, cfg: &GemmConfig) -> Result<Matrix, KernelError> {
    let shape = GemmShape::new(weights.rows(), cols.cols(), weights.cols());
    gemm_blocked(&weights, &cols, cfg.rule.select(shape), cfg.format)
}

/// Standard convolution lowered to `im2col` and the blocked GEMM.
pub fn conv2d(t: &Tensor, spec: &ConvSpec, params: &ConvParams, cfg: &GemmConfig) -> Result<Tensor, KernelError> {
    let cin = t.channels();
    let k2 = spec.size * spec.size;
    check_len("weights", params.weights.len(), spec.filters * cin * k2)?;
    check_len("biases", params.biases.len(), spec.filters)?;
    let cols = im2col(t, spec.size, spec.stride, spec.padding)?;
    let out_h = (t.height() + 2 * spec.padding - spec.size) / spec.stride + 1;
    let out_w = cols.cols() / out_h;
    let w = Matrix::new(spec.filters, cin * k2, params.weights.clone())?;
    let c = gemm_layer(w, cols, cfg)?;
    let (mul, off) = epilogue(&params.biases, params.batch_norm.as_ref());
    finish(&c, out_h, out_w, &mul, &off, spec.activation)
}

fn depthwise(t: &Tensor, size: usize, stride: usize, pad: usize, kernel: &[f32], bias: Option<&[f32]>) -> Result<Tensor, KernelError> {
    let (h, w, c) = t.shape();
    let out_h = super::conv_output_extent(h, size, stride, pad)?;
    let out_w = super::conv_output_extent(w, size, stride, pad)?;
    let input = t.to_f32_vec();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dst = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for ky in 0..size {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..size {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &input[(iy as usize * w + ix as usize) * c..][..c];
                    for (ch, d) in dst.iter_mut().enumerate() {
                        *d += src[ch] * kernel[(ch * size + ky) * size + kx];
                    }
                }
            }
            if let Some(b) = bias {
                for (d, bv) in dst.iter_mut().zip(b) {
                    *d += bv;
                }
            }
        }
    }
    Tensor::from_f32(out_h, out_w, c, out).map_err(|e| KernelError::Shape(e.to_string()))
}

/// Depthwise `k×k` stage (fp32, direct) followed by a pointwise 1×1 GEMM.
pub fn dsc_conv2d(t: &Tensor, spec: &DscSpec, params: &DscParams, cfg: &GemmConfig) -> Result<Tensor, KernelError> {
    let cin = t.channels();
    check_len("depthwise weights", params.depthwise.len(), cin * spec.size * spec.size)?;
    check_len("pointwise weights", params.pointwise.len(), spec.filters * cin)?;
    check_len("biases", params.biases.len(), spec.filters)?;
    if let Some(b) = &params.depthwise_biases {
        check_len("depthwise biases", b.len(), cin)?;
    }
    let mid = depthwise(t, spec.size, spec.stride, spec.padding, &params.depthwise, params.depthwise_biases.as_deref())?;
    let cols = im2col(&mid, 1, 1, 0)?;
    let w = Matrix::new(spec.filters, cin, params.pointwise.clone())?;
    let c = gemm_layer(w, cols, cfg)?;
    let (mul, off) = epilogue(&params.biases, params.batch_norm.as_ref());
    finish(&c, mid.height(), mid.width(), &mul, &off, spec.activation)
}

fn act64(x: f64, a: Activation) -> f64 {
    match a {
        Activation::Linear => x,
        Activation::Relu => x.max(0.0),
        Activation::Leaky => {
            if x > 0.0 {
                x
            } else {
                0.1 * x
            }
        }
    }
}

fn epilogue64(biases: &[f32], bn: Option<&BatchNorm>, ch: usize, x: f64) -> f64 {
    match bn {
        Some(bn) => {
            let norm = (x - bn.mean[ch] as f64) / ((bn.variance[ch] as f64).sqrt() + BatchNorm::EPSILON as f64);
            norm * bn.scale[ch] as f64 + biases[ch] as f64
        }
        None => x + biases[ch] as f64,
    }
}

fn tap(t: &Tensor, y: isize, x: isize, c: usize) -> f64 {
    if y < 0 || x < 0 || y >= t.height() as isize || x >= t.width() as isize {
        0.0
    } else {
        t.get(y as usize, x as usize, c) as f64
    }
}

/// Nested-loop convolution in f64. Reference for tests and tooling; not used on the inference path.
pub fn conv2d_direct(t: &Tensor, spec: &ConvSpec, params: &ConvParams) -> Result<Vec<f64>, KernelError> {
    let (h, w, cin) = t.shape();
    let (k, s, p) = (spec.size, spec.stride, spec.padding as isize);
    let out_h = super::conv_output_extent(h, k, s, spec.padding)?;
    let out_w = super::conv_output_extent(w, k, s, spec.padding)?;
    let mut out = Vec::with_capacity(out_h * out_w * spec.filters);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for f in 0..spec.filters {
                let mut acc = 0.0f64;
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = params.weights[((f * cin + c) * k + ky) * k + kx] as f64;
                            acc += wv * tap(t, (oy * s + ky) as isize - p, (ox * s + kx) as isize - p, c);
                        }
                    }
                }
                let v = epilogue64(&params.biases, params.batch_norm.as_ref(), f, acc);
                out.push(act64(v, spec.activation));
            }
        }
    }
    Ok(out)
}

/// Two-stage nested-loop depthwise-separable convolution in f64.
pub fn dsc_conv2d_direct(t: &Tensor, spec: &DscSpec, params: &DscParams) -> Result<Vec<f64>, KernelError> {
    let (h, w, cin) = t.shape();
    let (k, s, p) = (spec.size, spec.stride, spec.padding as isize);
    let out_h = super::conv_output_extent(h, k, s, spec.padding)?;
    let out_w = super::conv_output_extent(w, k, s, spec.padding)?;
    let mut out = Vec::with_capacity(out_h * out_w * spec.filters);
    let mut mid = vec![0.0f64; cin];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for (c, m) in mid.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = params.depthwise[(c * k + ky) * k + kx] as f64;
                        acc += wv * tap(t, (oy * s + ky) as isize - p, (ox * s + kx) as isize - p, c);
                    }
                }
                if let Some(b) = &params.depthwise_biases {
                    acc += b[c] as f64;
                }
                *m = acc;
            }
            for f in 0..spec.filters {
                let acc: f64 = (0..cin).map(|c| params.pointwise[f * cin + c] as f64 * mid[c]).sum();
                let v = epilogue64(&params.biases, params.batch_norm.as_ref(), f, acc);
                out.push(act64(v, spec.activation));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv_spec(filters: usize, size: usize, stride: usize, padding: usize, act: Activation, bn: bool) -> ConvSpec {
        ConvSpec { filters, size, stride, padding, activation: act, batch_normalize: bn }
    }

    fn random_params(rng: &mut ChaCha8Rng, f: usize, cin: usize, k: usize, bn: bool) -> ConvParams {
        let mut v = |n: usize, lo: f32, hi: f32| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f32>>();
        let biases = v(f, -0.5, 0.5);
        let batch_norm = bn.then(|| BatchNorm { scale: v(f, 0.5, 1.5), mean: v(f, -0.2, 0.2), variance: v(f, 0.5, 2.0) });
        ConvParams { biases, batch_norm, weights: v(f * cin * k * k, -1.0, 1.0) }
    }

    #[test]
    fn pointwise_identity_is_a_no_op() {
        let t = Tensor::from_fn(5, 6, 3, |y, x, c| (y * 31 + x * 7 + c) as f32 * 0.1).unwrap();
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let p = ConvParams { biases: vec![0.0; 3], batch_norm: None, weights: w };
        let out = conv2d(&t, &conv_spec(3, 1, 1, 0, Activation::Linear, false), &p, &GemmConfig::default()).unwrap();
        assert_eq!(out.to_f32_vec(), t.to_f32_vec());
    }

    #[test]
    fn delta_kernel_copies_channels() {
        let t = Tensor::from_fn(4, 4, 2, |y, x, c| (y * 4 + x) as f32 - c as f32).unwrap();
        let mut w = vec![0.0; 2 * 2 * 9];
        for c in 0..2 {
            w[(c * 2 + c) * 9 + 4] = 1.0;
        }
        let p = ConvParams { biases: vec![0.0; 2], batch_norm: None, weights: w };
        let out = conv2d(&t, &conv_spec(2, 3, 1, 1, Activation::Linear, false), &p, &GemmConfig::default()).unwrap();
        assert_eq!(out.to_f32_vec(), t.to_f32_vec());
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (i, &(act, bn, stride)) in [(Activation::Linear, false, 1), (Activation::Leaky, true, 1), (Activation::Relu, true, 2)]
            .iter()
            .enumerate()
        {
            let h = if stride == 2 { 9 } else { 8 };
            let t = Tensor::from_fn(h, h, 3, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
            let spec = conv_spec(4, 3, stride, 1, act, bn);
            let p = random_params(&mut rng, 4, 3, 3, bn);
            let got = conv2d(&t, &spec, &p, &GemmConfig::default()).unwrap().to_f32_vec();
            let want = conv2d_direct(&t, &spec, &p).unwrap();
            assert_eq!(got.len(), want.len(), "case {i}");
            for (g, w) in got.iter().zip(&want) {
                assert!((*g as f64 - w).abs() <= 1e-5, "case {i}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn dsc_identity_and_oracle() {
        let t = Tensor::from_fn(5, 5, 3, |y, x, c| (y + 2 * x + 3 * c) as f32).unwrap();
        let mut dw = vec![0.0; 27];
        for c in 0..3 {
            dw[c * 9 + 4] = 1.0;
        }
        let mut pw = vec![0.0; 9];
        for c in 0..3 {
            pw[c * 3 + c] = 1.0;
        }
        let spec = DscSpec { filters: 3, size: 3, stride: 1, padding: 1, activation: Activation::Linear, batch_normalize: false, depthwise_bias: false };
        let p = DscParams { biases: vec![0.0; 3], batch_norm: None, depthwise_biases: None, depthwise: dw, pointwise: pw };
        assert_eq!(dsc_conv2d(&t, &spec, &p, &GemmConfig::default()).unwrap().to_f32_vec(), t.to_f32_vec());

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = Tensor::from_fn(7, 6, 4, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let spec = DscSpec { filters: 5, activation: Activation::Leaky, batch_normalize: true, depthwise_bias: true, ..spec };
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(0.5f32..1.5)).collect::<Vec<f32>>();
        let p = DscParams {
            biases: v(5),
            batch_norm: Some(BatchNorm { scale: v(5), mean: v(5), variance: v(5) }),
            depthwise_biases: Some(v(4)),
            depthwise: v(36),
            pointwise: v(20),
        };
        let got = dsc_conv2d(&t, &spec, &p, &GemmConfig::default()).unwrap().to_f32_vec();
        let want = dsc_conv2d_direct(&t, &spec, &p).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0));
        }
    }

    #[test]
    fn wrong_weight_count_is_a_shape_error() {
        let t = Tensor::zeros(4, 4, 2).unwrap();
        let p = ConvParams { biases: vec![0.0; 2], batch_norm: None, weights: vec![0.0; 5] };
        assert!(matches!(
            conv2d(&t, &conv_spec(2, 3, 1, 1, Activation::Linear, false), &p, &GemmConfig::default()),
            Err(KernelError::Shape(_))
        ));
    }
}
