use super::{conv2d, dsc_conv2d, maxpool, route_concat, upsample, GemmConfig, KernelError};
use crate::model::{LayerParams, LayerSpec, ModelGraph, YoloSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GraphOutput {
    /// `(layer index, head spec, feature map)` for every yolo layer, in layer order.
    pub heads: Vec<(usize, YoloSpec, Tensor)>,
    pub output: Tensor,
}

/// Forward pass over a bound graph. Layer outputs are dropped after their last consumer.
pub fn run_graph(g: &ModelGraph, input: &Tensor, cfg: &GemmConfig) -> Result<GraphOutput, KernelError> {
    let (h, w, c) = input.shape();
    if (h, w, c) != (g.input.height, g.input.width, g.input.channels) {
        return Err(KernelError::Shape(format!("input {h}x{w}x{c}, model expects {}", g.input)));
    }
    let n = g.layers.len();
    // last layer that reads each output; the final layer's output is kept
    let mut last_use: Vec<usize> = (0..n).map(|i| i + 1).collect();
    for (i, l) in g.layers.iter().enumerate() {
        if let LayerSpec::Route(r) = &l.spec {
            for &s in &r.layers {
                last_use[s] = last_use[s].max(i);
            }
        }
    }
    let mut outs: Vec<Option<Tensor>> = vec![None; n];
    let mut heads = Vec::new();
    for i in 0..n {
        let layer = &g.layers[i];
        let prev = if i == 0 { input } else { outs[i - 1].as_ref().expect("previous output retained") };
        let out = match (&layer.spec, &layer.params) {
            (LayerSpec::Convolutional(s), Some(LayerParams::Conv(p))) => conv2d(prev, s, p, cfg)?,
            (LayerSpec::DepthwiseSeparable(s), Some(LayerParams::Dsc(p))) => dsc_conv2d(prev, s, p, cfg)?,
            (LayerSpec::Convolutional(_) | LayerSpec::DepthwiseSeparable(_), _) => {
                return Err(KernelError::MissingParams { layer: i })
            }
            (LayerSpec::Maxpool(s), _) => maxpool(prev, s)?,
            (LayerSpec::Upsample(s), _) => upsample(prev, s.stride)?,
            (LayerSpec::Route(r), _) => {
                let parts: Vec<&Tensor> =
                    r.layers.iter().map(|&s| outs[s].as_ref().expect("route source retained")).collect();
                route_concat(&parts)?
            }
            (LayerSpec::Yolo(y), _) => {
                heads.push((i, y.clone(), prev.clone()));
                prev.clone()
            }
        };
        outs[i] = Some(out);
        for j in 0..i {
            if last_use[j] <= i && outs[j].is_some() && j + 1 != n {
                outs[j] = None;
            }
        }
    }
    let output = match outs.pop().flatten() {
        Some(t) => t,
        None => input.clone(),
    };
    Ok(GraphOutput { heads, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bind_weights, parse_cfg, WeightsFile, WeightsHeader};

    #[test]
    fn unbound_graph_is_rejected() {
        let g = parse_cfg("[net]\nheight=8\nwidth=8\nchannels=1\n[convolutional]\nfilters=2\nsize=3\nstride=1\npad=1\n").unwrap();
        let input = Tensor::zeros(8, 8, 1).unwrap();
        assert!(matches!(run_graph(&g, &input, &GemmConfig::default()), Err(KernelError::MissingParams { layer: 0 })));
    }

    #[test]
    fn forward_pass_shapes() {
        let g = parse_cfg(
            "[net]\nheight=8\nwidth=8\nchannels=1\n[convolutional]\nfilters=2\nsize=3\nstride=1\npad=1\n[maxpool]\nsize=2\nstride=2\n[upsample]\nstride=2\n[route]\nlayers=-1,0\n",
        )
        .unwrap();
        let n = g.param_count();
        let w = WeightsFile { header: WeightsHeader::default(), params: (0..n).map(|i| (i % 5) as f32 * 0.1).collect() };
        let g = bind_weights(&g, &w).unwrap();
        let input = Tensor::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32 / 64.0).unwrap();
        let out = run_graph(&g, &input, &GemmConfig::default()).unwrap();
        assert_eq!(out.output.shape(), (8, 8, 4));
        assert!(out.heads.is_empty());
        let conv = out.output.to_f32_vec();
        // the routed copy of layer 0 sits in channels 2..4
        let first = run_graph(&ModelGraph { input: g.input, layers: g.layers[..1].to_vec() }, &input, &GemmConfig::default())
            .unwrap()
            .output
            .to_f32_vec();
        for p in 0..64 {
            assert_eq!(&conv[p * 4 + 2..p * 4 + 4], &first[p * 2..p * 2 + 2]);
        }
        assert!(run_graph(&g, &Tensor::zeros(4, 4, 1).unwrap(), &GemmConfig::default()).is_err());
    }
}
