use serde::Serialize;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn elements(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Leaky,
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Leaky => "leaky",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "leaky" => Some(Activation::Leaky),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub batch_normalize: bool,
}

/// Depthwise `size×size` convolution per input channel, then a 1×1 pointwise convolution.
///
/// `depthwise_bias` is set when the layer came from a grouped `[convolutional]`
/// pair, whose depthwise stage carries its own bias vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DscSpec {
    pub filters: usize,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub batch_normalize: bool,
    pub depthwise_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPoolSpec {
    pub size: usize,
    pub stride: usize,
    /// Total padding; the window starts `padding / 2` before the input edge.
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpsampleSpec {
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteSpec {
    /// Absolute indices of earlier layers, concatenated along channels.
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoloSpec {
    pub mask: Vec<usize>,
    /// Anchor (width, height) pairs in network-input pixels.
    pub anchors: Vec<(f32, f32)>,
    pub classes: usize,
}

impl YoloSpec {
    pub fn masked_anchors(&self) -> Vec<(f32, f32)> {
        self.mask.iter().map(|&m| self.anchors[m]).collect()
    }

    pub fn expected_channels(&self) -> usize {
        self.mask.len() * (5 + self.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Convolutional(ConvSpec),
    DepthwiseSeparable(DscSpec),
    Maxpool(MaxPoolSpec),
    Upsample(UpsampleSpec),
    Route(RouteSpec),
    Yolo(YoloSpec),
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Convolutional(_) => "convolutional",
            LayerSpec::DepthwiseSeparable(_) => "depthwise_separable",
            LayerSpec::Maxpool(_) => "maxpool",
            LayerSpec::Upsample(_) => "upsample",
            LayerSpec::Route(_) => "route",
            LayerSpec::Yolo(_) => "yolo",
        }
    }
}

/// Number of trainable parameters of a layer fed with `in_channels` channels.
pub fn layer_param_count(layer: &LayerSpec, in_channels: usize) -> usize {
    match layer {
        LayerSpec::Convolutional(c) => {
            let bn = if c.batch_normalize { 3 * c.filters } else { 0 };
            c.size * c.size * in_channels * c.filters + c.filters + bn
        }
        LayerSpec::DepthwiseSeparable(d) => {
            let bn = if d.batch_normalize { 3 * d.filters } else { 0 };
            let dw_bias = if d.depthwise_bias { in_channels } else { 0 };
            d.size * d.size * in_channels + in_channels * d.filters + d.filters + bn + dw_bias
        }
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
}

impl BatchNorm {
    /// Darknet's normalisation epsilon, added to the standard deviation.
    pub const EPSILON: f32 = 1e-6;

    /// Per-channel `(multiplier, offset)` such that `bn(x) + bias = x * multiplier + offset`.
    pub fn fold(&self, bias: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let mul: Vec<f32> = self
            .scale
            .iter()
            .zip(&self.variance)
            .map(|(s, v)| s / (v.sqrt() + Self::EPSILON))
            .collect();
        let off = bias
            .iter()
            .zip(&self.mean)
            .zip(&mul)
            .map(|((b, m), k)| b - m * k)
            .collect();
        (mul, off)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub biases: Vec<f32>,
    pub batch_norm: Option<BatchNorm>,
    /// `[filters][in_channels][size][size]`.
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DscParams {
    pub biases: Vec<f32>,
    pub batch_norm: Option<BatchNorm>,
    pub depthwise_biases: Option<Vec<f32>>,
    /// `[in_channels][size][size]`.
    pub depthwise: Vec<f32>,
    /// `[filters][in_channels]`.
    pub pointwise: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvParams),
    Dsc(DscParams),
}

impl LayerParams {
    /// Parameters in file order: biases, batch-norm statistics, kernels.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        let push_bn = |out: &mut Vec<f32>, bn: &Option<BatchNorm>| {
            if let Some(bn) = bn {
                out.extend_from_slice(&bn.scale);
                out.extend_from_slice(&bn.mean);
                out.extend_from_slice(&bn.variance);
            }
        };
        match self {
            LayerParams::Conv(p) => {
                out.extend_from_slice(&p.biases);
                push_bn(&mut out, &p.batch_norm);
                out.extend_from_slice(&p.weights);
            }
            LayerParams::Dsc(p) => {
                out.extend_from_slice(&p.biases);
                push_bn(&mut out, &p.batch_norm);
                if let Some(b) = &p.depthwise_biases {
                    out.extend_from_slice(b);
                }
                out.extend_from_slice(&p.depthwise);
                out.extend_from_slice(&p.pointwise);
            }
        }
        out
    }

    /// Slices a parameter run in file order. `values.len()` must equal the layer's count.
    pub fn from_flat(spec: &LayerSpec, in_channels: usize, values: &[f32]) -> Option<Self> {
        let mut rest = values;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        match spec {
            LayerSpec::Convolutional(c) => {
                let biases = take(c.filters);
                let batch_norm = c.batch_normalize.then(|| BatchNorm {
                    scale: take(c.filters),
                    mean: take(c.filters),
                    variance: take(c.filters),
                });
                let weights = take(c.size * c.size * in_channels * c.filters);
                Some(LayerParams::Conv(ConvParams { biases, batch_norm, weights }))
            }
            LayerSpec::DepthwiseSeparable(d) => {
                let biases = take(d.filters);
                let batch_norm = d.batch_normalize.then(|| BatchNorm {
                    scale: take(d.filters),
                    mean: take(d.filters),
                    variance: take(d.filters),
                });
                let depthwise_biases = d.depthwise_bias.then(|| take(in_channels));
                let depthwise = take(d.size * d.size * in_channels);
                let pointwise = take(in_channels * d.filters);
                Some(LayerParams::Dsc(DscParams { biases, batch_norm, depthwise_biases, depthwise, pointwise }))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub params: Option<LayerParams>,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        layer_param_count(&self.spec, self.input.channels)
    }
}

/// Network input size plus the ordered layer list with resolved shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn bound_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.flatten().len())
            .sum()
    }

    pub fn is_bound(&self) -> bool {
        self.layers.iter().all(|l| l.param_count() == 0 || l.params.is_some())
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    /// Builds a graph from layer specs, resolving and checking every shape.
    pub fn from_specs(input: Shape, specs: Vec<LayerSpec>) -> Result<Self, ModelError> {
        let mut g = Self { input, layers: Vec::with_capacity(specs.len()) };
        for spec in specs {
            g.push(spec)?;
        }
        Ok(g)
    }

    /// Appends an unbound layer after checking it against the current output.
    pub fn push(&mut self, spec: LayerSpec) -> Result<Shape, ModelError> {
        let i = self.layers.len();
        let (input, output) = resolve_shape(i, &spec, self.output_shape(), &self.layers)?;
        self.layers.push(Layer { spec, input, output, params: None });
        Ok(output)
    }
}

fn conv_out(layer: usize, extent: usize, size: usize, stride: usize, padding: usize) -> Result<usize, ModelError> {
    let padded = extent + 2 * padding;
    if padded < size || (padded - size) % stride != 0 {
        return Err(ModelError::Shape {
            layer,
            message: format!(
                "extent {extent} with kernel {size}, stride {stride}, padding {padding} gives a non-integral output size"
            ),
        });
    }
    Ok((padded - size) / stride + 1)
}

fn resolve_shape(i: usize, spec: &LayerSpec, prev: Shape, earlier: &[Layer]) -> Result<(Shape, Shape), ModelError> {
    let out = match spec {
        LayerSpec::Convolutional(c) => Shape::new(
            conv_out(i, prev.height, c.size, c.stride, c.padding)?,
            conv_out(i, prev.width, c.size, c.stride, c.padding)?,
            c.filters,
        ),
        LayerSpec::DepthwiseSeparable(d) => Shape::new(
            conv_out(i, prev.height, d.size, d.stride, d.padding)?,
            conv_out(i, prev.width, d.size, d.stride, d.padding)?,
            d.filters,
        ),
        LayerSpec::Maxpool(m) => {
            let dim = |e: usize| {
                if e + m.padding < m.size {
                    return Err(ModelError::Shape { layer: i, message: format!("maxpool window {} larger than input {e}", m.size) });
                }
                Ok((e + m.padding - m.size) / m.stride + 1)
            };
            Shape::new(dim(prev.height)?, dim(prev.width)?, prev.channels)
        }
        LayerSpec::Upsample(u) => Shape::new(prev.height * u.stride, prev.width * u.stride, prev.channels),
        LayerSpec::Route(r) => {
            let mut shape: Option<Shape> = None;
            for &src in &r.layers {
                if src >= i {
                    return Err(ModelError::ForwardRoute { layer: i, target: src as isize });
                }
                let s = earlier[src].output;
                shape = Some(match shape {
                    None => s,
                    Some(acc) if acc.height == s.height && acc.width == s.width => {
                        Shape::new(acc.height, acc.width, acc.channels + s.channels)
                    }
                    Some(acc) => {
                        return Err(ModelError::Shape {
                            layer: i,
                            message: format!("route sources disagree spatially: {acc} vs {s}"),
                        })
                    }
                });
            }
            let s = shape.ok_or_else(|| ModelError::Shape { layer: i, message: "route without sources".into() })?;
            return Ok((s, s));
        }
        LayerSpec::Yolo(y) => {
            if prev.channels != y.expected_channels() {
                return Err(ModelError::Shape {
                    layer: i,
                    message: format!(
                        "yolo expects {} channels ({} anchors x (5 + {} classes)), input has {}",
                        y.expected_channels(),
                        y.mask.len(),
                        y.classes,
                        prev.channels
                    ),
                });
            }
            prev
        }
    };
    Ok((prev, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(filters: usize, size: usize, bn: bool) -> LayerSpec {
        LayerSpec::Convolutional(ConvSpec {
            filters,
            size,
            stride: 1,
            padding: size / 2,
            activation: Activation::Leaky,
            batch_normalize: bn,
        })
    }

    #[test]
    fn conv_param_counts() {
        assert_eq!(layer_param_count(&conv(16, 3, false), 3), 448);
        assert_eq!(layer_param_count(&conv(16, 3, true), 3), 448 + 48);
        assert_eq!(layer_param_count(&LayerSpec::Upsample(UpsampleSpec { stride: 2 }), 64), 0);
    }

    #[test]
    fn dsc_param_count() {
        let dsc = LayerSpec::DepthwiseSeparable(DscSpec {
            filters: 512,
            size: 3,
            stride: 1,
            padding: 1,
            activation: Activation::Leaky,
            batch_normalize: false,
            depthwise_bias: false,
        });
        assert_eq!(layer_param_count(&dsc, 256), 133_888);
    }

    #[test]
    fn flatten_and_slice_agree() {
        let spec = conv(4, 3, true);
        let n = layer_param_count(&spec, 2);
        let vals: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let p = LayerParams::from_flat(&spec, 2, &vals).unwrap();
        let LayerParams::Conv(c) = &p else { unreachable!() };
        assert_eq!(c.biases, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(c.batch_norm.as_ref().unwrap().variance[0], 12.0);
        assert_eq!(c.weights[0], 16.0);
        assert_eq!(p.flatten(), vals);
    }

    #[test]
    fn shapes_flow_through_layers() {
        let g = ModelGraph::from_specs(
            Shape::new(32, 32, 3),
            vec![
                conv(8, 3, false),
                LayerSpec::Maxpool(MaxPoolSpec { size: 2, stride: 2, padding: 1 }),
                LayerSpec::Upsample(UpsampleSpec { stride: 2 }),
                LayerSpec::Route(RouteSpec { layers: vec![0, 2] }),
            ],
        )
        .unwrap();
        assert_eq!(g.layers[1].output, Shape::new(16, 16, 8));
        assert_eq!(g.layers[3].output, Shape::new(32, 32, 16));
    }

    #[test]
    fn non_integral_conv_output_is_rejected() {
        let spec = LayerSpec::Convolutional(ConvSpec {
            filters: 1,
            size: 3,
            stride: 2,
            padding: 0,
            activation: Activation::Linear,
            batch_normalize: false,
        });
        assert!(matches!(
            ModelGraph::from_specs(Shape::new(8, 8, 1), vec![spec]),
            Err(ModelError::Shape { layer: 0, .. })
        ));
    }
}
