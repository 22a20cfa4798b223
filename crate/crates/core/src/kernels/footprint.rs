use serde::Serialize;

use crate::model::{LayerSpec, ModelGraph};
use crate::tensor::ElementKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFootprint {
    pub index: usize,
    pub kind: &'static str,
    pub macs: u64,
    pub params: u64,
    pub param_bytes: u64,
    pub activation_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub layers: Vec<LayerFootprint>,
    pub total_macs: u64,
    pub total_params: u64,
    pub total_param_bytes: u64,
    pub total_activation_bytes: u64,
}

fn element_bytes(format: ElementKind) -> u64 {
    match format {
        ElementKind::F32 => 4,
        ElementKind::F16 | ElementKind::Q16 => 2,
    }
}

/// Multiply-accumulate count, parameter and output-activation sizes per layer.
///
/// Standard convolution: `Hout·Wout·k²·Cin·Cout` MACs. Depthwise-separable:
/// `Hout·Wout·(k²·Cin + Cin·Cout)`. Other layers do no multiply-accumulates.
pub fn footprint(g: &ModelGraph, format: ElementKind) -> Footprint {
    let eb = element_bytes(format);
    let layers: Vec<LayerFootprint> = g
        .layers
        .iter()
        .enumerate()
        .map(|(index, l)| {
            let spatial = (l.output.height * l.output.width) as u64;
            let cin = l.input.channels as u64;
            let macs = match &l.spec {
                LayerSpec::Convolutional(c) => spatial * (c.size * c.size) as u64 * cin * c.filters as u64,
                LayerSpec::DepthwiseSeparable(d) => spatial * ((d.size * d.size) as u64 * cin + cin * d.filters as u64),
                _ => 0,
            };
            let params = l.param_count() as u64;
            LayerFootprint {
                index,
                kind: l.spec.kind_name(),
                macs,
                params,
                param_bytes: params * eb,
                activation_bytes: l.output.elements() as u64 * eb,
            }
        })
        .collect();
    Footprint {
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        total_param_bytes: layers.iter().map(|l| l.param_bytes).sum(),
        total_activation_bytes: layers.iter().map(|l| l.activation_bytes).sum(),
        layers,
    }
}

/// Checks `dsc / standard == 1/Cout + 1/k²` exactly, by cross-multiplication.
pub fn dsc_ratio_is_exact(standard_macs: u64, dsc_macs: u64, size: usize, filters: usize) -> bool {
    let k2 = (size * size) as u128;
    let cout = filters as u128;
    dsc_macs as u128 * cout * k2 == standard_macs as u128 * (k2 + cout)
}
