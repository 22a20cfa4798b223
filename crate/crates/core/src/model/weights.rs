//! `.weights` binary: 16-byte header of four little-endian `i32`
//! (major, minor, revision, seen images) followed by little-endian `f32`
//! parameters in layer order.

use super::graph::{LayerParams, ModelGraph};
use super::ModelError;

pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WeightsHeader {
    pub major: i32,
    pub minor: i32,
    pub revision: i32,
    pub seen: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub header: WeightsHeader,
    pub params: Vec<f32>,
}

impl WeightsFile {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < HEADER_BYTES {
            return Err(ModelError::WeightsHeader { len: bytes.len() });
        }
        let word = |i: usize| i32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        let header = WeightsHeader { major: word(0), minor: word(1), revision: word(2), seen: word(3) };
        let body = &bytes[HEADER_BYTES..];
        if body.len() % 4 != 0 {
            return Err(ModelError::WeightsMisaligned { payload: body.len() });
        }
        let params = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Self { header, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.params.len());
        for v in [self.header.major, self.header.minor, self.header.revision, self.header.seen] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }
}

/// Expected `.weights` size in bytes for a graph.
pub fn expected_weights_len(g: &ModelGraph) -> usize {
    HEADER_BYTES + 4 * g.param_count()
}

/// Slices the parameter stream over the layers in order. The stream must be consumed exactly.
pub fn bind_weights(g: &ModelGraph, w: &WeightsFile) -> Result<ModelGraph, ModelError> {
    let mut bound = g.clone();
    let mut offset = 0usize;
    for (i, layer) in bound.layers.iter_mut().enumerate() {
        let needed = layer.param_count();
        if needed == 0 {
            layer.params = None;
            continue;
        }
        let available = w.params.len() - offset;
        if available < needed {
            return Err(ModelError::WeightsTooShort { layer: i, needed, available });
        }
        layer.params = LayerParams::from_flat(&layer.spec, layer.input.channels, &w.params[offset..offset + needed]);
        offset += needed;
    }
    if offset != w.params.len() {
        return Err(ModelError::UnconsumedParameters { count: w.params.len() - offset });
    }
    Ok(bound)
}

pub fn bind_weights_bytes(g: &ModelGraph, bytes: &[u8]) -> Result<ModelGraph, ModelError> {
    bind_weights(g, &WeightsFile::from_bytes(bytes)?)
}

/// Collects bound parameters back into a weights file. Fails on an unbound graph.
pub fn serialize_weights(g: &ModelGraph, header: WeightsHeader) -> Result<WeightsFile, ModelError> {
    let mut params = Vec::with_capacity(g.param_count());
    for (i, layer) in g.layers.iter().enumerate() {
        if layer.param_count() == 0 {
            continue;
        }
        let p = layer.params.as_ref().ok_or(ModelError::Unbound { layer: i })?;
        params.extend(p.flatten());
    }
    Ok(WeightsFile { header, params })
}
