//! Network description (`.cfg`) and parameter (`.weights`) files.
//!
//! The two files are checked against each other when binding: every layer
//! must receive exactly its declared parameter count and the stream must be
//! fully consumed, so a mismatch between description and parameters is
//! reported with the offending layer.

mod cfg;
mod graph;
mod weights;

use thiserror::Error;

pub use self::cfg::{parse_cfg, write_cfg};
pub use self::graph::{
    layer_param_count, Activation, BatchNorm, ConvParams, ConvSpec, DscParams, DscSpec, Layer, LayerParams, LayerSpec,
    MaxPoolSpec, ModelGraph, RouteSpec, Shape, UpsampleSpec, YoloSpec,
};
pub use self::weights::{
    bind_weights, bind_weights_bytes, expected_weights_len, serialize_weights, WeightsFile, WeightsHeader, HEADER_BYTES,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: [{section}] is missing `{key}`")]
    MissingKey { line: usize, section: String, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("layer {layer}: route references layer {target}, which is not an earlier layer")]
    ForwardRoute { layer: usize, target: isize },
    #[error("weights file too short for its header ({len} bytes)")]
    WeightsHeader { len: usize },
    #[error("weights payload of {payload} bytes is not a whole number of f32 values")]
    WeightsMisaligned { payload: usize },
    #[error("weights inconsistent with model at layer {layer}: needs {needed} parameters, {available} left")]
    WeightsTooShort { layer: usize, needed: usize, available: usize },
    #[error("weights inconsistent with model: {count} unconsumed parameters after the last layer")]
    UnconsumedParameters { count: usize },
    #[error("layer {layer} has no bound parameters")]
    Unbound { layer: usize },
}
