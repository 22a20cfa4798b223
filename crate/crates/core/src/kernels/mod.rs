//! Numeric layer kernels.
//!
//! Convolutions lower to `im2col` + blocked GEMM. The GEMM is the only place
//! where the element format matters: fp32, binary16 storage with fp32
//! accumulation, or 16-bit fixed point with integer accumulation. Everything
//! around it (bias, batch norm, activations, pooling, decode) runs in fp32.

mod conv;
mod exec;
mod footprint;
mod gemm;
mod im2col;
mod matrix;
mod pool;
mod yolo;

use thiserror::Error;

pub use self::conv::{conv2d, conv2d_direct, dsc_conv2d, dsc_conv2d_direct, GemmConfig};
pub use self::exec::{run_graph, GraphOutput};
pub use self::footprint::{dsc_ratio_is_exact, footprint, Footprint, LayerFootprint};
pub use self::gemm::{
    gemm_blocked, gemm_reference, select_block_params, GemmBlockParams, GemmShape, LayerRegime, RegimeRule,
};
pub use self::im2col::{conv_output_extent, im2col};
pub use self::matrix::Matrix;
pub use self::pool::{activate, leaky_relu, maxpool, route_concat, upsample, LEAKY_SLOPE};
pub use self::yolo::{sigmoid, yolo_decode};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("extent {extent} with kernel {size}, stride {stride}, pad {pad} gives a non-integral output size")]
    NonIntegralOutput { extent: usize, size: usize, stride: usize, pad: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature map has {got} channels, head expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("layer {layer} has no bound parameters")]
    MissingParams { layer: usize },
}
