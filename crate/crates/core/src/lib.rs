//! Tiled object-detection inference pipeline for high-resolution camera frames.
//!
//! The crate covers the whole ML constituent: dataset augmentation and ODD
//! compliance checks on the data side; tile planning, a small traceable
//! inference engine (im2col + blocked GEMM with fp32, fp16 and 16-bit fixed
//! point paths), detection merging and a latency harness on the runtime side.

pub mod tensor;
pub mod model;
pub mod kernels;
pub mod tiling;
pub mod detect;
pub mod augment;
pub mod compliance;
pub mod bench;
pub mod pipeline;
