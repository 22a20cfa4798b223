//! Dense H×W×C tensors in fp32, binary16 or 16-bit fixed point.
//!
//! Storage is row-major with channels fastest: element `(y, x, c)` lives at
//! `(y * W + x) * C + c`.

mod fixed;
mod half;
mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::fixed::{dequantize_fixed, quantize_fixed, FixedPointFormat, QuantizationSpec};
pub use self::half::{from_half, to_half};
pub use self::io::{read_raw, write_raw};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("fixed-point fractional bits must be in [0, 15], got {0}")]
    InvalidFracBits(u8),
    #[error("tensor dimensions must be >= 1, got {height}x{width}x{channels}")]
    EmptyShape {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("buffer holds {actual} elements, shape needs {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unknown element format tag {0:#x}")]
    UnknownFormatTag(u32),
    #[error("truncated tensor dump: {0}")]
    Truncated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Element encoding of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFormat {
    F32,
    F16,
    Fixed16(FixedPointFormat),
}

/// Target kind for [`convert_tensor`]; fixed point picks its scale from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    F32,
    F16,
    Q16,
}

impl ElementFormat {
    pub fn kind(&self) -> ElementKind {
        match self {
            ElementFormat::F32 => ElementKind::F32,
            ElementFormat::F16 => ElementKind::F16,
            ElementFormat::Fixed16(_) => ElementKind::Q16,
        }
    }

    pub fn bytes_per_element(&self) -> usize {
        match self {
            ElementFormat::F32 => 4,
            ElementFormat::F16 | ElementFormat::Fixed16(_) => 2,
        }
    }

    /// Tag used by the raw dump header: 0 = fp32, 1 = fp16, `2 | f << 8` = Q16 with `f` fractional bits.
    pub fn tag(&self) -> u32 {
        match self {
            ElementFormat::F32 => 0,
            ElementFormat::F16 => 1,
            ElementFormat::Fixed16(fmt) => 2 | (fmt.frac_bits() as u32) << 8,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self, TensorError> {
        match tag & 0xff {
            0 if tag == 0 => Ok(ElementFormat::F32),
            1 if tag == 1 => Ok(ElementFormat::F16),
            2 if tag >> 12 == 0 => Ok(ElementFormat::Fixed16(FixedPointFormat::new((tag >> 8) as u8)?)),
            _ => Err(TensorError::UnknownFormatTag(tag)),
        }
    }
}

impl std::str::FromStr for ElementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fp32" | "f32" => Ok(ElementKind::F32),
            "fp16" | "f16" => Ok(ElementKind::F16),
            "q16" | "fixed16" => Ok(ElementKind::Q16),
            other => Err(format!("unknown numeric format `{other}` (expected fp32, fp16 or q16)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<u16>),
    Fixed16 { codes: Vec<i16>, format: FixedPointFormat },
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::Fixed16 { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn format(&self) -> ElementFormat {
        match self {
            TensorData::F32(_) => ElementFormat::F32,
            TensorData::F16(_) => ElementFormat::F16,
            TensorData::Fixed16 { format, .. } => ElementFormat::Fixed16(*format),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: TensorData,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: TensorData) -> Result<Self, TensorError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TensorError::EmptyShape { height, width, channels });
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { expected, actual: data.len() });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(height, width, channels, TensorData::F32(data))
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self, TensorError> {
        Self::from_f32(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self, TensorError> {
        Self::from_f32(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an fp32 tensor from a function of `(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_f32(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn format(&self) -> ElementFormat {
        self.data.format()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    /// Element value widened to f32.
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        let i = self.index(y, x, c);
        match &self.data {
            TensorData::F32(v) => v[i],
            TensorData::F16(v) => from_half(v[i]),
            TensorData::Fixed16 { codes, format } => dequantize_fixed(codes[i], *format) as f32,
        }
    }

    /// Borrow the fp32 buffer, if this tensor is fp32.
    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|&h| from_half(h)).collect(),
            TensorData::Fixed16 { codes, format } => {
                codes.iter().map(|&q| dequantize_fixed(q, *format) as f32).collect()
            }
        }
    }

    /// Element-wise re-encoding into an explicit format.
    pub fn to_format(&self, target: ElementFormat) -> Tensor {
        if target == self.format() {
            return self.clone();
        }
        let data = match target {
            ElementFormat::F32 => TensorData::F32(self.to_f32_vec()),
            ElementFormat::F16 => TensorData::F16(self.to_f32_vec().into_iter().map(to_half).collect()),
            ElementFormat::Fixed16(format) => {
                let codes = match &self.data {
                    TensorData::Fixed16 { codes, format: src } => codes
                        .iter()
                        .map(|&q| quantize_fixed(dequantize_fixed(q, *src), format))
                        .collect(),
                    _ => self
                        .to_f32_vec()
                        .into_iter()
                        .map(|v| quantize_fixed(v as f64, format))
                        .collect(),
                };
                TensorData::Fixed16 { codes, format }
            }
        };
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Max-abs calibration over the widened values.
    pub fn calibrate(&self) -> QuantizationSpec {
        QuantizationSpec::calibrate(self.to_f32_vec().iter())
    }
}

/// Element-wise conversion to `target`. Fixed point selects `f` by max-abs calibration.
pub fn convert_tensor(t: &Tensor, target: ElementKind) -> Tensor {
    match target {
        ElementKind::F32 => t.to_format(ElementFormat::F32),
        ElementKind::F16 => t.to_format(ElementFormat::F16),
        ElementKind::Q16 => match t.format() {
            ElementFormat::Fixed16(_) => t.clone(),
            _ => t.to_format(ElementFormat::Fixed16(t.calibrate().format)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::zeros(0, 1, 1).is_err());
        assert!(Tensor::from_f32(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn layout_is_channels_fastest() {
        let t = Tensor::from_fn(2, 3, 4, |y, x, c| (y * 100 + x * 10 + c) as f32).unwrap();
        assert_eq!(t.as_f32().unwrap()[t.index(1, 2, 3)], 123.0);
        assert_eq!(t.get(1, 0, 2), 102.0);
    }

    #[test]
    fn zero_tensor_stays_zero() {
        let t = Tensor::zeros(3, 2, 2).unwrap();
        for kind in [ElementKind::F16, ElementKind::Q16, ElementKind::F32] {
            let c = convert_tensor(&t, kind);
            assert!(c.to_f32_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn half_exact_values_roundtrip() {
        let vals = vec![0.0, 1.0, -2.5, 0.125, 1024.0, 65504.0, -0.000061035156];
        let t = Tensor::from_f32(1, vals.len(), 1, vals.clone()).unwrap();
        let back = convert_tensor(&convert_tensor(&t, ElementKind::F16), ElementKind::F32);
        assert_eq!(back.as_f32().unwrap(), &vals[..]);
    }

    #[test]
    fn fixed_roundtrip_within_half_step() {
        let t = Tensor::from_fn(5, 7, 3, |y, x, c| ((y * 31 + x * 7 + c * 3) as f32).sin() * 3.7).unwrap();
        let q = convert_tensor(&t, ElementKind::Q16);
        let ElementFormat::Fixed16(fmt) = q.format() else { panic!("not fixed") };
        let back = convert_tensor(&q, ElementKind::F32);
        for (a, b) in t.to_f32_vec().iter().zip(back.as_f32().unwrap()) {
            assert!(((a - b) as f64).abs() <= fmt.step() / 2.0 + 1e-7);
        }
    }

    #[test]
    fn format_tags_roundtrip() {
        for f in [ElementFormat::F32, ElementFormat::F16, ElementFormat::Fixed16(FixedPointFormat::new(11).unwrap())] {
            assert_eq!(ElementFormat::from_tag(f.tag()).unwrap(), f);
        }
        assert!(ElementFormat::from_tag(3).is_err());
        assert!(ElementFormat::from_tag(2 | 16 << 8).is_err());
    }

    proptest! {
        #[test]
        fn conversion_preserves_shape(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
            let t = Tensor::from_fn(h, w, c, |y, x, ch| ((seed as usize ^ (y * 13 + x * 5 + ch)) % 97) as f32 - 48.0).unwrap();
            for kind in [ElementKind::F32, ElementKind::F16, ElementKind::Q16] {
                let out = convert_tensor(&t, kind);
                prop_assert_eq!(out.shape(), t.shape());
                prop_assert_eq!(out.format().kind(), kind);
            }
        }
    }
}
