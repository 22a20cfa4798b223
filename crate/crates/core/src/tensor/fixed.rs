//! Signed 16-bit fixed point (Q-format) with a per-tensor scale.

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Signed 16-bit fixed point with `frac_bits` fractional bits.
///
/// A code `q` represents the real value `q * 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    frac_bits: u8,
}

impl FixedPointFormat {
    pub const TOTAL_BITS: u32 = 16;
    pub const MAX_FRAC_BITS: u8 = 15;

    pub fn new(frac_bits: u8) -> Result<Self, TensorError> {
        if frac_bits > Self::MAX_FRAC_BITS {
            return Err(TensorError::InvalidFracBits(frac_bits));
        }
        Ok(Self { frac_bits })
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    /// Value of one least-significant bit, `2^-f`.
    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        i16::MIN as f64 * self.step()
    }

    pub fn max_value(&self) -> f64 {
        i16::MAX as f64 * self.step()
    }

    /// Whether `x` lies in the representable range (so rounding, not saturation, applies).
    pub fn in_range(&self, x: f64) -> bool {
        x >= self.min_value() && x <= self.max_value()
    }
}

/// Max-abs calibration that picked a fixed-point format for a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub format: FixedPointFormat,
    pub calibration: f64,
}

impl QuantizationSpec {
    /// Largest `f` such that `max_abs` fits `[-2^15, 2^15 - 1] * 2^-f`.
    ///
    /// A zero calibration selects `f = 15`; values too large for `f = 0` saturate.
    pub fn from_max_abs(max_abs: f64) -> Self {
        let max_abs = max_abs.abs();
        let mut chosen = 0u8;
        for f in (0..=FixedPointFormat::MAX_FRAC_BITS).rev() {
            if max_abs * (f as f64).exp2() <= i16::MAX as f64 {
                chosen = f;
                break;
            }
        }
        Self {
            format: FixedPointFormat { frac_bits: chosen },
            calibration: max_abs,
        }
    }

    pub fn calibrate<'a>(values: impl IntoIterator<Item = &'a f32>) -> Self {
        let max_abs = values
            .into_iter()
            .fold(0.0f64, |m, &v| if v.is_finite() { m.max((v as f64).abs()) } else { m });
        Self::from_max_abs(max_abs)
    }
}

/// `clamp(round_half_even(x * 2^f), -32768, 32767)`. NaN maps to zero.
pub fn quantize_fixed(x: f64, fmt: FixedPointFormat) -> i16 {
    if x.is_nan() {
        return 0;
    }
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize_fixed(code: i16, fmt: FixedPointFormat) -> f64 {
    code as f64 * fmt.step()
}
