//! Software IEEE 754 binary16 conversion.
//!
//! Round-to-nearest-even on narrowing, overflow to infinity, subnormals kept,
//! NaNs stay quiet NaNs with the top payload bits preserved.

/// Narrow an `f32` to binary16 bits.
pub fn to_half(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        if man == 0 {
            return sign | 0x7c00;
        }
        return sign | 0x7e00 | (man >> 13) as u16;
    }

    let e = exp - 127;
    if e > 15 {
        return sign | 0x7c00;
    }
    if e >= -14 {
        let half_exp = ((e + 15) as u32) << 10;
        let kept = man >> 13;
        let rest = man & 0x1fff;
        let mut out = half_exp | kept;
        if rest > 0x1000 || (rest == 0x1000 && kept & 1 == 1) {
            // a carry out of the mantissa bumps the exponent, up to infinity
            out += 1;
        }
        return sign | out as u16;
    }
    if e < -25 {
        return sign;
    }

    // Subnormal result: value = full * 2^(e-23), unit 2^-24.
    let full = man | 0x0080_0000;
    let shift = (-e - 1) as u32;
    let kept = full >> shift;
    let rest = full & ((1 << shift) - 1);
    let halfway = 1 << (shift - 1);
    let mut out = kept;
    if rest > halfway || (rest == halfway && kept & 1 == 1) {
        out += 1;
    }
    sign | out as u16
}

/// Widen binary16 bits to `f32` (exact).
pub fn from_half(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    match exp {
        0 if man == 0 => f32::from_bits(sign),
        0 => {
            let v = man as f32 * (-24f32).exp2();
            if sign != 0 {
                -v
            } else {
                v
            }
        }
        0x1f => f32::from_bits(sign | 0x7f80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}
