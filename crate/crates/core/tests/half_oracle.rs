//! binary16 conversion checked against a table-driven oracle: every finite
//! half is decoded independently, then f32 inputs are rounded by nearest
//! search with ties to the even code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiledet::tensor::{from_half, to_half};

fn decode(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = ((h >> 10) & 0x1f) as i32;
    let m = (h & 0x3ff) as f64;
    match e {
        0 => sign * m * 2f64.powi(-24),
        31 if m == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + m / 1024.0) * 2f64.powi(e - 15),
    }
}

/// Non-negative finite halves in increasing order; codes 0..=0x7bff are already sorted.
fn table() -> Vec<(u16, f64)> {
    (0u16..=0x7bff).map(|h| (h, decode(h))).collect()
}

fn oracle(x: f32, table: &[(u16, f64)]) -> u16 {
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = (x as f64).abs();
    // halfway between 65504 and 2^16; 65504 has an odd code, so the tie overflows
    if a >= 65520.0 {
        return sign | 0x7c00;
    }
    let i = table.partition_point(|&(_, v)| v < a);
    if i == 0 {
        return sign | table[0].0;
    }
    let (lo, hi) = (table[i - 1], table[i.min(table.len() - 1)]);
    let code = if (a - lo.1) < (hi.1 - a) {
        lo.0
    } else if (a - lo.1) > (hi.1 - a) {
        hi.0
    } else if lo.0 % 2 == 0 {
        lo.0
    } else {
        hi.0
    };
    sign | code
}

#[test]
fn decoding_matches_independent_formula() {
    for h in 0..=u16::MAX {
        let want = decode(h);
        let got = from_half(h) as f64;
        if want.is_nan() {
            assert!(got.is_nan(), "{h:#06x}");
        } else {
            assert_eq!(got.to_bits(), want.to_bits(), "{h:#06x}");
        }
    }
}

#[test]
fn million_random_patterns_round_like_the_oracle() {
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..1_000_000 {
        let x = f32::from_bits(rng.random());
        let got = to_half(x);
        if x.is_nan() {
            assert!(got & 0x7c00 == 0x7c00 && got & 0x3ff != 0, "{x:e} -> {got:#06x}");
            continue;
        }
        assert_eq!(got, oracle(x, &t), "{x:e} ({:#010x})", x.to_bits());
    }
}

#[test]
fn values_in_half_range_round_like_the_oracle() {
    // random patterns mostly land outside the half range; sample inside it too
    let t = table();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1_000_000 {
        let x = rng.random_range(-70000.0f32..70000.0) * 2f32.powi(-rng.random_range(0..40));
        assert_eq!(to_half(x), oracle(x, &t), "{x:e}");
    }
}

#[test]
fn midpoints_and_their_neighbours() {
    let t = table();
    for w in t.windows(2) {
        let mid = ((w[0].1 + w[1].1) / 2.0) as f32;
        for x in [mid, f32::from_bits(mid.to_bits() - 1), f32::from_bits(mid.to_bits() + 1)] {
            assert_eq!(to_half(x), oracle(x, &t), "{x:e}");
            assert_eq!(to_half(-x), oracle(-x, &t), "{:e}", -x);
        }
    }
}
