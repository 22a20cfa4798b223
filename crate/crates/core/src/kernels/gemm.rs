//! Reference and blocked GEMM, `C(M,N) = A(M,K) · B(K,N)`.
//!
//! The blocked kernel walks C in `BM×BN` blocks. For each block the K axis is
//! consumed in `BK`-wide chunks: the `BM×BK` slice of A and the `BK×BN` slice
//! of B are packed into contiguous buffers, then every work-item (one C
//! column, `TM` consecutive rows) accumulates its `TM` outputs over the chunk
//! and stores them back into the block accumulator. Edge blocks are clamped.
//!
//! Every output element is accumulated in ascending `k` order, whatever the
//! block parameters or the number of workers, so results are deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KernelError, Matrix};
use crate::tensor::{from_half, quantize_fixed, to_half, ElementKind, QuantizationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl GemmShape {
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        Self { m, n, k }
    }
}

impl std::str::FromStr for GemmShape {
    type Err = String;

    /// `MxNxK`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bad shape `{s}`, expected MxNxK"))?;
        match dims[..] {
            [m, n, k] if m > 0 && n > 0 && k > 0 => Ok(Self { m, n, k }),
            _ => Err(format!("bad shape `{s}`, expected MxNxK with positive dimensions")),
        }
    }
}

/// Block decomposition: `bm×bn` C blocks, `bk`-deep K chunks, `tm` C elements per work-item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmBlockParams {
    pub bm: usize,
    pub bn: usize,
    pub bk: usize,
    pub tm: usize,
}

impl GemmBlockParams {
    /// First layers: large spatial extent, few channels.
    pub const C1: Self = Self { bm: 16, bn: 16, bk: 2, tm: 8 };
    /// Last layers: small spatial extent, deep channels.
    pub const C2: Self = Self { bm: 64, bn: 64, bk: 8, tm: 8 };
    pub const NAIVE: Self = Self { bm: 1, bn: 1, bk: 1, tm: 1 };

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.bm == 0 || self.bn == 0 || self.bk == 0 || self.tm == 0 {
            return Err(KernelError::InvalidParams(format!("block parameters must be >= 1: {self:?}")));
        }
        if self.bm % self.tm != 0 {
            return Err(KernelError::InvalidParams(format!("TM={} does not divide BM={}", self.tm, self.bm)));
        }
        Ok(())
    }
}

impl std::str::FromStr for GemmBlockParams {
    type Err = String;

    /// `BM,BN,BK,TM`, or the named sets `c1` / `c2` / `naive`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => return Ok(Self::C1),
            "c2" => return Ok(Self::C2),
            "naive" => return Ok(Self::NAIVE),
            _ => {}
        }
        let v: Vec<usize> = s
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bad block params `{s}`, expected BM,BN,BK,TM"))?;
        let [bm, bn, bk, tm] = v[..] else {
            return Err(format!("bad block params `{s}`, expected BM,BN,BK,TM"));
        };
        let p = Self { bm, bn, bk, tm };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerRegime {
    C1,
    C2,
}

/// Regime selection: C1 iff spatial extent ≥ `spatial_per_channel` × depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRule {
    pub spatial_per_channel: usize,
    pub c1: GemmBlockParams,
    pub c2: GemmBlockParams,
}

impl Default for RegimeRule {
    fn default() -> Self {
        Self { spatial_per_channel: 64, c1: GemmBlockParams::C1, c2: GemmBlockParams::C2 }
    }
}

impl RegimeRule {
    /// Regime of an activation tensor `H×W×C`.
    pub fn classify(&self, height: usize, width: usize, channels: usize) -> LayerRegime {
        if height * width >= self.spatial_per_channel * channels {
            LayerRegime::C1
        } else {
            LayerRegime::C2
        }
    }

    /// Regime of an im2col GEMM: `N` is the output spatial extent, `K` the unfolded depth.
    pub fn classify_gemm(&self, shape: GemmShape) -> LayerRegime {
        if shape.n >= self.spatial_per_channel * shape.k {
            LayerRegime::C1
        } else {
            LayerRegime::C2
        }
    }

    pub fn params_for(&self, regime: LayerRegime) -> GemmBlockParams {
        match regime {
            LayerRegime::C1 => self.c1,
            LayerRegime::C2 => self.c2,
        }
    }

    pub fn select(&self, shape: GemmShape) -> GemmBlockParams {
        self.params_for(self.classify_gemm(shape))
    }
}

/// Block parameters for `shape` under the default regime rule.
pub fn select_block_params(shape: GemmShape) -> GemmBlockParams {
    RegimeRule::default().select(shape)
}

fn check_dims<T, U>(a: &Matrix<T>, b: &Matrix<U>) -> Result<GemmShape, KernelError>
where
    T: Copy,
    U: Copy,
{
    if a.cols() != b.rows() {
        return Err(KernelError::Dimension(format!(
            "inner dimensions differ: A is {}x{}, B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(GemmShape::new(a.rows(), b.cols(), a.cols()))
}

/// Naive triple loop with f64 accumulation. Oracle only.
pub fn gemm_reference(a: &Matrix, b: &Matrix) -> Result<Matrix<f64>, KernelError> {
    let GemmShape { m, n, k } = check_dims(a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p] as f64;
            let brow = &bd[p * n..(p + 1) * n];
            for (acc, &bv) in row.iter_mut().zip(brow) {
                *acc += av * bv as f64;
            }
        }
    }
    Matrix::new(m, n, c)
}

/// Storage and accumulation behaviour of one numeric path.
trait Lane: Sync {
    type Packed: Copy + Default + Send + Sync;
    type Acc: Copy + Default + Send + Sync;

    fn load_a(&self, i: usize, p: usize) -> Self::Packed;
    fn load_b(&self, p: usize, j: usize) -> Self::Packed;
    fn mac(acc: Self::Acc, a: Self::Packed, b: Self::Packed) -> Self::Acc;
    fn finish(&self, acc: Self::Acc) -> f32;
}

struct F32Lane<'a> {
    a: &'a [f32],
    b: &'a [f32],
    k: usize,
    n: usize,
}

impl Lane for F32Lane<'_> {
    type Packed = f32;
    type Acc = f32;

    #[inline(always)]
    fn load_a(&self, i: usize, p: usize) -> f32 {
        self.a[i * self.k + p]
    }
    #[inline(always)]
    fn load_b(&self, p: usize, j: usize) -> f32 {
        self.b[p * self.n + j]
    }
    #[inline(always)]
    fn mac(acc: f32, a: f32, b: f32) -> f32 {
        acc + a * b
    }
    #[inline(always)]
    fn finish(&self, acc: f32) -> f32 {
        acc
    }
}

/// binary16 storage, widened on load, fp32 accumulation.
struct HalfLane {
    a: Vec<u16>,
    b: Vec<u16>,
    k: usize,
    n: usize,
}

impl Lane for HalfLane {
    type Packed = f32;
    type Acc = f32;

    #[inline(always)]
    fn load_a(&self, i: usize, p: usize) -> f32 {
        from_half(self.a[i * self.k + p])
    }
    #[inline(always)]
    fn load_b(&self, p: usize, j: usize) -> f32 {
        from_half(self.b[p * self.n + j])
    }
    #[inline(always)]
    fn mac(acc: f32, a: f32, b: f32) -> f32 {
        acc + a * b
    }
    #[inline(always)]
    fn finish(&self, acc: f32) -> f32 {
        acc
    }
}

/// Q-format storage with per-matrix scales; exact integer accumulation, one final rescale.
struct FixedLane {
    a: Vec<i16>,
    b: Vec<i16>,
    k: usize,
    n: usize,
    scale: f64,
}

impl Lane for FixedLane {
    type Packed = i16;
    type Acc = i64;

    #[inline(always)]
    fn load_a(&self, i: usize, p: usize) -> i16 {
        self.a[i * self.k + p]
    }
    #[inline(always)]
    fn load_b(&self, p: usize, j: usize) -> i16 {
        self.b[p * self.n + j]
    }
    #[inline(always)]
    fn mac(acc: i64, a: i16, b: i16) -> i64 {
        acc + (a as i32 * b as i32) as i64
    }
    #[inline(always)]
    fn finish(&self, acc: i64) -> f32 {
        (acc as f64 * self.scale) as f32
    }
}

/// Computes one `M × nb` column panel starting at column `j0`.
fn panel<L: Lane>(lane: &L, shape: GemmShape, p: GemmBlockParams, j0: usize) -> Vec<f32> {
    let GemmShape { m, n, k } = shape;
    let nb = p.bn.min(n - j0);
    let bk = p.bk.min(k);
    let mut out = vec![0.0f32; m * nb];
    // k-major packing: as_[kk * bm + r], bs[kk * bn + c]
    let mut as_ = vec![L::Packed::default(); bk * p.bm];
    let mut bs = vec![L::Packed::default(); bk * p.bn];
    let mut cs = vec![L::Acc::default(); p.bm * p.bn];

    for i0 in (0..m).step_by(p.bm) {
        let mb = p.bm.min(m - i0);
        cs.iter_mut().for_each(|v| *v = L::Acc::default());
        for k0 in (0..k).step_by(bk) {
            let kb = bk.min(k - k0);
            for kk in 0..kb {
                for r in 0..mb {
                    as_[kk * p.bm + r] = lane.load_a(i0 + r, k0 + kk);
                }
                for c in 0..nb {
                    bs[kk * p.bn + c] = lane.load_b(k0 + kk, j0 + c);
                }
            }
            // micro-tile of `tm` rows; the inner loop runs along contiguous packed
            // columns, and each output still accumulates in ascending k
            for t0 in (0..mb).step_by(p.tm) {
                let tb = p.tm.min(mb - t0);
                for kk in 0..kb {
                    let brow = &bs[kk * p.bn..kk * p.bn + nb];
                    for r in t0..t0 + tb {
                        let av = as_[kk * p.bm + r];
                        let crow = &mut cs[r * p.bn..r * p.bn + nb];
                        for (cv, &bv) in crow.iter_mut().zip(brow) {
                            *cv = L::mac(*cv, av, bv);
                        }
                    }
                }
            }
        }
        for r in 0..mb {
            for c in 0..nb {
                out[(i0 + r) * nb + c] = lane.finish(cs[r * p.bn + c]);
            }
        }
    }
    out
}

fn run_blocked<L: Lane>(lane: &L, shape: GemmShape, p: GemmBlockParams) -> Vec<f32> {
    let GemmShape { m, n, .. } = shape;
    let panels: Vec<(usize, Vec<f32>)> = (0..n.div_ceil(p.bn))
        .into_par_iter()
        .map(|pj| {
            let j0 = pj * p.bn;
            (j0, panel(lane, shape, p, j0))
        })
        .collect();
    let mut c = vec![0.0f32; m * n];
    for (j0, data) in panels {
        let nb = p.bn.min(n - j0);
        for i in 0..m {
            c[i * n + j0..i * n + j0 + nb].copy_from_slice(&data[i * nb..(i + 1) * nb]);
        }
    }
    c
}

/// Blocked GEMM in the requested numeric format.
///
/// * `F32`: fp32 operands and accumulation.
/// * `F16`: operands stored as binary16, fp32 accumulation.
/// * `Q16`: operands stored as 16-bit fixed point with max-abs calibrated
///   scales; exact integer accumulation and a single rescale per output.
pub fn gemm_blocked(a: &Matrix, b: &Matrix, params: GemmBlockParams, format: ElementKind) -> Result<Matrix, KernelError> {
    params.validate()?;
    let shape = check_dims(a, b)?;
    let GemmShape { m, n, k } = shape;
    let data = match format {
        ElementKind::F32 => run_blocked(&F32Lane { a: a.data(), b: b.data(), k, n }, shape, params),
        ElementKind::F16 => {
            let lane = HalfLane {
                a: a.data().iter().map(|&v| to_half(v)).collect(),
                b: b.data().iter().map(|&v| to_half(v)).collect(),
                k,
                n,
            };
            run_blocked(&lane, shape, params)
        }
        ElementKind::Q16 => {
            let qa = QuantizationSpec::calibrate(a.data()).format;
            let qb = QuantizationSpec::calibrate(b.data()).format;
            let lane = FixedLane {
                a: a.data().iter().map(|&v| quantize_fixed(v as f64, qa)).collect(),
                b: b.data().iter().map(|&v| quantize_fixed(v as f64, qb)).collect(),
                k,
                n,
                scale: qa.step() * qb.step(),
            };
            run_blocked(&lane, shape, params)
        }
    };
    Matrix::new(m, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0)).unwrap()
    }

    /// Plain dot products, written independently of both kernels.
    fn dot_oracle(a: &Matrix, b: &Matrix, i: usize, j: usize) -> f64 {
        (0..a.cols()).map(|p| a.get(i, p) as f64 * b.get(p, j) as f64).sum()
    }

    #[test]
    fn identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(5, 4, &mut rng);
        let c = gemm_reference(&a, &Matrix::identity(4).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                assert_eq!(c.get(i, j), a.get(i, j) as f64);
            }
        }
        let s = gemm_reference(&Matrix::new(1, 1, vec![3.0]).unwrap(), &Matrix::new(1, 1, vec![-2.5]).unwrap()).unwrap();
        assert_eq!(s.data(), &[-7.5]);
    }

    #[test]
    fn reference_matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(7, 5, &mut rng), random(5, 3, &mut rng));
        let c = gemm_reference(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                assert!((c.get(i, j) - dot_oracle(&a, &b, i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(gemm_reference(&a, &a).is_err());
        assert!(gemm_blocked(&a, &a, GemmBlockParams::C1, ElementKind::F32).is_err());
    }

    #[test]
    fn invalid_params() {
        let a = Matrix::identity(4).unwrap();
        let bad = GemmBlockParams { bm: 6, bn: 4, bk: 2, tm: 4 };
        assert!(matches!(gemm_blocked(&a, &a, bad, ElementKind::F32), Err(KernelError::InvalidParams(_))));
        assert!(GemmBlockParams { bm: 0, ..GemmBlockParams::C1 }.validate().is_err());
    }

    #[test]
    fn unit_blocks_equal_sequential_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random(9, 13, &mut rng), random(13, 6, &mut rng));
        let c = gemm_blocked(&a, &b, GemmBlockParams::NAIVE, ElementKind::F32).unwrap();
        for i in 0..9 {
            for j in 0..6 {
                let mut s = 0.0f32;
                for p in 0..13 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert_eq!(c.get(i, j), s);
            }
        }
    }

    #[test]
    fn regime_selection() {
        assert_eq!(select_block_params(GemmShape::new(16, 409_600, 27)), GemmBlockParams::C1);
        assert_eq!(select_block_params(GemmShape::new(1024, 400, 4608)), GemmBlockParams::C2);
        assert_eq!(select_block_params(GemmShape::new(64, 64, 64)), GemmBlockParams::C2);
        let rule = RegimeRule::default();
        assert_eq!(rule.classify(640, 640, 3), LayerRegime::C1);
        assert_eq!(rule.classify(20, 20, 512), LayerRegime::C2);
        let custom = RegimeRule { spatial_per_channel: 1, ..rule };
        assert_eq!(custom.select(GemmShape::new(64, 64, 64)), GemmBlockParams::C1);
    }

    #[test]
    fn parse_helpers() {
        assert_eq!("16x409600x27".parse::<GemmShape>().unwrap(), GemmShape::new(16, 409_600, 27));
        assert!("16x0x27".parse::<GemmShape>().is_err());
        assert_eq!("c2".parse::<GemmBlockParams>().unwrap(), GemmBlockParams::C2);
        assert_eq!("32,16,4,8".parse::<GemmBlockParams>().unwrap(), GemmBlockParams { bm: 32, bn: 16, bk: 4, tm: 8 });
        assert!("32,16,4,5".parse::<GemmBlockParams>().is_err());
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random(70, 90, &mut rng), random(90, 130, &mut rng));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| gemm_blocked(&a, &b, GemmBlockParams::C1, ElementKind::F32).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn half_path_close_for_positive_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Matrix::from_fn(20, 40, |_, _| rng.random_range(0.5f32..1.5)).unwrap();
        let b = Matrix::from_fn(40, 30, |_, _| rng.random_range(0.5f32..1.5)).unwrap();
        let c = gemm_blocked(&a, &b, GemmBlockParams::C1, ElementKind::F16).unwrap();
        let r = gemm_reference(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(r.data()) {
            assert!(((*x as f64 - y) / y).abs() <= (-10f64).exp2());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn blocked_matches_reference(
            m in 1usize..48, n in 1usize..48, k in 1usize..48,
            bm_t in 1usize..5, tm in 1usize..5, bn in 1usize..20, bk in 1usize..10, seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random(m, k, &mut rng), random(k, n, &mut rng));
            let params = GemmBlockParams { bm: bm_t * tm, bn, bk, tm };
            let c = gemm_blocked(&a, &b, params, ElementKind::F32).unwrap();
            let r = gemm_reference(&a, &b).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let scale: f64 = (0..k).map(|p| (a.get(i, p) as f64 * b.get(p, j) as f64).abs()).sum();
                    prop_assert!((c.get(i, j) as f64 - r.get(i, j)).abs() <= 1e-4 * scale.max(f64::MIN_POSITIVE));
                }
            }
        }
    }
}
