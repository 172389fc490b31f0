//! Dense tensors with explicit element-format control.
//!
//! All values live in `f32` or `f64` arrays. The low-precision formats
//! (BF16, FP16) are storage formats: arithmetic runs in FP32/FP64 and the
//! result of every operation is re-rounded so that each element stays a
//! fixed point of the format's round-to-nearest-even function. Reductions
//! accumulate in ascending index order, which makes every operation
//! bitwise deterministic.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element format of a tensor.
///
/// BF16 (8 exponent bits, 7 explicit mantissa bits) and FP16 (5 exponent
/// bits, 10 explicit mantissa bits) are emulated: values are rounded to the
/// format's grid but stored in `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumFormat {
    Fp64,
    Fp32,
    Bf16,
    Fp16,
}

impl NumFormat {
    pub fn tag(self) -> u8 {
        match self {
            NumFormat::Fp64 => 0,
            NumFormat::Fp32 => 1,
            NumFormat::Bf16 => 2,
            NumFormat::Fp16 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(NumFormat::Fp64),
            1 => Ok(NumFormat::Fp32),
            2 => Ok(NumFormat::Bf16),
            3 => Ok(NumFormat::Fp16),
            t => Err(Error::Protocol(format!("unknown format tag {t}"))),
        }
    }

    /// Wider formats compare greater.
    fn precision_rank(self) -> u8 {
        match self {
            NumFormat::Fp16 => 0,
            NumFormat::Bf16 => 1,
            NumFormat::Fp32 => 2,
            NumFormat::Fp64 => 3,
        }
    }

    pub fn narrower(a: NumFormat, b: NumFormat) -> NumFormat {
        if a.precision_rank() <= b.precision_rank() {
            a
        } else {
            b
        }
    }
}

/// Round an `f64` into `format`'s value grid with round-to-nearest-even.
///
/// Overflow saturates to the correctly signed infinity, NaN and infinities
/// propagate, and subnormals of the target format are kept (no flush to
/// zero). The result is returned as `f64` but is exactly representable in
/// the target format.
pub fn round_f64(x: f64, format: NumFormat) -> f64 {
    match format {
        NumFormat::Fp64 => x,
        NumFormat::Fp32 => x as f32 as f64,
        NumFormat::Bf16 => round_rne(x, 8, -126, 127),
        NumFormat::Fp16 => round_rne(x, 11, -14, 15),
    }
}

/// `f32` entry point for [`round_f64`]; exact because every BF16/FP16
/// value is representable in `f32`.
pub fn round_f32(x: f32, format: NumFormat) -> f32 {
    match format {
        NumFormat::Fp64 | NumFormat::Fp32 => x,
        _ => round_f64(x as f64, format) as f32,
    }
}

/// Round to a binary format with `p` significand bits (implicit bit
/// included) and normal exponent range [emin, emax].
fn round_rne(x: f64, p: i32, emin: i32, emax: i32) -> f64 {
    if x.is_nan() || x.is_infinite() || x == 0.0 {
        return x;
    }
    // RNE overflows to infinity at max_finite + ulp(emax)/2 and above.
    let max_finite = (exp2i(p) - 1.0) * exp2i(emax - p + 1);
    let overflow_at = max_finite + exp2i(emax - p);
    if x.abs() >= overflow_at {
        return f64::INFINITY.copysign(x);
    }
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // f64 subnormals sit far below the half-quantum of any emulated
        // format, so they round to a signed zero.
        return 0.0f64.copysign(x);
    }
    let e = biased - 1023;
    let quantum = exp2i(e.max(emin) - (p - 1));
    // x / quantum is exact (power-of-two scaling within range), so the
    // only rounding happens in round_ties_even.
    (x / quantum).round_ties_even() * quantum
}

/// 2^e for exponents representable as normal f64.
fn exp2i(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Scalar element type the numeric kernels are generic over.
pub trait Elem:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Natural storage format of this scalar type.
    const FORMAT: NumFormat;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Round into `format`'s grid (identity when `format` is not narrower).
    fn round_format(self, format: NumFormat) -> Self;
}

impl Elem for f32 {
    const FORMAT: NumFormat = NumFormat::Fp32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn round_format(self, format: NumFormat) -> Self {
        round_f32(self, format)
    }
}

impl Elem for f64 {
    const FORMAT: NumFormat = NumFormat::Fp64;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn round_format(self, format: NumFormat) -> Self {
        round_f64(self, format)
    }
}

/// Sequential dot product in ascending index order.
pub(crate) fn dot<T: Elem>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
enum Data {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Dense numeric array tagged with its element format.
///
/// `Fp64` tensors store `f64`, every other format stores `f32`. Tensors
/// are immutable after construction; operations return new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    format: NumFormat,
    data: Data,
}

impl Tensor {
    /// Build an `f32`-backed tensor, rounding every element into `format`.
    pub fn from_f32(shape: Vec<usize>, mut data: Vec<f32>, format: NumFormat) -> Result<Tensor> {
        if format == NumFormat::Fp64 {
            return Err(Error::Domain(
                "FP64 tensors must be built with from_f64".into(),
            ));
        }
        check_len(&shape, data.len())?;
        if matches!(format, NumFormat::Bf16 | NumFormat::Fp16) {
            for v in &mut data {
                *v = round_f32(*v, format);
            }
        }
        Ok(Tensor {
            shape,
            format,
            data: Data::F32(data),
        })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_len(&shape, data.len())?;
        Ok(Tensor {
            shape,
            format: NumFormat::Fp64,
            data: Data::F64(data),
        })
    }

    pub fn zeros(shape: Vec<usize>, format: NumFormat) -> Tensor {
        let n = shape.iter().product();
        match format {
            NumFormat::Fp64 => Tensor {
                shape,
                format,
                data: Data::F64(vec![0.0; n]),
            },
            _ => Tensor {
                shape,
                format,
                data: Data::F32(vec![0.0; n]),
            },
        }
    }

    pub fn scalar_f32(v: f32, format: NumFormat) -> Tensor {
        Tensor::from_f32(vec![1], vec![v], format).expect("scalar shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn format(&self) -> NumFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Borrow the `f32` storage. Panics on an FP64 tensor.
    pub fn as_f32(&self) -> &[f32] {
        match &self.data {
            Data::F32(v) => v,
            Data::F64(_) => panic!("as_f32 called on an FP64 tensor"),
        }
    }

    /// Borrow the `f64` storage. Panics on an f32-backed tensor.
    pub fn as_f64(&self) -> &[f64] {
        match &self.data {
            Data::F64(v) => v,
            Data::F32(_) => panic!("as_f64 called on an f32-backed tensor"),
        }
    }

    /// Widened copy of the elements regardless of storage.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::F64(v) => v.clone(),
        }
    }

    /// Re-round into `format`, switching storage class when needed.
    pub fn round_to(&self, format: NumFormat) -> Tensor {
        match format {
            NumFormat::Fp64 => Tensor {
                shape: self.shape.clone(),
                format,
                data: Data::F64(self.to_f64_vec()),
            },
            _ => {
                let data = match &self.data {
                    Data::F32(v) => v.iter().map(|&x| round_f32(x, format)).collect(),
                    Data::F64(v) => v.iter().map(|&x| round_f64(x, format) as f32).collect(),
                };
                Tensor {
                    shape: self.shape.clone(),
                    format,
                    data: Data::F32(data),
                }
            }
        }
    }

    /// True iff any element is NaN or infinite.
    pub fn has_nonfinite(&self) -> bool {
        match &self.data {
            Data::F32(v) => v.iter().any(|x| !x.is_finite()),
            Data::F64(v) => v.iter().any(|x| !x.is_finite()),
        }
    }

    /// `self + alpha * x`, elementwise, in `self`'s format.
    pub fn axpy(&self, alpha: f64, x: &Tensor) -> Result<Tensor> {
        if self.shape != x.shape {
            return Err(Error::Shape(format!(
                "axpy operands {:?} vs {:?}",
                self.shape, x.shape
            )));
        }
        match (&self.data, &x.data) {
            (Data::F32(y), Data::F32(xs)) => {
                let a = alpha as f32;
                let out: Vec<f32> = y
                    .iter()
                    .zip(xs.iter())
                    .map(|(&yv, &xv)| round_f32(yv + a * xv, self.format))
                    .collect();
                Ok(Tensor {
                    shape: self.shape.clone(),
                    format: self.format,
                    data: Data::F32(out),
                })
            }
            (Data::F64(y), Data::F64(xs)) => {
                let out: Vec<f64> = y
                    .iter()
                    .zip(xs.iter())
                    .map(|(&yv, &xv)| yv + alpha * xv)
                    .collect();
                Ok(Tensor {
                    shape: self.shape.clone(),
                    format: self.format,
                    data: Data::F64(out),
                })
            }
            _ => Err(Error::Domain(
                "axpy operands must share a storage class".into(),
            )),
        }
    }

    /// Matrix product of 2-D tensors with the dot products accumulated in
    /// `accum` (FP32 or FP64), ascending index order, then rounded to the
    /// output format (the narrower of the operand formats).
    pub fn matmul(&self, other: &Tensor, accum: NumFormat) -> Result<Tensor> {
        if !matches!(accum, NumFormat::Fp32 | NumFormat::Fp64) {
            return Err(Error::Domain(
                "accumulation format must be FP32 or FP64".into(),
            ));
        }
        let (m, k) = as_2d(&self.shape)?;
        let (k2, n) = as_2d(&other.shape)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dimensions {k} vs {k2}")));
        }
        let out_format = NumFormat::narrower(self.format, other.format);
        match (&self.data, &other.data) {
            (Data::F32(a), Data::F32(b)) => {
                let mut out = vec![0.0f32; m * n];
                match accum {
                    NumFormat::Fp32 => {
                        for i in 0..m {
                            let row = &a[i * k..(i + 1) * k];
                            for j in 0..n {
                                let mut acc = 0.0f32;
                                for (kk, &av) in row.iter().enumerate() {
                                    acc += av * b[kk * n + j];
                                }
                                out[i * n + j] = round_f32(acc, out_format);
                            }
                        }
                    }
                    _ => {
                        for i in 0..m {
                            let row = &a[i * k..(i + 1) * k];
                            for j in 0..n {
                                let mut acc = 0.0f64;
                                for (kk, &av) in row.iter().enumerate() {
                                    acc += av as f64 * b[kk * n + j] as f64;
                                }
                                out[i * n + j] = round_f32(acc as f32, out_format);
                            }
                        }
                    }
                }
                Ok(Tensor {
                    shape: vec![m, n],
                    format: out_format,
                    data: Data::F32(out),
                })
            }
            (Data::F64(a), Data::F64(b)) => {
                if accum != NumFormat::Fp64 {
                    return Err(Error::Domain(
                        "FP64 operands require FP64 accumulation".into(),
                    ));
                }
                let mut out = vec![0.0f64; m * n];
                for i in 0..m {
                    let row = &a[i * k..(i + 1) * k];
                    for j in 0..n {
                        let mut acc = 0.0f64;
                        for (kk, &av) in row.iter().enumerate() {
                            acc += av * b[kk * n + j];
                        }
                        out[i * n + j] = acc;
                    }
                }
                Ok(Tensor {
                    shape: vec![m, n],
                    format: NumFormat::Fp64,
                    data: Data::F64(out),
                })
            }
            _ => Err(Error::Domain(
                "matmul operands must share a storage class".into(),
            )),
        }
    }
}

fn as_2d(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::Shape(format!("expected a 2-D shape, got {other:?}"))),
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} implies {expected} elements, got {len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent BF16 oracle: round-to-nearest-even of the high 16 bits
    /// of the f32 pattern.
    fn bf16_bits_oracle(x: f32) -> f32 {
        if x.is_nan() {
            return x;
        }
        let bits = x.to_bits();
        let lsb = (bits >> 16) & 1;
        f32::from_bits(bits.wrapping_add(0x7fff + lsb) & 0xffff_0000)
    }

    #[test]
    fn matmul_small_integers() {
        let a = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], NumFormat::Fp32).unwrap();
        let b = Tensor::from_f32(vec![2, 1], vec![1.0, 1.0], NumFormat::Fp32).unwrap();
        let c = a.matmul(&b, NumFormat::Fp32).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.as_f32(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_f32(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], NumFormat::Fp32).unwrap();
        let x = Tensor::from_f32(
            vec![2, 3],
            vec![0.5, -1.25, 3.0, 7.5, 0.0, -2.0],
            NumFormat::Fp32,
        )
        .unwrap();
        let y = eye.matmul(&x, NumFormat::Fp32).unwrap();
        assert_eq!(y.as_f32(), x.as_f32());
    }

    #[test]
    fn matmul_matches_scalar_loop_oracle() {
        let mut state = 0x12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let a: Vec<f32> = (0..64).map(|_| next()).collect();
        let b: Vec<f32> = (0..64).map(|_| next()).collect();
        let ta = Tensor::from_f32(vec![8, 8], a.clone(), NumFormat::Fp32).unwrap();
        let tb = Tensor::from_f32(vec![8, 8], b.clone(), NumFormat::Fp32).unwrap();
        let c = ta.matmul(&tb, NumFormat::Fp32).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0f32;
                for k in 0..8 {
                    acc += a[i * 8 + k] * b[k * 8 + j];
                }
                assert_eq!(c.as_f32()[i * 8 + j].to_bits(), acc.to_bits());
            }
        }
    }

    #[test]
    fn matmul_is_bitwise_deterministic() {
        let a = Tensor::from_f32(
            vec![3, 3],
            (0..9).map(|i| (i as f32).sin()).collect(),
            NumFormat::Fp32,
        )
        .unwrap();
        let b = Tensor::from_f32(
            vec![3, 3],
            (0..9).map(|i| (i as f32).cos()).collect(),
            NumFormat::Fp32,
        )
        .unwrap();
        let c1 = a.matmul(&b, NumFormat::Fp32).unwrap();
        let c2 = a.matmul(&b, NumFormat::Fp32).unwrap();
        let bits1: Vec<u32> = c1.as_f32().iter().map(|x| x.to_bits()).collect();
        let bits2: Vec<u32> = c2.as_f32().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits1, bits2);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3], NumFormat::Fp32);
        let b = Tensor::zeros(vec![2, 2], NumFormat::Fp32);
        assert!(matches!(
            a.matmul(&b, NumFormat::Fp32),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn round_exactly_representable() {
        assert_eq!(round_f32(1.0, NumFormat::Bf16), 1.0);
        assert_eq!(round_f32(-2.5, NumFormat::Fp16), -2.5);
    }

    #[test]
    fn round_bf16_tie_to_even() {
        // 1 + 2^-8 is halfway between 1 and 1 + 2^-7; even significand wins.
        let x = 1.0f32 + (2.0f32).powi(-8);
        assert_eq!(round_f32(x, NumFormat::Bf16), 1.0);
        // Just above the midpoint rounds up.
        let x = 1.0f32 + (2.0f32).powi(-8) + (2.0f32).powi(-20);
        assert_eq!(round_f32(x, NumFormat::Bf16), 1.0 + (2.0f32).powi(-7));
    }

    #[test]
    fn round_bf16_matches_bit_oracle() {
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..200_000 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let x = f32::from_bits((state >> 32) as u32);
            if x.is_nan() {
                continue;
            }
            let got = round_f32(x, NumFormat::Bf16);
            let want = bf16_bits_oracle(x);
            assert_eq!(got.to_bits(), want.to_bits(), "x = {x:e}");
        }
    }

    #[test]
    fn round_saturates_and_propagates() {
        assert_eq!(round_f32(f32::MAX, NumFormat::Fp16), f32::INFINITY);
        assert_eq!(round_f32(-f32::MAX, NumFormat::Fp16), f32::NEG_INFINITY);
        assert_eq!(round_f32(f32::INFINITY, NumFormat::Bf16), f32::INFINITY);
        assert!(round_f32(f32::NAN, NumFormat::Fp16).is_nan());
        // Largest FP16 value survives, the first value past the overflow
        // midpoint does not.
        assert_eq!(round_f32(65504.0, NumFormat::Fp16), 65504.0);
        assert_eq!(round_f32(65520.0, NumFormat::Fp16), f32::INFINITY);
        assert_eq!(round_f32(65519.99, NumFormat::Fp16), 65504.0);
    }

    #[test]
    fn round_keeps_fp16_subnormals() {
        let tiny = (2.0f32).powi(-24); // smallest FP16 subnormal
        assert_eq!(round_f32(tiny, NumFormat::Fp16), tiny);
        assert_eq!(round_f32(tiny * 0.4, NumFormat::Fp16), 0.0);
        assert_eq!(round_f32(tiny * 0.6, NumFormat::Fp16), tiny);
    }

    #[test]
    fn has_nonfinite_cases() {
        let t = Tensor::from_f32(vec![2], vec![1.0, 2.0], NumFormat::Fp32).unwrap();
        assert!(!t.has_nonfinite());
        let t = Tensor::from_f32(vec![2], vec![1.0, f32::INFINITY], NumFormat::Fp32).unwrap();
        assert!(t.has_nonfinite());
        // Overflow constructed the way a runaway loss scale would: scaling
        // by 2^100 pushes FP16-formatted values past 65504.
        let scale = (2.0f64).powi(100) as f32;
        let g =
            Tensor::from_f32(vec![2], vec![1e-3 * scale, 2e-3 * scale], NumFormat::Fp16).unwrap();
        assert!(g.has_nonfinite());
    }

    #[test]
    fn axpy_cases() {
        let y = Tensor::from_f32(vec![2], vec![1.0, 1.0], NumFormat::Fp32).unwrap();
        let x = Tensor::from_f32(vec![2], vec![9.0, 9.0], NumFormat::Fp32).unwrap();
        assert_eq!(y.axpy(0.0, &x).unwrap().as_f32(), &[1.0, 1.0]);
        let y = Tensor::from_f32(vec![2], vec![1.0, 2.0], NumFormat::Fp32).unwrap();
        let x = Tensor::from_f32(vec![2], vec![1.0, 1.0], NumFormat::Fp32).unwrap();
        assert_eq!(y.axpy(1.0, &x).unwrap().as_f32(), &[2.0, 3.0]);
        let bad = Tensor::zeros(vec![3], NumFormat::Fp32);
        assert!(matches!(y.axpy(1.0, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn axpy_tracks_f64_oracle() {
        let mut state = 7u64;
        let mut next = || {
            state = state
                .wrapping_mul(2862933555777941757)
                .wrapping_add(3037000493);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let y: Vec<f32> = (0..1024).map(|_| next()).collect();
        let x: Vec<f32> = (0..1024).map(|_| next()).collect();
        let alpha = 0.37f64;
        let ty = Tensor::from_f32(vec![1024], y.clone(), NumFormat::Fp32).unwrap();
        let tx = Tensor::from_f32(vec![1024], x.clone(), NumFormat::Fp32).unwrap();
        let out = ty.axpy(alpha, &tx).unwrap();
        for i in 0..1024 {
            let oracle = y[i] as f64 + alpha * x[i] as f64;
            let got = out.as_f32()[i] as f64;
            // Relative to the operand scale; the result itself can cancel
            // to zero.
            let denom = (y[i].abs() as f64)
                .max((alpha * x[i] as f64).abs())
                .max(1e-9);
            assert!((got - oracle).abs() / denom < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn rounding_idempotent(x in proptest::num::f32::ANY, tag in 0u8..2) {
            let f = if tag == 0 { NumFormat::Bf16 } else { NumFormat::Fp16 };
            let once = round_f32(x, f);
            let twice = round_f32(once, f);
            prop_assert_eq!(once.to_bits(), twice.to_bits());
        }

        #[test]
        fn rounding_monotone(a in -1e30f32..1e30, b in -1e30f32..1e30, tag in 0u8..2) {
            let f = if tag == 0 { NumFormat::Bf16 } else { NumFormat::Fp16 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(round_f32(lo, f) <= round_f32(hi, f));
        }

        #[test]
        fn bf16_relative_error_bound(x in -1e30f32..1e30) {
            prop_assume!(x != 0.0 && x.abs() >= f32::MIN_POSITIVE);
            let r = round_f32(x, NumFormat::Bf16);
            prop_assert!((x - r).abs() as f64 <= (2.0f64).powi(-8) * x.abs() as f64);
        }
    }
}
