//! Emulated floating-point formats and mixed-precision arithmetic kernels.
//!
//! Every value is carried in an `f64` that is exactly representable in its
//! target format. Each arithmetic step is computed in `f64` and rounded once
//! into the target format; since `f64` has more than `2p + 2` significand
//! bits for both `f32` (p = 24) and `f16` (p = 11), the single `f64` operation
//! followed by the rounding is the correctly rounded result in that format.
//!
//! Summation is always sequential in ascending index order so that results
//! are reproducible bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OfrrError, Result};
use crate::matrix::DenseMatrix;

/// An IEEE-754 binary format. Variants are ordered by width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpFormat {
    F16,
    F32,
    F64,
}

const TWO_POW_24: f64 = 16_777_216.0;
const F16_MIN_NORMAL: f64 = 6.103_515_625e-5; // 2^-14
const F16_OVERFLOW: f64 = 65520.0; // max finite + half an ulp; ties go to the (overflowing) even neighbour

impl FpFormat {
    /// Machine epsilon (gap between 1 and the next representable value).
    pub const fn eps(self) -> f64 {
        match self {
            FpFormat::F16 => 9.765_625e-4,
            FpFormat::F32 => 1.192_092_895_507_812_5e-7,
            FpFormat::F64 => f64::EPSILON,
        }
    }

    /// Largest finite value.
    pub const fn max_finite(self) -> f64 {
        match self {
            FpFormat::F16 => 65504.0,
            FpFormat::F32 => f32::MAX as f64,
            FpFormat::F64 => f64::MAX,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            FpFormat::F16 => "f16",
            FpFormat::F32 => "f32",
            FpFormat::F64 => "f64",
        }
    }

    /// Round `x` to the nearest value of this format, ties to even.
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            FpFormat::F16 => round_f16(x),
            FpFormat::F32 => round_f32(x),
            FpFormat::F64 => x,
        }
    }

    pub fn is_representable(self, x: f64) -> bool {
        let r = self.round(x);
        r == x || (r.is_nan() && x.is_nan())
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FpFormat {
    type Err = OfrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f16" | "fp16" | "half" => Ok(FpFormat::F16),
            "f32" | "fp32" | "single" => Ok(FpFormat::F32),
            "f64" | "fp64" | "double" => Ok(FpFormat::F64),
            other => Err(OfrrError::InvalidPolicy(format!(
                "unknown format `{other}`"
            ))),
        }
    }
}

/// Round to nearest-even into `fmt`. Overflow goes to infinity; subnormals
/// are kept; NaN passes through.
pub fn round_to(x: f64, fmt: FpFormat) -> f64 {
    fmt.round(x)
}

#[inline]
fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[inline]
fn round_f16(x: f64) -> f64 {
    let a = x.abs();
    if x.is_nan() {
        return x;
    }
    if a >= F16_OVERFLOW {
        return f64::INFINITY.copysign(x);
    }
    if a < F16_MIN_NORMAL {
        // subnormal range: fixed quantum 2^-24
        return (x * TWO_POW_24).round_ties_even() / TWO_POW_24;
    }
    // normal range: keep 10 of the 52 fraction bits
    const DROP: u32 = 42;
    const MASK: u64 = (1 << DROP) - 1;
    const HALF: u64 = 1 << (DROP - 1);
    let bits = x.to_bits();
    let rem = bits & MASK;
    let mut kept = bits & !MASK;
    if rem > HALF || (rem == HALF && (kept >> DROP) & 1 == 1) {
        // a carry out of the fraction bumps the exponent, which is the right answer
        kept += 1 << DROP;
    }
    f64::from_bits(kept)
}

/// Static rounding used to monomorphize the hot kernels.
pub(crate) trait Rounding {
    fn round(x: f64) -> f64;
}

pub(crate) struct R16;
pub(crate) struct R32;
pub(crate) struct R64;

impl Rounding for R16 {
    #[inline(always)]
    fn round(x: f64) -> f64 {
        round_f16(x)
    }
}

impl Rounding for R32 {
    #[inline(always)]
    fn round(x: f64) -> f64 {
        round_f32(x)
    }
}

impl Rounding for R64 {
    #[inline(always)]
    fn round(x: f64) -> f64 {
        x
    }
}

/// Expands `$f::<C, A>(args)` for the policy's compute/accumulate formats.
macro_rules! dispatch_rounding {
    ($policy:expr, $f:ident ( $($arg:expr),* $(,)? )) => {{
        use $crate::precision::{FpFormat as __F, R16, R32, R64};
        match ($policy.compute, $policy.accumulate) {
            (__F::F16, __F::F16) => $f::<R16, R16>($($arg),*),
            (__F::F16, __F::F32) => $f::<R16, R32>($($arg),*),
            (__F::F16, __F::F64) => $f::<R16, R64>($($arg),*),
            (__F::F32, __F::F32) => $f::<R32, R32>($($arg),*),
            (__F::F32, __F::F64) => $f::<R32, R64>($($arg),*),
            (__F::F64, _) => $f::<R64, R64>($($arg),*),
            (c, a) => unreachable!("accumulate {a} narrower than compute {c}"),
        }
    }};
}

/// Storage / compute / accumulate precision triple plus the column-drop
/// tolerance multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    pub storage: FpFormat,
    pub compute: FpFormat,
    pub accumulate: FpFormat,
    pub drop_tol_factor: f64,
}

impl PrecisionPolicy {
    pub fn new(storage: FpFormat, compute: FpFormat, accumulate: FpFormat) -> Result<Self> {
        if accumulate < compute || compute < storage {
            return Err(OfrrError::InvalidPolicy(format!(
                "need storage <= compute <= accumulate, got {storage}/{compute}/{accumulate}"
            )));
        }
        Ok(PrecisionPolicy {
            storage,
            compute,
            accumulate,
            drop_tol_factor: 1.0,
        })
    }

    /// Pure half precision: every intermediate is rounded to `f16`.
    pub const fn native_half() -> Self {
        Self::triple(FpFormat::F16, FpFormat::F16, FpFormat::F16)
    }

    /// Half-precision storage and products with single-precision accumulation.
    pub const fn mixed_half() -> Self {
        Self::triple(FpFormat::F16, FpFormat::F16, FpFormat::F32)
    }

    pub const fn full(fmt: FpFormat) -> Self {
        Self::triple(fmt, fmt, fmt)
    }

    const fn triple(storage: FpFormat, compute: FpFormat, accumulate: FpFormat) -> Self {
        PrecisionPolicy {
            storage,
            compute,
            accumulate,
            drop_tol_factor: 1.0,
        }
    }

    pub fn with_drop_tol_factor(mut self, factor: f64) -> Self {
        self.drop_tol_factor = factor;
        self
    }

    /// Absolute tolerance used to decide that a column has vanished.
    pub fn drop_tol(&self) -> f64 {
        self.drop_tol_factor * self.storage.eps()
    }

    /// Policy used to form projected matrices: `f16` pipelines project with
    /// `f32` products and sums, wider pipelines keep their own format.
    pub fn projection(&self) -> PrecisionPolicy {
        let wide = self.compute.max(FpFormat::F32);
        PrecisionPolicy {
            storage: self.storage,
            compute: wide,
            accumulate: self.accumulate.max(wide),
            drop_tol_factor: self.drop_tol_factor,
        }
    }

    /// Format the projected matrices are stored in before the `f64` solve.
    pub fn projection_output(&self) -> FpFormat {
        if self.storage == FpFormat::F16 {
            FpFormat::F32
        } else {
            FpFormat::F64
        }
    }

    /// Short label: `native-half`, `mixed-half`, `single`, `double`, or the
    /// explicit triple for anything else.
    pub fn label(&self) -> String {
        use FpFormat::*;
        match (self.storage, self.compute, self.accumulate) {
            (F16, F16, F16) => "native-half".into(),
            (F16, F16, F32) => "mixed-half".into(),
            (F32, F32, F32) => "single".into(),
            (F64, F64, F64) => "double".into(),
            (s, c, a) => format!("{s}/{c}/{a}"),
        }
    }

    #[inline]
    pub fn store(&self, x: f64) -> f64 {
        self.storage.round(x)
    }
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self::full(FpFormat::F64)
    }
}

impl fmt::Display for PrecisionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PrecisionPolicy {
    type Err = OfrrError;

    /// Accepts the preset names or an explicit `storage/compute/accumulate`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native-half" | "native" | "half-half" => Ok(Self::native_half()),
            "mixed-half" | "half" => Ok(Self::mixed_half()),
            "single" | "f32" | "fp32" => Ok(Self::full(FpFormat::F32)),
            "double" | "f64" | "fp64" => Ok(Self::full(FpFormat::F64)),
            other => {
                let parts: Vec<&str> = other.split('/').collect();
                if parts.len() != 3 {
                    return Err(OfrrError::InvalidPolicy(format!("unknown policy `{s}`")));
                }
                Self::new(parts[0].parse()?, parts[1].parse()?, parts[2].parse()?)
            }
        }
    }
}

#[inline(always)]
fn dot_kernel<C: Rounding, A: Rounding>(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        acc = A::round(acc + C::round(a * b));
    }
    acc
}

/// Dot product with products rounded to the compute format and a sequential
/// sum rounded to the accumulate format after every addition.
///
/// The value is returned in the accumulate format; callers round it further
/// when they write it back to storage.
pub fn mixed_dot(x: &[f64], y: &[f64], policy: &PrecisionPolicy) -> f64 {
    assert_eq!(x.len(), y.len(), "mixed_dot: length mismatch");
    dispatch_rounding!(policy, dot_kernel(x, y))
}

#[inline(always)]
fn column_update_kernel<C: Rounding, A: Rounding>(acc: &mut [f64], col: &[f64], s: f64) {
    for (a, &c) in acc.iter_mut().zip(col) {
        *a = A::round(*a + C::round(c * s));
    }
}

/// `acc[i] <- acc[i] + col[i] * s` with compute-format products and
/// accumulate-format sums. Building a product column by column with this
/// kernel reproduces `mixed_dot` for every entry.
pub(crate) fn accumulate_column(acc: &mut [f64], col: &[f64], s: f64, policy: &PrecisionPolicy) {
    dispatch_rounding!(policy, column_update_kernel(acc, col, s))
}

#[inline(always)]
fn axpy_kernel<C: Rounding, A: Rounding>(alpha: f64, x: &[f64], y: &mut [f64], storage: FpFormat) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = storage.round(A::round(*yi + C::round(alpha * xi)));
    }
}

/// `y <- y + alpha * x`, stored back in the storage format.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64], policy: &PrecisionPolicy) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    let storage = policy.storage;
    dispatch_rounding!(policy, axpy_kernel(alpha, x, y, storage))
}

/// `x <- x / d` in the compute format, stored back in the storage format.
pub fn div_scale(x: &mut [f64], d: f64, policy: &PrecisionPolicy) {
    for xi in x.iter_mut() {
        *xi = policy.store(policy.compute.round(*xi / d));
    }
}

/// Largest magnitude, exact in any format.
pub fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Index of the largest magnitude entry, lowest index on ties.
pub fn argmax_abs(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in x.iter().enumerate() {
        let a = v.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

/// Overflow-safe 2-norm: `‖x‖∞ · ‖x / ‖x‖∞‖₂` under `policy`.
///
/// The scaled entries are rounded to the compute format, their squares summed
/// with [`mixed_dot`], the square root taken in the accumulate format and the
/// final product rounded to the compute format. The zero vector gives `0`.
pub fn safe_norm2(x: &[f64], policy: &PrecisionPolicy) -> f64 {
    let m = inf_norm(x);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let scaled: Vec<f64> = x.iter().map(|&v| policy.compute.round(v / m)).collect();
    let sumsq = mixed_dot(&scaled, &scaled, policy);
    let root = policy.accumulate.round(sumsq.sqrt());
    policy.compute.round(m * root)
}

/// `C = A·B` with every entry formed as a [`mixed_dot`] of a row of `A` and a
/// column of `B`, then rounded to `out_fmt`.
pub fn mixed_gemm(
    a: &DenseMatrix,
    b: &DenseMatrix,
    policy: &PrecisionPolicy,
    out_fmt: FpFormat,
) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(OfrrError::dims(
            "mixed_gemm",
            format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let (m, n) = (a.rows(), b.cols());
    let mut data = vec![0.0; m * n];
    for (j, out) in data.chunks_mut(m.max(1)).enumerate().take(n) {
        for (kk, &s) in b.col(j).iter().enumerate() {
            accumulate_column(out, a.col(kk), s, policy);
        }
        for v in out.iter_mut() {
            *v = out_fmt.round(*v);
        }
    }
    Ok(DenseMatrix::from_raw(m, n, data, out_fmt))
}

/// `C = A'·B`, each entry a [`mixed_dot`] of two columns, rounded to `out_fmt`.
pub fn mixed_gemm_tn(
    a: &DenseMatrix,
    b: &DenseMatrix,
    policy: &PrecisionPolicy,
    out_fmt: FpFormat,
) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(OfrrError::dims(
            "mixed_gemm_tn",
            format!(
                "({}x{})' times {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    let (m, n) = (a.cols(), b.cols());
    let mut data = Vec::with_capacity(m * n);
    for j in 0..n {
        let bj = b.col(j);
        for i in 0..m {
            data.push(out_fmt.round(mixed_dot(a.col(i), bj, policy)));
        }
    }
    Ok(DenseMatrix::from_raw(m, n, data, out_fmt))
}
