//! Scalar abstraction over the two supported precisions.
//!
//! Training runs in f32; gradient verification runs the same graphs in f64.
//! Reductions use a fixed 8-lane tree so results are bit-identical across
//! runs regardless of thread count (each output element is reduced in the
//! same order every time). f32 routes `exp`/`tanh`/GELU through the
//! polynomial kernels in `simd.rs` (libm-independent, vectorizable); f64
//! keeps the standard library functions for the verification paths.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Bit width, for error messages and checkpoint headers.
    const BITS: u32;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;
    fn max(self, other: Self) -> Self;

    /// Elementwise `buf[i] ← exp(buf[i])`.
    fn exp_slice(buf: &mut [Self]) {
        for v in buf.iter_mut() {
            *v = v.exp();
        }
    }

    /// Elementwise GELU forward.
    fn gelu_slice(buf: &mut [Self]) {
        for v in buf.iter_mut() {
            *v = gelu_fwd(*v);
        }
    }

    /// `buf[i] += g[i] · gelu'(x[i])` (backward accumulate).
    fn gelu_bwd_acc(buf: &mut [Self], g: &[Self], x: &[Self]) {
        debug_assert!(buf.len() == g.len() && buf.len() == x.len());
        for i in 0..buf.len() {
            buf[i] += g[i] * gelu_bwd(x[i]);
        }
    }

    /// Dot product with the fixed 8-lane reduction tree.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        dot_lanes(a, b)
    }

    /// `y[i] += s * x[i]`.
    fn axpy(y: &mut [Self], s: Self, x: &[Self]) {
        debug_assert_eq!(y.len(), x.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += s * *xi;
        }
    }

    /// `out[i,j] = dot(a[i,:], b[j,:])` for `a: m×k`, `b: n×k`; overwrites `out`.
    fn mm_nt(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), n * k);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let or = &mut out[i * n..(i + 1) * n];
            for (j, oj) in or.iter_mut().enumerate() {
                *oj = Self::dot(ar, &b[j * k..(j + 1) * k]);
            }
        }
    }

    /// `out += a · b` for `a: m×k`, `b: k×n`.
    fn mm_nn_acc(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            let or = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                Self::axpy(or, a[i * k + kk], &b[kk * n..(kk + 1) * n]);
            }
        }
    }

    /// `out += aᵀ · b` for `a: k×m`, `b: k×n`; `out` is m×n.
    fn mm_tn_acc(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), k * m);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            let or = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                Self::axpy(or, a[kk * m + i], &b[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// GPT-2 style tanh-approximation GELU. The f32 kernels in `simd.rs`
/// mirror this association order exactly; keep the two in sync.
pub(crate) fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.7978845608028654); // √(2/π)
    let a = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    half * x * (S::ONE + (c * (x + a * x * x * x)).tanh())
}

/// Exact derivative of the tanh-approximation above.
pub(crate) fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.7978845608028654);
    let a = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = S::ONE - t * t;
    half * (S::ONE + t) + half * x * sech2 * c * (S::ONE + three * a * x * x)
}

/// Fixed-order 8-lane sum; same reduction tree as `dot_lanes`.
pub fn sum_lanes<S: Scalar>(a: &[S]) -> S {
    let mut lanes = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            lanes[l] += a[base + l];
        }
    }
    for i in chunks * 8..a.len() {
        lanes[i % 8] += a[i];
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let s1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    s0 + s1
}

/// 8 independent accumulators, combined pairwise in a fixed order. The lane
/// structure is what lets the compiler vectorize without changing results
/// between serial and partitioned execution.
pub(crate) fn dot_lanes<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            lanes[l] += a[base + l] * b[base + l];
        }
    }
    for i in chunks * 8..a.len() {
        lanes[i % 8] += a[i] * b[i];
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[2] + lanes[6]);
    let s1 = (lanes[1] + lanes[5]) + (lanes[3] + lanes[7]);
    s0 + s1
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const BITS: u32 = 32;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn exp(self) -> Self {
        crate::simd::exp32(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        crate::simd::tanh32(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        f32::max(self, other)
    }

    fn exp_slice(buf: &mut [Self]) {
        crate::simd::exp_f32_slice(buf)
    }

    fn gelu_slice(buf: &mut [Self]) {
        crate::simd::gelu_f32_slice(buf)
    }

    fn gelu_bwd_acc(buf: &mut [Self], g: &[Self], x: &[Self]) {
        crate::simd::gelu_bwd_acc_f32(buf, g, x)
    }

    #[inline]
    fn dot(a: &[Self], b: &[Self]) -> Self {
        crate::simd::dot_f32(a, b)
    }

    #[inline]
    fn axpy(y: &mut [Self], s: Self, x: &[Self]) {
        crate::simd::axpy_f32(y, s, x)
    }

    fn mm_nt(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        crate::simd::mm_nt_f32(a, b, out, m, k, n)
    }

    fn mm_nn_acc(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        crate::simd::mm_nn_acc_f32(a, b, out, m, k, n)
    }

    fn mm_tn_acc(a: &[Self], b: &[Self], out: &mut [Self], m: usize, k: usize, n: usize) {
        crate::simd::mm_tn_acc_f32(a, b, out, m, k, n)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const BITS: u32 = 64;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_f64() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.5 - (i as f64) * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let lanes = f64::dot(&a, &b);
        assert!((naive - lanes).abs() < 1e-12, "{naive} vs {lanes}");
    }

    #[test]
    fn dot_is_reproducible() {
        let a: Vec<f32> = (0..1000).map(|i| ((i * 2654435761u64 as usize) % 97) as f32 * 0.013).collect();
        let b: Vec<f32> = (0..1000).map(|i| ((i * 40503) % 89) as f32 * -0.007).collect();
        let d1 = f32::dot(&a, &b);
        let d2 = f32::dot(&a, &b);
        assert_eq!(d1.to_bits(), d2.to_bits());
    }
}
