//! Runtime-dispatched f32 matmul and elementwise kernels.
//!
//! Every kernel accumulates each output element in a fixed order (vector
//! main loop, then scalar tail), so results are bit-identical from run to
//! run on the same machine no matter how work is partitioned. The AVX-512
//! and AVX2 paths use FMA; setting `NM_AST_DETERMINISTIC=1` selects the
//! reference scalar path with the 8-lane reduction tree from `scalar.rs`.
//!
//! f32 `exp`/`tanh`/GELU all run through one shared range-reduced
//! polynomial (`exp32`), in both scalar and vector form, so a run never
//! mixes libm and SIMD flavours of the same function and results do not
//! depend on the platform's libm.

use std::sync::OnceLock;

use crate::scalar::dot_lanes;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KernelKind {
    Scalar,
    Avx2,
    Avx512,
}

/// Flush denormal floats to zero on this thread (FTZ + DAZ bits of MXCSR).
/// Denormal operands take microcode assists on x86 (≈100 cycles each), and a
/// diverging f32 run can fill activations and gradients with them, slowing
/// steps several-fold. Flushing is architecturally defined and uniform, so
/// results stay bit-reproducible. Call once per thread before numeric work;
/// worker threads spawned by this crate do it themselves.
pub fn flush_denormals() {
    // _mm_{get,set}csr are deprecated in favor of inline asm, but remain the
    // portable intrinsic spelling and compile to the same stmxcsr/ldmxcsr.
    #[allow(deprecated)]
    #[cfg(target_arch = "x86_64")]
    unsafe {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040); // FTZ | DAZ
    }
}

pub fn kernel_kind() -> KernelKind {
    static KIND: OnceLock<KernelKind> = OnceLock::new();
    *KIND.get_or_init(|| {
        if std::env::var_os("NM_AST_DETERMINISTIC").is_some_and(|v| v == "1") {
            return KernelKind::Scalar;
        }
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f") {
                return KernelKind::Avx512;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return KernelKind::Avx2;
            }
        }
        KernelKind::Scalar
    })
}

// ── elementwise transcendentals ─────────────────────────────────────────

const EXP_LO: f32 = -86.5;
const EXP_HI: f32 = 88.0;
const EXP_LN2_HI: f32 = 0.693_359_375;
const EXP_LN2_LO: f32 = -2.121_944_4e-4;
const EXP_P0: f32 = 1.987_569_15e-4;
const EXP_P1: f32 = 1.398_199_9507e-3;
const EXP_P2: f32 = 8.333_451_9073e-3;
const EXP_P3: f32 = 4.166_579_5894e-2;
const EXP_P4: f32 = 1.666_666_5459e-1;
const EXP_P5: f32 = 5.000_000_1201e-1;

const GELU_C: f32 = 0.7978845608028654f64 as f32; // √(2/π)
const GELU_A: f32 = 0.044715f64 as f32;

/// f32 exponential: degree-6 polynomial after base-2 range reduction, FMA
/// throughout, ≈2 ulp over the working range. Inputs saturate at the clamp
/// bounds (exp(−86.5) ≈ 2.6e-38 below, exp(88) ≈ 1.65e38 above) so the
/// result is always a normal number; softmax subtracts the row max first,
/// so its inputs are ≤ 0 and unaffected by the upper clamp. NaN propagates.
#[inline]
pub fn exp32(x: f32) -> f32 {
    let xc = x.clamp(EXP_LO, EXP_HI);
    let n = (xc * std::f32::consts::LOG2_E).round_ties_even();
    let r = n.mul_add(-EXP_LN2_HI, xc);
    let r = n.mul_add(-EXP_LN2_LO, r);
    let mut p = EXP_P0;
    p = p.mul_add(r, EXP_P1);
    p = p.mul_add(r, EXP_P2);
    p = p.mul_add(r, EXP_P3);
    p = p.mul_add(r, EXP_P4);
    p = p.mul_add(r, EXP_P5);
    let y = p.mul_add(r * r, r) + 1.0;
    // exact 2^n via exponent bits; n ∈ [−125, 127] inside the clamp range
    let s = f32::from_bits((((n as i32) + 127) << 23) as u32);
    y * s
}

/// f32 tanh on top of `exp32`: cubic Taylor below |x| < 0.01, otherwise
/// (e^{2|x|}−1)/(e^{2|x|}+1) with the sign restored, saturating to ±1 past
/// |x| = 10. Worst relative error ≈1e-5 right at the series switch.
#[inline]
pub fn tanh32(x: f32) -> f32 {
    if x.is_nan() {
        return x;
    }
    let x2 = x * x;
    if x2 < 1e-4 {
        (x2 * (-1.0 / 3.0)).mul_add(x, x)
    } else {
        let e = exp32((x + x).abs().min(20.0));
        ((e - 1.0) / (e + 1.0)).copysign(x)
    }
}

/// GELU forward, mirroring the association order of the generic formula in
/// `scalar.rs` exactly so both spellings agree bit-for-bit.
#[inline]
fn gelu32(x: f32) -> f32 {
    let t = tanh32(GELU_C * (x + GELU_A * x * x * x));
    0.5 * x * (1.0 + t)
}

/// Derivative of `gelu32`, same mirroring rule.
#[inline]
fn gelu32_bwd(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = tanh32(u);
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise `buf[i] ← exp(buf[i])`.
pub fn exp_f32_slice(buf: &mut [f32]) {
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => unsafe { avx512::exp_slice(buf) },
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => unsafe { avx2::exp_slice(buf) },
        _ => {
            for v in buf.iter_mut() {
                *v = exp32(*v);
            }
        }
    }
}

/// Elementwise GELU forward.
pub fn gelu_f32_slice(buf: &mut [f32]) {
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => unsafe { avx512::gelu_slice(buf) },
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => unsafe { avx2::gelu_slice(buf) },
        _ => {
            for v in buf.iter_mut() {
                *v = gelu32(*v);
            }
        }
    }
}

/// `out[i] += g[i] · gelu'(x[i])`.
pub fn gelu_bwd_acc_f32(out: &mut [f32], g: &[f32], x: &[f32]) {
    debug_assert!(out.len() == g.len() && out.len() == x.len());
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => unsafe { avx512::gelu_bwd_acc(out, g, x) },
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => unsafe { avx2::gelu_bwd_acc(out, g, x) },
        _ => {
            for i in 0..out.len() {
                out[i] = g[i].mul_add(gelu32_bwd(x[i]), out[i]);
            }
        }
    }
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => unsafe { avx512::dot(a, b) },
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => unsafe { avx2::dot(a, b) },
        _ => dot_lanes(a, b),
    }
}

pub fn axpy_f32(y: &mut [f32], s: f32, x: &[f32]) {
    debug_assert_eq!(y.len(), x.len());
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => unsafe { avx512::axpy(y, s, x) },
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx2 => unsafe { avx2::axpy(y, s, x) },
        _ => {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += s * *xi;
            }
        }
    }
}

/// `out[i,j] = dot(a[i,:], b[j,:])` for `a: m×k`, `b: n×k` (b transposed).
pub fn mm_nt_f32(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => {
            if m >= 4 && n >= 16 {
                // Pack Bᵀ once so every output row streams it with broadcast
                // FMAs (no per-element horizontal reductions); each element
                // still accumulates serially over kk, so results stay
                // deterministic.
                let mut bt = vec![0.0f32; k * n];
                for j in 0..n {
                    for (kk, &v) in b[j * k..(j + 1) * k].iter().enumerate() {
                        bt[kk * n + j] = v;
                    }
                }
                let mut i = 0;
                while i + 8 <= m {
                    let block = &mut out[i * n..(i + 8) * n];
                    unsafe { avx512::rows8::<false>(block, &bt, n, |r, kk| a[(i + r) * k + kk], k) }
                    i += 8;
                }
                for i in i..m {
                    let ar = &a[i * k..(i + 1) * k];
                    let or = &mut out[i * n..(i + 1) * n];
                    or.fill(0.0);
                    unsafe { avx512::row_acc(or, &bt, n, |kk| ar[kk], k) }
                }
            } else {
                for i in 0..m {
                    unsafe { avx512::row_nt(&a[i * k..(i + 1) * k], b, &mut out[i * n..(i + 1) * n], k) }
                }
            }
        }
        _ => {
            for i in 0..m {
                let ar = &a[i * k..(i + 1) * k];
                let or = &mut out[i * n..(i + 1) * n];
                for (j, oj) in or.iter_mut().enumerate() {
                    *oj = dot_f32(ar, &b[j * k..(j + 1) * k]);
                }
            }
        }
    }
}

/// `out[i,:] += sum_kk a[i,kk] * b[kk,:]` for `a: m×k`, `b: k×n`.
pub fn mm_nn_acc_f32(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => {
            let mut i = 0;
            while i + 8 <= m {
                let block = &mut out[i * n..(i + 8) * n];
                unsafe { avx512::rows8::<true>(block, b, n, |r, kk| a[(i + r) * k + kk], k) }
                i += 8;
            }
            for i in i..m {
                let ar = &a[i * k..(i + 1) * k];
                let or = &mut out[i * n..(i + 1) * n];
                unsafe { avx512::row_acc(or, b, n, |kk| ar[kk], k) }
            }
        }
        _ => {
            for i in 0..m {
                let ar = &a[i * k..(i + 1) * k];
                let or = &mut out[i * n..(i + 1) * n];
                for (kk, &av) in ar.iter().enumerate() {
                    axpy_f32(or, av, &b[kk * n..(kk + 1) * n]);
                }
            }
        }
    }
}

/// `out[i,:] += sum_kk a[kk,i] * b[kk,:]` for `a: k×m`, `b: k×n` (aᵀ·b).
pub fn mm_tn_acc_f32(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match kernel_kind() {
        #[cfg(target_arch = "x86_64")]
        KernelKind::Avx512 => {
            let mut i = 0;
            while i + 8 <= m {
                let block = &mut out[i * n..(i + 8) * n];
                unsafe { avx512::rows8::<true>(block, b, n, |r, kk| a[kk * m + i + r], k) }
                i += 8;
            }
            for i in i..m {
                let or = &mut out[i * n..(i + 1) * n];
                unsafe { avx512::row_acc(or, b, n, |kk| a[kk * m + i], k) }
            }
        }
        _ => {
            for i in 0..m {
                let or = &mut out[i * n..(i + 1) * n];
                for kk in 0..k {
                    axpy_f32(or, a[kk * m + i], &b[kk * n..(kk + 1) * n]);
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    #[cfg(target_arch = "x86_64")]
    use std::arch::x86_64::*;

    /// 4×16-lane accumulators, combined in a fixed order.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn dot(a: &[f32], b: &[f32]) -> f32 {
        let len = a.len();
        let ap = a.as_ptr();
        let bp = b.as_ptr();
        let mut acc0 = _mm512_setzero_ps();
        let mut acc1 = _mm512_setzero_ps();
        let mut acc2 = _mm512_setzero_ps();
        let mut acc3 = _mm512_setzero_ps();
        let mut i = 0;
        while i + 64 <= len {
            acc0 = _mm512_fmadd_ps(_mm512_loadu_ps(ap.add(i)), _mm512_loadu_ps(bp.add(i)), acc0);
            acc1 = _mm512_fmadd_ps(_mm512_loadu_ps(ap.add(i + 16)), _mm512_loadu_ps(bp.add(i + 16)), acc1);
            acc2 = _mm512_fmadd_ps(_mm512_loadu_ps(ap.add(i + 32)), _mm512_loadu_ps(bp.add(i + 32)), acc2);
            acc3 = _mm512_fmadd_ps(_mm512_loadu_ps(ap.add(i + 48)), _mm512_loadu_ps(bp.add(i + 48)), acc3);
            i += 64;
        }
        while i + 16 <= len {
            acc0 = _mm512_fmadd_ps(_mm512_loadu_ps(ap.add(i)), _mm512_loadu_ps(bp.add(i)), acc0);
            i += 16;
        }
        let folded = _mm512_add_ps(_mm512_add_ps(acc0, acc2), _mm512_add_ps(acc1, acc3));
        let mut s = _mm512_reduce_add_ps(folded);
        while i < len {
            s += a[i] * b[i];
            i += 1;
        }
        s
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn axpy(y: &mut [f32], s: f32, x: &[f32]) {
        let len = y.len();
        let yp = y.as_mut_ptr();
        let xp = x.as_ptr();
        let sv = _mm512_set1_ps(s);
        let mut i = 0;
        while i + 16 <= len {
            let yv = _mm512_fmadd_ps(sv, _mm512_loadu_ps(xp.add(i)), _mm512_loadu_ps(yp.add(i)));
            _mm512_storeu_ps(yp.add(i), yv);
            i += 16;
        }
        while i < len {
            y[i] += s * x[i];
            i += 1;
        }
    }

    /// One output row of A·Bᵀ: 8 B-rows at a time share each A load.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn row_nt(a_row: &[f32], b: &[f32], out_row: &mut [f32], k: usize) {
        let n = out_row.len();
        let ap = a_row.as_ptr();
        let kv = k / 16 * 16;
        let mut j = 0;
        while j + 8 <= n {
            let mut acc = [_mm512_setzero_ps(); 8];
            let bps: [*const f32; 8] = std::array::from_fn(|l| b.as_ptr().add((j + l) * k));
            let mut kk = 0;
            while kk < kv {
                let av = _mm512_loadu_ps(ap.add(kk));
                for l in 0..8 {
                    acc[l] = _mm512_fmadd_ps(av, _mm512_loadu_ps(bps[l].add(kk)), acc[l]);
                }
                kk += 16;
            }
            for l in 0..8 {
                let mut s = _mm512_reduce_add_ps(acc[l]);
                for t in kv..k {
                    s += a_row[t] * *bps[l].add(t);
                }
                out_row[j + l] = s;
            }
            j += 8;
        }
        while j < n {
            out_row[j] = dot(a_row, &b[j * k..(j + 1) * k]);
            j += 1;
        }
    }

    /// `out_row += sum_kk coef(kk) * b[kk,:]`, output tiled through registers.
    /// The widest tile keeps 8 independent FMA chains in flight, enough to
    /// cover the FMA latency on one core.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn row_acc(out_row: &mut [f32], b: &[f32], n: usize, coef: impl Fn(usize) -> f32, k: usize) {
        let op = out_row.as_mut_ptr();
        let bp = b.as_ptr();
        let mut j = 0;
        while j + 128 <= n {
            let mut acc: [__m512; 8] = std::array::from_fn(|l| _mm512_loadu_ps(op.add(j + 16 * l)));
            for kk in 0..k {
                let c = _mm512_set1_ps(coef(kk));
                let base = bp.add(kk * n + j);
                for (l, t) in acc.iter_mut().enumerate() {
                    *t = _mm512_fmadd_ps(c, _mm512_loadu_ps(base.add(16 * l)), *t);
                }
            }
            for (l, t) in acc.iter().enumerate() {
                _mm512_storeu_ps(op.add(j + 16 * l), *t);
            }
            j += 128;
        }
        while j + 64 <= n {
            let mut t0 = _mm512_loadu_ps(op.add(j));
            let mut t1 = _mm512_loadu_ps(op.add(j + 16));
            let mut t2 = _mm512_loadu_ps(op.add(j + 32));
            let mut t3 = _mm512_loadu_ps(op.add(j + 48));
            for kk in 0..k {
                let c = _mm512_set1_ps(coef(kk));
                let base = bp.add(kk * n + j);
                t0 = _mm512_fmadd_ps(c, _mm512_loadu_ps(base), t0);
                t1 = _mm512_fmadd_ps(c, _mm512_loadu_ps(base.add(16)), t1);
                t2 = _mm512_fmadd_ps(c, _mm512_loadu_ps(base.add(32)), t2);
                t3 = _mm512_fmadd_ps(c, _mm512_loadu_ps(base.add(48)), t3);
            }
            _mm512_storeu_ps(op.add(j), t0);
            _mm512_storeu_ps(op.add(j + 16), t1);
            _mm512_storeu_ps(op.add(j + 32), t2);
            _mm512_storeu_ps(op.add(j + 48), t3);
            j += 64;
        }
        while j + 16 <= n {
            let mut t = _mm512_loadu_ps(op.add(j));
            for kk in 0..k {
                t = _mm512_fmadd_ps(_mm512_set1_ps(coef(kk)), _mm512_loadu_ps(bp.add(kk * n + j)), t);
            }
            _mm512_storeu_ps(op.add(j), t);
            j += 16;
        }
        if j < n {
            for kk in 0..k {
                let c = coef(kk);
                for t in j..n {
                    out_row[t] += c * b[kk * n + t];
                }
            }
        }
    }

    /// Eight output rows per pass over `b` (k×n row-major): `out` holds the
    /// rows contiguously with stride `n`, and `coef(r, kk)` supplies row
    /// `r`'s multiplier at depth `kk`. `LOAD` starts the accumulators from
    /// the existing output (accumulate) or from zero (overwrite). Every
    /// output element still gets its FMA chain applied serially over kk —
    /// the same per-element operation order as `row_acc` — so the row
    /// blocking only cuts how often `b` is re-streamed from cache; the bits
    /// are unchanged.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn rows8<const LOAD: bool>(
        out: &mut [f32],
        b: &[f32],
        n: usize,
        coef: impl Fn(usize, usize) -> f32,
        k: usize,
    ) {
        debug_assert_eq!(out.len(), 8 * n);
        let op = out.as_mut_ptr();
        let bp = b.as_ptr();
        let mut j = 0;
        while j + 32 <= n {
            let mut acc: [[__m512; 2]; 8] = std::array::from_fn(|r| {
                if LOAD {
                    [_mm512_loadu_ps(op.add(r * n + j)), _mm512_loadu_ps(op.add(r * n + j + 16))]
                } else {
                    [_mm512_setzero_ps(), _mm512_setzero_ps()]
                }
            });
            for kk in 0..k {
                let base = bp.add(kk * n + j);
                let b0 = _mm512_loadu_ps(base);
                let b1 = _mm512_loadu_ps(base.add(16));
                for (r, t) in acc.iter_mut().enumerate() {
                    let c = _mm512_set1_ps(coef(r, kk));
                    t[0] = _mm512_fmadd_ps(c, b0, t[0]);
                    t[1] = _mm512_fmadd_ps(c, b1, t[1]);
                }
            }
            for (r, t) in acc.iter().enumerate() {
                _mm512_storeu_ps(op.add(r * n + j), t[0]);
                _mm512_storeu_ps(op.add(r * n + j + 16), t[1]);
            }
            j += 32;
        }
        while j + 16 <= n {
            let mut acc: [__m512; 8] = std::array::from_fn(|r| {
                if LOAD { _mm512_loadu_ps(op.add(r * n + j)) } else { _mm512_setzero_ps() }
            });
            for kk in 0..k {
                let bv = _mm512_loadu_ps(bp.add(kk * n + j));
                for (r, t) in acc.iter_mut().enumerate() {
                    *t = _mm512_fmadd_ps(_mm512_set1_ps(coef(r, kk)), bv, *t);
                }
            }
            for (r, t) in acc.iter().enumerate() {
                _mm512_storeu_ps(op.add(r * n + j), *t);
            }
            j += 16;
        }
        if j < n {
            for t in j..n {
                for r in 0..8 {
                    let mut s = if LOAD { out[r * n + t] } else { 0.0 };
                    for kk in 0..k {
                        s += coef(r, kk) * b[kk * n + t];
                    }
                    out[r * n + t] = s;
                }
            }
        }
    }

    /// 16-lane mirror of `exp32`: identical operation sequence per lane, so
    /// vector and scalar paths agree bit-for-bit on non-NaN inputs.
    #[target_feature(enable = "avx512f")]
    unsafe fn expv(x: __m512) -> __m512 {
        let xc = _mm512_min_ps(_mm512_max_ps(x, _mm512_set1_ps(super::EXP_LO)), _mm512_set1_ps(super::EXP_HI));
        let ni = _mm512_cvtps_epi32(_mm512_mul_ps(xc, _mm512_set1_ps(std::f32::consts::LOG2_E)));
        let n = _mm512_cvtepi32_ps(ni);
        let r = _mm512_fmadd_ps(n, _mm512_set1_ps(-super::EXP_LN2_HI), xc);
        let r = _mm512_fmadd_ps(n, _mm512_set1_ps(-super::EXP_LN2_LO), r);
        let mut p = _mm512_set1_ps(super::EXP_P0);
        p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(super::EXP_P1));
        p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(super::EXP_P2));
        p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(super::EXP_P3));
        p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(super::EXP_P4));
        p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(super::EXP_P5));
        let y = _mm512_add_ps(_mm512_fmadd_ps(p, _mm512_mul_ps(r, r), r), _mm512_set1_ps(1.0));
        let s = _mm512_castsi512_ps(_mm512_slli_epi32::<23>(_mm512_add_epi32(ni, _mm512_set1_epi32(127))));
        let res = _mm512_mul_ps(y, s);
        // min/max eat NaN, so restore those lanes from the input
        let nan = _mm512_cmp_ps_mask::<_CMP_UNORD_Q>(x, x);
        _mm512_mask_blend_ps(nan, res, x)
    }

    /// 16-lane mirror of `tanh32` (selection done with masks instead of
    /// branches; the same element always takes the same formula).
    #[target_feature(enable = "avx512f")]
    unsafe fn tanhv(x: __m512) -> __m512 {
        let x2 = _mm512_mul_ps(x, x);
        let small = _mm512_fmadd_ps(_mm512_mul_ps(x2, _mm512_set1_ps(-1.0 / 3.0)), x, x);
        let e = expv(_mm512_min_ps(_mm512_abs_ps(_mm512_add_ps(x, x)), _mm512_set1_ps(20.0)));
        let one = _mm512_set1_ps(1.0);
        let big = _mm512_div_ps(_mm512_sub_ps(e, one), _mm512_add_ps(e, one));
        let sign = _mm512_set1_epi32(i32::MIN);
        let big = _mm512_castsi512_ps(_mm512_or_si512(
            _mm512_andnot_si512(sign, _mm512_castps_si512(big)),
            _mm512_and_si512(_mm512_castps_si512(x), sign),
        ));
        let use_small = _mm512_cmp_ps_mask::<_CMP_LT_OQ>(x2, _mm512_set1_ps(1e-4));
        let res = _mm512_mask_blend_ps(use_small, big, small);
        let nan = _mm512_cmp_ps_mask::<_CMP_UNORD_Q>(x, x);
        _mm512_mask_blend_ps(nan, res, x)
    }

    /// 16-lane mirror of `gelu32`.
    #[target_feature(enable = "avx512f")]
    unsafe fn geluv(x: __m512) -> __m512 {
        let x3a = _mm512_mul_ps(_mm512_mul_ps(_mm512_mul_ps(_mm512_set1_ps(super::GELU_A), x), x), x);
        let t = tanhv(_mm512_mul_ps(_mm512_set1_ps(super::GELU_C), _mm512_add_ps(x, x3a)));
        let one = _mm512_set1_ps(1.0);
        _mm512_mul_ps(_mm512_mul_ps(_mm512_set1_ps(0.5), x), _mm512_add_ps(one, t))
    }

    /// 16-lane mirror of `gelu32_bwd`.
    #[target_feature(enable = "avx512f")]
    unsafe fn gelu_bwdv(x: __m512) -> __m512 {
        let one = _mm512_set1_ps(1.0);
        let half = _mm512_set1_ps(0.5);
        let x3a = _mm512_mul_ps(_mm512_mul_ps(_mm512_mul_ps(_mm512_set1_ps(super::GELU_A), x), x), x);
        let t = tanhv(_mm512_mul_ps(_mm512_set1_ps(super::GELU_C), _mm512_add_ps(x, x3a)));
        let sech2 = _mm512_sub_ps(one, _mm512_mul_ps(t, t));
        let p1 = _mm512_mul_ps(half, _mm512_add_ps(one, t));
        let q = _mm512_add_ps(one, _mm512_mul_ps(_mm512_mul_ps(_mm512_set1_ps(3.0 * super::GELU_A), x), x));
        let p2 = _mm512_mul_ps(
            _mm512_mul_ps(_mm512_mul_ps(_mm512_mul_ps(half, x), sech2), _mm512_set1_ps(super::GELU_C)),
            q,
        );
        _mm512_add_ps(p1, p2)
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn exp_slice(buf: &mut [f32]) {
        let len = buf.len();
        let p = buf.as_mut_ptr();
        let mut i = 0;
        while i + 16 <= len {
            _mm512_storeu_ps(p.add(i), expv(_mm512_loadu_ps(p.add(i))));
            i += 16;
        }
        while i < len {
            buf[i] = super::exp32(buf[i]);
            i += 1;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn gelu_slice(buf: &mut [f32]) {
        let len = buf.len();
        let p = buf.as_mut_ptr();
        let mut i = 0;
        while i + 16 <= len {
            _mm512_storeu_ps(p.add(i), geluv(_mm512_loadu_ps(p.add(i))));
            i += 16;
        }
        while i < len {
            buf[i] = super::gelu32(buf[i]);
            i += 1;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn gelu_bwd_acc(out: &mut [f32], g: &[f32], x: &[f32]) {
        let len = out.len();
        let op = out.as_mut_ptr();
        let gp = g.as_ptr();
        let xp = x.as_ptr();
        let mut i = 0;
        while i + 16 <= len {
            let d = gelu_bwdv(_mm512_loadu_ps(xp.add(i)));
            let o = _mm512_fmadd_ps(_mm512_loadu_ps(gp.add(i)), d, _mm512_loadu_ps(op.add(i)));
            _mm512_storeu_ps(op.add(i), o);
            i += 16;
        }
        while i < len {
            out[i] = g[i].mul_add(super::gelu32_bwd(x[i]), out[i]);
            i += 1;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn dot(a: &[f32], b: &[f32]) -> f32 {
        let len = a.len();
        let ap = a.as_ptr();
        let bp = b.as_ptr();
        let mut acc0 = _mm256_setzero_ps();
        let mut acc1 = _mm256_setzero_ps();
        let mut acc2 = _mm256_setzero_ps();
        let mut acc3 = _mm256_setzero_ps();
        let mut i = 0;
        while i + 32 <= len {
            acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ap.add(i)), _mm256_loadu_ps(bp.add(i)), acc0);
            acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(ap.add(i + 8)), _mm256_loadu_ps(bp.add(i + 8)), acc1);
            acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(ap.add(i + 16)), _mm256_loadu_ps(bp.add(i + 16)), acc2);
            acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(ap.add(i + 24)), _mm256_loadu_ps(bp.add(i + 24)), acc3);
            i += 32;
        }
        while i + 8 <= len {
            acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(ap.add(i)), _mm256_loadu_ps(bp.add(i)), acc0);
            i += 8;
        }
        let folded = _mm256_add_ps(_mm256_add_ps(acc0, acc2), _mm256_add_ps(acc1, acc3));
        let hi = _mm256_extractf128_ps(folded, 1);
        let lo = _mm256_castps256_ps128(folded);
        let q = _mm_add_ps(lo, hi);
        let q = _mm_add_ps(q, _mm_movehl_ps(q, q));
        let q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
        let mut s = _mm_cvtss_f32(q);
        while i < len {
            s += a[i] * b[i];
            i += 1;
        }
        s
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn axpy(y: &mut [f32], s: f32, x: &[f32]) {
        let len = y.len();
        let yp = y.as_mut_ptr();
        let xp = x.as_ptr();
        let sv = _mm256_set1_ps(s);
        let mut i = 0;
        while i + 8 <= len {
            let yv = _mm256_fmadd_ps(sv, _mm256_loadu_ps(xp.add(i)), _mm256_loadu_ps(yp.add(i)));
            _mm256_storeu_ps(yp.add(i), yv);
            i += 8;
        }
        while i < len {
            y[i] += s * x[i];
            i += 1;
        }
    }

    /// 8-lane mirror of `exp32` (same operation sequence per lane).
    #[target_feature(enable = "avx2,fma")]
    unsafe fn expv(x: __m256) -> __m256 {
        let xc = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(super::EXP_LO)), _mm256_set1_ps(super::EXP_HI));
        let ni = _mm256_cvtps_epi32(_mm256_mul_ps(xc, _mm256_set1_ps(std::f32::consts::LOG2_E)));
        let n = _mm256_cvtepi32_ps(ni);
        let r = _mm256_fmadd_ps(n, _mm256_set1_ps(-super::EXP_LN2_HI), xc);
        let r = _mm256_fmadd_ps(n, _mm256_set1_ps(-super::EXP_LN2_LO), r);
        let mut p = _mm256_set1_ps(super::EXP_P0);
        p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(super::EXP_P1));
        p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(super::EXP_P2));
        p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(super::EXP_P3));
        p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(super::EXP_P4));
        p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(super::EXP_P5));
        let y = _mm256_add_ps(_mm256_fmadd_ps(p, _mm256_mul_ps(r, r), r), _mm256_set1_ps(1.0));
        let s = _mm256_castsi256_ps(_mm256_slli_epi32::<23>(_mm256_add_epi32(ni, _mm256_set1_epi32(127))));
        let res = _mm256_mul_ps(y, s);
        let nan = _mm256_cmp_ps::<_CMP_UNORD_Q>(x, x);
        _mm256_blendv_ps(res, x, nan)
    }

    /// 8-lane mirror of `tanh32`.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn tanhv(x: __m256) -> __m256 {
        let x2 = _mm256_mul_ps(x, x);
        let small = _mm256_fmadd_ps(_mm256_mul_ps(x2, _mm256_set1_ps(-1.0 / 3.0)), x, x);
        let absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fff_ffff));
        let e = expv(_mm256_min_ps(_mm256_and_ps(_mm256_add_ps(x, x), absmask), _mm256_set1_ps(20.0)));
        let one = _mm256_set1_ps(1.0);
        let big = _mm256_div_ps(_mm256_sub_ps(e, one), _mm256_add_ps(e, one));
        let signmask = _mm256_set1_ps(-0.0);
        let big = _mm256_or_ps(_mm256_andnot_ps(signmask, big), _mm256_and_ps(x, signmask));
        let use_small = _mm256_cmp_ps::<_CMP_LT_OQ>(x2, _mm256_set1_ps(1e-4));
        let res = _mm256_blendv_ps(big, small, use_small);
        let nan = _mm256_cmp_ps::<_CMP_UNORD_Q>(x, x);
        _mm256_blendv_ps(res, x, nan)
    }

    /// 8-lane mirror of `gelu32`.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn geluv(x: __m256) -> __m256 {
        let x3a = _mm256_mul_ps(_mm256_mul_ps(_mm256_mul_ps(_mm256_set1_ps(super::GELU_A), x), x), x);
        let t = tanhv(_mm256_mul_ps(_mm256_set1_ps(super::GELU_C), _mm256_add_ps(x, x3a)));
        let one = _mm256_set1_ps(1.0);
        _mm256_mul_ps(_mm256_mul_ps(_mm256_set1_ps(0.5), x), _mm256_add_ps(one, t))
    }

    /// 8-lane mirror of `gelu32_bwd`.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn gelu_bwdv(x: __m256) -> __m256 {
        let one = _mm256_set1_ps(1.0);
        let half = _mm256_set1_ps(0.5);
        let x3a = _mm256_mul_ps(_mm256_mul_ps(_mm256_mul_ps(_mm256_set1_ps(super::GELU_A), x), x), x);
        let t = tanhv(_mm256_mul_ps(_mm256_set1_ps(super::GELU_C), _mm256_add_ps(x, x3a)));
        let sech2 = _mm256_sub_ps(one, _mm256_mul_ps(t, t));
        let p1 = _mm256_mul_ps(half, _mm256_add_ps(one, t));
        let q = _mm256_add_ps(one, _mm256_mul_ps(_mm256_mul_ps(_mm256_set1_ps(3.0 * super::GELU_A), x), x));
        let p2 = _mm256_mul_ps(
            _mm256_mul_ps(_mm256_mul_ps(_mm256_mul_ps(half, x), sech2), _mm256_set1_ps(super::GELU_C)),
            q,
        );
        _mm256_add_ps(p1, p2)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn exp_slice(buf: &mut [f32]) {
        let len = buf.len();
        let p = buf.as_mut_ptr();
        let mut i = 0;
        while i + 8 <= len {
            _mm256_storeu_ps(p.add(i), expv(_mm256_loadu_ps(p.add(i))));
            i += 8;
        }
        while i < len {
            buf[i] = super::exp32(buf[i]);
            i += 1;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn gelu_slice(buf: &mut [f32]) {
        let len = buf.len();
        let p = buf.as_mut_ptr();
        let mut i = 0;
        while i + 8 <= len {
            _mm256_storeu_ps(p.add(i), geluv(_mm256_loadu_ps(p.add(i))));
            i += 8;
        }
        while i < len {
            buf[i] = super::gelu32(buf[i]);
            i += 1;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn gelu_bwd_acc(out: &mut [f32], g: &[f32], x: &[f32]) {
        let len = out.len();
        let op = out.as_mut_ptr();
        let gp = g.as_ptr();
        let xp = x.as_ptr();
        let mut i = 0;
        while i + 8 <= len {
            let d = gelu_bwdv(_mm256_loadu_ps(xp.add(i)));
            let o = _mm256_fmadd_ps(_mm256_loadu_ps(gp.add(i)), d, _mm256_loadu_ps(op.add(i)));
            _mm256_storeu_ps(op.add(i), o);
            i += 8;
        }
        while i < len {
            out[i] = g[i].mul_add(super::gelu32_bwd(x[i]), out[i]);
            i += 1;
        }
    }
}
