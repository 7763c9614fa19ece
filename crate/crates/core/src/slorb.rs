//! Sparse Low-Rank Boosting: a fixed 0/1 group-broadcast projection X, a
//! thin trainable matrix S initialized from the pruned mass, and the
//! adapter forward y += x·(S·X)ᵀ computed as two thin matmuls.

use std::str::FromStr;

use crate::graph::{Graph, TensorId};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::sparsity::Mask;

/// Initialization for the trainable S matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlorbInit {
    /// Per-group mean of the pruned weights (the default; preserves group sums).
    PrunedMean,
    Xavier,
    Zero,
}

impl FromStr for SlorbInit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pruned_mean" => Ok(SlorbInit::PrunedMean),
            "xavier" => Ok(SlorbInit::Xavier),
            "zero" => Ok(SlorbInit::Zero),
            other => Err(format!(
                "unknown slorb init {other:?} (expected pruned_mean, xavier, or zero)"
            )),
        }
    }
}

impl SlorbInit {
    pub fn name(&self) -> &'static str {
        match self {
            SlorbInit::PrunedMean => "pruned_mean",
            SlorbInit::Xavier => "xavier",
            SlorbInit::Zero => "zero",
        }
    }
}

/// The fixed projection: X[i,j] = 1 iff i·k ≤ j ≤ (i+1)·k − 1, returned
/// row-major with r = d/k rows. Each column holds exactly one 1.
pub fn init_projection<S: Scalar>(d: usize, k: usize) -> Vec<S> {
    assert!(k >= 1 && d % k == 0, "group width {k} must divide layer width {d}");
    let r = d / k;
    let mut x = vec![S::ZERO; r * d];
    for i in 0..r {
        for j in i * k..(i + 1) * k {
            x[i * d + j] = S::ONE;
        }
    }
    x
}

/// Pruned-mean initialization: S[i,j] = (1/k)·Σ over the j-th k-wide group
/// of row i of the pruned entries of W. Guarantees Σ_group W_eff = Σ_group W
/// at initialization, since the broadcast adds k·S[i,j] back to each group.
pub fn init_slorb_weights<S: Scalar>(w: &[S], mask: &Mask, k: usize) -> Vec<S> {
    let (rows, cols) = (mask.rows(), mask.cols());
    assert_eq!(w.len(), rows * cols, "weight shape mismatch");
    assert!(mask.is_valid(), "mask violates its N:M pattern");
    assert!(k >= 1 && cols % k == 0, "group width {k} must divide layer width {cols}");
    let r = cols / k;
    let mut s = vec![S::ZERO; rows * r];
    for i in 0..rows {
        for j in 0..r {
            // accumulate in f64 so the only rounding is the final store;
            // the group-sum preservation guarantee rides on this
            let mut acc = 0.0f64;
            for c in j * k..(j + 1) * k {
                if !mask.get(i, c) {
                    acc += w[i * cols + c].to_f64();
                }
            }
            s[i * r + j] = S::from_f64(acc / k as f64);
        }
    }
    s
}

/// Initialize S by the requested scheme. `label` seeds the Xavier stream.
pub fn init_s<S: Scalar>(
    init: SlorbInit,
    w: &[S],
    mask: &Mask,
    k: usize,
    seed: u64,
    label: &str,
) -> Vec<S> {
    let rows = mask.rows();
    let r = mask.cols() / k;
    match init {
        SlorbInit::PrunedMean => init_slorb_weights(w, mask, k),
        SlorbInit::Zero => vec![S::ZERO; rows * r],
        SlorbInit::Xavier => {
            let mut rng = SplitMix64::stream(seed, label);
            let a = (6.0 / (rows + r) as f64).sqrt();
            let mut s = vec![S::ZERO; rows * r];
            rng.fill_uniform(&mut s, -a, a);
            s
        }
    }
}

/// Adapter contribution x·(S·X)ᵀ as two thin products: the fixed broadcast
/// Xᵀ collapses to a k-wide group-sum pooling of x, then one [B×r]·[N×r]ᵀ
/// matmul with S. S·X is never materialized.
pub fn slorb_forward<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    s_param: TensorId,
    k: usize,
) -> TensorId {
    let pooled = g.group_sum_pool(x, k);
    g.matmul_nt(pooled, s_param)
}

/// Variant with a trainable projection: x·Xᵀ is a real matmul against the
/// (r×d) X parameter instead of the structural pooling.
pub fn slorb_forward_trained_projection<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    s_param: TensorId,
    x_param: TensorId,
) -> TensorId {
    let thin = g.matmul_nt(x, x_param);
    g.matmul_nt(thin, s_param)
}

/// Dense-equivalent effective weight m(W)⊙W + S·X, for eval/export checks.
pub fn effective_weight<S: Scalar>(w: &[S], mask: &Mask, s: &[S], k: usize) -> Vec<S> {
    let (rows, cols) = (mask.rows(), mask.cols());
    assert_eq!(w.len(), rows * cols, "weight shape mismatch");
    assert!(cols % k == 0, "group width {k} must divide layer width {cols}");
    let r = cols / k;
    assert_eq!(s.len(), rows * r, "adapter shape mismatch");
    let mut out = vec![S::ZERO; rows * cols];
    for i in 0..rows {
        for c in 0..cols {
            let kept = if mask.get(i, c) { w[i * cols + c] } else { S::ZERO };
            out[i * cols + c] = kept + s[i * r + c / k];
        }
    }
    out
}

/// Export split: the masked weight (the only part that gets packed) plus the
/// adapter S; X is structural and reconstructed from (d, k) on load.
pub fn merge_for_export<S: Scalar>(
    w: &[S],
    mask: &Mask,
    s: Option<&[S]>,
    k: usize,
) -> (Vec<S>, Option<Vec<S>>) {
    if let Some(sv) = s {
        assert!(mask.cols() % k == 0, "group width {k} must divide layer width");
        assert_eq!(sv.len(), mask.rows() * (mask.cols() / k), "adapter shape mismatch");
    }
    let masked = mask.apply(w);
    (masked, s.map(|v| v.to_vec()))
}

/// Extra parameters the adapter stores for an N×d layer: S is N·(d/k); a
/// trained/stored-dense projection adds (d/k)·d more.
pub fn adapter_param_count(n: usize, d: usize, k: usize, dense_projection: bool) -> usize {
    assert!(d % k == 0);
    let r = d / k;
    n * r + if dense_projection { r * d } else { 0 }
}
