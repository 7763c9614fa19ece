//! Reverse-mode tape autodiff over dense row-major 2-D tensors.
//!
//! The graph is an arena of eagerly-evaluated nodes; `backward` walks the
//! tape in reverse, accumulating adjoints into scratch buffers and adding
//! leaf adjoints into each parameter's persistent `grad` slot (so running
//! backward twice without zeroing doubles leaf gradients exactly).
//!
//! Shapes are `[rows, cols]`; batch and sequence dimensions are flattened
//! into rows. Attention ops treat rows as `seq`-sized groups and respect
//! the causal structure (entries above the local diagonal are exact zeros
//! and are never touched).

use std::sync::Arc;

use crate::parallel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    /// Strict mode checks every op output for non-finite values and rejects
    /// out-of-domain inputs (used by the 64-bit verification paths).
    strict: bool,
}

struct Node<S: Scalar> {
    rows: usize,
    cols: usize,
    value: Vec<S>,
    /// Persistent leaf gradient; allocated on first backward reaching it.
    grad: Option<Vec<S>>,
    needs_grad: bool,
    op: Op<S>,
}

enum Op<S: Scalar> {
    Leaf,
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: S },
    Exp { a: TensorId },
    Log { a: TensorId },
    Square { a: TensorId },
    MatmulNT { a: TensorId, b: TensorId },
    AddBias { a: TensorId, bias: TensorId },
    /// Elementwise multiply by a constant 0/1 mask with straight-through
    /// backward: the upstream gradient lands on `a` unmodified.
    SteMask { a: TensorId },
    /// Sum each row's consecutive `k`-wide column groups: [m,c] -> [m,c/k].
    GroupSumPool { a: TensorId, k: usize },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, mean: Vec<S>, rstd: Vec<S> },
    Gelu { a: TensorId },
    Embed { table: TensorId, ids: Arc<Vec<u32>> },
    Softmax { a: TensorId, axis: usize },
    CausalScores { q: TensorId, k: TensorId, heads: usize, seq: usize, scale: S },
    CausalSoftmax { a: TensorId, seq: usize },
    CausalPV { p: TensorId, v: TensorId, heads: usize, seq: usize },
    SumAll { a: TensorId },
    /// Σ (a − target)² against a constant target.
    SqErrConst { a: TensorId, target: Arc<Vec<S>> },
    CrossEntropy { logits: TensorId, targets: Arc<Vec<u32>>, probs: Vec<S> },
    /// Mean over rows of KL(p_t ‖ p_s) at temperature `temp`; teacher rows
    /// are constants given as probabilities and log-probabilities.
    ForwardKl { logits: TensorId, t_probs: Arc<Vec<S>>, temp: S, probs: Vec<S> },
    /// Mean over rows of KL(p_s ‖ p_t).
    ReverseKl { logits: TensorId, t_logp: Arc<Vec<S>>, probs: Vec<S>, row_kl: Vec<S> },
    /// Mean over rows of KL(teacher_row ‖ student_row) on causal attention
    /// probabilities (row r uses key positions 0..=r within its group).
    AttnKlConst { scores: TensorId, t_probs: Arc<Vec<S>>, seq: usize },
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), strict: false }
    }

    /// Verification-mode graph: every op output is checked finite.
    pub fn strict() -> Self {
        Graph { nodes: Vec::new(), strict: true }
    }

    pub fn rows(&self, t: TensorId) -> usize {
        self.nodes[t.0].rows
    }
    pub fn cols(&self, t: TensorId) -> usize {
        self.nodes[t.0].cols
    }
    pub fn value(&self, t: TensorId) -> &[S] {
        &self.nodes[t.0].value
    }
    /// Scalar value of a [1×1] node.
    pub fn scalar(&self, t: TensorId) -> S {
        assert_eq!(self.nodes[t.0].value.len(), 1, "not a scalar node");
        self.nodes[t.0].value[0]
    }
    /// Leaf gradient accumulated by `backward`; None if never reached.
    pub fn leaf_grad(&self, t: TensorId) -> Option<&[S]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn param(&mut self, rows: usize, cols: usize, data: &[S]) -> TensorId {
        assert_eq!(data.len(), rows * cols, "param data length");
        self.push(rows, cols, data.to_vec(), true, Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: &[S]) -> TensorId {
        assert_eq!(data.len(), rows * cols, "constant data length");
        self.push(rows, cols, data.to_vec(), false, Op::Leaf)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<S>, needs_grad: bool, op: Op<S>) -> TensorId {
        if self.strict {
            for (i, v) in value.iter().enumerate() {
                assert!(v.is_finite(), "non-finite value at flat index {i} in node {}", self.nodes.len());
            }
        }
        self.nodes.push(Node { rows, cols, value, grad: None, needs_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, t: TensorId) -> bool {
        self.nodes[t.0].needs_grad
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn zip2(&mut self, a: TensorId, b: TensorId, f: impl Fn(S, S) -> S, op: Op<S>) -> TensorId {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!((na.rows, na.cols), (nb.rows, nb.cols), "elementwise shape mismatch");
        let value: Vec<S> = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let needs = na.needs_grad || nb.needs_grad;
        let (rows, cols) = (na.rows, na.cols);
        self.push(rows, cols, value, needs, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip2(a, b, |x, y| x + y, Op::Add { a, b })
    }
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip2(a, b, |x, y| x - y, Op::Sub { a, b })
    }
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.zip2(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn map1(&mut self, a: TensorId, f: impl Fn(S) -> S, op: Op<S>) -> TensorId {
        let na = &self.nodes[a.0];
        let value: Vec<S> = na.value.iter().map(|&x| f(x)).collect();
        let (rows, cols, needs) = (na.rows, na.cols, na.needs_grad);
        self.push(rows, cols, value, needs, op)
    }

    pub fn scale(&mut self, a: TensorId, c: S) -> TensorId {
        self.map1(a, |x| x * c, Op::Scale { a, c })
    }
    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.map1(a, |x| x.exp(), Op::Exp { a })
    }
    /// Natural log; in strict mode a non-positive input is a domain error.
    pub fn log(&mut self, a: TensorId) -> TensorId {
        if self.strict {
            for (i, v) in self.nodes[a.0].value.iter().enumerate() {
                assert!(*v > S::ZERO, "log domain error at flat index {i}");
            }
        }
        self.map1(a, |x| x.ln(), Op::Log { a })
    }
    pub fn square(&mut self, a: TensorId) -> TensorId {
        self.map1(a, |x| x * x, Op::Square { a })
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// `a[m×k] · b[n×k]ᵀ -> [m×n]` (weights stored transposed, GPT-style).
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!(na.cols, nb.cols, "matmul inner extent mismatch: {}x{} · ({}x{})ᵀ", na.rows, na.cols, nb.rows, nb.cols);
        let (m, k, n) = (na.rows, na.cols, nb.rows);
        let mut out = vec![S::ZERO; m * n];
        {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            parallel::for_row_blocks(&mut out, n, |r0, blk| {
                let rows = blk.len() / n;
                S::mm_nt(&av[r0 * k..(r0 + rows) * k], bv, blk, rows, k, n);
            });
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(m, n, out, needs, Op::MatmulNT { a, b })
    }

    /// Add a [1×n] bias row to every row of `a`.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[bias.0]);
        assert_eq!(nb.rows, 1, "bias must be a single row");
        assert_eq!(na.cols, nb.cols, "bias width mismatch");
        let n = na.cols;
        let mut value = na.value.clone();
        for row in value.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&self.nodes[bias.0].value) {
                *v += *b;
            }
        }
        let (rows, needs) = (na.rows, na.needs_grad || nb.needs_grad);
        self.push(rows, n, value, needs, Op::AddBias { a, bias })
    }

    /// Straight-through mask application: forward multiplies by the 0/1
    /// mask, backward passes the upstream gradient through unchanged.
    pub fn ste_mask(&mut self, a: TensorId, mask: Arc<Vec<S>>) -> TensorId {
        let na = &self.nodes[a.0];
        assert_eq!(na.value.len(), mask.len(), "mask shape mismatch");
        let value: Vec<S> = na.value.iter().zip(mask.iter()).map(|(&w, &m)| w * m).collect();
        let (rows, cols, needs) = (na.rows, na.cols, na.needs_grad);
        self.push(rows, cols, value, needs, Op::SteMask { a })
    }

    /// Sum consecutive `k`-wide column groups of each row.
    pub fn group_sum_pool(&mut self, a: TensorId, k: usize) -> TensorId {
        let na = &self.nodes[a.0];
        assert!(k >= 1 && na.cols % k == 0, "group width {k} must divide {}", na.cols);
        let (rows, cols) = (na.rows, na.cols);
        let r = cols / k;
        let mut value = vec![S::ZERO; rows * r];
        for i in 0..rows {
            for g in 0..r {
                let mut s = S::ZERO;
                for t in 0..k {
                    s += na.value[i * cols + g * k + t];
                }
                value[i * r + g] = s;
            }
        }
        let needs = na.needs_grad;
        self.push(rows, r, value, needs, Op::GroupSumPool { a, k })
    }

    pub fn layernorm(&mut self, a: TensorId, gain: TensorId, bias: TensorId, eps: S) -> TensorId {
        let (na, ng, nb) = (&self.nodes[a.0], &self.nodes[gain.0], &self.nodes[bias.0]);
        assert_eq!(ng.rows, 1, "gain must be a single row");
        assert_eq!(nb.rows, 1, "bias must be a single row");
        assert!(ng.cols == na.cols && nb.cols == na.cols, "affine width mismatch");
        let (rows, cols) = (na.rows, na.cols);
        let inv_n = S::from_f64(1.0 / cols as f64);
        let mut value = vec![S::ZERO; rows * cols];
        let mut mean = vec![S::ZERO; rows];
        let mut rstd = vec![S::ZERO; rows];
        for i in 0..rows {
            let x = &na.value[i * cols..(i + 1) * cols];
            let mut mu = S::ZERO;
            for &v in x {
                mu += v;
            }
            mu *= inv_n;
            let mut var = S::ZERO;
            for &v in x {
                var += (v - mu) * (v - mu);
            }
            var *= inv_n;
            let rs = S::ONE / (var + eps).sqrt();
            mean[i] = mu;
            rstd[i] = rs;
            for j in 0..cols {
                value[i * cols + j] = (x[j] - mu) * rs * ng.value[j] + nb.value[j];
            }
        }
        let needs = na.needs_grad || ng.needs_grad || nb.needs_grad;
        self.push(rows, cols, value, needs, Op::LayerNorm { a, gain, bias, mean, rstd })
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let na = &self.nodes[a.0];
        let mut value = na.value.clone();
        let (rows, cols, needs) = (na.rows, na.cols, na.needs_grad);
        S::gelu_slice(&mut value);
        self.push(rows, cols, value, needs, Op::Gelu { a })
    }

    /// Row lookup: out[i,:] = table[ids[i],:].
    pub fn embed(&mut self, table: TensorId, ids: Arc<Vec<u32>>) -> TensorId {
        let nt = &self.nodes[table.0];
        let (v, d) = (nt.rows, nt.cols);
        let mut value = vec![S::ZERO; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            assert!((id as usize) < v, "token id {id} out of range (vocab {v})");
            value[i * d..(i + 1) * d].copy_from_slice(&nt.value[id as usize * d..(id as usize + 1) * d]);
        }
        let needs = nt.needs_grad;
        self.push(ids.len(), d, value, needs, Op::Embed { table, ids })
    }

    /// Softmax along `axis` (1 = within each row, 0 = within each column),
    /// computed with max-subtraction.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        assert!(axis <= 1, "axis must be 0 or 1");
        let na = &self.nodes[a.0];
        let (rows, cols) = (na.rows, na.cols);
        let mut value = na.value.clone();
        if axis == 1 {
            // rows are contiguous: shift by the max, exponentiate the whole
            // row at once, then normalize
            for row in value.chunks_mut(cols) {
                let mut mx = row[0];
                for &v in row[1..].iter() {
                    mx = mx.max(v);
                }
                for v in row.iter_mut() {
                    *v = *v - mx;
                }
                S::exp_slice(row);
                let mut denom = S::ZERO;
                for &v in row.iter() {
                    denom += v;
                }
                let inv = S::ONE / denom;
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
        } else {
            let at = |f: usize, t: usize| t * cols + f;
            for f in 0..cols {
                let mut mx = value[at(f, 0)];
                for t in 1..rows {
                    mx = mx.max(value[at(f, t)]);
                }
                let mut denom = S::ZERO;
                for t in 0..rows {
                    let e = (value[at(f, t)] - mx).exp();
                    value[at(f, t)] = e;
                    denom += e;
                }
                let inv = S::ONE / denom;
                for t in 0..rows {
                    value[at(f, t)] *= inv;
                }
            }
        }
        let needs = na.needs_grad;
        self.push(rows, cols, value, needs, Op::Softmax { a, axis })
    }

    // ── attention ───────────────────────────────────────────────────────

    /// Causal attention scores. `q`, `k` are [B·seq × heads·dh]; output is
    /// [B·heads·seq × seq] with out[(b·H+h)·seq+r, j] = scale·⟨q_r, k_j⟩ for
    /// j ≤ r and exact 0 above the diagonal.
    pub fn causal_scores(&mut self, q: TensorId, k: TensorId, heads: usize, seq: usize, scale: S) -> TensorId {
        let (nq, nk) = (&self.nodes[q.0], &self.nodes[k.0]);
        assert_eq!((nq.rows, nq.cols), (nk.rows, nk.cols), "q/k shape mismatch");
        assert!(nq.rows % seq == 0, "rows not a multiple of seq");
        assert!(nq.cols % heads == 0, "cols not a multiple of heads");
        let b = nq.rows / seq;
        let dh = nq.cols / heads;
        let d = nq.cols;
        let mut value = vec![S::ZERO; b * heads * seq * seq];
        for bi in 0..b {
            for h in 0..heads {
                for r in 0..seq {
                    let qr = &nq.value[(bi * seq + r) * d + h * dh..(bi * seq + r) * d + (h + 1) * dh];
                    let orow = &mut value[((bi * heads + h) * seq + r) * seq..((bi * heads + h) * seq + r + 1) * seq];
                    for (j, o) in orow.iter_mut().enumerate().take(r + 1) {
                        let kj = &nk.value[(bi * seq + j) * d + h * dh..(bi * seq + j) * d + (h + 1) * dh];
                        *o = scale * S::dot(qr, kj);
                    }
                }
            }
        }
        let needs = nq.needs_grad || nk.needs_grad;
        self.push(b * heads * seq, seq, value, needs, Op::CausalScores { q, k, heads, seq, scale })
    }

    /// Row softmax over the causal prefix (columns 0..=r for local row r);
    /// columns beyond the prefix stay exact zeros.
    pub fn causal_softmax(&mut self, a: TensorId, seq: usize) -> TensorId {
        let na = &self.nodes[a.0];
        assert_eq!(na.cols, seq, "scores width must equal seq");
        assert!(na.rows % seq == 0, "rows not a multiple of seq");
        let rows = na.rows;
        let mut value = na.value.clone();
        for i in 0..rows {
            let r = i % seq;
            let full = &mut value[i * seq..(i + 1) * seq];
            // exact zeros above the diagonal, whatever the input held there
            for v in full[r + 1..].iter_mut() {
                *v = S::ZERO;
            }
            let row = &mut full[..r + 1];
            let mut mx = row[0];
            for &v in row[1..].iter() {
                mx = mx.max(v);
            }
            for v in row.iter_mut() {
                *v = *v - mx;
            }
            S::exp_slice(row);
            let mut denom = S::ZERO;
            for &v in row.iter() {
                denom += v;
            }
            let inv = S::ONE / denom;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let needs = na.needs_grad;
        self.push(rows, seq, value, needs, Op::CausalSoftmax { a, seq })
    }

    /// Weighted sum of values: out[b·seq+r, h·dh+c] = Σ_{j≤r} p[...]·v[...].
    pub fn causal_pv(&mut self, p: TensorId, v: TensorId, heads: usize, seq: usize) -> TensorId {
        let (np, nv) = (&self.nodes[p.0], &self.nodes[v.0]);
        assert_eq!(np.cols, seq, "probs width must equal seq");
        assert!(nv.rows % seq == 0 && nv.cols % heads == 0, "v shape mismatch");
        let b = nv.rows / seq;
        assert_eq!(np.rows, b * heads * seq, "probs rows mismatch");
        let d = nv.cols;
        let dh = d / heads;
        let mut value = vec![S::ZERO; nv.rows * d];
        for bi in 0..b {
            for h in 0..heads {
                for r in 0..seq {
                    let prow = &np.value[((bi * heads + h) * seq + r) * seq..];
                    let orow = start_mut(&mut value, (bi * seq + r) * d + h * dh, dh);
                    for j in 0..=r {
                        let vj = &nv.value[(bi * seq + j) * d + h * dh..(bi * seq + j) * d + (h + 1) * dh];
                        S::axpy(orow, prow[j], vj);
                    }
                }
            }
        }
        let needs = np.needs_grad || nv.needs_grad;
        self.push(nv.rows, d, value, needs, Op::CausalPV { p, v, heads, seq })
    }

    // ── reductions and losses ───────────────────────────────────────────

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let na = &self.nodes[a.0];
        let s = crate::scalar::sum_lanes(&na.value);
        let needs = na.needs_grad;
        self.push(1, 1, vec![s], needs, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let len = self.nodes[a.0].value.len();
        let s = self.sum_all(a);
        self.scale(s, S::from_f64(1.0 / len as f64))
    }

    /// Σ (a − target)² against a constant target buffer.
    pub fn sq_err_const(&mut self, a: TensorId, target: Arc<Vec<S>>) -> TensorId {
        let na = &self.nodes[a.0];
        assert_eq!(na.value.len(), target.len(), "target shape mismatch");
        let mut s = S::ZERO;
        for (&x, &t) in na.value.iter().zip(target.iter()) {
            s += (x - t) * (x - t);
        }
        let needs = na.needs_grad;
        self.push(1, 1, vec![s], needs, Op::SqErrConst { a, target })
    }

    /// Mean over rows of −log softmax(logits)[target].
    pub fn cross_entropy_mean(&mut self, logits: TensorId, targets: Arc<Vec<u32>>) -> TensorId {
        let nl = &self.nodes[logits.0];
        let (rows, cols) = (nl.rows, nl.cols);
        assert_eq!(targets.len(), rows, "one target per row");
        let mut probs = vec![S::ZERO; rows * cols];
        let mut total = S::ZERO;
        for i in 0..rows {
            let x = &nl.value[i * cols..(i + 1) * cols];
            let t = targets[i] as usize;
            assert!(t < cols, "target id {t} out of range (vocab {cols})");
            let lse = log_softmax_row(x, &mut probs[i * cols..(i + 1) * cols]);
            total += -(x[t] - lse);
        }
        let value = total * S::from_f64(1.0 / rows as f64);
        let needs = nl.needs_grad;
        self.push(1, 1, vec![value], needs, Op::CrossEntropy { logits, targets, probs })
    }

    /// Mean over rows of KL(p_t ‖ p_s) at temperature `temp`. Teacher rows
    /// are constants: probabilities and log-probabilities at the same
    /// temperature. Gradient w.r.t. logits is (p_s − p_t)/(rows·temp).
    pub fn forward_kl_mean(&mut self, logits: TensorId, t_probs: Arc<Vec<S>>, t_logp: Arc<Vec<S>>, temp: S) -> TensorId {
        let nl = &self.nodes[logits.0];
        let (rows, cols) = (nl.rows, nl.cols);
        assert_eq!(t_probs.len(), rows * cols, "teacher probs shape mismatch");
        assert_eq!(t_logp.len(), rows * cols, "teacher log-probs shape mismatch");
        assert!(temp > S::ZERO, "temperature must be positive");
        let inv_t = S::ONE / temp;
        let mut probs = vec![S::ZERO; rows * cols];
        let mut total = S::ZERO;
        let mut scaled = vec![S::ZERO; cols];
        for i in 0..rows {
            let x = &nl.value[i * cols..(i + 1) * cols];
            for (s, &v) in scaled.iter_mut().zip(x) {
                *s = v * inv_t;
            }
            let lse = log_softmax_row(&scaled, &mut probs[i * cols..(i + 1) * cols]);
            for j in 0..cols {
                let pt = t_probs[i * cols + j];
                if pt > S::ZERO {
                    total += pt * (t_logp[i * cols + j] - (scaled[j] - lse));
                }
            }
        }
        let value = total * S::from_f64(1.0 / rows as f64);
        let needs = nl.needs_grad;
        self.push(1, 1, vec![value], needs, Op::ForwardKl { logits, t_probs, temp, probs })
    }

    /// Mean over rows of KL(p_s ‖ p_t); teacher log-probs constant.
    pub fn reverse_kl_mean(&mut self, logits: TensorId, t_logp: Arc<Vec<S>>) -> TensorId {
        let nl = &self.nodes[logits.0];
        let (rows, cols) = (nl.rows, nl.cols);
        assert_eq!(t_logp.len(), rows * cols, "teacher log-probs shape mismatch");
        let mut probs = vec![S::ZERO; rows * cols];
        let mut row_kl = vec![S::ZERO; rows];
        let mut total = S::ZERO;
        for i in 0..rows {
            let x = &nl.value[i * cols..(i + 1) * cols];
            let lse = log_softmax_row(x, &mut probs[i * cols..(i + 1) * cols]);
            let mut kl = S::ZERO;
            for j in 0..cols {
                let ps = probs[i * cols + j];
                if ps > S::ZERO {
                    kl += ps * ((x[j] - lse) - t_logp[i * cols + j]);
                }
            }
            row_kl[i] = kl;
            total += kl;
        }
        let value = total * S::from_f64(1.0 / rows as f64);
        let needs = nl.needs_grad;
        self.push(1, 1, vec![value], needs, Op::ReverseKl { logits, t_logp, probs, row_kl })
    }

    /// Mean over rows of KL(teacher ‖ student) on causal attention rows;
    /// `p` must come from `causal_softmax` (strictly positive prefix).
    /// Mean over causal rows of KL(teacher_row ‖ student_row), taking the
    /// student's pre-softmax scores. The row softmax is folded in as a
    /// log-softmax so saturated rows (probabilities that would underflow to
    /// zero) still yield a finite loss and a bounded gradient.
    pub fn attn_kl_const(&mut self, scores: TensorId, t_probs: Arc<Vec<S>>, seq: usize) -> TensorId {
        let ns = &self.nodes[scores.0];
        assert_eq!(ns.cols, seq, "scores width must equal seq");
        assert_eq!(t_probs.len(), ns.value.len(), "teacher attention shape mismatch");
        let rows = ns.rows;
        let mut probs = vec![S::ZERO; seq];
        let mut total = S::ZERO;
        for i in 0..rows {
            let r = i % seq;
            let row = &ns.value[i * seq..i * seq + r + 1];
            let lse = log_softmax_row(row, &mut probs[..r + 1]);
            for j in 0..=r {
                let pt = t_probs[i * seq + j];
                if pt > S::ZERO {
                    total += pt * (pt.ln() - (row[j] - lse));
                }
            }
        }
        let value = total * S::from_f64(1.0 / rows as f64);
        let needs = ns.needs_grad;
        self.push(1, 1, vec![value], needs, Op::AttnKlConst { scores, t_probs, seq })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate into the
    /// persistent `grad` slots; intermediate adjoints are scratch.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![S::ONE]);
        for idx in (0..n).rev() {
            if adj[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let g = adj[idx].take().unwrap();
            self.propagate(idx, &g, &mut adj);
        }
    }

    fn add_adj(&self, adj: &mut [Option<Vec<S>>], t: TensorId, f: impl FnOnce(&mut [S])) {
        if !self.nodes[t.0].needs_grad {
            return;
        }
        let buf = adj[t.0].get_or_insert_with(|| vec![S::ZERO; self.nodes[t.0].value.len()]);
        f(buf);
    }

    fn propagate(&mut self, idx: usize, g: &[S], adj: &mut [Option<Vec<S>>]) {
        // Leaf: fold the adjoint into the persistent grad slot.
        if let Op::Leaf = self.nodes[idx].op {
            let node = &mut self.nodes[idx];
            let grad = node.grad.get_or_insert_with(|| vec![S::ZERO; node.value.len()]);
            for (dst, &src) in grad.iter_mut().zip(g) {
                *dst += src;
            }
            return;
        }
        match &self.nodes[idx].op {
            Op::Leaf => unreachable!(),
            &Op::Add { a, b } => {
                self.add_adj(adj, a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                self.add_adj(adj, b, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            &Op::Sub { a, b } => {
                self.add_adj(adj, a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                self.add_adj(adj, b, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.add_adj(adj, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                self.add_adj(adj, b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale { a, c } => {
                self.add_adj(adj, a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s * c;
                    }
                });
            }
            &Op::Exp { a } => {
                let out = &self.nodes[idx].value;
                self.add_adj(adj, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * out[i];
                    }
                });
            }
            &Op::Log { a } => {
                let av = &self.nodes[a.0].value;
                self.add_adj(adj, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] / av[i];
                    }
                });
            }
            &Op::Square { a } => {
                let av = &self.nodes[a.0].value;
                let two = S::from_f64(2.0);
                self.add_adj(adj, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * two * av[i];
                    }
                });
            }
            &Op::MatmulNT { a, b } => {
                let (m, n) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let k = self.nodes[a.0].cols;
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA += g · B   (g: m×n, B: n×k)
                self.add_adj(adj, a, |buf| {
                    parallel::for_row_blocks(buf, k, |r0, blk| {
                        let rows = blk.len() / k;
                        S::mm_nn_acc(&g[r0 * n..(r0 + rows) * n], bv, blk, rows, n, k);
                    });
                });
                // dB += gᵀ · A  (rows of dB indexed by n)
                self.add_adj(adj, b, |buf| {
                    S::mm_tn_acc(g, av, buf, n, m, k);
                });
            }
            &Op::AddBias { a, bias } => {
                let n = self.nodes[idx].cols;
                self.add_adj(adj, a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                self.add_adj(adj, bias, |buf| {
                    for grow in g.chunks(n) {
                        for (d, &s) in buf.iter_mut().zip(grow) {
                            *d += s;
                        }
                    }
                });
            }
            Op::SteMask { a, .. } => {
                let a = *a;
                // Straight-through: mask is NOT applied to the gradient.
                self.add_adj(adj, a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            &Op::GroupSumPool { a, k } => {
                let r = self.nodes[idx].cols;
                self.add_adj(adj, a, |buf| {
                    let cols = r * k;
                    for i in 0..buf.len() / cols {
                        for gi in 0..r {
                            let gv = g[i * r + gi];
                            for t in 0..k {
                                buf[i * cols + gi * k + t] += gv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { a, gain, bias, mean, rstd } => {
                let (a, gain, bias) = (*a, *gain, *bias);
                let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let inv_n = S::from_f64(1.0 / cols as f64);
                let xv = &self.nodes[a.0].value;
                let gv = &self.nodes[gain.0].value;
                let (mean, rstd) = (mean.clone(), rstd.clone());
                self.add_adj(adj, bias, |buf| {
                    for grow in g.chunks(cols) {
                        for (d, &s) in buf.iter_mut().zip(grow) {
                            *d += s;
                        }
                    }
                });
                self.add_adj(adj, gain, |buf| {
                    for i in 0..rows {
                        for j in 0..cols {
                            let xhat = (xv[i * cols + j] - mean[i]) * rstd[i];
                            buf[j] += g[i * cols + j] * xhat;
                        }
                    }
                });
                self.add_adj(adj, a, |buf| {
                    for i in 0..rows {
                        let mut s1 = S::ZERO; // Σ dy·gain
                        let mut s2 = S::ZERO; // Σ dy·gain·x̂
                        for j in 0..cols {
                            let dy = g[i * cols + j] * gv[j];
                            let xhat = (xv[i * cols + j] - mean[i]) * rstd[i];
                            s1 += dy;
                            s2 += dy * xhat;
                        }
                        s1 *= inv_n;
                        s2 *= inv_n;
                        for j in 0..cols {
                            let dy = g[i * cols + j] * gv[j];
                            let xhat = (xv[i * cols + j] - mean[i]) * rstd[i];
                            buf[i * cols + j] += rstd[i] * (dy - s1 - xhat * s2);
                        }
                    }
                });
            }
            &Op::Gelu { a } => {
                let av = &self.nodes[a.0].value;
                self.add_adj(adj, a, |buf| S::gelu_bwd_acc(buf, g, av));
            }
            Op::Embed { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let d = self.nodes[idx].cols;
                self.add_adj(adj, table, |buf| {
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut buf[id as usize * d..(id as usize + 1) * d];
                        for (x, &s) in dst.iter_mut().zip(&g[i * d..(i + 1) * d]) {
                            *x += s;
                        }
                    }
                });
            }
            &Op::Softmax { a, axis } => {
                let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
                let p = &self.nodes[idx].value;
                self.add_adj(adj, a, |buf| {
                    let (fibers, len): (usize, usize) = if axis == 1 { (rows, cols) } else { (cols, rows) };
                    let at = |f: usize, t: usize| if axis == 1 { f * cols + t } else { t * cols + f };
                    for f in 0..fibers {
                        let mut dot = S::ZERO;
                        for t in 0..len {
                            dot += g[at(f, t)] * p[at(f, t)];
                        }
                        for t in 0..len {
                            buf[at(f, t)] += p[at(f, t)] * (g[at(f, t)] - dot);
                        }
                    }
                });
            }
            &Op::CausalScores { q, k, heads, seq, scale } => {
                let d = self.nodes[q.0].cols;
                let dh = d / heads;
                let b = self.nodes[q.0].rows / seq;
                let qv = &self.nodes[q.0].value;
                let kv = &self.nodes[k.0].value;
                self.add_adj(adj, q, |buf| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for r in 0..seq {
                                let grow = &g[((bi * heads + h) * seq + r) * seq..];
                                let dq = start_mut(buf, (bi * seq + r) * d + h * dh, dh);
                                for j in 0..=r {
                                    let kj = &kv[(bi * seq + j) * d + h * dh..(bi * seq + j) * d + (h + 1) * dh];
                                    S::axpy(dq, scale * grow[j], kj);
                                }
                            }
                        }
                    }
                });
                self.add_adj(adj, k, |buf| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for r in 0..seq {
                                let grow = &g[((bi * heads + h) * seq + r) * seq..];
                                let qr = &qv[(bi * seq + r) * d + h * dh..(bi * seq + r) * d + (h + 1) * dh];
                                for j in 0..=r {
                                    let dk = start_mut(buf, (bi * seq + j) * d + h * dh, dh);
                                    S::axpy(dk, scale * grow[j], qr);
                                }
                            }
                        }
                    }
                });
            }
            &Op::CausalSoftmax { a, seq } => {
                let rows = self.nodes[idx].rows;
                let p = &self.nodes[idx].value;
                self.add_adj(adj, a, |buf| {
                    for i in 0..rows {
                        let r = i % seq;
                        let prow = &p[i * seq..i * seq + r + 1];
                        let grow = &g[i * seq..i * seq + r + 1];
                        let mut dot = S::ZERO;
                        for t in 0..=r {
                            dot += grow[t] * prow[t];
                        }
                        let brow = &mut buf[i * seq..i * seq + r + 1];
                        for t in 0..=r {
                            brow[t] += prow[t] * (grow[t] - dot);
                        }
                    }
                });
            }
            &Op::CausalPV { p, v, heads, seq } => {
                let d = self.nodes[v.0].cols;
                let dh = d / heads;
                let b = self.nodes[v.0].rows / seq;
                let pv = &self.nodes[p.0].value;
                let vv = &self.nodes[v.0].value;
                self.add_adj(adj, p, |buf| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for r in 0..seq {
                                let grow = &g[(bi * seq + r) * d + h * dh..(bi * seq + r) * d + (h + 1) * dh];
                                let drow = &mut buf[((bi * heads + h) * seq + r) * seq..((bi * heads + h) * seq + r) * seq + r + 1];
                                for (j, dj) in drow.iter_mut().enumerate() {
                                    let vj = &vv[(bi * seq + j) * d + h * dh..(bi * seq + j) * d + (h + 1) * dh];
                                    *dj += S::dot(grow, vj);
                                }
                            }
                        }
                    }
                });
                self.add_adj(adj, v, |buf| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for r in 0..seq {
                                let grow = &g[(bi * seq + r) * d + h * dh..(bi * seq + r) * d + (h + 1) * dh];
                                let prow = &pv[((bi * heads + h) * seq + r) * seq..];
                                for j in 0..=r {
                                    let dv = start_mut(buf, (bi * seq + j) * d + h * dh, dh);
                                    S::axpy(dv, prow[j], grow);
                                }
                            }
                        }
                    }
                });
            }
            &Op::SumAll { a } => {
                let s = g[0];
                self.add_adj(adj, a, |buf| {
                    for d in buf.iter_mut() {
                        *d += s;
                    }
                });
            }
            Op::SqErrConst { a, target } => {
                let a = *a;
                let target = target.clone();
                let av = &self.nodes[a.0].value;
                let two = S::from_f64(2.0);
                let s = g[0];
                self.add_adj(adj, a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += s * two * (av[i] - target[i]);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let logits = *logits;
                let rows = self.nodes[logits.0].rows;
                let cols = self.nodes[logits.0].cols;
                let inv = S::from_f64(1.0 / rows as f64) * g[0];
                let (targets, probs) = (targets.clone(), probs);
                self.add_adj(adj, logits, |buf| {
                    for i in 0..rows {
                        for j in 0..cols {
                            let ind = if targets[i] as usize == j { S::ONE } else { S::ZERO };
                            buf[i * cols + j] += inv * (probs[i * cols + j] - ind);
                        }
                    }
                });
            }
            Op::ForwardKl { logits, t_probs, temp, probs } => {
                let logits = *logits;
                let rows = self.nodes[logits.0].rows;
                let cols = self.nodes[logits.0].cols;
                let inv = S::from_f64(1.0 / rows as f64) / *temp * g[0];
                let t_probs = t_probs.clone();
                self.add_adj(adj, logits, |buf| {
                    for i in 0..rows * cols {
                        buf[i] += inv * (probs[i] - t_probs[i]);
                    }
                });
            }
            Op::ReverseKl { logits, t_logp, probs, row_kl } => {
                let logits = *logits;
                let rows = self.nodes[logits.0].rows;
                let cols = self.nodes[logits.0].cols;
                let inv = S::from_f64(1.0 / rows as f64) * g[0];
                let t_logp = t_logp.clone();
                self.add_adj(adj, logits, |buf| {
                    for i in 0..rows {
                        for j in 0..cols {
                            let ps = probs[i * cols + j];
                            if ps > S::ZERO {
                                let lr = ps.ln() - t_logp[i * cols + j];
                                buf[i * cols + j] += inv * ps * (lr - row_kl[i]);
                            }
                        }
                    }
                });
            }
            Op::AttnKlConst { scores, t_probs, seq } => {
                let (scores, seq) = (*scores, *seq);
                let rows = self.nodes[scores.0].rows;
                let sv = &self.nodes[scores.0].value;
                let inv = S::from_f64(1.0 / rows as f64) * g[0];
                let t_probs = t_probs.clone();
                // d/ds_k of −Σ_j pt_j·logsoftmax(s)_j = T·softmax(s)_k − pt_k
                // with T = Σ_j pt_j, so the gradient stays in [−1, 1].
                self.add_adj(adj, scores, |buf| {
                    let mut sm = vec![S::ZERO; seq];
                    for i in 0..rows {
                        let r = i % seq;
                        let row = &sv[i * seq..i * seq + r + 1];
                        log_softmax_row(row, &mut sm[..r + 1]);
                        let mut t_row = S::ZERO;
                        for j in 0..=r {
                            t_row += t_probs[i * seq + j];
                        }
                        for j in 0..=r {
                            buf[i * seq + j] += inv * (t_row * sm[j] - t_probs[i * seq + j]);
                        }
                    }
                });
            }
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Disjoint mutable window starting at `off`, length `len`.
fn start_mut<S>(buf: &mut [S], off: usize, len: usize) -> &mut [S] {
    &mut buf[off..off + len]
}

/// Stable log-softmax of one row; writes probabilities into `probs` and
/// returns the log-sum-exp (so `logp[j] = x[j] − lse`).
fn log_softmax_row<S: Scalar>(x: &[S], probs: &mut [S]) -> S {
    let mut mx = x[0];
    for &v in &x[1..] {
        mx = mx.max(v);
    }
    for (p, &v) in probs.iter_mut().zip(x) {
        *p = v - mx;
    }
    S::exp_slice(probs);
    let mut denom = S::ZERO;
    for &p in probs.iter() {
        denom += p;
    }
    let inv = S::ONE / denom;
    for p in probs.iter_mut() {
        *p *= inv;
    }
    denom.ln() + mx
}

/// Row-major softmax utility for plain buffers (teacher-side helpers).
pub fn softmax_rows_inplace<S: Scalar>(buf: &mut [S], cols: usize) {
    assert!(cols > 0 && buf.len() % cols == 0);
    for row in buf.chunks_mut(cols) {
        let mut mx = row[0];
        for &v in row[1..].iter() {
            mx = mx.max(v);
        }
        for v in row.iter_mut() {
            *v = *v - mx;
        }
        S::exp_slice(row);
        let mut denom = S::ZERO;
        for &v in row.iter() {
            denom += v;
        }
        let inv = S::ONE / denom;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Row-major log-softmax utility for plain buffers.
pub fn log_softmax_rows<S: Scalar>(src: &[S], cols: usize) -> Vec<S> {
    assert!(cols > 0 && src.len() % cols == 0);
    let mut out = vec![S::ZERO; src.len()];
    let mut scratch = vec![S::ZERO; cols];
    for (i, row) in src.chunks(cols).enumerate() {
        let lse = log_softmax_row(row, &mut scratch);
        for j in 0..cols {
            out[i * cols + j] = row[j] - lse;
        }
    }
    out
}

/// Central-difference gradient verification. `eval` must recompute the loss
/// from the given parameter buffers (same graph construction every call);
/// `skip(p, i)` can exclude coordinates where the tape intentionally
/// disagrees with finite differences (straight-through pruned slots).
/// Returns the maximum relative error over all checked coordinates.
pub fn finite_diff_check(
    params: &mut [Vec<f64>],
    tape_grads: &[Vec<f64>],
    h: f64,
    skip: impl Fn(usize, usize) -> bool,
    mut eval: impl FnMut(&[Vec<f64>]) -> f64,
) -> f64 {
    assert_eq!(params.len(), tape_grads.len());
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        assert_eq!(params[p].len(), tape_grads[p].len());
        for i in 0..params[p].len() {
            if skip(p, i) {
                continue;
            }
            let orig = params[p][i];
            params[p][i] = orig + h;
            let up = eval(params);
            params[p][i] = orig - h;
            let down = eval(params);
            params[p][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = tape_grads[p][i];
            let err = (fd - g).abs() / f64::max(f64::max(fd.abs(), g.abs()), 1e-6);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Arc<Vec<u32>> {
        Arc::new(v.to_vec())
    }

    // ── forward-value oracles ───────────────────────────────────────────

    #[test]
    fn matmul_known_values() {
        let mut g = Graph::<f64>::strict();
        let a = g.param(1, 2, &[1.0, 2.0]);
        let b = g.param(1, 2, &[3.0, 4.0]);
        let y = g.matmul_nt(a, b);
        assert_eq!(g.value(y), &[11.0]); // 1·3+2·4

        let i2 = g.param(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let j2 = g.param(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y2 = g.matmul_nt(i2, j2);
        assert_eq!(g.value(y2), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn elementwise_known_values() {
        let mut g = Graph::<f64>::new();
        let a = g.param(1, 2, &[1.0, 2.0]);
        let b = g.param(1, 2, &[3.0, 4.0]);
        let s = g.add(a, b);
        assert_eq!(g.value(s), &[4.0, 6.0]);
        let sc = g.scale(a, 0.5);
        assert_eq!(g.value(sc), &[0.5, 1.0]);
        let sq = g.square(b);
        assert_eq!(g.value(sq), &[9.0, 16.0]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::<f64>::strict();
        let a = g.param(1, 2, &[0.0, 0.0]);
        let p = g.softmax(a, 1);
        assert!((g.value(p)[0] - 0.5).abs() < 1e-12);

        let big = g.param(1, 2, &[1000.0, 0.0]);
        let pb = g.softmax(big, 1);
        assert!(g.value(pb)[0] > 0.999_999);
        assert!(g.value(pb).iter().all(|v| v.is_finite()));

        // column-axis softmax sums to 1 down each column
        let m = g.param(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.0, 0.0]);
        let pc = g.softmax(m, 0);
        let v = g.value(pc);
        for c in 0..2 {
            let s: f64 = (0..3).map(|r| v[r * 2 + c]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_forced_values() {
        let mut g = Graph::<f64>::new();
        let x = g.param(1, 2, &[1.0, 3.0]);
        let gain = g.param(1, 2, &[1.0, 1.0]);
        let bias = g.param(1, 2, &[0.0, 0.0]);
        // eps→0: (x−2)/1 = [−1, 1]
        let y = g.layernorm(x, gain, bias, 1e-12);
        let v = g.value(y);
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);

        // constant row → zeros before affine (eps guards the division)
        let c = g.param(1, 4, &[2.0, 2.0, 2.0, 2.0]);
        let gain4 = g.param(1, 4, &[1.0; 4]);
        let bias4 = g.param(1, 4, &[0.0; 4]);
        let yc = g.layernorm(c, gain4, bias4, 1e-5);
        assert!(g.value(yc).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut g = Graph::<f64>::strict();
        let logits = g.param(2, 4, &[0.0; 8]);
        let l = g.cross_entropy_mean(logits, ids(&[1, 3]));
        assert!((g.scalar(l) - 4.0f64.ln()).abs() < 1e-12);

        // dominant logit at the target → loss ≈ 0
        let mut hot = vec![0.0; 8];
        hot[2] = 50.0;
        hot[4 + 1] = 50.0;
        let logits2 = g.param(2, 4, &hot);
        let l2 = g.cross_entropy_mean(logits2, ids(&[2, 1]));
        assert!(g.scalar(l2) < 1e-12);
        assert!(g.scalar(l2) >= 0.0);
    }

    #[test]
    fn cross_entropy_matches_direct_summation() {
        let mut g = Graph::<f64>::strict();
        let x: Vec<f64> = (0..3 * 5).map(|i| ((i * 7 + 3) % 11) as f64 * 0.3 - 1.5).collect();
        let t = [4u32, 0, 2];
        let logits = g.param(3, 5, &x);
        let l = g.cross_entropy_mean(logits, ids(&t));
        // direct: mean of −log(exp(x_t)/Σexp)
        let mut want = 0.0;
        for i in 0..3 {
            let row = &x[i * 5..(i + 1) * 5];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want += -(row[t[i] as usize].exp() / denom).ln();
        }
        want /= 3.0;
        assert!((g.scalar(l) - want).abs() < 1e-6, "{} vs {want}", g.scalar(l));
    }

    #[test]
    fn ste_mask_passes_gradient_straight_through() {
        // Identical downstream graphs; one sees masked values as a leaf.
        let w = [1.0, -2.0, 3.0, 4.0];
        let mask = Arc::new(vec![0.0, 1.0, 1.0, 0.0]);
        let x = [0.5, 0.25];

        let mut g1 = Graph::<f64>::new();
        let wid = g1.param(2, 2, &w);
        let wm = g1.ste_mask(wid, mask.clone());
        assert_eq!(g1.value(wm), &[0.0, -2.0, 3.0, 0.0]);
        let xid = g1.constant(1, 2, &x);
        let y = g1.matmul_nt(xid, wm);
        let sq = g1.square(y);
        let loss = g1.sum_all(sq);
        g1.backward(loss);
        let grad_w = g1.leaf_grad(wid).unwrap().to_vec();

        let mut g2 = Graph::<f64>::new();
        let masked: Vec<f64> = w.iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
        let wtid = g2.param(2, 2, &masked);
        let xid2 = g2.constant(1, 2, &x);
        let y2 = g2.matmul_nt(xid2, wtid);
        let sq2 = g2.square(y2);
        let loss2 = g2.sum_all(sq2);
        g2.backward(loss2);
        let grad_wt = g2.leaf_grad(wtid).unwrap();

        // ∂L/∂w == ∂L/∂W̃ exactly, including pruned slots.
        assert_eq!(grad_w, grad_wt);
    }

    #[test]
    fn backward_twice_doubles_leaf_grads() {
        let mut g = Graph::<f64>::new();
        let a = g.param(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sq = g.square(a);
        let loss = g.sum_all(sq);
        g.backward(loss);
        let once = g.leaf_grad(a).unwrap().to_vec();
        g.backward(loss);
        let twice = g.leaf_grad(a).unwrap().to_vec();
        for (o, t) in once.iter().zip(&twice) {
            assert_eq!(*t, 2.0 * *o);
        }
    }

    #[test]
    fn causality_zero_above_diagonal() {
        let mut g = Graph::<f64>::strict();
        let seq = 4;
        let q = g.param(seq, 2, &[0.3, -0.2, 0.7, 0.1, -0.5, 0.4, 0.2, 0.9]);
        let k = g.param(seq, 2, &[0.1, 0.6, -0.3, 0.2, 0.8, -0.1, 0.05, 0.3]);
        let v = g.param(seq, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let s = g.causal_scores(q, k, 1, seq, 1.0);
        let p = g.causal_softmax(s, seq);
        let pv = g.value(p);
        for r in 0..seq {
            for j in 0..seq {
                if j > r {
                    assert_eq!(pv[r * seq + j], 0.0, "leak at ({r},{j})");
                } else {
                    assert!(pv[r * seq + j] > 0.0);
                }
            }
            let sum: f64 = (0..=r).map(|j| pv[r * seq + j]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        // first row attends only to itself → output row 0 == v row 0
        let o = g.causal_pv(p, v, 1, seq);
        assert!((g.value(o)[0] - 1.0).abs() < 1e-12);
        assert!((g.value(o)[1] - 2.0).abs() < 1e-12);
    }

    /// Raw scores with garbage above the diagonal must still softmax to
    /// exact zeros there (losses read the whole probability tensor).
    #[test]
    fn causal_softmax_scrubs_above_diagonal_input() {
        let mut g = Graph::<f64>::strict();
        let seq = 3;
        let s = g.param(seq, seq, &[0.5, 99.0, -7.0, 0.1, 0.2, 42.0, 0.3, -0.1, 0.4]);
        let p = g.causal_softmax(s, seq);
        let pv = g.value(p);
        assert_eq!(pv[1], 0.0);
        assert_eq!(pv[2], 0.0);
        assert_eq!(pv[5], 0.0);
        for r in 0..seq {
            let sum: f64 = (0..=r).map(|j| pv[r * seq + j]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_kl_known_cases() {
        let mut g = Graph::<f64>::strict();
        // identical distributions → 0
        let z: Vec<f64> = vec![0.2, -0.4, 0.9, 0.0];
        let probs = {
            let mut p = z.clone();
            softmax_rows_inplace(&mut p, 4);
            Arc::new(p)
        };
        let logp = Arc::new(log_softmax_rows(&z, 4));
        let zs = g.param(1, 4, &z);
        let l = g.forward_kl_mean(zs, probs, logp, 1.0);
        assert!(g.scalar(l).abs() < 1e-12);

        // teacher ≈ one-hot, student uniform → ≈ ln 4
        let zt = vec![60.0, 0.0, 0.0, 0.0];
        let mut pt = zt.clone();
        softmax_rows_inplace(&mut pt, 4);
        let lt = log_softmax_rows(&zt, 4);
        let zu = g.param(1, 4, &[0.0; 4]);
        let l2 = g.forward_kl_mean(zu, Arc::new(pt), Arc::new(lt), 1.0);
        assert!((g.scalar(l2) - 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn forward_kl_matches_double_sum_oracle() {
        let zt: Vec<f64> = (0..2 * 5).map(|i| ((i * 13 + 5) % 7) as f64 * 0.4 - 1.0).collect();
        let zs: Vec<f64> = (0..2 * 5).map(|i| ((i * 11 + 2) % 9) as f64 * 0.3 - 1.2).collect();
        let mut pt = zt.clone();
        softmax_rows_inplace(&mut pt, 5);
        let lt = log_softmax_rows(&zt, 5);
        let mut ps = zs.clone();
        softmax_rows_inplace(&mut ps, 5);
        let ls = log_softmax_rows(&zs, 5);
        let mut want = 0.0;
        for i in 0..2 * 5 {
            want += pt[i] * (lt[i] - ls[i]);
        }
        want /= 2.0;

        let mut g = Graph::<f64>::strict();
        let z = g.param(2, 5, &zs);
        let l = g.forward_kl_mean(z, Arc::new(pt), Arc::new(lt), 1.0);
        assert!((g.scalar(l) - want).abs() < 1e-9);
        assert!(g.scalar(l) >= 0.0);
    }

    #[test]
    fn reverse_kl_known_cases() {
        // identical → 0; uniform teacher → ln V − H(student)
        let zs = vec![0.7, -0.3, 0.1, 0.4];
        let lt0 = log_softmax_rows(&zs, 4);
        let mut g = Graph::<f64>::strict();
        let z = g.param(1, 4, &zs);
        let l = g.reverse_kl_mean(z, Arc::new(lt0));
        assert!(g.scalar(l).abs() < 1e-12);

        let lt_u = log_softmax_rows(&[0.0, 0.0, 0.0, 0.0], 4);
        let l2 = g.reverse_kl_mean(z, Arc::new(lt_u));
        let mut ps = zs.clone();
        softmax_rows_inplace(&mut ps, 4);
        let h: f64 = -ps.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((g.scalar(l2) - (4.0f64.ln() - h)).abs() < 1e-9);
    }

    #[test]
    fn forward_and_reverse_kl_differ_on_asymmetric_pair() {
        let zt = vec![2.0, 0.0, -1.0];
        let zs = vec![0.0, 1.0, 0.0];
        let mut pt = zt.clone();
        softmax_rows_inplace(&mut pt, 3);
        let lt = log_softmax_rows(&zt, 3);
        let mut g = Graph::<f64>::strict();
        let z = g.param(1, 3, &zs);
        let f = g.forward_kl_mean(z, Arc::new(pt), Arc::new(lt.clone()), 1.0);
        let r = g.reverse_kl_mean(z, Arc::new(lt));
        assert!((g.scalar(f) - g.scalar(r)).abs() > 1e-3);
    }

    #[test]
    fn attn_kl_direct_value() {
        // one token, one head, rows [0.5,0.5] vs [0.9,0.1]:
        // 0.5·ln(0.5/0.9)+0.5·ln(0.5/0.1) ≈ 0.5108
        let seq = 2;
        let mut g = Graph::<f64>::strict();
        // craft scores so row 1 softmaxes to [0.9, 0.1]
        let s9 = (0.9f64 / 0.1).ln();
        let scores = g.param(seq, seq, &[0.0, 0.0, s9, 0.0]);
        let p = g.causal_softmax(scores, seq);
        let pv = g.value(p);
        assert!((pv[2] - 0.9).abs() < 1e-12);
        // teacher: row 0 must be [1,0]; row 1 [0.5, 0.5]
        let t = Arc::new(vec![1.0, 0.0, 0.5, 0.5]);
        let l = g.attn_kl_const(scores, t, seq);
        let want = (0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln()) / 2.0; // mean over 2 rows
        assert!((g.scalar(l) - want).abs() < 1e-9, "{} vs {want}", g.scalar(l));
        assert!((2.0 * g.scalar(l) - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn attn_kl_finite_on_saturated_rows() {
        // score rows extreme enough that their softmax underflows to exact
        // zeros in f32 must still give a finite loss and bounded gradients
        let seq = 4;
        let mut g = Graph::<f32>::new();
        let raw: Vec<f32> = (0..seq * seq)
            .map(|i| if i % (seq + 1) == 0 { 300.0 } else { -300.0 })
            .collect();
        let s = g.param(seq, seq, &raw);
        let mut t = vec![0.0f32; seq * seq];
        for r in 0..seq {
            for j in 0..=r {
                t[r * seq + j] = 1.0 / (r + 1) as f32;
            }
        }
        let l = g.attn_kl_const(s, Arc::new(t), seq);
        assert!(g.scalar(l).is_finite(), "loss is {}", g.scalar(l));
        g.backward(l);
        let grad = g.leaf_grad(s).unwrap();
        assert!(grad.iter().all(|x| x.is_finite()));
        assert!(grad.iter().all(|x| x.abs() <= 1.0), "gradient not bounded: {grad:?}");
    }

    #[test]
    fn group_sum_pool_values_and_grad() {
        let mut g = Graph::<f64>::new();
        let a = g.param(1, 8, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let p = g.group_sum_pool(a, 4);
        assert_eq!(g.value(p), &[10.0, 26.0]);
        let w = g.constant(1, 2, &[2.0, -1.0]);
        let y = g.mul(p, w);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.leaf_grad(a).unwrap(), &[2.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0, -1.0]);
    }

    // ── gradient checks (finite-difference oracles) ─────────────────────

    /// Generic harness: loss built from a single [r×c] parameter.
    fn check_one(rows: usize, cols: usize, seed_mult: f64, build: impl Fn(&mut Graph<f64>, TensorId) -> TensorId) -> f64 {
        let base: Vec<f64> = (0..rows * cols)
            .map(|i| ((i * 31 + 7) % 17) as f64 * 0.11 * seed_mult - 0.8)
            .collect();
        let mut g = Graph::<f64>::new();
        let p = g.param(rows, cols, &base);
        let loss = build(&mut g, p);
        g.backward(loss);
        let tape = vec![g.leaf_grad(p).unwrap().to_vec()];
        let mut params = vec![base];
        finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let p = g.param(rows, cols, &ps[0]);
            let loss = build(&mut g, p);
            g.scalar(loss)
        })
    }

    #[test]
    fn grad_elementwise_ops() {
        let e = check_one(2, 3, 1.0, |g, p| {
            let s = g.square(p);
            g.sum_all(s)
        });
        assert!(e < 1e-6, "square: {e}");

        let e = check_one(2, 3, 1.0, |g, p| {
            let c = g.constant(2, 3, &[0.4, -0.7, 1.1, 0.9, -0.2, 0.5]);
            let m = g.mul(p, c);
            let a = g.add(m, p);
            let s = g.sub(a, c);
            let sc = g.scale(s, 1.7);
            let q = g.square(sc);
            g.sum_all(q)
        });
        assert!(e < 1e-6, "mul/add/sub/scale: {e}");

        let e = check_one(2, 3, 0.3, |g, p| {
            let ex = g.exp(p);
            let sq = g.square(ex);
            g.sum_all(sq)
        });
        assert!(e < 1e-6, "exp: {e}");

        let e = check_one(2, 3, 1.0, |g, p| {
            let sq = g.square(p); // strictly positive
            let c = g.constant(2, 3, &[0.01; 6]);
            let pos = g.add(sq, c);
            let lg = g.log(pos);
            let s = g.square(lg);
            g.sum_all(s)
        });
        assert!(e < 1e-6, "log: {e}");
    }

    #[test]
    fn grad_matmul_both_sides() {
        // 3×4 · (5×4)ᵀ per the contract, checking ∂/∂a and ∂/∂b.
        let a0: Vec<f64> = (0..12).map(|i| ((i * 23 + 3) % 13) as f64 * 0.17 - 1.0).collect();
        let b0: Vec<f64> = (0..20).map(|i| ((i * 19 + 11) % 15) as f64 * 0.13 - 0.9).collect();
        let build = |g: &mut Graph<f64>, pa: TensorId, pb: TensorId| {
            let y = g.matmul_nt(pa, pb);
            let q = g.square(y);
            g.sum_all(q)
        };
        let mut g = Graph::<f64>::new();
        let pa = g.param(3, 4, &a0);
        let pb = g.param(5, 4, &b0);
        let loss = build(&mut g, pa, pb);
        g.backward(loss);
        let tape = vec![g.leaf_grad(pa).unwrap().to_vec(), g.leaf_grad(pb).unwrap().to_vec()];
        let mut params = vec![a0, b0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let pa = g.param(3, 4, &ps[0]);
            let pb = g.param(5, 4, &ps[1]);
            let l = build(&mut g, pa, pb);
            g.scalar(l)
        });
        assert!(e < 1e-6, "matmul: {e}");
    }

    #[test]
    fn grad_softmax_layernorm_gelu() {
        let e = check_one(2, 5, 1.0, |g, p| {
            let sm = g.softmax(p, 1);
            let c = g.constant(2, 5, &[0.9, -0.3, 0.2, 0.8, -0.5, 0.1, 0.7, -0.6, 0.4, 0.2]);
            let m = g.mul(sm, c);
            let s = g.square(m);
            g.sum_all(s)
        });
        assert!(e < 1e-6, "softmax rows: {e}");

        let e = check_one(4, 3, 1.0, |g, p| {
            let sm = g.softmax(p, 0);
            let s = g.square(sm);
            g.sum_all(s)
        });
        assert!(e < 1e-6, "softmax cols: {e}");

        // layernorm: check x, gain, bias jointly
        let x0: Vec<f64> = (0..4 * 6).map(|i| ((i * 29 + 1) % 19) as f64 * 0.21 - 1.7).collect();
        let g0: Vec<f64> = (0..6).map(|i| 1.0 + 0.1 * i as f64).collect();
        let b0: Vec<f64> = (0..6).map(|i| -0.2 + 0.07 * i as f64).collect();
        let build = |g: &mut Graph<f64>, x: TensorId, gain: TensorId, bias: TensorId| {
            let y = g.layernorm(x, gain, bias, 1e-5);
            let q = g.square(y);
            g.sum_all(q)
        };
        let mut g = Graph::<f64>::new();
        let (x, gain, bias) = (g.param(4, 6, &x0), g.param(1, 6, &g0), g.param(1, 6, &b0));
        let loss = build(&mut g, x, gain, bias);
        g.backward(loss);
        let tape = vec![
            g.leaf_grad(x).unwrap().to_vec(),
            g.leaf_grad(gain).unwrap().to_vec(),
            g.leaf_grad(bias).unwrap().to_vec(),
        ];
        let mut params = vec![x0, g0, b0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let (x, gain, bias) = (g.param(4, 6, &ps[0]), g.param(1, 6, &ps[1]), g.param(1, 6, &ps[2]));
            let l = build(&mut g, x, gain, bias);
            g.scalar(l)
        });
        assert!(e < 1e-6, "layernorm: {e}");

        let e = check_one(2, 4, 1.0, |g, p| {
            let y = g.gelu(p);
            let q = g.square(y);
            g.sum_all(q)
        });
        assert!(e < 1e-6, "gelu: {e}");
    }

    #[test]
    fn grad_attention_losses_bias_embed() {
        // causal attention chain q,k,v → scores → softmax → pv → loss
        let seq = 4;
        let heads = 2;
        let d = 4;
        let q0: Vec<f64> = (0..2 * seq * d).map(|i| ((i * 37 + 5) % 23) as f64 * 0.09 - 1.0).collect();
        let k0: Vec<f64> = (0..2 * seq * d).map(|i| ((i * 41 + 9) % 21) as f64 * 0.08 - 0.8).collect();
        let v0: Vec<f64> = (0..2 * seq * d).map(|i| ((i * 43 + 2) % 25) as f64 * 0.07 - 0.9).collect();
        let build = |g: &mut Graph<f64>, q: TensorId, k: TensorId, v: TensorId| {
            let s = g.causal_scores(q, k, heads, seq, 0.5);
            let p = g.causal_softmax(s, seq);
            let o = g.causal_pv(p, v, heads, seq);
            let sq = g.square(o);
            g.sum_all(sq)
        };
        let mut g = Graph::<f64>::new();
        let (q, k, v) = (g.param(2 * seq, d, &q0), g.param(2 * seq, d, &k0), g.param(2 * seq, d, &v0));
        let loss = build(&mut g, q, k, v);
        g.backward(loss);
        let tape = vec![
            g.leaf_grad(q).unwrap().to_vec(),
            g.leaf_grad(k).unwrap().to_vec(),
            g.leaf_grad(v).unwrap().to_vec(),
        ];
        let mut params = vec![q0, k0, v0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let (q, k, v) = (g.param(2 * seq, d, &ps[0]), g.param(2 * seq, d, &ps[1]), g.param(2 * seq, d, &ps[2]));
            let l = build(&mut g, q, k, v);
            g.scalar(l)
        });
        assert!(e < 1e-6, "attention chain: {e}");

        // attention KL against a fixed teacher map
        let t_attn = {
            let mut g = Graph::<f64>::new();
            let s = g.param(seq, seq, &[0.3, 0.0, 0.0, 0.0, 0.1, -0.4, 0.0, 0.0, 0.6, 0.2, -0.1, 0.0, 0.0, 0.5, -0.3, 0.2]);
            let p = g.causal_softmax(s, seq);
            Arc::new(g.value(p).to_vec())
        };
        let s0: Vec<f64> = (0..seq * seq).map(|i| ((i * 17 + 3) % 13) as f64 * 0.15 - 1.0).collect();
        let build2 = |g: &mut Graph<f64>, s: TensorId| g.attn_kl_const(s, t_attn.clone(), seq);
        let mut g = Graph::<f64>::new();
        let s = g.param(seq, seq, &s0);
        let loss = build2(&mut g, s);
        g.backward(loss);
        let tape = vec![g.leaf_grad(s).unwrap().to_vec()];
        let mut params = vec![s0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let s = g.param(seq, seq, &ps[0]);
            let l = build2(&mut g, s);
            g.scalar(l)
        });
        assert!(e < 1e-6, "attention KL: {e}");

        // cross-entropy, forward KL, reverse KL, sq_err, bias, embed
        let t = ids(&[1, 0, 3]);
        let zt: Vec<f64> = (0..3 * 4).map(|i| ((i * 7 + 1) % 9) as f64 * 0.25 - 1.0).collect();
        let mut pt = zt.clone();
        softmax_rows_inplace(&mut pt, 4);
        let (pt, lt) = (Arc::new(pt), Arc::new(log_softmax_rows(&zt, 4)));
        let tgt = Arc::new(vec![0.3; 12]);
        let build3 = |g: &mut Graph<f64>, z: TensorId, bias: TensorId| {
            let zb = g.add_bias(z, bias);
            let ce = g.cross_entropy_mean(zb, t.clone());
            let fkl = g.forward_kl_mean(zb, pt.clone(), lt.clone(), 2.0);
            let rkl = g.reverse_kl_mean(zb, lt.clone());
            let se = g.sq_err_const(zb, tgt.clone());
            let se_s = g.scale(se, 0.05);
            let a = g.add(ce, fkl);
            let b = g.add(rkl, se_s);
            g.add(a, b)
        };
        let z0: Vec<f64> = (0..12).map(|i| ((i * 13 + 5) % 11) as f64 * 0.2 - 1.0).collect();
        let b0 = vec![0.1, -0.2, 0.3, 0.05];
        let mut g = Graph::<f64>::new();
        let (z, bias) = (g.param(3, 4, &z0), g.param(1, 4, &b0));
        let loss = build3(&mut g, z, bias);
        g.backward(loss);
        let tape = vec![g.leaf_grad(z).unwrap().to_vec(), g.leaf_grad(bias).unwrap().to_vec()];
        let mut params = vec![z0, b0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let (z, bias) = (g.param(3, 4, &ps[0]), g.param(1, 4, &ps[1]));
            let l = build3(&mut g, z, bias);
            g.scalar(l)
        });
        assert!(e < 1e-6, "loss zoo: {e}");

        // embedding lookup with repeated ids (tests scatter-add)
        let ids_v = ids(&[2, 0, 2, 1]);
        let e0: Vec<f64> = (0..3 * 4).map(|i| ((i * 5 + 2) % 7) as f64 * 0.3 - 0.8).collect();
        let build4 = |g: &mut Graph<f64>, tb: TensorId| {
            let o = g.embed(tb, ids_v.clone());
            let q = g.square(o);
            g.sum_all(q)
        };
        let mut g = Graph::<f64>::new();
        let tb = g.param(3, 4, &e0);
        let loss = build4(&mut g, tb);
        g.backward(loss);
        let tape = vec![g.leaf_grad(tb).unwrap().to_vec()];
        let mut params = vec![e0];
        let e = finite_diff_check(&mut params, &tape, 1e-5, |_, _| false, |ps| {
            let mut g = Graph::<f64>::new();
            let tb = g.param(3, 4, &ps[0]);
            let l = build4(&mut g, tb);
            g.scalar(l)
        });
        assert!(e < 1e-6, "embed: {e}");
    }

    #[test]
    fn grad_check_trivial_cases() {
        // linear function → central differences are exact
        let e = check_one(1, 3, 1.0, |g, p| {
            let c = g.constant(1, 3, &[2.0, -3.0, 0.5]);
            let m = g.mul(p, c);
            g.sum_all(m)
        });
        assert!(e < 1e-9, "linear: {e}");

        // constant function → zero gradient exactly
        let mut g = Graph::<f64>::new();
        let p = g.param(1, 3, &[1.0, 2.0, 3.0]);
        let c = g.constant(1, 1, &[5.0]);
        let c2 = g.square(c);
        let loss = g.sum_all(c2);
        g.backward(loss);
        assert!(g.leaf_grad(p).is_none(), "constant loss must not reach p");
    }

    #[test]
    #[should_panic(expected = "matmul inner extent mismatch")]
    fn matmul_shape_mismatch_panics() {
        let mut g = Graph::<f64>::new();
        let a = g.param(2, 3, &[0.0; 6]);
        let b = g.param(2, 4, &[0.0; 8]);
        let _ = g.matmul_nt(a, b);
    }

    #[test]
    #[should_panic(expected = "log domain error")]
    fn log_rejects_nonpositive_in_strict_mode() {
        let mut g = Graph::<f64>::strict();
        let a = g.param(1, 2, &[1.0, -0.5]);
        let _ = g.log(a);
    }
}
