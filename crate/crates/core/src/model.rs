//! A tiny decoder-only transformer (pre-norm, causal, GELU MLP, learned
//! positional embeddings). Every attention/MLP linear is a maskable unit:
//! the full weight is retained throughout and the forward applies
//! m(W)⊙W through the straight-through op when a mask is installed.

use std::sync::Arc;

use crate::graph::{Graph, TensorId};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::slorb;
use crate::sparsity::{Mask, NMPattern};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub ctx: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_ratio: usize,
    pub tie_embeddings: bool,
    pub sparsify_lm_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: 256,
            ctx: 128,
            layers: 2,
            heads: 4,
            dim: 128,
            mlp_ratio: 4,
            tie_embeddings: false,
            sparsify_lm_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim % self.heads != 0 {
            return Err(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.ctx < 2 {
            return Err(format!("context length must be ≥ 2, got {}", self.ctx));
        }
        if self.vocab < 2 || self.layers == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err("vocab ≥ 2, layers ≥ 1, heads ≥ 1, mlp_ratio ≥ 1 required".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// One named parameter tensor, row-major.
#[derive(Clone)]
pub struct Tensor<S> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
    /// Masks may be installed on this tensor (attention/MLP linears only).
    pub sparsifiable: bool,
}

/// A SLoRB adapter attachment: `s` (and optionally `x`) index into the
/// model's tensor list, `base` is the masked linear it augments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterRef {
    pub base: usize,
    pub s: usize,
    pub x: Option<usize>,
    pub k: usize,
}

#[derive(Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    pub tensors: Vec<Tensor<S>>,
    /// Parallel to `tensors`; Some(mask) on sparsified linears.
    pub masks: Vec<Option<Mask>>,
    pub adapters: Vec<AdapterRef>,
    pub pattern: Option<NMPattern>,
}

/// Everything a forward pass exposes: logits, per-layer attention
/// probabilities (with their pre-softmax scores) and post-block hidden
/// states, and (when trainable) the leaf id of every tensor, parallel to
/// `model.tensors`.
pub struct ForwardOut {
    pub logits: TensorId,
    pub attn_scores: Vec<TensorId>,
    pub attn_probs: Vec<TensorId>,
    pub hidden: Vec<TensorId>,
    pub leaves: Vec<Option<TensorId>>,
}

impl<S: Scalar> Model<S> {
    /// Fresh dense model; every tensor gets its own seed stream keyed by name.
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid model config");
        let mut tensors = Vec::new();
        let d = cfg.dim;
        let hd = cfg.mlp_ratio * d;
        let mut push = |name: String, rows: usize, cols: usize, kind: InitKind, sparsifiable: bool| {
            let mut data = vec![S::ZERO; rows * cols];
            match kind {
                InitKind::Normal02 => {
                    SplitMix64::stream(seed, &name).fill_normal(&mut data, 0.0, 0.02)
                }
                InitKind::Zero => {}
                InitKind::One => data.fill(S::ONE),
            }
            tensors.push(Tensor { name, rows, cols, data, sparsifiable });
        };
        push("tok_emb".into(), cfg.vocab, d, InitKind::Normal02, false);
        push("pos_emb".into(), cfg.ctx, d, InitKind::Normal02, false);
        for l in 0..cfg.layers {
            push(format!("h{l}.ln1.g"), 1, d, InitKind::One, false);
            push(format!("h{l}.ln1.b"), 1, d, InitKind::Zero, false);
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("h{l}.attn.{w}"), d, d, InitKind::Normal02, true);
                push(format!("h{l}.attn.{w}.bias"), 1, d, InitKind::Zero, false);
            }
            push(format!("h{l}.ln2.g"), 1, d, InitKind::One, false);
            push(format!("h{l}.ln2.b"), 1, d, InitKind::Zero, false);
            push(format!("h{l}.mlp.fc1"), hd, d, InitKind::Normal02, true);
            push(format!("h{l}.mlp.fc1.bias"), 1, hd, InitKind::Zero, false);
            push(format!("h{l}.mlp.fc2"), d, hd, InitKind::Normal02, true);
            push(format!("h{l}.mlp.fc2.bias"), 1, d, InitKind::Zero, false);
        }
        push("ln_f.g".into(), 1, d, InitKind::One, false);
        push("ln_f.b".into(), 1, d, InitKind::Zero, false);
        if !cfg.tie_embeddings {
            push("lm_head".into(), cfg.vocab, d, InitKind::Normal02, cfg.sparsify_lm_head);
        }
        let n = tensors.len();
        Model { cfg, tensors, masks: vec![None; n], adapters: Vec::new(), pattern: None }
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Indices of tensors that accept masks under the current config.
    pub fn sparsifiable_indices(&self) -> Vec<usize> {
        (0..self.tensors.len()).filter(|&i| self.tensors[i].sparsifiable).collect()
    }

    /// Install magnitude-selected masks on every sparsifiable linear.
    pub fn sparsify(&mut self, pattern: NMPattern) {
        for i in self.sparsifiable_indices() {
            let t = &self.tensors[i];
            assert!(
                t.cols % pattern.m == 0,
                "layer {} width {} not divisible by m={}",
                t.name,
                t.cols,
                pattern.m
            );
            self.masks[i] = Some(Mask::select_magnitude(&t.data, t.rows, t.cols, pattern));
        }
        self.pattern = Some(pattern);
    }

    /// Drop all masks (back to the exact dense architecture).
    pub fn densify(&mut self) {
        self.masks.iter_mut().for_each(|m| *m = None);
        self.pattern = None;
    }

    /// Re-select every mask from current magnitudes; returns (tensor index,
    /// previous mask) pairs so the caller can compute flip statistics.
    pub fn refresh_masks(&mut self) -> Vec<(usize, Mask)> {
        let pattern = self.pattern.expect("refresh_masks requires a sparsified model");
        let mut old = Vec::new();
        for i in 0..self.tensors.len() {
            if self.masks[i].is_none() {
                continue;
            }
            let t = &self.tensors[i];
            let next = Mask::select_magnitude(&t.data, t.rows, t.cols, pattern);
            let prev = self.masks[i].replace(next).unwrap();
            old.push((i, prev));
        }
        old
    }

    /// Attach SLoRB adapters (trainable S, fixed or trainable X) to every
    /// masked linear. S tensors join the ordinary tensor list so the
    /// optimizer treats them like any dense parameter.
    pub fn add_slorb(&mut self, k: usize, init: slorb::SlorbInit, seed: u64, train_projection: bool) {
        assert!(self.adapters.is_empty(), "adapters already installed");
        let bases: Vec<usize> =
            (0..self.tensors.len()).filter(|&i| self.masks[i].is_some()).collect();
        for base in bases {
            let (rows, cols, name) = {
                let t = &self.tensors[base];
                (t.rows, t.cols, t.name.clone())
            };
            assert!(cols % k == 0, "slorb k={k} must divide width {cols} of {name}");
            let mask = self.masks[base].as_ref().unwrap();
            let s_name = format!("{name}.slorb_s");
            let s_data = slorb::init_s(init, &self.tensors[base].data, mask, k, seed, &s_name);
            let s_idx = self.tensors.len();
            self.tensors.push(Tensor {
                name: s_name,
                rows,
                cols: cols / k,
                data: s_data,
                sparsifiable: false,
            });
            self.masks.push(None);
            let x_idx = if train_projection {
                let x_name = format!("{name}.slorb_x");
                let idx = self.tensors.len();
                self.tensors.push(Tensor {
                    name: x_name,
                    rows: cols / k,
                    cols,
                    data: slorb::init_projection(cols, k),
                    sparsifiable: false,
                });
                self.masks.push(None);
                Some(idx)
            } else {
                None
            };
            self.adapters.push(AdapterRef { base, s: s_idx, x: x_idx, k });
        }
    }

    fn adapter_for(&self, base: usize) -> Option<&AdapterRef> {
        self.adapters.iter().find(|a| a.base == base)
    }

    /// Build the forward graph over `ids` (length batch·seq, row-major).
    /// `trainable` decides whether tensors enter as leaves or constants.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        ids: &[u32],
        batch: usize,
        seq: usize,
        trainable: bool,
    ) -> ForwardOut {
        assert_eq!(ids.len(), batch * seq, "ids length must equal batch·seq");
        assert!(seq >= 1 && seq <= self.cfg.ctx, "sequence length {seq} out of range (context {})", self.cfg.ctx);
        for &t in ids {
            assert!((t as usize) < self.cfg.vocab, "token id {t} out of vocab range");
        }

        // materialize every tensor once; masked linears get the STE wrapper
        let mut leaves: Vec<Option<TensorId>> = vec![None; self.tensors.len()];
        let node = |g: &mut Graph<S>, leaves: &mut Vec<Option<TensorId>>, i: usize| {
            if let Some(t) = leaves[i] {
                return t;
            }
            let t = &self.tensors[i];
            let id = if trainable {
                g.param(t.rows, t.cols, &t.data)
            } else {
                g.constant(t.rows, t.cols, &t.data)
            };
            leaves[i] = Some(id);
            id
        };
        let idx = |name: &str| {
            self.tensor_index(name)
                .unwrap_or_else(|| panic!("tensor {name} missing"))
        };
        // masked view of a linear weight (shares the leaf)
        let masked = |g: &mut Graph<S>, leaves: &mut Vec<Option<TensorId>>, i: usize| {
            let w = node(g, leaves, i);
            match &self.masks[i] {
                Some(m) => {
                    let dense = m.to_dense::<S>();
                    g.ste_mask(w, dense)
                }
                None => w,
            }
        };

        let pos: Vec<u32> = (0..batch).flat_map(|_| 0..seq as u32).collect();
        let tok_t = node(g, &mut leaves, idx("tok_emb"));
        let pos_t = node(g, &mut leaves, idx("pos_emb"));
        let te = g.embed(tok_t, Arc::new(ids.to_vec()));
        let pe = g.embed(pos_t, Arc::new(pos));
        let mut x = g.add(te, pe);

        let mut attn_scores = Vec::with_capacity(self.cfg.layers);
        let mut attn_probs = Vec::with_capacity(self.cfg.layers);
        let mut hidden = Vec::with_capacity(self.cfg.layers);
        let scale = S::from_f64(1.0 / (self.cfg.head_dim() as f64).sqrt());
        let eps = S::from_f64(LN_EPS);

        // one sparse linear: x·(m(W)⊙W)ᵀ + bias (+ adapter contribution)
        let linear = |g: &mut Graph<S>, leaves: &mut Vec<Option<TensorId>>, x_in: TensorId, w_name: &str| {
            let wi = idx(w_name);
            let w = masked(g, leaves, wi);
            let mut y = g.matmul_nt(x_in, w);
            let b = node(g, leaves, idx(&format!("{w_name}.bias")));
            y = g.add_bias(y, b);
            if let Some(a) = self.adapter_for(wi) {
                let s = node(g, leaves, a.s);
                let contrib = match a.x {
                    Some(xi) => {
                        let xp = node(g, leaves, xi);
                        slorb::slorb_forward_trained_projection(g, x_in, s, xp)
                    }
                    None => slorb::slorb_forward(g, x_in, s, a.k),
                };
                y = g.add(y, contrib);
            }
            y
        };

        for l in 0..self.cfg.layers {
            let g1 = node(g, &mut leaves, idx(&format!("h{l}.ln1.g")));
            let b1 = node(g, &mut leaves, idx(&format!("h{l}.ln1.b")));
            let a = g.layernorm(x, g1, b1, eps);
            let q = linear(g, &mut leaves, a, &format!("h{l}.attn.wq"));
            let k = linear(g, &mut leaves, a, &format!("h{l}.attn.wk"));
            let v = linear(g, &mut leaves, a, &format!("h{l}.attn.wv"));
            let scores = g.causal_scores(q, k, self.cfg.heads, seq, scale);
            let p = g.causal_softmax(scores, seq);
            let att = g.causal_pv(p, v, self.cfg.heads, seq);
            let o = linear(g, &mut leaves, att, &format!("h{l}.attn.wo"));
            x = g.add(x, o);

            let g2 = node(g, &mut leaves, idx(&format!("h{l}.ln2.g")));
            let b2 = node(g, &mut leaves, idx(&format!("h{l}.ln2.b")));
            let m = g.layernorm(x, g2, b2, eps);
            let h1 = linear(g, &mut leaves, m, &format!("h{l}.mlp.fc1"));
            let h1 = g.gelu(h1);
            let h2 = linear(g, &mut leaves, h1, &format!("h{l}.mlp.fc2"));
            x = g.add(x, h2);

            attn_scores.push(scores);
            attn_probs.push(p);
            hidden.push(x);
        }

        let gf = node(g, &mut leaves, idx("ln_f.g"));
        let bf = node(g, &mut leaves, idx("ln_f.b"));
        let f = g.layernorm(x, gf, bf, eps);
        let head = if self.cfg.tie_embeddings {
            // tied head shares the embedding leaf; masking never applies
            leaves[idx("tok_emb")].unwrap()
        } else {
            let hi = idx("lm_head");
            masked(g, &mut leaves, hi)
        };
        let logits = g.matmul_nt(f, head);

        ForwardOut { logits, attn_scores, attn_probs, hidden, leaves }
    }

    /// exp(mean next-token cross-entropy) over non-overlapping context-length
    /// windows of `tokens`. NLL accumulates in f64.
    pub fn perplexity(&self, tokens: &[u32], eval_batch: usize) -> f64 {
        let ctx = self.cfg.ctx;
        assert!(tokens.len() >= ctx + 1, "token stream too short for one window (need {} tokens)", ctx + 1);
        let windows = (tokens.len() - 1) / ctx;
        let mut total_nll = 0.0f64;
        let mut total_rows = 0usize;
        let mut w = 0;
        while w < windows {
            let b = eval_batch.min(windows - w);
            let mut ids = Vec::with_capacity(b * ctx);
            let mut targets = Vec::with_capacity(b * ctx);
            for bi in 0..b {
                let start = (w + bi) * ctx;
                ids.extend_from_slice(&tokens[start..start + ctx]);
                targets.extend_from_slice(&tokens[start + 1..start + ctx + 1]);
            }
            let mut g = Graph::<S>::new();
            let out = self.forward(&mut g, &ids, b, ctx, false);
            let ce = g.cross_entropy_mean(out.logits, Arc::new(targets));
            total_nll += g.scalar(ce).to_f64() * (b * ctx) as f64;
            total_rows += b * ctx;
            w += b;
        }
        (total_nll / total_rows as f64).exp()
    }
}

enum InitKind {
    Normal02,
    Zero,
    One,
}
