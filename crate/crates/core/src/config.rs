//! Run configuration: one flat, typed TOML document covering the model,
//! trainer, sparsity, distillation, and SLoRB knobs. Unknown keys are
//! rejected, and `to_toml_string` emits a canonical dump that reparses to
//! the identical value (the `config dump` contract).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{DistillConfig, DistillVariant};
use crate::model::ModelConfig;
use crate::slorb::SlorbInit;
use crate::sparsity::NMPattern;

/// Flat key-value run description. Field order here is the canonical dump
/// order. Defaults are the desk-scale values: a byte-vocab 2-layer model and
/// a 3000-step schedule that trains on CPU in minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model
    pub vocab: usize,
    pub ctx: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_ratio: usize,
    pub tie_embeddings: bool,
    pub sparsify_lm_head: bool,

    // trainer
    pub mode: String,
    pub t1: usize,
    pub delta_t: usize,
    /// Decay ramp end; 0 derives the default t1/4.
    pub t0: usize,
    pub lambda_max: f64,
    pub peak_lr: f64,
    pub batch: usize,
    pub seq: usize,
    pub seed: u64,
    pub val_every: usize,
    /// Use the conventional Adam ordering for the second moment (v from the
    /// current decayed momentum) instead of the one-step-delayed form.
    pub conventional_adamw: bool,

    // sparsity
    pub pattern: String,

    // distillation
    pub distill: String,
    pub alpha: f64,
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,

    // SLoRB (attached in ast_boosted mode)
    pub slorb_k: usize,
    pub slorb_init: String,
    pub slorb_train_projection: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vocab: 256,
            ctx: 128,
            layers: 2,
            heads: 4,
            dim: 128,
            mlp_ratio: 4,
            tie_embeddings: false,
            sparsify_lm_head: false,

            mode: "ast".into(),
            t1: 3000,
            delta_t: 10,
            t0: 0,
            lambda_max: 6e-5,
            peak_lr: 1e-3,
            batch: 16,
            seq: 128,
            seed: 42,
            val_every: 200,
            conventional_adamw: false,

            pattern: "2:4".into(),

            distill: "forward_kl".into(),
            alpha: 2.0 / 3.0,
            tau: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,

            slorb_k: 16,
            slorb_init: "pruned_mean".into(),
            slorb_train_projection: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig, String> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }

    /// Canonical dump: fields in declaration order, one `key = value` line
    /// each. Reparsing the dump yields a value equal to `self`.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab: self.vocab,
            ctx: self.ctx,
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            mlp_ratio: self.mlp_ratio,
            tie_embeddings: self.tie_embeddings,
            sparsify_lm_head: self.sparsify_lm_head,
        }
    }

    pub fn distill_config(&self) -> Result<DistillConfig, String> {
        let variant = DistillVariant::from_str(&self.distill)?;
        let cfg = DistillConfig {
            variant,
            alpha: self.alpha,
            tau: self.tau,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn nm_pattern(&self) -> Result<NMPattern, String> {
        let (n, m) = self
            .pattern
            .split_once(':')
            .ok_or_else(|| format!("pattern must look like n:m, got {:?}", self.pattern))?;
        let n: usize = n.trim().parse().map_err(|e| format!("bad pattern n: {e}"))?;
        let m: usize = m.trim().parse().map_err(|e| format!("bad pattern m: {e}"))?;
        if n < 1 || n >= m {
            return Err(format!("pattern must satisfy 1 <= n < m, got {n}:{m}"));
        }
        Ok(NMPattern::new(n, m))
    }

    pub fn slorb_init(&self) -> Result<SlorbInit, String> {
        SlorbInit::from_str(&self.slorb_init)
    }

    /// The decay ramp end, with 0 standing for the t1/4 default.
    pub fn t0_resolved(&self) -> usize {
        if self.t0 == 0 {
            (self.t1 / 4).max(1)
        } else {
            self.t0
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model_config().validate()?;
        self.nm_pattern()?;
        self.distill_config()?;
        self.slorb_init()?;
        if self.t1 == 0 {
            return Err("t1 must be at least 1".into());
        }
        if self.t0_resolved() > self.t1 {
            return Err(format!("t0 must lie in [1, t1], got t0={} t1={}", self.t0, self.t1));
        }
        if self.delta_t == 0 {
            return Err("delta_t must be at least 1".into());
        }
        if self.lambda_max < 0.0 {
            return Err(format!("lambda_max must be non-negative, got {}", self.lambda_max));
        }
        if !(self.peak_lr > 0.0) {
            return Err(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if self.seq == 0 || self.seq > self.ctx {
            return Err(format!("seq must lie in [1, ctx], got seq={} ctx={}", self.seq, self.ctx));
        }
        if self.val_every == 0 {
            return Err("val_every must be at least 1".into());
        }
        if self.slorb_k == 0 || self.dim % self.slorb_k != 0 {
            return Err(format!(
                "slorb_k must divide the model dim, got k={} dim={}",
                self.slorb_k, self.dim
            ));
        }
        crate::trainer::Mode::from_str(&self.mode)?;
        Ok(())
    }
}
