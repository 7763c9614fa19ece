//! Distillation losses: forward KL on logits (the default), reverse KL, and
//! the layerwise TinyBERT / MobileBERT / SquareHead variants used by the
//! ablation command. Teacher activations always enter as constants, so no
//! gradient can flow into the teacher.

use std::str::FromStr;
use std::sync::Arc;

use crate::graph::{log_softmax_rows, softmax_rows_inplace, Graph, TensorId};
use crate::model::LN_EPS;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistillVariant {
    ForwardKl,
    ReverseKl,
    TinyBert,
    MobileBert,
    SquareHead,
}

impl DistillVariant {
    pub fn name(&self) -> &'static str {
        match self {
            DistillVariant::ForwardKl => "forward_kl",
            DistillVariant::ReverseKl => "reverse_kl",
            DistillVariant::TinyBert => "tinybert",
            DistillVariant::MobileBert => "mobilebert",
            DistillVariant::SquareHead => "squarehead",
        }
    }

    pub const ALL: [DistillVariant; 5] = [
        DistillVariant::ForwardKl,
        DistillVariant::ReverseKl,
        DistillVariant::TinyBert,
        DistillVariant::MobileBert,
        DistillVariant::SquareHead,
    ];
}

impl FromStr for DistillVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward_kl" => Ok(DistillVariant::ForwardKl),
            "reverse_kl" => Ok(DistillVariant::ReverseKl),
            "tinybert" => Ok(DistillVariant::TinyBert),
            "mobilebert" => Ok(DistillVariant::MobileBert),
            "squarehead" => Ok(DistillVariant::SquareHead),
            other => Err(format!(
                "unknown distillation variant {other:?} (expected forward_kl, reverse_kl, tinybert, mobilebert, or squarehead)"
            )),
        }
    }
}

/// Mixing weights for the distillation objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub variant: DistillVariant,
    /// Weight of the distillation term: ℒ = α·ℒ_logit + (1−α)·ℒ_task.
    pub alpha: f64,
    /// Temperature (TinyBERT prediction term; 1 elsewhere).
    pub tau: f64,
    /// SquareHead logit weight.
    pub alpha1: f64,
    /// SquareHead feature weight.
    pub alpha2: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            variant: DistillVariant::ForwardKl,
            alpha: 2.0 / 3.0,
            tau: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.tau > 0.0) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        Ok(())
    }
}

/// Teacher soft targets at temperature `temp`: row-wise softmax
/// probabilities and log-probabilities over `cols`-wide rows.
pub fn soft_targets<S: Scalar>(logits: &[S], cols: usize, temp: f64) -> (Arc<Vec<S>>, Arc<Vec<S>>) {
    assert!(temp > 0.0, "temperature must be positive");
    let scaled: Vec<S> = if temp == 1.0 {
        logits.to_vec()
    } else {
        let inv = S::from_f64(1.0 / temp);
        logits.iter().map(|&z| z * inv).collect()
    };
    let logp = log_softmax_rows(&scaled, cols);
    let mut probs = scaled;
    softmax_rows_inplace(&mut probs, cols);
    (Arc::new(probs), Arc::new(logp))
}

/// Eq. 4 logit loss: mean over tokens of KL(p_t ‖ p_s) at temperature `temp`
/// (1 for the default objective; the TinyBERT prediction term passes τ).
pub fn forward_kl_loss<S: Scalar>(
    g: &mut Graph<S>,
    teacher_logits: &[S],
    student_logits: TensorId,
    temp: f64,
) -> TensorId {
    let cols = g.cols(student_logits);
    assert_eq!(teacher_logits.len(), g.rows(student_logits) * cols, "logit shape mismatch");
    let (probs, logp) = soft_targets(teacher_logits, cols, temp);
    g.forward_kl_mean(student_logits, probs, logp, S::from_f64(temp))
}

/// MiniLLM-style logit loss: mean over tokens of KL(p_s ‖ p_t).
pub fn reverse_kl_loss<S: Scalar>(
    g: &mut Graph<S>,
    teacher_logits: &[S],
    student_logits: TensorId,
) -> TensorId {
    let cols = g.cols(student_logits);
    assert_eq!(teacher_logits.len(), g.rows(student_logits) * cols, "logit shape mismatch");
    let (_, logp) = soft_targets(teacher_logits, cols, 1.0);
    g.reverse_kl_mean(student_logits, logp)
}

/// ℒ = α·ℒ_logit + (1−α)·ℒ_task. The endpoints return the argument node
/// itself so α=0 is exactly the task loss and α=1 exactly the logit loss.
pub fn combined_loss<S: Scalar>(
    g: &mut Graph<S>,
    task_loss: TensorId,
    logit_loss: TensorId,
    alpha: f64,
) -> TensorId {
    assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0,1], got {alpha}");
    if alpha == 0.0 {
        return task_loss;
    }
    if alpha == 1.0 {
        return logit_loss;
    }
    let a = g.scale(logit_loss, S::from_f64(alpha));
    let b = g.scale(task_loss, S::from_f64(1.0 - alpha));
    g.add(a, b)
}

/// Student-side per-layer tensors entering the layerwise losses: causal
/// attention probabilities ([B·H·S] × S) with their pre-softmax scores, and
/// the post-block hidden states ([B·S] × D).
#[derive(Clone, Copy)]
pub struct StudentLayer {
    pub attn: TensorId,
    pub scores: TensorId,
    pub hidden: TensorId,
}

/// Teacher-side counterparts, captured as constants.
#[derive(Clone)]
pub struct TeacherLayer<S> {
    pub attn: Arc<Vec<S>>,
    pub hidden: Arc<Vec<S>>,
}

fn mse_const<S: Scalar>(g: &mut Graph<S>, a: TensorId, target: Arc<Vec<S>>) -> TensorId {
    let n = target.len();
    let sq = g.sq_err_const(a, target);
    g.scale(sq, S::from_f64(1.0 / n as f64))
}

/// Standardize each token vector to zero mean / unit variance before the
/// hidden-state MSE. The TinyBERT and MobileBERT feature transfers assume
/// post-LN stacks whose per-layer outputs leave each block normalized; this
/// model keeps a pre-LN residual stream whose raw scale grows with training
/// and would otherwise dominate the loss and destabilize retraining.
fn standardized<S: Scalar>(g: &mut Graph<S>, h: TensorId) -> TensorId {
    let cols = g.cols(h);
    let gain = g.constant(1, cols, &vec![S::ONE; cols]);
    let bias = g.constant(1, cols, &vec![S::ZERO; cols]);
    g.layernorm(h, gain, bias, S::from_f64(LN_EPS))
}

/// Constant-side counterpart of [`standardized`], arithmetic-for-arithmetic
/// identical to the layernorm forward so coincident states still give MSE 0.
fn standardized_const<S: Scalar>(h: &[S], cols: usize) -> Arc<Vec<S>> {
    let inv_n = S::from_f64(1.0 / cols as f64);
    let eps = S::from_f64(LN_EPS);
    let mut out = vec![S::ZERO; h.len()];
    for (row, orow) in h.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mut mu = S::ZERO;
        for &v in row {
            mu += v;
        }
        mu *= inv_n;
        let mut var = S::ZERO;
        for &v in row {
            var += (v - mu) * (v - mu);
        }
        var *= inv_n;
        let rs = S::ONE / (var + eps).sqrt();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - mu) * rs;
        }
    }
    Arc::new(out)
}

fn hidden_mse<S: Scalar>(g: &mut Graph<S>, student: TensorId, teacher: &Arc<Vec<S>>) -> TensorId {
    let cols = g.cols(student);
    let s = standardized(g, student);
    mse_const(g, s, standardized_const(teacher, cols))
}

/// TinyBERT transfer: per layer the mean-over-heads attention-map MSE plus
/// the MSE of the standardized hidden states with W_h = I, and on the
/// prediction layer the soft cross-entropy between τ-scaled logits
/// (implemented as forward KL at τ, i.e. soft CE minus the constant teacher
/// entropy, so the minimum is 0). Embedding distillation is omitted.
pub fn tinybert_loss<S: Scalar>(
    g: &mut Graph<S>,
    student: &[StudentLayer],
    teacher: &[TeacherLayer<S>],
    teacher_logits: &[S],
    student_logits: TensorId,
    tau: f64,
) -> TensorId {
    assert_eq!(student.len(), teacher.len(), "mismatched architecture: layer counts differ");
    let mut total = forward_kl_loss(g, teacher_logits, student_logits, tau);
    for (s, t) in student.iter().zip(teacher) {
        let attn = mse_const(g, s.attn, t.attn.clone());
        let hid = hidden_mse(g, s.hidden, &t.hidden);
        let layer = g.add(attn, hid);
        total = g.add(total, layer);
    }
    total
}

/// MobileBERT attention transfer at one layer: mean over heads and tokens of
/// KL(teacher_row ‖ student_row) on the causal rows, computed from the
/// student's pre-softmax scores so saturated rows stay finite.
pub fn mobilebert_attention_kl<S: Scalar>(
    g: &mut Graph<S>,
    student_scores: TensorId,
    teacher_attn: Arc<Vec<S>>,
    seq: usize,
) -> TensorId {
    g.attn_kl_const(student_scores, teacher_attn, seq)
}

/// MobileBERT transfer: per layer the attention KL plus the TinyBERT-style
/// standardized hidden-state MSE.
pub fn mobilebert_loss<S: Scalar>(
    g: &mut Graph<S>,
    student: &[StudentLayer],
    teacher: &[TeacherLayer<S>],
    seq: usize,
) -> TensorId {
    assert_eq!(student.len(), teacher.len(), "mismatched architecture: layer counts differ");
    let mut total: Option<TensorId> = None;
    for (s, t) in student.iter().zip(teacher) {
        let attn = mobilebert_attention_kl(g, s.scores, t.attn.clone(), seq);
        let hid = hidden_mse(g, s.hidden, &t.hidden);
        let layer = g.add(attn, hid);
        total = Some(match total {
            Some(acc) => g.add(acc, layer),
            None => layer,
        });
    }
    total.expect("mobilebert loss needs at least one layer")
}

/// SquareHead transfer: per layer MSE(f_s, f_t) / MSE(f_t, 0), summed, plus
/// the forward-KL logit loss: ℒ = α1·ℒ_logit + α2·Σ ℒ_feat.
pub fn squarehead_loss<S: Scalar>(
    g: &mut Graph<S>,
    student_hidden: &[TensorId],
    teacher_hidden: &[Arc<Vec<S>>],
    teacher_logits: &[S],
    student_logits: TensorId,
    alpha1: f64,
    alpha2: f64,
) -> TensorId {
    assert_eq!(student_hidden.len(), teacher_hidden.len(), "mismatched architecture: layer counts differ");
    let logit = forward_kl_loss(g, teacher_logits, student_logits, 1.0);
    let mut total = g.scale(logit, S::from_f64(alpha1));
    for (&s, t) in student_hidden.iter().zip(teacher_hidden) {
        let mut norm = S::ZERO;
        for &x in t.iter() {
            norm += x * x;
        }
        assert!(
            norm.to_f64() > 0.0,
            "degenerate teacher features: zero norm at a distilled layer"
        );
        let sq = g.sq_err_const(s, t.clone());
        let feat = g.scale(sq, S::from_f64(alpha2) / norm);
        total = g.add(total, feat);
    }
    total
}
