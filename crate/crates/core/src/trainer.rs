//! End-to-end training loops: dense teacher pretraining, sparse retraining
//! with periodic mask refresh + annealing SR-STE decay + distillation +
//! optional SLoRB adapters, and the ablation suite behind the ordering
//! report.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{sample_batch, Corpus};
use crate::distill::{self, DistillConfig, DistillVariant, StudentLayer, TeacherLayer};
use crate::graph::Graph;
use crate::model::{Model, ModelConfig};
use crate::optim::{lr_at, AnnealingSchedule, LambdaSchedule, SparseAdamWState};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::slorb::SlorbInit;
use crate::sparsity::NMPattern;

/// Adam moment decay rates and denominator floor used by every run.
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.95;
pub const ADAM_EPS: f64 = 1e-8;
/// Windows per forward pass during evaluation. Fixed so the validation
/// perplexity a run logs and what `eval` recomputes agree bit-for-bit.
pub const EVAL_BATCH: usize = 8;

/// Training modes: the dense teacher run, the full adaptive method (with or
/// without SLoRB), its three single-knob ablations, and the prune-and-save
/// baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    DensePretrain,
    Ast,
    AstBoosted,
    FixedMask,
    NoDistill,
    StaticSrste,
    OneShot,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::DensePretrain => "dense_pretrain",
            Mode::Ast => "ast",
            Mode::AstBoosted => "ast_boosted",
            Mode::FixedMask => "fixed_mask",
            Mode::NoDistill => "no_distill",
            Mode::StaticSrste => "static_srste",
            Mode::OneShot => "one_shot",
        }
    }

    pub const ALL: [Mode; 7] = [
        Mode::DensePretrain,
        Mode::Ast,
        Mode::AstBoosted,
        Mode::FixedMask,
        Mode::NoDistill,
        Mode::StaticSrste,
        Mode::OneShot,
    ];
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                format!(
                    "unknown mode {s:?} (expected dense_pretrain, ast, ast_boosted, fixed_mask, \
                     no_distill, static_srste, or one_shot)"
                )
            })
    }
}

/// Fully resolved trainer settings, derived from a `RunConfig` and then
/// normalized by the mode-consistency rules.
#[derive(Clone, Debug)]
pub struct TrainerConfig {
    pub model: ModelConfig,
    pub mode: Mode,
    pub t1: usize,
    /// Mask refresh interval; `usize::MAX` means the mask is never refreshed.
    pub delta_t: usize,
    pub t0: usize,
    pub lambda_max: f64,
    pub peak_lr: f64,
    pub batch: usize,
    pub seq: usize,
    pub seed: u64,
    pub val_every: usize,
    pub conventional_adamw: bool,
    pub pattern: NMPattern,
    pub distill: DistillConfig,
    pub slorb_k: usize,
    pub slorb_init: SlorbInit,
    pub slorb_train_projection: bool,
}

impl TrainerConfig {
    pub fn from_run(run: &RunConfig) -> Result<TrainerConfig, String> {
        run.validate()?;
        let mut cfg = TrainerConfig {
            model: run.model_config(),
            mode: Mode::from_str(&run.mode)?,
            t1: run.t1,
            delta_t: run.delta_t,
            t0: run.t0_resolved(),
            lambda_max: run.lambda_max,
            peak_lr: run.peak_lr,
            batch: run.batch,
            seq: run.seq,
            seed: run.seed,
            val_every: run.val_every,
            conventional_adamw: run.conventional_adamw,
            pattern: run.nm_pattern()?,
            distill: run.distill_config()?,
            slorb_k: run.slorb_k,
            slorb_init: run.slorb_init()?,
            slorb_train_projection: run.slorb_train_projection,
        };
        cfg.normalize();
        Ok(cfg)
    }

    /// Mode-consistency rules: a fixed mask never refreshes, and the
    /// no-distillation ablation trains on the task loss alone.
    pub fn normalize(&mut self) {
        match self.mode {
            Mode::FixedMask => self.delta_t = usize::MAX,
            Mode::NoDistill => self.distill.alpha = 0.0,
            _ => {}
        }
    }

    /// Decay schedule implied by the mode: the annealing ramp by default, a
    /// constant plateau for the static baseline, none for dense runs.
    pub fn lambda_schedule(&self) -> LambdaSchedule {
        if self.lambda_max == 0.0 {
            return LambdaSchedule::Off;
        }
        match self.mode {
            Mode::DensePretrain | Mode::OneShot => LambdaSchedule::Off,
            Mode::StaticSrste => LambdaSchedule::Constant { lambda_max: self.lambda_max, t1: self.t1 },
            _ => LambdaSchedule::Annealing(AnnealingSchedule::from_max(
                self.lambda_max,
                self.t0,
                self.t1,
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0}")]
    Config(String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("non-finite loss ({value}) at step {step}; per-tensor statistics:\n{report}")]
    NonFinite { step: usize, value: f64, report: String },
}

/// One metrics record. `layer` is empty for run-level scalars and holds the
/// tensor name for per-layer rows (mask flips).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub split: &'static str,
    pub metric: String,
    pub value: f64,
    pub layer: String,
}

/// Everything a run reports: the metric rows (serialized to CSV) plus the
/// final validation perplexity and wall-clock time. Wall-clock is returned
/// to the caller but deliberately kept out of the CSV so repeat runs produce
/// byte-identical files.
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    pub final_val_ppl: f64,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,split,metric,value,layer\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.step, r.split, r.metric, r.value, r.layer).unwrap();
        }
        s
    }

    /// (step, value) series of one run-level metric.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric && r.layer.is_empty())
            .map(|r| (r.step, r.value))
            .collect()
    }

    /// Mean flip rate across layers at each refresh step, in step order.
    pub fn mean_flip_by_refresh(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.metric == "flip_rate") {
            match out.last_mut() {
                Some(last) if last.0 == r.step => {
                    last.1 += r.value;
                    last.2 += 1;
                }
                _ => out.push((r.step, r.value, 1)),
            }
        }
        out.into_iter().map(|(s, sum, n)| (s, sum / n as f64)).collect()
    }
}

fn push(
    rows: &mut Vec<MetricRow>,
    step: usize,
    split: &'static str,
    metric: &str,
    value: f64,
    layer: &str,
) {
    rows.push(MetricRow { step, split, metric: metric.into(), value, layer: layer.into() });
}

/// Validation perplexity over the whole held-out split with the fixed
/// evaluation batching. The same call backs the `eval` subcommand, so the
/// two agree bit-for-bit.
pub fn validation_ppl<S: Scalar>(model: &Model<S>, corpus: &Corpus) -> f64 {
    model.perplexity(&corpus.val, EVAL_BATCH)
}

fn check_corpus(cfg: &TrainerConfig, corpus: &Corpus) -> Result<(), TrainError> {
    if corpus.train.len() < cfg.seq + 1 {
        return Err(TrainError::Config(format!(
            "training split too short: {} tokens, need at least {}",
            corpus.train.len(),
            cfg.seq + 1
        )));
    }
    if corpus.val.len() < cfg.model.ctx + 1 {
        return Err(TrainError::Config(format!(
            "validation split too short: {} tokens, need at least {}",
            corpus.val.len(),
            cfg.model.ctx + 1
        )));
    }
    Ok(())
}

fn tensor_stats<S: Scalar>(model: &Model<S>) -> String {
    let mut s = String::new();
    for t in &model.tensors {
        let (mut mn, mut mx, mut sumsq) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        let (mut nan, mut inf) = (0usize, 0usize);
        for &v in &t.data {
            let x = v.to_f64();
            if x.is_nan() {
                nan += 1;
            } else if x.is_infinite() {
                inf += 1;
            } else {
                mn = mn.min(x);
                mx = mx.max(x);
                sumsq += x * x;
            }
        }
        let rms = (sumsq / t.data.len() as f64).sqrt();
        writeln!(
            s,
            "  {:<20} len {:>9}  min {:>13.6e}  max {:>13.6e}  rms {:>13.6e}  nan {}  inf {}",
            t.name,
            t.data.len(),
            mn,
            mx,
            rms,
            nan,
            inf
        )
        .unwrap();
    }
    s
}

fn non_finite<S: Scalar>(step: usize, value: f64, model: &Model<S>) -> TrainError {
    TrainError::NonFinite { step, value, report: tensor_stats(model) }
}

/// Dense teacher pretraining: plain AdamW on the task cross-entropy with the
/// warmup+cosine schedule. Deterministic per (config, seed, corpus).
pub fn pretrain_dense<S: Scalar>(
    cfg: &TrainerConfig,
    corpus: &Corpus,
) -> Result<(Checkpoint<S>, RunMetrics), TrainError> {
    check_corpus(cfg, corpus)?;
    let start = Instant::now();
    let mut model = Model::<S>::new(cfg.model, cfg.seed);
    let mut states: Vec<SparseAdamWState<S>> = model
        .tensors
        .iter()
        .map(|t| SparseAdamWState::new(t.data.len(), BETA1, BETA2, ADAM_EPS, cfg.conventional_adamw))
        .collect();
    let mut rng = SplitMix64::stream(cfg.seed, "batches");
    let mut rows = Vec::new();

    for t in 1..=cfg.t1 {
        let (ids, targets) = sample_batch(&mut rng, &corpus.train, cfg.batch, cfg.seq);
        let mut g = Graph::<S>::new();
        let out = model.forward(&mut g, &ids, cfg.batch, cfg.seq, true);
        let loss = g.cross_entropy_mean(out.logits, Arc::new(targets));
        let loss_val = g.scalar(loss).to_f64();
        if !loss_val.is_finite() {
            return Err(non_finite(t, loss_val, &model));
        }
        g.backward(loss);
        // schedules are sampled at the pre-step index t−1, so the first
        // update runs at zero rate while the optimizer state warms up
        let lr = lr_at(t - 1, cfg.t1, cfg.peak_lr);
        for (i, leaf) in out.leaves.iter().enumerate() {
            let Some(leaf) = *leaf else { continue };
            let grad = g.leaf_grad(leaf).expect("trainable leaf missing its gradient");
            states[i].step(&mut model.tensors[i].data, None, grad, 0.0, lr);
        }
        push(&mut rows, t, "train", "loss", loss_val, "");
        push(&mut rows, t, "train", "lr", lr, "");
        if t % cfg.val_every == 0 && t != cfg.t1 {
            push(&mut rows, t, "val", "ppl", validation_ppl(&model, corpus), "");
        }
    }

    let final_val_ppl = validation_ppl(&model, corpus);
    push(&mut rows, cfg.t1, "val", "ppl", final_val_ppl, "");
    let ckpt = Checkpoint {
        model,
        step: cfg.t1,
        seed: cfg.seed,
        mode: Mode::DensePretrain.name().into(),
        lambda_max: 0.0,
    };
    Ok((ckpt, RunMetrics { rows, final_val_ppl, wall_clock_secs: start.elapsed().as_secs_f64() }))
}

/// Sparse retraining. Per step t: refresh masks every Δt (recording flip
/// stats), run the teacher forward without gradient, build the mixed
/// distillation + task loss, backpropagate through the mask via STE, and
/// apply the AdamW update with λ(t) decaying only currently pruned weights;
/// adapter tensors update by plain gradient. At the end the mask is frozen
/// with one final magnitude selection (when refreshing was enabled) and
/// multiplied through for export.
pub fn retrain_sparse<S: Scalar>(
    cfg: &TrainerConfig,
    teacher: &Checkpoint<S>,
    corpus: &Corpus,
) -> Result<(Checkpoint<S>, RunMetrics), TrainError> {
    if cfg.mode == Mode::DensePretrain {
        return Err(TrainError::Config("retrain_sparse requires a sparse mode".into()));
    }
    if teacher.model.cfg != cfg.model {
        return Err(TrainError::ArchMismatch(format!(
            "teacher config {:?} does not match run config {:?}",
            teacher.model.cfg, cfg.model
        )));
    }
    check_corpus(cfg, corpus)?;
    let start = Instant::now();

    let mut student = teacher.model.clone();
    student.sparsify(cfg.pattern);

    if cfg.mode == Mode::OneShot {
        // prune-and-save baseline: no training at all
        for i in 0..student.tensors.len() {
            if let Some(mask) = &student.masks[i] {
                student.tensors[i].data = mask.apply(&student.tensors[i].data);
            }
        }
        let final_val_ppl = validation_ppl(&student, corpus);
        let rows = vec![MetricRow {
            step: 0,
            split: "val",
            metric: "ppl".into(),
            value: final_val_ppl,
            layer: String::new(),
        }];
        let ckpt = Checkpoint {
            model: student,
            step: 0,
            seed: cfg.seed,
            mode: Mode::OneShot.name().into(),
            lambda_max: 0.0,
        };
        return Ok((
            ckpt,
            RunMetrics { rows, final_val_ppl, wall_clock_secs: start.elapsed().as_secs_f64() },
        ));
    }

    if cfg.mode == Mode::AstBoosted {
        student.add_slorb(cfg.slorb_k, cfg.slorb_init, cfg.seed, cfg.slorb_train_projection);
    }

    let schedule = cfg.lambda_schedule();
    let initial_masks = student.masks.clone();
    let mut states: Vec<SparseAdamWState<S>> = student
        .tensors
        .iter()
        .map(|t| SparseAdamWState::new(t.data.len(), BETA1, BETA2, ADAM_EPS, cfg.conventional_adamw))
        .collect();
    let mut rng = SplitMix64::stream(cfg.seed, "batches");
    let mut rows = Vec::new();

    let alpha = cfg.distill.alpha;
    let needs_teacher = alpha > 0.0;
    let needs_layers = needs_teacher
        && matches!(
            cfg.distill.variant,
            DistillVariant::TinyBert | DistillVariant::MobileBert | DistillVariant::SquareHead
        );

    for t in 1..=cfg.t1 {
        if cfg.delta_t != usize::MAX && t % cfg.delta_t == 0 {
            for (i, prev) in student.refresh_masks() {
                let mask = student.masks[i].as_ref().expect("refreshed layer keeps its mask");
                assert!(mask.is_valid(), "refreshed mask violates the pattern");
                let name = &student.tensors[i].name;
                push(&mut rows, t, "train", "flip_rate", mask.flip_rate(&prev), name);
                let init = initial_masks[i].as_ref().expect("initial mask present");
                push(&mut rows, t, "train", "init_flip_rate", mask.flip_rate(init), name);
            }
        }

        let (ids, targets) = sample_batch(&mut rng, &corpus.train, cfg.batch, cfg.seq);

        // teacher forward, no gradient, in its own graph
        let teacher_out = if needs_teacher {
            let mut tg = Graph::<S>::new();
            let o = teacher.model.forward(&mut tg, &ids, cfg.batch, cfg.seq, false);
            let logits = tg.value(o.logits).to_vec();
            let layers: Vec<TeacherLayer<S>> = if needs_layers {
                o.attn_probs
                    .iter()
                    .zip(&o.hidden)
                    .map(|(&a, &h)| TeacherLayer {
                        attn: Arc::new(tg.value(a).to_vec()),
                        hidden: Arc::new(tg.value(h).to_vec()),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Some((logits, layers))
        } else {
            None
        };

        let mut g = Graph::<S>::new();
        let out = student.forward(&mut g, &ids, cfg.batch, cfg.seq, true);
        let task = g.cross_entropy_mean(out.logits, Arc::new(targets));
        let mut kd_val = None;
        let loss = match &teacher_out {
            Some((t_logits, t_layers)) => {
                let kd = match cfg.distill.variant {
                    DistillVariant::ForwardKl => {
                        distill::forward_kl_loss(&mut g, t_logits, out.logits, 1.0)
                    }
                    DistillVariant::ReverseKl => {
                        distill::reverse_kl_loss(&mut g, t_logits, out.logits)
                    }
                    DistillVariant::TinyBert => {
                        let s_layers: Vec<StudentLayer> = out
                            .attn_probs
                            .iter()
                            .zip(&out.attn_scores)
                            .zip(&out.hidden)
                            .map(|((&attn, &scores), &hidden)| StudentLayer { attn, scores, hidden })
                            .collect();
                        distill::tinybert_loss(
                            &mut g,
                            &s_layers,
                            t_layers,
                            t_logits,
                            out.logits,
                            cfg.distill.tau,
                        )
                    }
                    DistillVariant::MobileBert => {
                        let s_layers: Vec<StudentLayer> = out
                            .attn_probs
                            .iter()
                            .zip(&out.attn_scores)
                            .zip(&out.hidden)
                            .map(|((&attn, &scores), &hidden)| StudentLayer { attn, scores, hidden })
                            .collect();
                        distill::mobilebert_loss(&mut g, &s_layers, t_layers, cfg.seq)
                    }
                    DistillVariant::SquareHead => {
                        let t_hidden: Vec<Arc<Vec<S>>> =
                            t_layers.iter().map(|l| l.hidden.clone()).collect();
                        distill::squarehead_loss(
                            &mut g,
                            &out.hidden,
                            &t_hidden,
                            t_logits,
                            out.logits,
                            cfg.distill.alpha1,
                            cfg.distill.alpha2,
                        )
                    }
                };
                kd_val = Some(g.scalar(kd).to_f64());
                distill::combined_loss(&mut g, task, kd, alpha)
            }
            None => task,
        };

        let loss_val = g.scalar(loss).to_f64();
        if !loss_val.is_finite() {
            return Err(non_finite(t, loss_val, &student));
        }
        let task_val = g.scalar(task).to_f64();
        g.backward(loss);

        let lr = lr_at(t - 1, cfg.t1, cfg.peak_lr);
        let lambda = schedule.lambda_at(t - 1);
        for (i, leaf) in out.leaves.iter().enumerate() {
            let Some(leaf) = *leaf else { continue };
            let grad = g.leaf_grad(leaf).expect("trainable leaf missing its gradient");
            states[i].step(&mut student.tensors[i].data, student.masks[i].as_ref(), grad, lambda, lr);
        }

        push(&mut rows, t, "train", "loss", loss_val, "");
        push(&mut rows, t, "train", "ce", task_val, "");
        if let Some(kd) = kd_val {
            push(&mut rows, t, "train", "kd", kd, "");
        }
        push(&mut rows, t, "train", "lr", lr, "");
        push(&mut rows, t, "train", "lambda", lambda, "");
        if t % cfg.val_every == 0 && t != cfg.t1 {
            push(&mut rows, t, "val", "ppl", validation_ppl(&student, corpus), "");
        }
    }

    // freeze: one final magnitude selection (unless the mask is fixed), then
    // multiply the mask through the stored weights for export
    if cfg.delta_t != usize::MAX {
        student.refresh_masks();
    }
    for i in 0..student.tensors.len() {
        if let Some(mask) = &student.masks[i] {
            assert!(mask.is_valid(), "final mask violates the pattern");
            student.tensors[i].data = mask.apply(&student.tensors[i].data);
        }
    }
    let final_val_ppl = validation_ppl(&student, corpus);
    push(&mut rows, cfg.t1, "val", "ppl", final_val_ppl, "");

    let ckpt = Checkpoint {
        model: student,
        step: cfg.t1,
        seed: cfg.seed,
        mode: cfg.mode.name().into(),
        lambda_max: cfg.lambda_max,
    };
    Ok((ckpt, RunMetrics { rows, final_val_ppl, wall_clock_secs: start.elapsed().as_secs_f64() }))
}

/// One ablation-report row: the run's label, the config knobs that define
/// it, and its final validation perplexity.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub mode: String,
    pub variant: String,
    pub t1: usize,
    pub delta_t: usize,
    pub lambda_max: f64,
    pub alpha: f64,
    pub seed: u64,
    pub final_val_ppl: f64,
}

/// The 5+5 ordering report: the mode suite (full method plus single-knob
/// ablations and the do-nothing-special baseline) and the distillation
/// variant suite.
pub struct AblationReport {
    pub mode_rows: Vec<AblationRow>,
    pub variant_rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("suite,name,mode,variant,t1,delta_t,lambda_max,alpha,seed,final_val_ppl\n");
        let mut emit = |suite: &str, r: &AblationRow| {
            let dt = if r.delta_t == usize::MAX { "inf".to_string() } else { r.delta_t.to_string() };
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                suite, r.name, r.mode, r.variant, r.t1, dt, r.lambda_max, r.alpha, r.seed, r.final_val_ppl
            )
            .unwrap();
        };
        for r in &self.mode_rows {
            emit("mode", r);
        }
        for r in &self.variant_rows {
            emit("distill", r);
        }
        s
    }

    pub fn ppl(&self, name: &str) -> Option<f64> {
        self.mode_rows
            .iter()
            .chain(&self.variant_rows)
            .find(|r| r.name == name)
            .map(|r| r.final_val_ppl)
    }
}

/// Runs the mode suite {ast, fixed_mask, static_srste, no_distill, naive}
/// and the five distillation variants against one teacher at the base
/// config's budget. The no-distillation run gets 1.5× the steps (its steps
/// cost roughly two-thirds as much without the teacher forward), and the
/// naive baseline is the degenerate config: no refresh, no decay, no
/// distillation.
pub fn run_ablation_suite<S: Scalar>(
    base: &TrainerConfig,
    teacher: &Checkpoint<S>,
    corpus: &Corpus,
    seed: u64,
) -> Result<AblationReport, TrainError> {
    let mk = |mode: Mode| {
        let mut c = base.clone();
        c.mode = mode;
        c.seed = seed;
        c.normalize();
        c
    };
    let run = |cfg: &TrainerConfig, name: &str| -> Result<AblationRow, TrainError> {
        let (_, metrics) = retrain_sparse(cfg, teacher, corpus).map_err(|e| match e {
            TrainError::NonFinite { step, value, report } => TrainError::NonFinite {
                step,
                value,
                report: format!("(in ablation run {name:?})\n{report}"),
            },
            other => other,
        })?;
        Ok(AblationRow {
            name: name.into(),
            mode: cfg.mode.name().into(),
            variant: cfg.distill.variant.name().into(),
            t1: cfg.t1,
            delta_t: cfg.delta_t,
            lambda_max: cfg.lambda_max,
            alpha: cfg.distill.alpha,
            seed,
            final_val_ppl: metrics.final_val_ppl,
        })
    };

    let ast = run(&mk(Mode::Ast), "ast")?;
    let fixed = run(&mk(Mode::FixedMask), "fixed_mask")?;
    let static_srste = run(&mk(Mode::StaticSrste), "static_srste")?;
    let no_distill = {
        let mut c = mk(Mode::NoDistill);
        c.t1 += c.t1 / 2; // FLOP parity: no teacher forward per step
        run(&c, "no_distill")?
    };
    let naive = {
        let mut c = mk(Mode::Ast);
        c.delta_t = usize::MAX;
        c.lambda_max = 0.0;
        c.distill.alpha = 0.0;
        run(&c, "naive")?
    };

    let mut variant_rows = Vec::new();
    for v in DistillVariant::ALL {
        if v == DistillVariant::ForwardKl {
            // identical config to the ast row; determinism makes the result equal
            let mut r = ast.clone();
            r.name = v.name().into();
            variant_rows.push(r);
            continue;
        }
        let mut c = mk(Mode::Ast);
        c.distill.variant = v;
        variant_rows.push(run(&c, v.name())?);
    }

    Ok(AblationReport {
        mode_rows: vec![ast, fixed, static_srste, no_distill, naive],
        variant_rows,
    })
}
