//! Sparse update rules: plain STE SGD, SGD + annealing SR-STE decay on the
//! pruned complement, and the decoupled-decay AdamW variant, plus the λ and
//! learning-rate schedules.

use crate::scalar::Scalar;
use crate::sparsity::Mask;

/// Piecewise-linear decay factor: λ(t) = α·t up to T0, then constant α·T0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealingSchedule {
    pub alpha: f64,
    pub t0: usize,
    pub t1: usize,
}

impl AnnealingSchedule {
    pub fn new(alpha: f64, t0: usize, t1: usize) -> Self {
        assert!(t0 >= 1 && t0 <= t1, "schedule requires 0 < T0 ≤ T1");
        assert!(alpha >= 0.0, "alpha must be non-negative");
        AnnealingSchedule { alpha, t0, t1 }
    }

    /// Construct from the plateau value λ_max = α·T0.
    pub fn from_max(lambda_max: f64, t0: usize, t1: usize) -> Self {
        Self::new(lambda_max / t0 as f64, t0, t1)
    }

    pub fn lambda_max(&self) -> f64 {
        self.alpha * self.t0 as f64
    }

    pub fn lambda_at(&self, t: usize) -> f64 {
        assert!(t <= self.t1, "step {t} beyond schedule end {}", self.t1);
        if t <= self.t0 {
            self.alpha * t as f64
        } else {
            self.alpha * self.t0 as f64
        }
    }
}

/// Decay-factor schedule used by the trainer: the annealing ramp, a
/// constant plateau from step 0 (the static SR-STE baseline), or zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    Annealing(AnnealingSchedule),
    Constant { lambda_max: f64, t1: usize },
    Off,
}

impl LambdaSchedule {
    pub fn lambda_at(&self, t: usize) -> f64 {
        match *self {
            LambdaSchedule::Annealing(s) => s.lambda_at(t),
            LambdaSchedule::Constant { lambda_max, t1 } => {
                assert!(t <= t1, "step {t} beyond schedule end {t1}");
                lambda_max
            }
            LambdaSchedule::Off => 0.0,
        }
    }
}

/// Linear warmup over the first 2% of steps to `peak`, then cosine decay to
/// 0.1·peak at T1.
pub fn lr_at(t: usize, t1: usize, peak: f64) -> f64 {
    assert!(t <= t1, "step {t} beyond schedule end {t1}");
    let warmup = ((t1 as f64 * 0.02).ceil() as usize).max(1);
    if t <= warmup {
        return peak * t as f64 / warmup as f64;
    }
    let progress = (t - warmup) as f64 / (t1 - warmup) as f64;
    peak * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Plain STE SGD: every entry moves by −γ·g, pruned ones included.
pub fn step_ste_sgd<S: Scalar>(w: &mut [S], grad: &[S], lr: S) {
    assert_eq!(w.len(), grad.len(), "grad shape mismatch");
    S::axpy(w, -lr, grad);
}

/// SR-STE SGD: w ← w − γ·(g + λ·(m̄ ⊙ w)); kept entries see pure STE.
pub fn step_srste_sgd<S: Scalar>(w: &mut [S], mask: &Mask, grad: &[S], lr: S, lambda: S) {
    assert_eq!(w.len(), grad.len(), "grad shape mismatch");
    assert_eq!(w.len(), mask.len(), "mask shape mismatch");
    for i in 0..w.len() {
        let decay = if mask.get_flat(i) { S::ZERO } else { lambda * w[i] };
        w[i] -= lr * (grad[i] + decay);
    }
}

/// Moment state for the decoupled-decay AdamW. The update is, in order:
///
/// ```text
/// u_t = β1·u_{t−1} + (1−β1)·g
/// ũ_t = u_t + λ_t·(m̄ ⊙ W_t)          (decay decoupled from u)
/// v_t = β2·v_{t−1} + (1−β2)·ũ_{t−1}²   (previous decayed moment; ũ_0 = 0)
/// W_{t+1} = W_t − γ_t·ũ_t / ((1−β1ᵗ)(√v_t + ε))
/// ```
///
/// There is no second-moment bias correction. The v recurrence consuming
/// ũ_{t−1} is kept as written; `conventional_v` switches it to the usual
/// current-step form v_t = β2·v_{t−1} + (1−β2)·ũ_t².
pub struct SparseAdamWState<S: Scalar> {
    u: Vec<S>,
    v: Vec<S>,
    u_tilde_prev: Vec<S>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub conventional_v: bool,
}

impl<S: Scalar> SparseAdamWState<S> {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64, conventional_v: bool) -> Self {
        SparseAdamWState {
            u: vec![S::ZERO; len],
            v: vec![S::ZERO; len],
            u_tilde_prev: vec![S::ZERO; len],
            t: 0,
            beta1,
            beta2,
            eps,
            conventional_v,
        }
    }

    /// One optimizer step; `mask: None` (or λ=0) is the dense trajectory.
    pub fn step(&mut self, w: &mut [S], mask: Option<&Mask>, grad: &[S], lambda: f64, lr: f64) {
        assert_eq!(w.len(), self.u.len(), "state shape mismatch");
        assert_eq!(w.len(), grad.len(), "grad shape mismatch");
        self.t += 1;
        let b1 = S::from_f64(self.beta1);
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let lam = S::from_f64(lambda);
        let eps = S::from_f64(self.eps);
        let corr = S::from_f64(lr / (1.0 - self.beta1.powi(self.t as i32)));
        for i in 0..w.len() {
            self.u[i] = b1 * self.u[i] + one_m_b1 * grad[i];
            let pruned = lambda != 0.0 && mask.is_some_and(|m| !m.get_flat(i));
            let u_tilde = if pruned { self.u[i] + lam * w[i] } else { self.u[i] };
            let v_src = if self.conventional_v { u_tilde } else { self.u_tilde_prev[i] };
            self.v[i] = b2 * self.v[i] + one_m_b2 * v_src * v_src;
            w[i] -= corr * u_tilde / (self.v[i].sqrt() + eps);
            self.u_tilde_prev[i] = u_tilde;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::NMPattern;

    #[test]
    fn lambda_schedule_matches_direct_evaluation() {
        // T1=40000, T0=10000, plateau 1e-4 → α=1e-8
        let s = AnnealingSchedule::from_max(1e-4, 10_000, 40_000);
        assert!((s.alpha - 1e-8).abs() < 1e-20);
        assert_eq!(s.lambda_at(0), 0.0);
        assert!((s.lambda_at(5_000) - 5e-5).abs() < 1e-15);
        assert!((s.lambda_at(20_000) - 1e-4).abs() < 1e-15);
        // continuity at the knee
        assert_eq!(s.lambda_at(10_000), s.lambda_at(10_001));
        // non-decreasing everywhere
        let mut prev = -1.0;
        for t in 0..=40_000 {
            let l = s.lambda_at(t);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    #[should_panic(expected = "beyond schedule end")]
    fn lambda_beyond_t1_is_rejected() {
        AnnealingSchedule::from_max(1e-4, 10, 40).lambda_at(41);
    }

    #[test]
    fn lr_schedule_endpoints() {
        let (t1, peak) = (3000, 1e-3);
        assert_eq!(lr_at(0, t1, peak), 0.0);
        let warmup = 60; // 2% of 3000
        assert!((lr_at(warmup, t1, peak) - peak).abs() < 1e-18);
        assert!((lr_at(t1, t1, peak) - 0.1 * peak).abs() < 1e-12);
        // monotone decay after warmup
        let mut prev = f64::INFINITY;
        for t in warmup..=t1 {
            let g = lr_at(t, t1, peak);
            assert!(g <= prev + 1e-18);
            prev = g;
        }
    }

    #[test]
    fn ste_sgd_forced_arithmetic() {
        let mut w = [1.0f64, 1.0];
        step_ste_sgd(&mut w, &[1.0, -1.0], 0.0);
        assert_eq!(w, [1.0, 1.0]); // γ=0 no-op
        step_ste_sgd(&mut w, &[1.0, -1.0], 0.1);
        assert!((w[0] - 0.9).abs() < 1e-15 && (w[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn srste_reduces_to_ste_when_lambda_zero_and_decays_pruned() {
        let pat = NMPattern::new(2, 4);
        let wv = [0.4f64, -0.9, 2.0, 0.1, 1.0, -1.0, 0.2, 0.3];
        let mask = Mask::select_magnitude(&wv, 2, 4, pat);
        let g = [0.3f64, -0.2, 0.0, 0.5, 0.1, 0.2, -0.4, 0.6];

        let mut a = wv;
        step_srste_sgd(&mut a, &mask, &g, 0.05, 0.0);
        let mut b = wv;
        step_ste_sgd(&mut b, &g, 0.05);
        assert_eq!(a, b, "λ=0 must reduce to plain STE");

        // pruned entry w=2, g=0, γ=0.1, λ=0.5 → 2 − 0.1·(0.5·2) = 1.9
        let w1 = [2.0f64, 5.0, 6.0, 3.0];
        let m1 = Mask::select_magnitude(&w1, 1, 4, pat); // keeps 5,6 → prunes idx 0,3
        assert!(!m1.get(0, 0));
        let mut w = w1;
        step_srste_sgd(&mut w, &m1, &[0.0; 4], 0.1, 0.5);
        assert!((w[0] - 1.9).abs() < 1e-15);

        // kept entries identical to the pure-STE update, componentwise
        let mut c = wv;
        step_srste_sgd(&mut c, &mask, &g, 0.05, 0.7);
        for i in 0..wv.len() {
            if mask.get_flat(i) {
                assert_eq!(c[i], b[i], "kept entry {i} must see pure STE");
            } else {
                assert_ne!(c[i], b[i], "pruned entry {i} must see decay");
            }
        }
    }

    /// Hand-computed single AdamW step (λ=0, zero state):
    /// u₁=(1−β1)g; ũ₁=u₁; v₁=0 (uses ũ₀=0); W₁ = W₀ − γ·ũ₁/((1−β1)(0+ε))
    /// → W₀ − γ·g/ε.
    #[test]
    fn adamw_single_step_hand_oracle() {
        let (b1, b2, eps) = (0.9, 0.95, 1e-8);
        let g = [0.02f64, -0.01];
        let mut w = [0.5f64, -0.25];
        let mut st = SparseAdamWState::new(2, b1, b2, eps, false);
        let lr = 1e-10; // tiny LR stands in for warmup start
        st.step(&mut w, None, &g, 0.0, lr);
        for i in 0..2 {
            let u1 = (1.0 - b1) * g[i];
            let expect = [0.5, -0.25][i] - lr * u1 / ((1.0 - b1) * (0.0f64.sqrt() + eps));
            assert!((w[i] - expect).abs() < 1e-15, "coord {i}: {} vs {expect}", w[i]);
        }
        // second step now has v₂ = (1−β2)·ũ₁²
        let mut w2 = [0.5f64, -0.25];
        let mut st2 = SparseAdamWState::new(2, b1, b2, eps, false);
        st2.step(&mut w2, None, &g, 0.0, 0.0);
        st2.step(&mut w2, None, &g, 0.0, 0.01);
        for i in 0..2 {
            let u1 = (1.0 - b1) * g[i];
            let u2 = b1 * u1 + (1.0 - b1) * g[i];
            let v2 = (1.0 - b2) * u1 * u1;
            let expect = [0.5, -0.25][i] - 0.01 * u2 / ((1.0 - b1 * b1) * (v2.sqrt() + eps));
            assert!((w2[i] - expect).abs() < 1e-12, "coord {i}: {} vs {expect}", w2[i]);
        }
    }

    #[test]
    fn adamw_zero_grad_zero_lambda_is_fixed_point() {
        let mut w = [1.0f64, -2.0, 3.0];
        let mut st = SparseAdamWState::new(3, 0.9, 0.95, 1e-8, false);
        for _ in 0..25 {
            st.step(&mut w, None, &[0.0; 3], 0.0, 1e-3);
        }
        assert_eq!(w, [1.0, -2.0, 3.0]);
    }

    /// Independent scalar simulation of the pruned-weight recurrence with
    /// g=0, λ>0: magnitude decays monotonically.
    #[test]
    fn adamw_pruned_weight_decays_monotonically() {
        let (b1, b2, eps, lam, lr) = (0.9, 0.95, 1e-8, 0.05, 1e-3);
        let w0 = [2.0f64, 7.0, 6.0, 1.5];
        let mask = Mask::select_magnitude(&w0, 1, 4, NMPattern::new(2, 4));
        assert!(!mask.get(0, 0));

        let mut w = w0;
        let mut st = SparseAdamWState::new(4, b1, b2, eps, false);
        // independent recurrence for coordinate 0; step 1 runs at γ=0 (the
        // warmup zero-LR step that absorbs the v₁=0 blow-up), decay after
        let (mut su, mut sv, mut sup, mut sw) = (0.0f64, 0.0f64, 0.0f64, w0[0]);
        let mut prev_mag = w0[0].abs();
        for t in 1..=50 {
            let gamma = if t == 1 { 0.0 } else { lr };
            st.step(&mut w, Some(&mask), &[0.0; 4], lam, gamma);
            su = b1 * su; // g = 0
            let ut = su + lam * sw;
            sv = b2 * sv + (1.0 - b2) * sup * sup;
            sw -= gamma * ut / ((1.0 - b1.powi(t)) * (sv.sqrt() + eps));
            sup = ut;
            assert!((w[0] - sw).abs() < 1e-12, "step {t}: {} vs {sw}", w[0]);
            if t > 1 {
                assert!(w[0].abs() < prev_mag, "magnitude must shrink at step {t}");
            }
            prev_mag = w[0].abs();
        }
    }

    /// The verbatim ordering leaves v₁ = 0, so a non-zero first-step LR
    /// produces a ~γ·λ·w/ε jump; warmup starting at γ=0 is what tames it.
    #[test]
    fn adamw_first_step_explosion_without_warmup() {
        let w0 = [2.0f64, 7.0, 6.0, 1.5];
        let mask = Mask::select_magnitude(&w0, 1, 4, NMPattern::new(2, 4));
        let mut w = w0;
        let mut st = SparseAdamWState::new(4, 0.9, 0.95, 1e-8, false);
        st.step(&mut w, Some(&mask), &[0.0; 4], 0.05, 1e-3);
        assert!(w[0].abs() > 1e3, "pruned coord should blow up, got {}", w[0]);
    }

    /// With λ≡0 the trajectory is mask-independent (pure STE-AdamW).
    #[test]
    fn adamw_lambda_zero_ignores_mask() {
        let w0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let g: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos() * 0.1).collect();
        let m1 = Mask::select_magnitude(&w0, 2, 4, NMPattern::new(2, 4));
        let m2 = Mask::select_magnitude(&g, 2, 4, NMPattern::new(2, 4));

        let mut wa = w0.clone();
        let mut sa = SparseAdamWState::new(8, 0.9, 0.95, 1e-8, false);
        let mut wb = w0.clone();
        let mut sb = SparseAdamWState::new(8, 0.9, 0.95, 1e-8, false);
        for _ in 0..10 {
            sa.step(&mut wa, Some(&m1), &g, 0.0, 1e-3);
            sb.step(&mut wb, Some(&m2), &g, 0.0, 1e-3);
        }
        assert_eq!(wa, wb);
    }

    #[test]
    fn adamw_conventional_v_differs_from_verbatim() {
        let w0 = [1.0f64, -1.0];
        let g = [0.1f64, 0.2];
        let mut wa = w0;
        let mut sa = SparseAdamWState::new(2, 0.9, 0.95, 1e-8, false);
        let mut wb = w0;
        let mut sb = SparseAdamWState::new(2, 0.9, 0.95, 1e-8, true);
        for _ in 0..3 {
            sa.step(&mut wa, None, &g, 0.0, 1e-3);
            sb.step(&mut wb, None, &g, 0.0, 1e-3);
        }
        assert_ne!(wa, wb);
    }
}
