use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

/// Optimizer, schedule and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Windows per step.
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip_norm: f64,
}

impl TrainConfig {
    /// Defaults with warmup at 5% of `total_steps`.
    pub fn new(total_steps: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            base_lr: 1.5e-4,
            min_lr: 1e-6,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            warmup_steps: total_steps / 20,
            total_steps,
            batch_size,
            seed,
            grad_clip_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.warmup_steps > self.total_steps {
            return fail(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 || self.min_lr < 0.0 {
            return fail(format!(
                "need base_lr > 0 and min_lr >= 0, got {} / {}",
                self.base_lr, self.min_lr
            ));
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!(
                "betas must be in [0,1), got {} / {}",
                self.beta1, self.beta2
            ));
        }
        if self.eps_opt <= 0.0 || self.weight_decay < 0.0 || self.grad_clip_norm < 0.0 {
            return fail("eps must be > 0; weight decay and clip norm >= 0".into());
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then a half cosine down to `min_lr`
/// at `total_steps`.
pub fn lr_at(t: usize, cfg: &TrainConfig) -> f64 {
    let (w, total) = (cfg.warmup_steps, cfg.total_steps);
    if t < w {
        return cfg.base_lr * t as f64 / w as f64;
    }
    if total == w {
        return cfg.base_lr;
    }
    let progress = ((t - w) as f64 / (total - w) as f64).min(1.0);
    cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn zeros(params: &ParamSet<f32>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn matches(&self, params: &ParamSet<f32>) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.shape() == p.value.shape() && v.shape() == p.value.shape())
    }
}

/// One decoupled-weight-decay Adam update from the gradients stored in
/// `params`. Decay only touches parameters flagged `decay`.
pub fn adamw_step(
    params: &mut ParamSet<f32>,
    state: &mut AdamState,
    t: usize,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("optimizer step count starts at 1".into()));
    }
    if !state.matches(params) {
        return Err(Error::Contract(
            "optimizer state does not match parameters".into(),
        ));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (p, (m, v)) in params
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        let grads = p.grad.data();
        for (((theta, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g as f64;
            let m_new = b1 * *mi as f64 + (1.0 - b1) * g;
            let v_new = b2 * *vi as f64 + (1.0 - b2) * g * g;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            let th = *theta as f64;
            *theta = (th - lr * m_hat / (v_hat.sqrt() + cfg.eps_opt) - lr * wd * th) as f32;
        }
    }
    Ok(())
}

/// L2 norm of all gradients together.
pub fn grad_norm(params: &ParamSet<f32>) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamSet<f32>, max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if max_norm > 0.0 && norm > max_norm {
        let scale = (max_norm / (norm + 1e-6)) as f32;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Parameter;

    fn single(value: f32, grad: f32, decay: bool) -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        let mut p = Parameter::new("w", Tensor::full(&[1], value), decay);
        p.grad = Tensor::full(&[1], grad);
        ps.push(p).unwrap();
        ps
    }

    fn cfg(wd: f64) -> TrainConfig {
        TrainConfig {
            weight_decay: wd,
            ..TrainConfig::new(100, 1, 0)
        }
    }

    #[test]
    fn first_adam_step_by_hand() {
        let mut ps = single(1.0, 0.5, true);
        let mut st = AdamState::zeros(&ps);
        adamw_step(&mut ps, &mut st, 1, 0.1, &cfg(0.0)).unwrap();
        assert!((ps.by_id(0).value.data()[0] - 0.9).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut ps = single(0.7, 0.0, true);
        let mut st = AdamState::zeros(&ps);
        adamw_step(&mut ps, &mut st, 1, 0.1, &cfg(0.0)).unwrap();
        assert_eq!(ps.by_id(0).value.data()[0], 0.7);
    }

    #[test]
    fn decay_shrinks_by_lr_wd_theta() {
        let mut ps = single(2.0, 0.0, true);
        let mut st = AdamState::zeros(&ps);
        adamw_step(&mut ps, &mut st, 1, 0.1, &cfg(0.05)).unwrap();
        let want = 2.0 - 0.1 * 0.05 * 2.0;
        assert!((ps.by_id(0).value.data()[0] as f64 - want).abs() < 1e-6);

        let mut skip = single(2.0, 0.0, false);
        let mut st = AdamState::zeros(&skip);
        adamw_step(&mut skip, &mut st, 1, 0.1, &cfg(0.05)).unwrap();
        assert_eq!(skip.by_id(0).value.data()[0], 2.0);
    }

    #[test]
    fn identical_state_gives_identical_updates() {
        let run = || {
            let mut ps = single(0.3, -0.2, true);
            let mut st = AdamState::zeros(&ps);
            for t in 1..=5 {
                adamw_step(&mut ps, &mut st, t, 0.01, &cfg(0.05)).unwrap();
            }
            (ps, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_zero_is_rejected() {
        let mut ps = single(1.0, 1.0, true);
        let mut st = AdamState::zeros(&ps);
        assert!(adamw_step(&mut ps, &mut st, 0, 0.1, &cfg(0.0)).is_err());
    }

    #[test]
    fn schedule_landmarks() {
        let c = TrainConfig {
            base_lr: 1e-3,
            min_lr: 1e-5,
            warmup_steps: 10,
            ..TrainConfig::new(110, 1, 0)
        };
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(5, &c) - 5e-4).abs() < 1e-15);
        assert_eq!(lr_at(10, &c), 1e-3);
        assert!((lr_at(60, &c) - (1e-3 + 1e-5) / 2.0).abs() < 1e-9);
        assert!((lr_at(110, &c) - 1e-5).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 10..=110 {
            let lr = lr_at(t, &c);
            assert!(lr <= prev);
            prev = lr;
        }
        assert!((lr_at(10, &c) - lr_at(9, &c)) <= 1e-4 + 1e-12);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut ps = single(0.0, 3.0, true);
        let mut p = Parameter::new("b", Tensor::full(&[1], 0.0), false);
        p.grad = Tensor::full(&[1], 4.0);
        ps.push(p).unwrap();
        assert_eq!(clip_grad_norm(&mut ps, 1.0), 5.0);
        assert!((grad_norm(&ps) - 1.0).abs() < 1e-5);
        assert!(clip_grad_norm(&mut ps, 0.0) < 1.01);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(100, 8, 1).validate().is_ok());
        assert_eq!(TrainConfig::new(2000, 8, 1).warmup_steps, 100);
        let bad = TrainConfig {
            warmup_steps: 200,
            ..TrainConfig::new(100, 8, 1)
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::new(100, 0, 1).validate().is_err());
    }
}
