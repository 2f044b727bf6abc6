//! SGD with momentum, weight decay and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Explicit `(epoch, multiplier)` steps; the multiplier is applied to the
    /// base rate from that epoch on. When empty, `decay_fractions` is used.
    pub schedule: Vec<(usize, f64)>,
    /// `(fraction of the phase length, multiplier)` steps used when
    /// `schedule` is empty; resolved against each training phase's epoch count.
    pub decay_fractions: Vec<(f64, f64)>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            schedule: Vec::new(),
            decay_fractions: vec![(0.5, 0.1), (0.75, 0.01)],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("schedule epochs must be strictly increasing".into());
        }
        if self.decay_fractions.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("decay_fractions must be strictly increasing".into());
        }
        if self
            .schedule
            .iter()
            .map(|s| s.1)
            .chain(self.decay_fractions.iter().map(|d| d.1))
            .any(|m| !(m > 0.0 && m.is_finite()))
        {
            return bad("schedule multipliers must be > 0".into());
        }
        Ok(())
    }

    /// The step schedule in effect for a phase of `phase_epochs` epochs.
    pub fn resolved_schedule(&self, phase_epochs: usize) -> Vec<(usize, f64)> {
        if !self.schedule.is_empty() {
            return self.schedule.clone();
        }
        let mut steps: Vec<(usize, f64)> = Vec::new();
        for &(frac, mult) in &self.decay_fractions {
            let epoch = (frac * phase_epochs as f64).round() as usize;
            match steps.last_mut() {
                Some(last) if last.0 >= epoch => last.1 = mult,
                _ => steps.push((epoch, mult)),
            }
        }
        steps
    }

    /// Learning rate for 0-based `epoch` of a phase lasting `phase_epochs`.
    pub fn lr_at(&self, epoch: usize, phase_epochs: usize) -> f64 {
        let mult = self
            .resolved_schedule(phase_epochs)
            .iter()
            .rev()
            .find(|(e, _)| epoch >= *e)
            .map_or(1.0, |s| s.1);
        self.learning_rate * mult
    }
}

/// `v ← momentum·v + grad + weight_decay·w; w ← w − lr·v`, then clears the gradient.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Param<T>>,
    opt: &OptimizerConfig,
    lr: f64,
) {
    let mu = T::from_f64_lossy(opt.momentum);
    let wd = T::from_f64_lossy(opt.weight_decay);
    let lr = T::from_f64_lossy(lr);
    for p in params {
        let Param {
            value,
            grad,
            velocity,
        } = p;
        for ((w, g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(velocity.data_mut().iter_mut())
        {
            *v = mu * *v + *g + wd * *w;
            *w -= lr * *v;
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(w: &[f64], g: &[f64]) -> Param<f64> {
        let mut p = Param::from_value(Tensor::from_f64(&[w.len()], w).unwrap());
        p.grad = Tensor::from_f64(&[g.len()], g).unwrap();
        p
    }

    #[test]
    fn vanilla_sgd() {
        let opt = OptimizerConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = param(&[1.0, 2.0], &[0.5, -1.0]);
        sgd_step([&mut p], &opt, 0.1);
        assert_eq!(p.value.data(), &[1.0 - 0.05, 2.0 + 0.1]);
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let opt = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = param(&[1.0, -3.0], &[0.0, 0.0]);
        sgd_step([&mut p], &opt, 0.5);
        assert_eq!(p.value.data(), &[1.0, -3.0]);
    }

    #[test]
    fn momentum_and_decay_update() {
        let opt = OptimizerConfig {
            momentum: 0.9,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = param(&[1.0], &[1.0]);
        p.velocity = Tensor::from_f64(&[1], &[2.0]).unwrap();
        sgd_step([&mut p], &opt, 0.5);
        // v = 0.9*2 + 1 + 0.1*1 = 2.9; w = 1 - 0.5*2.9
        assert!((p.velocity.data()[0] - 2.9).abs() < 1e-12);
        assert!((p.value.data()[0] - (1.0 - 1.45)).abs() < 1e-12);
    }

    #[test]
    fn explicit_schedule_lookup() {
        let opt = OptimizerConfig {
            schedule: vec![(30, 0.1)],
            ..Default::default()
        };
        assert_eq!(opt.lr_at(29, 100), 0.01);
        assert!((opt.lr_at(30, 100) - 0.001).abs() < 1e-15);
        assert!((opt.lr_at(99, 100) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_decays_at_half_and_three_quarters() {
        let opt = OptimizerConfig::default();
        assert_eq!(opt.resolved_schedule(20), vec![(10, 0.1), (15, 0.01)]);
        assert_eq!(opt.lr_at(9, 20), 0.01);
        assert!((opt.lr_at(10, 20) - 0.001).abs() < 1e-15);
        assert!((opt.lr_at(15, 20) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            schedule: vec![(10, 0.1), (10, 0.01)],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
