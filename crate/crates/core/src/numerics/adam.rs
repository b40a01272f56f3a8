use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters plus the exponential learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Whether weight decay also applies to bias vectors.
    pub decay_biases: bool,
}

impl AdamConfig {
    /// The published fine-tuning settings: lr 1e-4 decayed to 1e-7, decay 5e-4.
    pub fn paper() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
            lr_initial: 1e-4,
            lr_final: 1e-7,
            decay_biases: false,
        }
    }

    pub fn with_lr(mut self, initial: f64, final_: f64) -> Self {
        self.lr_initial = initial;
        self.lr_final = final_;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.lr_initial > 0.0
            && self.lr_final > 0.0
            && self.lr_final <= self.lr_initial;
        if ok {
            Ok(())
        } else {
            Err(Error::contract("adam", format!("invalid config {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// `lr(step) = lr_initial · (lr_final / lr_initial)^(step / total_steps)`.
pub fn learning_rate(cfg: &AdamConfig, step: usize, total_steps: usize) -> f64 {
    let frac = step as f64 / total_steps as f64;
    cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(frac)
}

/// Per-parameter moments and the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step_count: usize,
    pub total_steps: usize,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]], total_steps: usize) -> Result<Self> {
        config.validate()?;
        if total_steps == 0 {
            return Err(Error::contract("adam", "total_steps must be positive"));
        }
        let zeros: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(OptimizerState {
            config,
            step_count: 0,
            total_steps,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    pub fn current_lr(&self) -> f64 {
        learning_rate(&self.config, self.step_count, self.total_steps)
    }

    /// One bias-corrected Adam update. `decays[i]` says whether parameter `i`
    /// receives L2 weight decay.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], decays: &[bool]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() || decays.len() != params.len() {
            return Err(Error::contract(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::contract(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.step_count >= self.total_steps {
            return Err(Error::contract(
                "adam_step",
                format!("schedule exhausted after {} steps", self.total_steps),
            ));
        }

        let cfg = &self.config;
        let lr = self.current_lr();
        let t = (self.step_count + 1) as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let c1 = T::of(1.0 - cfg.beta1.powi(t));
        let c2 = T::of(1.0 - cfg.beta2.powi(t));
        let eps = T::of(cfg.epsilon);
        let lr = T::of(lr);
        let one = T::one();

        for (i, p) in params.iter_mut().enumerate() {
            let wd = if decays[i] { T::of(cfg.weight_decay) } else { T::zero() };
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = *gv + wd * *pv;
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
