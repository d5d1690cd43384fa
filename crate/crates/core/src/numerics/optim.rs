use crate::error::{invalid, Error, Result};
use crate::math;

use super::params::ParamStore;

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale the full gradient to at most this L2 norm when set.
    pub clip_norm: Option<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm.map_or(true, |c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(invalid("AdamW hyper-parameters out of range"))
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Frozen entries are skipped. A zero learning rate leaves every value
    /// bitwise unchanged.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        self.validate()?;
        let norm = store.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        store.step_count += 1;
        let t = store.step_count as i32;
        let bc1 = 1.0 - math::powi(self.beta1, t);
        let bc2 = 1.0 - math::powi(self.beta2, t);
        for id in 0..store.len() {
            let e = store.entry_mut(super::params::ParamId(id));
            if e.frozen {
                continue;
            }
            for i in 0..e.value.len() {
                let g = e.grad[i] * scale;
                e.first_moment[i] = self.beta1 * e.first_moment[i] + (1.0 - self.beta1) * g;
                e.second_moment[i] = self.beta2 * e.second_moment[i] + (1.0 - self.beta2) * g * g;
                if self.lr == 0.0 {
                    continue;
                }
                let m = e.first_moment[i] / bc1;
                let v = e.second_moment[i] / bc2;
                e.value[i] -= self.lr * (m / (math::sqrt(v) + self.eps) + self.weight_decay * e.value[i]);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
