use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 4,
            base_lr: 5e-4,
            warmup_lr: 1e-6,
            warmup_epochs: 9,
            min_lr: 1e-6,
            seed: 0,
            weight_decay: 1e-4,
            grad_clip: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be >= 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "train.warmup_epochs = {} must be below train.epochs = {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (key, v) in [("base_lr", self.base_lr), ("warmup_lr", self.warmup_lr), ("min_lr", self.min_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("train.{key} = {v} must be > 0")));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("train.weight_decay >= 0 and train.grad_clip > 0 required".into()));
        }
        Ok(())
    }
}

/// Learning rate at a (fractional) epoch: linear warmup, then cosine decay.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs as f64;
    if !(0.0..=total).contains(&epoch) {
        return Err(Error::Invalid(format!("epoch {epoch} outside [0, {total}]")));
    }
    let warm = cfg.warmup_epochs as f64;
    if epoch < warm {
        return Ok(cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * epoch / warm);
    }
    let progress = (epoch - warm) / (total - warm);
    Ok(cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0.0, &cfg).unwrap(), 1e-6);
        assert_eq!(lr_at(9.0, &cfg).unwrap(), 5e-4);
        assert_eq!(lr_at(300.0, &cfg).unwrap(), 1e-6);
        assert!(lr_at(-0.1, &cfg).is_err());
        assert!(lr_at(300.5, &cfg).is_err());
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let cfg = TrainConfig::default();
        let left = lr_at(9.0 - 1e-9, &cfg).unwrap();
        let right = lr_at(9.0 + 1e-9, &cfg).unwrap();
        assert!((left - 5e-4).abs() < 1e-12 && (right - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn monotone_phases() {
        let cfg = TrainConfig::default();
        let mut prev = 0.0;
        for i in 0..=90 {
            let lr = lr_at(i as f64 * 0.1, &cfg).unwrap();
            assert!(lr >= prev);
            prev = lr;
        }
        for i in 9..=300 {
            let lr = lr_at(i as f64, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
