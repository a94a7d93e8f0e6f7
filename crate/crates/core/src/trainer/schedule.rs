use std::f64::consts::PI;

use crate::config::{Schedule, TrainConfig};

/// Learning rate at fractional epoch `e`.
///
/// Linear ramp from 0 to `lr` over the warmup epochs, then cosine decay that
/// reaches `min_lr` at `e = epochs`.
pub fn lr_at(cfg: &TrainConfig, e: f64) -> f64 {
    if cfg.schedule == Schedule::Constant {
        return cfg.lr;
    }
    let warm = cfg.warmup_epochs as f64;
    let total = cfg.epochs as f64;
    if e < warm {
        return cfg.lr * e / warm;
    }
    if total <= warm {
        return cfg.lr;
    }
    let progress = ((e - warm) / (total - warm)).min(1.0);
    cfg.lr - (cfg.lr - cfg.min_lr) * 0.5 * (1.0 - (PI * progress).cos())
}

/// Rate used for the update of 0-based `epoch`, evaluated at the end of that epoch.
pub fn lr_for_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    lr_at(cfg, (epoch + 1) as f64)
}

/// Rate for 0-based global `step` when the schedule advances per iteration.
pub fn lr_for_step(cfg: &TrainConfig, step: u64, steps_per_epoch: usize) -> f64 {
    lr_at(cfg, (step + 1) as f64 / steps_per_epoch.max(1) as f64)
}
