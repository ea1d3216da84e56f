//! Warmup-stable-decay learning rate.

use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Linear 0 → `max_lr` over the first `ceil(warmup_ratio·T)` steps, flat,
/// then linear `max_lr` → `min_lr` over the last `ceil(decay_ratio·T)`.
pub fn wsd_lr(step: u64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(Error::contract(format!("step {step} beyond total {total}")));
    }
    let warmup = (cfg.warmup_ratio * total as f64).ceil() as u64;
    let decay = (cfg.decay_ratio * total as f64).ceil() as u64;
    let decay_start = total.saturating_sub(decay);
    Ok(if step < warmup {
        cfg.max_lr * step as f64 / warmup as f64
    } else if step <= decay_start {
        cfg.max_lr
    } else {
        let frac = (step - decay_start) as f64 / decay as f64;
        cfg.max_lr * (1.0 - frac) + cfg.min_lr * frac
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(total: u64) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn endpoints_and_plateau() {
        let c = cfg(1000);
        assert_eq!(wsd_lr(0, &c).unwrap(), 0.0);
        assert!((wsd_lr(5, &c).unwrap() - 1.5e-4).abs() < 1e-18);
        for s in [10, 11, 500, 900] {
            assert_eq!(wsd_lr(s, &c).unwrap(), 3e-4);
        }
        assert!((wsd_lr(950, &c).unwrap() - 1.65e-4).abs() < 1e-18);
        assert_eq!(wsd_lr(1000, &c).unwrap(), 3e-5);
        assert!(matches!(wsd_lr(1001, &c), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn curve_is_bounded_continuous_and_peaks_at_max(total in 1u64..3000) {
            let c = cfg(total);
            let lrs: Vec<f64> = (0..=total).map(|s| wsd_lr(s, &c).unwrap()).collect();
            let peak = lrs.iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(peak, c.max_lr);
            let warmup = (c.warmup_ratio * total as f64).ceil();
            let decay = (c.decay_ratio * total as f64).ceil();
            // largest legitimate per-step change of a piecewise-linear curve
            let slope = c.max_lr / warmup.max(1.0) + (c.max_lr - c.min_lr) / decay.max(1.0);
            for w in lrs.windows(2) {
                prop_assert!((w[1] - w[0]).abs() <= slope * (1.0 + 1e-12));
            }
            prop_assert!(lrs.iter().all(|&l| (0.0..=c.max_lr).contains(&l)));
        }
    }
}
