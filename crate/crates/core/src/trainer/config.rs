use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sequences per step.
    pub batch_size: usize,
    pub seq_len: usize,
    pub total_steps: u64,
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_ratio: f64,
    pub decay_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub checkpoint_count: u64,
    /// Extra trace steps every this many steps; 0 traces at checkpoints only.
    pub trace_cadence: u64,
    /// Held-out sequences routed at every trace step.
    pub val_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            seq_len: 2048,
            total_steps: 1000,
            max_lr: 3e-4,
            min_lr: 3e-5,
            warmup_ratio: 0.01,
            decay_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_count: 10,
            trace_cadence: 0,
            val_sequences: 4,
        }
    }
}

impl TrainConfig {
    /// Settings for the 2-layer toy model on a small synthetic corpus.
    pub fn toy() -> Self {
        TrainConfig {
            batch_size: 8,
            seq_len: 32,
            total_steps: 500,
            max_lr: 1e-2,
            min_lr: 1e-3,
            val_sequences: 16,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("val_sequences", self.val_sequences),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.total_steps == 0 {
            return Err(Error::config("total_steps", "must be positive"));
        }
        if self.checkpoint_count == 0 || self.checkpoint_count > self.total_steps {
            return Err(Error::config(
                "checkpoint_count",
                format!("must be in 1..={}", self.total_steps),
            ));
        }
        for (field, v) in [
            ("max_lr", self.max_lr),
            ("min_lr", self.min_lr),
            ("grad_clip", self.grad_clip),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if self.min_lr > self.max_lr {
            return Err(Error::config("min_lr", "exceeds max_lr"));
        }
        for (field, v) in [
            ("warmup_ratio", self.warmup_ratio),
            ("decay_ratio", self.decay_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if self.warmup_ratio + self.decay_ratio > 1.0 {
            return Err(Error::config("decay_ratio", "warmup_ratio + decay_ratio exceeds 1"));
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }

    /// Steps whose parameters are checkpointed: `ceil(i·T/c)` for
    /// `i = 1..=c`, so the final step is always included.
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let (t, c) = (self.total_steps, self.checkpoint_count);
        (1..=c).map(|i| (i * t).div_ceil(c)).collect()
    }

    pub fn is_trace_step(&self, step: u64) -> bool {
        (self.trace_cadence > 0 && step % self.trace_cadence == 0)
            || self.checkpoint_steps().contains(&step)
    }
}
