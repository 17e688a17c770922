use crate::error::{Error, Result};

/// Architecture hyper-parameters. All fields are integers so the checkpoint
/// header can store them as little-endian `u32`s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub seed: u32,
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_positions: 128,
            vocab_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be positive"));
            }
            if u32::try_from(value).is_err() {
                return Err(Error::config(field, "does not fit in 32 bits"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "n_heads",
                format!("d_model {} is not divisible by {}", self.d_model, self.n_heads),
            ));
        }
        if self.vocab_size < crate::vocab::NUM_SPECIALS {
            return Err(Error::config("vocab_size", "smaller than the special-token block"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Optimisation settings. Full-size runs use 5e-5 / 200k / 20k / 2048 for
/// the first four fields; desk runs scale them down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub tokens_per_batch: usize,
    pub seed: u64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Record the loss every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            total_steps: 2000,
            warmup_steps: 200,
            tokens_per_batch: 256,
            seed: 0,
            dropout: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            max_grad_norm: 1.0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::config("peak_lr", "must be positive"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("total_steps", "must be positive"));
        }
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::config(
                "warmup_steps",
                format!("must be in 1..{} (total_steps)", self.total_steps),
            ));
        }
        if self.tokens_per_batch == 0 {
            return Err(Error::config("tokens_per_batch", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta", "must be in [0, 1)"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be positive"));
        }
        Ok(())
    }

    /// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let (step, warm, total) = (step as f64, self.warmup_steps as f64, self.total_steps as f64);
        if step <= warm {
            self.peak_lr * step / warm
        } else if step >= total {
            0.0
        } else {
            self.peak_lr * (total - step) / (total - warm)
        }
    }
}
