use serde::{Deserialize, Serialize};
use silhouette_nn::AdamWConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub fm: f64,
    pub mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { fm: 2.0, mel: 45.0 }
    }
}

/// Exponential learning-rate decay: `lr = base · gamma^floor(step / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub gamma: f64,
    pub every_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            every_steps: 1000,
        }
    }
}

impl LrSchedule {
    pub fn factor(&self, step: u64) -> f64 {
        self.gamma.powf((step / self.every_steps) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub stage: Stage,
    pub total_steps: u64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub aug_lambda_range: [f64; 2],
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Checkpoint every this many steps (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: u64,
    pub rng_seed: u64,
}

impl TrainPlan {
    /// Multi-utterance pretraining at full scale: 150k steps of 16 × 6 s.
    pub fn full_pretrain(seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            total_steps: 150_000,
            batch_size: 16,
            segment_seconds: 6.0,
            aug_lambda_range: [0.3, 1.0],
            loss_weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            lr_schedule: LrSchedule::default(),
            checkpoint_every: 5000,
            rng_seed: seed,
        }
    }

    pub fn full_finetune(seed: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            total_steps: 50_000,
            ..Self::full_pretrain(seed)
        }
    }

    /// Laptop-scale pretraining on the tiny profile.
    pub fn desk_pretrain(seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            total_steps: 10_000,
            batch_size: 1,
            segment_seconds: 0.5,
            aug_lambda_range: [0.3, 1.0],
            loss_weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            lr_schedule: LrSchedule::default(),
            checkpoint_every: 1000,
            rng_seed: seed,
        }
    }

    pub fn desk_finetune(seed: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            total_steps: 2000,
            ..Self::desk_pretrain(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Plan(m.into()));
        let [lo, hi] = self.aug_lambda_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("aug_lambda_range must satisfy 0 < low <= high <= 1");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.segment_seconds.is_finite() && self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive");
        }
        let w = self.loss_weights;
        if !(w.fm >= 0.0 && w.mel >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        let o = self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad("optimizer needs lr > 0 and betas in [0, 1)");
        }
        if self.lr_schedule.every_steps == 0 || !(self.lr_schedule.gamma > 0.0) {
            return bad("lr schedule needs gamma > 0 and every_steps >= 1");
        }
        Ok(())
    }

    /// Segment length in samples at `rate_hz`.
    pub fn segment_len(&self, rate_hz: u32) -> usize {
        (self.segment_seconds * rate_hz as f64).round() as usize
    }
}
