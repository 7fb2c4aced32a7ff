//! Optimizer, learning-rate schedule and the training loops for teachers
//! and students.

mod fit;
mod optimizer;
mod report;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

pub use fit::{direct_train_student, distill_student, evaluate, fixed_temp_distill, train_teacher, DistillConfig};
pub use optimizer::{clip_global_norm, AdamW, AdamWConfig};
pub use report::{EpochRecord, Method, TrainReport};
pub use schedule::{lr_at, ScheduleConfig};

/// Named rng streams derived from a run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const DATA_ORDER: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

pub fn seeded_stream(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Teacher,
    Direct,
    Distill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn teacher(epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            seed: 42,
            schedule: ScheduleConfig::default(),
            clip_norm: Some(5.0),
            mode: TrainMode::Teacher,
        }
    }

    /// Students rely on the loss's L2 term rather than decoupled decay.
    pub fn student(epochs: usize, batch_size: usize, lr: f64, mode: TrainMode) -> Self {
        Self {
            weight_decay: 0.0,
            label_smoothing: 0.0,
            mode,
            ..Self::teacher(epochs, batch_size, lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(KdError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(KdError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(KdError::Config("weight decay must be >= 0 and label smoothing in [0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(KdError::Config("clip norm must be positive".into()));
        }
        if self.schedule.t0 == 0 || self.schedule.t_mult == 0 {
            return Err(KdError::Config("schedule t0 and t_mult must be at least 1".into()));
        }
        Ok(())
    }
}
