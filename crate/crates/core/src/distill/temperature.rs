use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

/// Starting temperature per student width: compact models get the softest
/// targets, wider ones sharper targets.
pub const WIDTH_T_INIT: [(f64, f64); 3] = [(0.75, 6.0), (1.0, 4.5), (1.25, 4.3)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureConfig {
    /// Overrides the per-width starting temperature.
    pub t_init: Option<f64>,
    pub t_min: f64,
    /// Relative boost per 100 points of teacher-student accuracy gap.
    pub kappa: f64,
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        Self {
            t_init: None,
            t_min: 3.0,
            kappa: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub t_init: f64,
    pub t_min: f64,
    pub current: f64,
    pub epoch: usize,
    pub total_epochs: usize,
    pub gap: f64,
    pub kappa: f64,
}

pub fn default_t_init(width: f64) -> Option<f64> {
    WIDTH_T_INIT
        .iter()
        .find(|(w, _)| (w - width).abs() < 1e-9)
        .map(|&(_, t)| t)
}

pub fn init_temperature(width: f64, total_epochs: usize, cfg: &TemperatureConfig) -> Result<TemperatureState> {
    let t_init = match cfg.t_init.or_else(|| default_t_init(width)) {
        Some(t) => t,
        None => {
            return Err(KdError::Config(format!(
                "no starting temperature for width {width}; set kd.t_init"
            )))
        }
    };
    if !(cfg.t_min > 0.0 && t_init >= cfg.t_min && t_init.is_finite()) {
        return Err(KdError::Config(format!(
            "temperature bounds need 0 < t_min <= t_init, got t_min {} and t_init {t_init}",
            cfg.t_min
        )));
    }
    if !(cfg.kappa >= 0.0 && cfg.kappa.is_finite()) {
        return Err(KdError::Config(format!("kd.kappa must be non-negative, got {}", cfg.kappa)));
    }
    if total_epochs == 0 {
        return Err(KdError::Config("temperature schedule needs at least one epoch".into()));
    }
    Ok(TemperatureState {
        t_init,
        t_min: cfg.t_min,
        current: t_init,
        epoch: 0,
        total_epochs,
        gap: 0.0,
        kappa: cfg.kappa,
    })
}

impl TemperatureState {
    /// Cosine decay from t_init toward t_min, boosted by the positive part
    /// of the gap and clamped to [t_min, t_init].
    pub fn value_at(&self, epoch: usize, gap: f64) -> f64 {
        let progress = epoch as f64 / self.total_epochs as f64;
        let base = self.t_min + (self.t_init - self.t_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0;
        let boosted = base * (1.0 + self.kappa * gap.max(0.0) / 100.0);
        boosted.clamp(self.t_min, self.t_init)
    }
}

/// Advance the schedule to `epoch` given the latest gap in percentage points.
pub fn step_temperature(state: &mut TemperatureState, epoch: usize, gap: f64) -> Result<f64> {
    if epoch >= state.total_epochs {
        return Err(KdError::Usage(format!(
            "epoch {epoch} outside schedule of {} epochs",
            state.total_epochs
        )));
    }
    if !gap.is_finite() {
        return Err(KdError::Usage(format!("gap must be finite, got {gap}")));
    }
    state.current = state.value_at(epoch, gap);
    state.epoch = epoch;
    state.gap = gap;
    Ok(state.current)
}
