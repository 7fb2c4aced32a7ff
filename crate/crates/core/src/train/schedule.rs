use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Length of the first cycle in epochs.
    pub t0: usize,
    /// Growth factor of each following cycle.
    pub t_mult: usize,
    /// Floor of the schedule; `None` means `lr / 100`.
    pub eta_min: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t0: 10,
            t_mult: 2,
            eta_min: None,
        }
    }
}

/// Cosine annealing with warm restarts, stepped once per epoch.
pub fn lr_at(base_lr: f64, schedule: &ScheduleConfig, epoch: usize) -> f64 {
    let eta_min = schedule.eta_min.unwrap_or(base_lr / 100.0);
    let mut t = epoch;
    let mut len = schedule.t0.max(1);
    while t >= len {
        t -= len;
        len *= schedule.t_mult.max(1);
    }
    eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * t as f64 / len as f64).cos()) / 2.0
}
