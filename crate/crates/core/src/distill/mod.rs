//! Temperature scheduling, the combined distillation loss, and the
//! temperature sensitivity sweep.

mod loss;
mod sensitivity;
mod temperature;

pub use loss::{kd_loss, KdLoss, KdLossConfig};
pub use sensitivity::{parse_grid, score_table, temperature_sensitivity, Probe, SensitivityTable, TemperatureRow};
pub use temperature::{
    default_t_init, init_temperature, step_temperature, TemperatureConfig, TemperatureState, WIDTH_T_INIT,
};
