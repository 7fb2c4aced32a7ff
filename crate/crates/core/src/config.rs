//! Layered run configuration: built-in profile defaults, then a TOML or
//! JSON file, then command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::SplitSpec;
use crate::distill::{KdLossConfig, TemperatureConfig};
use crate::error::{KdError, Result};
use crate::train::{DistillConfig, ScheduleConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64x64 synthetic data, teacher 15 epochs, students 30.
    #[default]
    Desk,
    /// 224x224 inputs, teacher 30 epochs, students 80; meant for real data.
    Paper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_per_class: Option<usize>,
    pub image_size: Option<usize>,
    pub seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub t_init: Option<f64>,
    pub t_min: Option<f64>,
    pub kappa: Option<f64>,
    pub tau_fixed: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub p_trigger: Option<f64>,
    pub alpha_mixup: Option<f64>,
    pub alpha_cutmix: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub label_smoothing: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: Option<u64>,
    pub clip_norm: Option<f64>,
    pub t0: Option<usize>,
    pub t_mult: Option<usize>,
    pub eta_min: Option<f64>,
    pub teacher: PhaseSection,
    pub student: PhaseSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub warmup: Option<usize>,
    pub runs: Option<usize>,
}

/// A configuration file as written: every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Option<Profile>,
    pub data: DataSection,
    pub model: ModelSection,
    pub kd: KdSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub n_per_class: usize,
    pub image_size: usize,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub warmup: usize,
    pub runs: usize,
}

/// Every value filled in; this is what runs echo next to their outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub profile: Profile,
    pub width: f64,
    pub tau_fixed: f64,
    pub data: DataSettings,
    pub distill: DistillConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| KdError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| KdError::Config(e.to_string()))
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json).map_err(|e| match e {
            KdError::Config(msg) => KdError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let profile = self.profile.unwrap_or_default();
        let full = profile == Profile::Paper;
        let seed = self.train.seed.unwrap_or(42);
        let schedule = ScheduleConfig {
            t0: self.train.t0.unwrap_or(10),
            t_mult: self.train.t_mult.unwrap_or(2),
            eta_min: self.train.eta_min,
        };
        let phase = |p: &PhaseSection, mut base: TrainConfig| {
            base.epochs = p.epochs.unwrap_or(base.epochs);
            base.batch_size = p.batch_size.unwrap_or(base.batch_size);
            base.lr = p.lr.unwrap_or(base.lr);
            base.weight_decay = p.weight_decay.unwrap_or(base.weight_decay);
            base.label_smoothing = p.label_smoothing.unwrap_or(base.label_smoothing);
            base.seed = seed;
            base.schedule = schedule;
            base.clip_norm = match self.train.clip_norm {
                Some(c) if c <= 0.0 => None,
                Some(c) => Some(c),
                None => base.clip_norm,
            };
            base.validate().map(|_| base)
        };
        let teacher = phase(&self.train.teacher, TrainConfig::teacher(if full { 30 } else { 15 }, 16, 1e-3))?;
        let student = phase(
            &self.train.student,
            TrainConfig::student(if full { 80 } else { 30 }, 32, 2e-3, TrainMode::Distill),
        )?;

        let loss_default = KdLossConfig::default();
        let temp_default = TemperatureConfig::default();
        let aug_default = AugmentConfig::default();
        let distill = DistillConfig {
            loss: KdLossConfig {
                alpha: self.kd.alpha.unwrap_or(loss_default.alpha),
                beta: self
                    .kd
                    .beta
                    .unwrap_or_else(|| self.kd.alpha.map_or(loss_default.beta, |a| 1.0 - a)),
                gamma: self.kd.gamma.unwrap_or(loss_default.gamma),
            },
            temperature: TemperatureConfig {
                t_init: self.kd.t_init,
                t_min: self.kd.t_min.unwrap_or(temp_default.t_min),
                kappa: self.kd.kappa.unwrap_or(temp_default.kappa),
            },
            augment: AugmentConfig {
                p_trigger: self.augment.p_trigger.unwrap_or(aug_default.p_trigger),
                alpha_mixup: self.augment.alpha_mixup.unwrap_or(aug_default.alpha_mixup),
                alpha_cutmix: self.augment.alpha_cutmix.unwrap_or(aug_default.alpha_cutmix),
            },
        };
        distill.loss.validate()?;
        distill.augment.validate()?;

        let split_default = SplitSpec::default();
        let resolved = ResolvedConfig {
            profile,
            width: self.model.width.unwrap_or(0.75),
            tau_fixed: self.kd.tau_fixed.unwrap_or(4.0),
            data: DataSettings {
                n_per_class: self.data.n_per_class.unwrap_or(300),
                image_size: self.data.image_size.unwrap_or(if full { 224 } else { 64 }),
                split: SplitSpec {
                    train_fraction: self.data.train_fraction.unwrap_or(split_default.train_fraction),
                    val_fraction: self.data.val_fraction.unwrap_or(split_default.val_fraction),
                    seed: self.data.seed.unwrap_or(split_default.seed),
                },
            },
            distill,
            teacher,
            student,
            bench: BenchSettings {
                warmup: self.bench.warmup.unwrap_or(10),
                runs: self.bench.runs.unwrap_or(50),
            },
        };
        Ok(resolved)
    }
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    /// Writes `resolved-config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| KdError::io(dir, e))?;
        let path = dir.join("resolved-config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| KdError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults() {
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!(r.data.image_size, 64);
        assert_eq!((r.teacher.epochs, r.teacher.batch_size, r.teacher.lr), (15, 16, 1e-3));
        assert_eq!((r.student.epochs, r.student.batch_size, r.student.lr), (30, 32, 2e-3));
        assert_eq!(r.teacher.label_smoothing, 0.1);
        assert_eq!(r.distill.loss, KdLossConfig::default());
        assert_eq!(r.distill.augment, AugmentConfig::default());
    }

    #[test]
    fn full_scale_profile_and_overrides() {
        let cfg = RunConfig::parse(
            "profile = \"paper\"\n[train.student]\nepochs = 5\n[kd]\nalpha = 0.6\n",
            false,
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.data.image_size, 224);
        assert_eq!((r.teacher.epochs, r.student.epochs), (30, 5));
        assert!((r.distill.loss.beta - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[kd]\nalpah = 0.5\n", false).is_err());
        assert!(RunConfig::parse("{\"kd\": {\"alpha\": 0.5, \"beta\": 0.5}}", true).is_ok());
        assert!(RunConfig::parse("{\"bogus\": 1}", true).is_err());
    }

    #[test]
    fn inconsistent_weights_rejected() {
        let cfg = RunConfig::parse("[kd]\nalpha = 0.7\nbeta = 0.7\n", false).unwrap();
        assert!(matches!(cfg.resolve(), Err(KdError::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let r = RunConfig::default().resolve().unwrap();
        let back: ResolvedConfig = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(back, r);
    }
}
