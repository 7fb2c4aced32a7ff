use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

/// Smallest square input that still has spatial extent after the stem's two
/// halvings and the three strided stages, and at least two values per
/// channel for train-mode batch norm at batch size 2.
pub const MIN_INPUT_SIZE: usize = 16;

pub const STUDENT_WIDTHS: [f64; 3] = [0.75, 1.0, 1.25];
pub const TEACHER_WIDTH: f64 = 2.0;

const STEM_BASE: usize = 32;
const STAGE_BASE: [usize; 4] = [64, 128, 256, 512];
const STUDENT_BLOCKS: [usize; 4] = [2, 2, 2, 2];
const TEACHER_BLOCKS: [usize; 4] = [3, 3, 3, 3];
const DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dropout_rate: f64,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(KdError::Spec("block channels must be positive".into()));
        }
        if !self.out_channels.is_multiple_of(2) {
            return Err(KdError::Spec(format!(
                "block out_channels must be even, got {}",
                self.out_channels
            )));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(KdError::Spec(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(KdError::Spec(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn mid_channels(&self) -> usize {
        self.out_channels / 2
    }

    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub width_multiplier: f64,
    pub stem_channels_base: usize,
    pub stage_channels_base: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub num_classes: usize,
    pub input_size: usize,
    pub dropout_rate: f64,
}

/// `base * width` rounded to the nearest multiple of 8, never below 8.
pub fn scaled_channels(base: usize, width: f64) -> usize {
    let raw = base as f64 * width;
    (((raw / 8.0).round() as usize) * 8).max(8)
}

impl ModelSpec {
    pub fn student(width: f64, num_classes: usize, input_size: usize) -> Self {
        Self {
            width_multiplier: width,
            stem_channels_base: STEM_BASE,
            stage_channels_base: STAGE_BASE.to_vec(),
            blocks_per_stage: STUDENT_BLOCKS.to_vec(),
            num_classes,
            input_size,
            dropout_rate: DROPOUT,
        }
    }

    pub fn teacher(num_classes: usize, input_size: usize) -> Self {
        Self {
            width_multiplier: TEACHER_WIDTH,
            blocks_per_stage: TEACHER_BLOCKS.to_vec(),
            ..Self::student(TEACHER_WIDTH, num_classes, input_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(KdError::Spec(format!("width multiplier {} must be positive", self.width_multiplier)));
        }
        if self.stage_channels_base.len() != 4 || self.blocks_per_stage.len() != 4 {
            return Err(KdError::Spec("exactly 4 stages are required".into()));
        }
        if self.blocks_per_stage.contains(&0) || self.stage_channels_base.contains(&0) || self.stem_channels_base == 0 {
            return Err(KdError::Spec("every stage needs at least one block and positive channels".into()));
        }
        if self.num_classes < 2 {
            return Err(KdError::Spec(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.input_size < MIN_INPUT_SIZE {
            return Err(KdError::Spec(format!(
                "input size {} cannot survive 5 downsamplings (minimum {MIN_INPUT_SIZE})",
                self.input_size
            )));
        }
        for b in self.blocks() {
            b.validate()?;
        }
        Ok(())
    }

    pub fn stem_channels(&self) -> usize {
        scaled_channels(self.stem_channels_base, self.width_multiplier)
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.stage_channels_base
            .iter()
            .map(|&c| scaled_channels(c, self.width_multiplier))
            .collect()
    }

    /// Every residual block in execution order, tagged with (stage, index).
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let mut out = Vec::new();
        let mut in_channels = self.stem_channels();
        for (stage, (&channels, &count)) in self.stage_channels().iter().zip(&self.blocks_per_stage).enumerate() {
            for i in 0..count {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                out.push(BlockSpec {
                    in_channels,
                    out_channels: channels,
                    stride,
                    dropout_rate: self.dropout_rate,
                });
                in_channels = channels;
            }
        }
        out
    }

    pub fn feature_channels(&self) -> usize {
        *self.stage_channels().last().unwrap_or(&0)
    }
}
