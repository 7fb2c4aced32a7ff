use atms_tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Share of the training portion held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.2,
            seed: 42,
        }
    }
}

/// Stratified (train, val, test) partition. Each class is shuffled with
/// `SplitSpec::seed` and cut at the rounded fractions, clamped so every
/// partition gets at least one sample of every class. Partitions keep the
/// original dataset order.
pub fn split<T: Scalar>(data: &Dataset<T>, spec: &SplitSpec) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    if data.is_empty() {
        return Err(KdError::Data("cannot split an empty dataset".into()));
    }
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(spec.train_fraction) || !ok(spec.val_fraction) {
        return Err(KdError::Config(format!(
            "split fractions must lie in (0, 1), got {} and {}",
            spec.train_fraction, spec.val_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..data.num_classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].label == class).collect();
        if members.len() < 3 {
            return Err(KdError::Data(format!(
                "class `{}` has {} samples; at least 3 are needed",
                data.class_names[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train_all = ((n as f64 * spec.train_fraction).round() as usize).clamp(2, n - 1);
        let n_val = ((n_train_all as f64 * spec.val_fraction).round() as usize).clamp(1, n_train_all - 1);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..n_train_all]);
        test.extend_from_slice(&members[n_train_all..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok((data.subset(&train), data.subset(&val), data.subset(&test)))
}
