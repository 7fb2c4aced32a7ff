use atms_tensor::softmax::{argmax, entropy_rows, softmax_rows};
use atms_tensor::{Scalar, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Dataset};
use crate::error::{KdError, Result};
use crate::model::Network;
use crate::train::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub tau: f64,
    /// Mean per-sample entropy of `softmax(z / tau)`, in nats.
    pub entropy: f64,
    /// Accuracy as a fraction in [0, 1].
    pub accuracy: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub rows: Vec<TemperatureRow>,
    pub best: usize,
}

impl SensitivityTable {
    pub fn tau_star(&self) -> f64 {
        self.rows[self.best].tau
    }
}

/// How Acc(tau) is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Probe {
    /// Plain accuracy of the fixed model (independent of tau).
    Plain,
    /// Retrain the linear head for one epoch on temperature-scaled
    /// cross-entropy before measuring.
    Calibration { lr: f64, batch_size: usize, seed: u64 },
}

/// Parses `min:max:step` into `min + k * step` for every k that stays
/// within `max` (up to rounding).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| KdError::Usage(format!("grid `{spec}` is not min:max:step")))?;
    let [lo, hi, step] = nums[..] else {
        return Err(KdError::Usage(format!("grid `{spec}` is not min:max:step")));
    };
    if !(lo > 0.0 && hi >= lo && step > 0.0 && hi.is_finite()) {
        return Err(KdError::Usage(format!("grid `{spec}` needs 0 < min <= max and step > 0")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

/// Builds the table from fixed logits: H(tau) from the logits, Acc from the
/// supplied per-tau accuracies. The best row is the first maximum of H·Acc.
pub fn score_table(entropies: &[f64], accuracies: &[f64], grid: &[f64]) -> Result<SensitivityTable> {
    if grid.is_empty() {
        return Err(KdError::Config("temperature grid is empty".into()));
    }
    let rows: Vec<TemperatureRow> = grid
        .iter()
        .zip(entropies)
        .zip(accuracies)
        .map(|((&tau, &entropy), &accuracy)| TemperatureRow {
            tau,
            entropy,
            accuracy,
            score: entropy * accuracy,
        })
        .collect();
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.score > rows[best].score {
            best = i;
        }
    }
    Ok(SensitivityTable { rows, best })
}

fn mean_entropy<T: Scalar>(logits: &Tensor<T>, tau: f64) -> f64 {
    let cols = logits.shape()[1];
    let p = softmax_rows(logits.data(), cols, T::lit(tau));
    let h = entropy_rows(&p, cols);
    h.iter().map(|v| v.as_f64()).sum::<f64>() / h.len() as f64
}

fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let cols = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(cols)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Logits for the dataset with the head retrained for one epoch at `tau`.
fn calibrated_logits<T: Scalar>(
    net: &Network<T>,
    features: &Tensor<T>,
    labels: &[usize],
    tau: f64,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let (wi, bi) = net.classifier();
    let params = net.store().params();
    let mut w = params[wi].value.clone();
    let mut b = params[bi].value.clone();
    let classes = w.shape()[1];
    let mut opt = AdamW::new(
        AdamWConfig {
            lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &[w.shape().to_vec(), b.shape().to_vec()],
    );
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let t = T::lit(tau);
    for chunk in order.chunks(batch_size.max(1)) {
        let rows: Vec<&[T]> = chunk.iter().map(|&i| features.row(i)).collect();
        let x = Tensor::new(&[chunk.len(), features.shape()[1]], rows.concat())?;
        let y = one_hot::<T>(&chunk.iter().map(|&i| labels[i]).collect::<Vec<_>>(), classes);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.param(w.clone());
        let bv = tape.param(b.clone());
        let z = tape.linear(xv, wv, Some(bv))?;
        let scaled = tape.scale(z, T::one() / t)?;
        let loss = tape.cross_entropy(scaled, &y, 0.0)?;
        let mut g = tape.backward(loss)?;
        let mut ps = [w, b];
        opt.step(&mut ps, &[g.take(wv), g.take(bv)])?;
        [w, b] = ps;
    }
    let mut tape = Tape::no_grad();
    let xv = tape.constant(features.clone());
    let wv = tape.constant(w);
    let bv = tape.constant(b);
    let z = tape.linear(xv, wv, Some(bv))?;
    Ok(tape.value(z).clone())
}

/// For each tau in the grid: mean entropy of the tempered predictions,
/// accuracy under the chosen probe, and their product.
pub fn temperature_sensitivity<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    grid: &[f64],
    probe: Probe,
) -> Result<SensitivityTable> {
    if grid.is_empty() {
        return Err(KdError::Config("temperature grid is empty".into()));
    }
    if grid.iter().any(|&t| !(t > 0.0)) {
        return Err(KdError::Config("temperatures must be positive".into()));
    }
    if data.is_empty() {
        return Err(KdError::Data("validation set is empty".into()));
    }
    let labels = data.labels();
    let images = data.images()?;
    let (mut entropies, mut accuracies) = (Vec::new(), Vec::new());
    match probe {
        Probe::Plain => {
            let logits = net.predict(&images)?;
            let acc = accuracy(&logits, &labels);
            for &tau in grid {
                entropies.push(mean_entropy(&logits, tau));
                accuracies.push(acc);
            }
        }
        Probe::Calibration { lr, batch_size, seed } => {
            let features = net.predict_features(&images)?;
            for &tau in grid {
                let logits = calibrated_logits(net, &features, &labels, tau, lr, batch_size, seed)?;
                entropies.push(mean_entropy(&logits, tau));
                accuracies.push(accuracy(&logits, &labels));
            }
        }
    }
    score_table(&entropies, &accuracies, grid)
}
