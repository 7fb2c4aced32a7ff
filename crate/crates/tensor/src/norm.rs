//! Per-channel batch normalization over NCHW data.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Number of train-mode updates folded into the running statistics.
    pub tracked: u64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked > 0
    }
}

pub(crate) struct TrainOutput<T: Scalar> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub updated: BatchNormState<T>,
}

pub(crate) fn check_shapes(input: &[usize], channels: usize, gamma: &[usize], beta: &[usize]) -> Result<()> {
    if input.len() != 4 || input[1] != channels || gamma != [channels] || beta != [channels] {
        return Err(TensorError::Shape {
            op: "batchnorm2d",
            lhs: input.to_vec(),
            rhs: gamma.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn train_forward<T: Scalar>(
    x: &[T],
    shape: &[usize],
    gamma: &[T],
    beta: &[T],
    state: &BatchNormState<T>,
    cfg: BatchNormConfig,
) -> Result<TrainOutput<T>> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = n * plane;
    if count < 2 {
        return Err(TensorError::Dimension {
            op: "batchnorm2d",
            msg: format!("train mode needs at least 2 values per channel, got {count}"),
        });
    }
    let count_t = T::lit(count as f64);
    let eps = T::lit(cfg.eps);
    let momentum = T::lit(cfg.momentum);
    let keep = T::one() - momentum;
    let unbias = count_t / T::lit((count - 1) as f64);

    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];
    let mut new_mean = state.running_mean.data().to_vec();
    let mut new_var = state.running_var.data().to_vec();
    for ch in 0..c {
        let mut sum = T::zero();
        for ni in 0..n {
            sum += x[(ni * c + ch) * plane..][..plane].iter().copied().sum::<T>();
        }
        let mean = sum / count_t;
        let mut sq = T::zero();
        for ni in 0..n {
            for &v in &x[(ni * c + ch) * plane..][..plane] {
                let d = v - mean;
                sq += d * d;
            }
        }
        let var = sq / count_t;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[ch] = inv;
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean) * inv;
                xhat[i] = xh;
                y[i] = xh * gamma[ch] + beta[ch];
            }
        }
        new_mean[ch] = keep * new_mean[ch] + momentum * mean;
        new_var[ch] = keep * new_var[ch] + momentum * var * unbias;
    }
    let updated = BatchNormState {
        running_mean: Tensor::new(&[c], new_mean)?,
        running_var: Tensor::new(&[c], new_var)?,
        tracked: state.tracked + 1,
    };
    Ok(TrainOutput { y, xhat, inv_std, updated })
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn train_backward<T: Scalar>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count_t = T::lit((n * plane) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for i in off..off + plane {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * inv_std[ch] / count_t;
        for ni in 0..n {
            let off = (ni * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = scale * (count_t * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Eval-mode affine normalization with running statistics.
/// Returns (y, inv_std per channel).
pub(crate) fn eval_forward<T: Scalar>(
    x: &[T],
    shape: &[usize],
    gamma: &[T],
    beta: &[T],
    state: &BatchNormState<T>,
    cfg: BatchNormConfig,
) -> Result<(Vec<T>, Vec<T>)> {
    if !state.is_initialized() {
        return Err(TensorError::Config(
            "batchnorm2d evaluated before any train-mode statistics update".into(),
        ));
    }
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let eps = T::lit(cfg.eps);
    let mean = state.running_mean.data();
    let var = state.running_var.data();
    let denom: Vec<T> = var.iter().map(|&v| (v + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ch in 0..c {
            let off = (ni * c + ch) * plane;
            for i in off..off + plane {
                y[i] = (x[i] - mean[ch]) / denom[ch] * gamma[ch] + beta[ch];
            }
        }
    }
    Ok((y, denom.iter().map(|&d| T::one() / d).collect()))
}
