use std::path::Path;
use std::time::Instant;

use atms_tensor::{gemm, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::model::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Samples per second, `1 / mean latency`.
    pub throughput: f64,
    pub batch_size: usize,
    pub threads: usize,
}

impl TimingStats {
    /// Summary of per-run wall times in seconds. The 95th percentile uses
    /// the nearest-rank rule.
    pub fn from_seconds(samples: &[f64], batch_size: usize, threads: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(KdError::Usage("benchmark needs at least one run".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_s = sorted.iter().sum::<f64>() / n as f64;
        let median_s = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            runs: n,
            mean_ms: mean_s * 1e3,
            median_ms: median_s * 1e3,
            p95_ms: sorted[rank - 1] * 1e3,
            min_ms: sorted[0] * 1e3,
            max_ms: sorted[n - 1] * 1e3,
            throughput: batch_size as f64 / mean_s,
            batch_size,
            threads,
        })
    }
}

/// Times `n_runs` eval-mode forward passes on a fixed input after
/// `n_warmup` untimed ones. Runs single-threaded and restores the previous
/// worker count afterwards.
pub fn benchmark_inference<T: Scalar>(net: &Network<T>, input_shape: &[usize], n_warmup: usize, n_runs: usize) -> Result<TimingStats> {
    if input_shape.len() != 4 {
        return Err(KdError::Usage(format!("input shape must be NCHW, got {input_shape:?}")));
    }
    let input = Tensor::from_fn(input_shape, |i| T::lit(((i * 7919) % 1000) as f64 / 500.0 - 1.0));
    let previous = gemm::num_threads();
    gemm::set_num_threads(1);
    let result = (|| {
        for _ in 0..n_warmup {
            std::hint::black_box(net.predict(&input)?);
        }
        let mut samples = Vec::with_capacity(n_runs);
        for _ in 0..n_runs {
            let start = Instant::now();
            std::hint::black_box(net.predict(&input)?);
            samples.push(start.elapsed().as_secs_f64());
        }
        TimingStats::from_seconds(&samples, input_shape[0], 1)
    })();
    gemm::set_num_threads(previous);
    result
}

/// File size in MiB.
pub fn model_size_mb(path: &Path) -> Result<f64> {
    let len = std::fs::metadata(path).map_err(|e| KdError::io(path, e))?.len();
    Ok(len as f64 / (1u64 << 20) as f64)
}
