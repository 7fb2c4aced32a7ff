//! Row-wise temperature-scaled softmax kernels on `[rows, cols]` buffers.

use crate::scalar::Scalar;

/// `softmax(z / tau)` per row, with max subtraction.
pub fn softmax_rows<T: Scalar>(z: &[T], cols: usize, tau: T) -> Vec<T> {
    let mut out = vec![T::zero(); z.len()];
    for (row, dst) in z.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v / tau - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

/// `log_softmax(z / tau)` per row.
pub fn log_softmax_rows<T: Scalar>(z: &[T], cols: usize, tau: T) -> Vec<T> {
    let mut out = vec![T::zero(); z.len()];
    for (row, dst) in z.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
        let total: T = row.iter().map(|&v| (v / tau - max).exp()).sum();
        let log_norm = max + total.ln();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = v / tau - log_norm;
        }
    }
    out
}

/// Shannon entropy (nats) of each probability row; `0 · ln 0` counts as 0.
pub fn entropy_rows<T: Scalar>(p: &[T], cols: usize) -> Vec<T> {
    p.chunks(cols)
        .map(|row| {
            -row.iter()
                .filter(|&&v| v > T::zero())
                .map(|&v| v * v.ln())
                .sum::<T>()
        })
        .collect()
}

/// Index of the first maximum in a row.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
