//! Dense matrix products over row-major buffers.
//!
//! Work may be split across scoped threads by blocks of output rows or
//! columns. Each output element is always reduced over the full inner
//! dimension by a single kernel call, so the result does not depend on the
//! worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::scalar::Scalar;

static WORKERS: AtomicUsize = AtomicUsize::new(1);

/// Work below this many multiply-adds always runs on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 18;

/// Caps the worker count used by the kernels (minimum 1).
pub fn set_num_threads(n: usize) {
    WORKERS.store(n.max(1), Ordering::Relaxed);
}

pub fn num_threads() -> usize {
    WORKERS.load(Ordering::Relaxed)
}

/// How an operand is stored relative to its logical shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Logical `r×c` stored row-major as `r×c`.
    Normal,
    /// Logical `r×c` stored row-major as `c×r`.
    Transposed,
}

impl Layout {
    fn strides(self, cols: usize, rows: usize) -> (isize, isize) {
        match self {
            Layout::Normal => (cols as isize, 1),
            Layout::Transposed => (1, rows as isize),
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// `C (m×n) = A (m×k) · B (k×n) + beta · C`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_layout: Layout,
    b: &[T],
    b_layout: Layout,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "lhs buffer too small");
    assert!(b.len() >= k * n, "rhs buffer too small");
    assert!(c.len() >= m * n, "output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a_layout.strides(k, m);
    let (rsb, csb) = b_layout.strides(n, k);
    let workers = num_threads();
    let work = m * k * n;
    if workers <= 1 || work < PARALLEL_MIN_WORK {
        // SAFETY: buffer sizes asserted above; `c` is a unique borrow.
        unsafe {
            T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
        return;
    }
    let a_ptr = SendPtr(a.as_ptr() as *mut T);
    let b_ptr = SendPtr(b.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    if m >= n {
        let chunks = split(m, workers);
        std::thread::scope(|s| {
            for (start, len) in chunks {
                s.spawn(move || {
                    let (a_ptr, b_ptr, c_ptr) = (a_ptr, b_ptr, c_ptr);
                    // SAFETY: row blocks of C are disjoint; A/B are read only.
                    unsafe {
                        T::gemm_raw(
                            len,
                            k,
                            n,
                            T::one(),
                            a_ptr.0.offset(start as isize * rsa),
                            rsa,
                            csa,
                            b_ptr.0,
                            rsb,
                            csb,
                            beta,
                            c_ptr.0.add(start * n),
                            n as isize,
                            1,
                        );
                    }
                });
            }
        });
    } else {
        let chunks = split(n, workers);
        std::thread::scope(|s| {
            for (start, len) in chunks {
                s.spawn(move || {
                    let (a_ptr, b_ptr, c_ptr) = (a_ptr, b_ptr, c_ptr);
                    // SAFETY: column blocks of C are disjoint; A/B are read only.
                    unsafe {
                        T::gemm_raw(
                            m,
                            k,
                            len,
                            T::one(),
                            a_ptr.0,
                            rsa,
                            csa,
                            b_ptr.0.offset(start as isize * csb),
                            rsb,
                            csb,
                            beta,
                            c_ptr.0.add(start),
                            n as isize,
                            1,
                        );
                    }
                });
            }
        });
    }
}

fn split(total: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.min(total).max(1);
    let base = total / parts;
    let extra = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push((start, len));
        start += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn layouts_agree_with_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, al) in [(&a, Layout::Normal), (&at, Layout::Transposed)] {
            for (bb, bl) in [(&b, Layout::Normal), (&bt, Layout::Transposed)] {
                let mut c = vec![0.0; m * n];
                matmul(m, k, n, aa, al, bb, bl, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let (m, k, n) = (96, 130, 80);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.013).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.007).cos()).collect();
        let mut serial = vec![0.0; m * n];
        matmul(m, k, n, &a, Layout::Normal, &b, Layout::Normal, 0.0, &mut serial);
        for (tall_m, wide_n) in [(m, n), (8, 600)] {
            let a2: Vec<f64> = (0..tall_m * k).map(|i| (i as f64 * 0.013).sin()).collect();
            let b2: Vec<f64> = (0..k * wide_n).map(|i| (i as f64 * 0.007).cos()).collect();
            let mut one = vec![0.0; tall_m * wide_n];
            set_num_threads(1);
            matmul(tall_m, k, wide_n, &a2, Layout::Normal, &b2, Layout::Normal, 0.0, &mut one);
            let mut many = vec![0.0; tall_m * wide_n];
            set_num_threads(3);
            matmul(tall_m, k, wide_n, &a2, Layout::Normal, &b2, Layout::Normal, 0.0, &mut many);
            set_num_threads(1);
            assert_eq!(one, many);
        }
    }

    #[test]
    fn split_covers_range() {
        let s = split(10, 3);
        assert_eq!(s, vec![(0, 4), (4, 3), (7, 3)]);
        assert_eq!(split(2, 8).len(), 2);
    }
}
