use crate::conv::output_extent;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl PoolGeometry {
    pub fn new(input: &[usize], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(TensorError::Dimension {
                op: "maxpool2d",
                msg: format!("expected NCHW input, got {input:?}"),
            });
        }
        if kernel == 0 || stride == 0 || 2 * padding > kernel {
            return Err(TensorError::Parameter {
                op: "maxpool2d",
                msg: format!("kernel {kernel}, stride {stride}, padding {padding}"),
            });
        }
        let (h, w) = (input[2], input[3]);
        match (output_extent(h, kernel, stride, padding), output_extent(w, kernel, stride, padding)) {
            (Some(out_height), Some(out_width)) => Ok(Self {
                batch: input[0],
                channels: input[1],
                height: h,
                width: w,
                kernel,
                stride,
                padding,
                out_height,
                out_width,
            }),
            _ => Err(TensorError::Dimension {
                op: "maxpool2d",
                msg: format!("window {kernel} larger than padded input {h}x{w} (padding {padding})"),
            }),
        }
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_height, self.out_width]
    }
}

/// Window maxima plus the flat input index of the winning cell.
///
/// Windows are scanned in row-major order and only a strictly greater value
/// replaces the current best, so ties resolve to the first occurrence.
pub fn maxpool2d_forward<T: Scalar>(g: &PoolGeometry, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let planes = g.batch * g.channels;
    let out_plane = g.out_height * g.out_width;
    let mut out = Vec::with_capacity(planes * out_plane);
    let mut argmax = Vec::with_capacity(planes * out_plane);
    let pad = g.padding as isize;
    for plane in 0..planes {
        let base = plane * g.height * g.width;
        for oh in 0..g.out_height {
            for ow in 0..g.out_width {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ki in 0..g.kernel {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    for kj in 0..g.kernel {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        if iw < 0 || iw >= g.width as isize {
                            continue;
                        }
                        let idx = base + ih as usize * g.width + iw as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(dy) {
        dx[idx as usize] += g;
    }
    dx
}

pub fn global_avg_pool_forward<T: Scalar>(x: &[T], planes: usize, plane_len: usize) -> Vec<T> {
    let inv = T::one() / T::lit(plane_len as f64);
    x.chunks(plane_len)
        .take(planes)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], plane_len: usize) -> Vec<T> {
    let inv = T::one() / T::lit(plane_len as f64);
    dy.iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, plane_len))
        .collect()
}
