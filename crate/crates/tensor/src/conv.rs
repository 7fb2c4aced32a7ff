//! 2-D convolution via patch matrices (im2col) and a dense product.

use crate::error::{Result, TensorError};
use crate::gemm::{matmul, Layout};
use crate::scalar::Scalar;

/// Static description of one convolution call on NCHW data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Output extent for a window of size `k` sliding over `size` padded cells.
pub fn output_extent(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(TensorError::Shape {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        let (batch, in_channels, height, width) = (input[0], input[1], input[2], input[3]);
        let (out_channels, w_in, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if w_in != in_channels || kh != kw {
            return Err(TensorError::Shape {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Parameter {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let (out_height, out_width) = match (
            output_extent(height, kh, stride, padding),
            output_extent(width, kw, stride, padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(TensorError::Shape {
                    op: "conv2d",
                    lhs: input.to_vec(),
                    rhs: weight.to_vec(),
                })
            }
        };
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Patch matrix of shape `[C·k·k, N·Ho·Wo]`.
fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T]) -> Vec<T> {
    let p = g.positions();
    let np = g.batch * p;
    let mut cols = vec![T::zero(); g.patch_len() * np];
    let (h, w, k, s, pad) = (g.height, g.width, g.kernel, g.stride, g.padding as isize);
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let plane = &x[(n * g.in_channels + c) * h * w..][..h * w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oh in 0..g.out_height {
                        let ih = (oh * s) as isize + ki as isize - pad;
                        let out_row = &mut dst[oh * g.out_width..(oh + 1) * g.out_width];
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, slot) in out_row.iter_mut().enumerate() {
                            let iw = (ow * s) as isize + kj as isize - pad;
                            if iw >= 0 && iw < w as isize {
                                *slot = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch-matrix gradient back onto the NCHW input layout.
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T]) -> Vec<T> {
    let p = g.positions();
    let np = g.batch * p;
    let (h, w, k, s, pad) = (g.height, g.width, g.kernel, g.stride, g.padding as isize);
    let mut dx = vec![T::zero(); g.batch * g.in_channels * h * w];
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let plane = &mut dx[(n * g.in_channels + c) * h * w..][..h * w];
                    let src = &src_row[n * p..(n + 1) * p];
                    for oh in 0..g.out_height {
                        let ih = (oh * s) as isize + ki as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        let src_out = &src[oh * g.out_width..(oh + 1) * g.out_width];
                        for (ow, &v) in src_out.iter().enumerate() {
                            let iw = (ow * s) as isize + kj as isize - pad;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `[N, C, P]` → `[C, N·P]`.
fn batch_to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..][..p].copy_from_slice(&x[(ni * c + ci) * p..][..p]);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
fn channel_major_to_batch<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[(ni * c + ci) * p..][..p].copy_from_slice(&x[ci * n * p + ni * p..][..p]);
        }
    }
    out
}

fn patches<T: Scalar>(g: &ConvGeometry, x: &[T]) -> Vec<T> {
    if g.is_pointwise() {
        batch_to_channel_major(x, g.batch, g.in_channels, g.positions())
    } else {
        im2col(g, x)
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeometry, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let p = g.positions();
    let np = g.batch * p;
    let cols = patches(g, x);
    let mut out_mat = vec![T::zero(); g.out_channels * np];
    matmul(
        g.out_channels,
        g.patch_len(),
        np,
        weight,
        Layout::Normal,
        &cols,
        Layout::Normal,
        T::zero(),
        &mut out_mat,
    );
    if let Some(b) = bias {
        for (o, row) in out_mat.chunks_mut(np).enumerate() {
            for v in row {
                *v += b[o];
            }
        }
    }
    channel_major_to_batch(&out_mat, g.batch, g.out_channels, p)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let p = g.positions();
    let np = g.batch * p;
    let kk = g.patch_len();
    let dmat = batch_to_channel_major(dy, g.batch, g.out_channels, p);
    let weight_grad = need_weight.then(|| {
        let cols = patches(g, x);
        let mut dw = vec![T::zero(); g.out_channels * kk];
        matmul(g.out_channels, np, kk, &dmat, Layout::Normal, &cols, Layout::Transposed, T::zero(), &mut dw);
        dw
    });
    let input_grad = need_input.then(|| {
        let mut dcols = vec![T::zero(); kk * np];
        matmul(kk, g.out_channels, np, weight, Layout::Transposed, &dmat, Layout::Normal, T::zero(), &mut dcols);
        if g.is_pointwise() {
            channel_major_to_batch(&dcols, g.batch, g.in_channels, p)
        } else {
            col2im(g, &dcols)
        }
    });
    let bias_grad = need_bias.then(|| dmat.chunks(np).map(|row| row.iter().copied().sum()).collect());
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}
