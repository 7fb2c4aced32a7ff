//! Gradient tape: operations are appended in execution order and replayed
//! in reverse by [`Tape::backward`].

use rand::Rng;

use crate::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::error::{Result, TensorError};
use crate::gemm::{matmul, Layout};
use crate::norm::{self, BatchNormConfig, BatchNormState, Mode};
use crate::pool::{
    global_avg_pool_backward, global_avg_pool_forward, maxpool2d_backward, maxpool2d_forward, PoolGeometry,
};
use crate::scalar::Scalar;
use crate::softmax::{log_softmax_rows, softmax_rows};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tolerance on probability-row sums accepted by the loss ops.
const ROW_SUM_TOL: f64 = 1e-6;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    SumSquares(Vec<Var>),
    Reshape(Var),
    Relu(Var),
    ChannelScale {
        input: Var,
        scale: Vec<T>,
        plane: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SoftmaxTemp {
        input: Var,
        tau: T,
    },
    LogSoftmaxTemp {
        input: Var,
        tau: T,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        target: Vec<T>,
    },
    KlDiv {
        log_p: Var,
        p_teacher: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumSquares(_) => "sum_squares",
            Op::Reshape(_) => "reshape",
            Op::Relu(_) => "relu",
            Op::ChannelScale { .. } => "dropout_spatial",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batchnorm2d",
            Op::Linear { .. } => "linear",
            Op::SoftmaxTemp { .. } => "softmax_temp",
            Op::LogSoftmaxTemp { .. } => "log_softmax_temp",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::KlDiv { .. } => "kl_div",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients produced by one backward pass, indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn check_rows_sum_to_one<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    let cols = t.shape()[1];
    for (i, row) in t.data().chunks(cols).enumerate() {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| v < T::zero()) {
            return Err(TensorError::Validation {
                op,
                msg: format!("row {i} is not a distribution (sum {s})"),
            });
        }
    }
    Ok(())
}

fn check_positive_tau<T: Scalar>(op: &'static str, tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Parameter {
            op,
            msg: format!("temperature must be positive, got {tau}"),
        })
    }
}

fn logits_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(TensorError::Dimension {
            op,
            msg: format!("expected non-empty [N, C], got {shape:?}"),
        });
    }
    Ok((shape[0], shape[1]))
}

impl<T: Scalar> Tape<T> {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that only evaluates; nothing is differentiable.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.recording,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: impl FnOnce() -> Op<T>, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op() } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same_shape("add", x.shape(), y.shape())?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, &[a, b], || Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same_shape("mul", x.shape(), y.shape())?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, &[a, b], || Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, &[a], || Op::Scale(a, factor), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, &[a], || Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / T::lit(x.numel() as f64));
        self.push(out, &[a], || Op::Mean(a), "mean")
    }

    /// `Σ_i ‖x_i‖²` over several tensors.
    pub fn sum_squares(&mut self, vars: &[Var]) -> Result<Var> {
        let total = vars
            .iter()
            .map(|&v| self.value(v).data().iter().map(|&x| x * x).sum::<T>())
            .fold(T::zero(), |a, b| a + b);
        let owned = vars.to_vec();
        self.push(Tensor::scalar(total), vars, || Op::SumSquares(owned), "sum_squares")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, &[a], || Op::Reshape(a), "reshape")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, &[a], || Op::Relu(a), "relu")
    }

    /// Spatial dropout: whole channels are zeroed with probability `rate`
    /// and survivors are rescaled by `1 / (1 - rate)`. Identity in eval mode.
    pub fn dropout_spatial<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Parameter {
                op: "dropout_spatial",
                msg: format!("rate must lie in [0, 1), got {rate}"),
            });
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::Dimension {
                op: "dropout_spatial",
                msg: format!("expected NCHW input, got {shape:?}"),
            });
        }
        let plane = shape[2] * shape[3];
        let keep = T::lit(1.0 / (1.0 - rate));
        let scale: Vec<T> = (0..shape[0] * shape[1])
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let x = self.value(a);
        let data = x
            .data()
            .chunks(plane)
            .zip(&scale)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&v| v * s))
            .collect();
        let out = Tensor::new(&shape, data)?;
        self.push(out, &[a], || Op::ChannelScale { input: a, scale, plane }, "dropout_spatial")
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            check_same_shape("conv2d bias", self.shape(b), &[geom.out_channels])?;
        }
        let y = conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&geom.output_shape(), y)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            out,
            &inputs,
            || Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            "conv2d",
        )
    }

    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let geom = PoolGeometry::new(self.shape(input), kernel, stride, padding)?;
        let (y, argmax) = maxpool2d_forward(&geom, self.value(input).data());
        let out = Tensor::new(&geom.output_shape(), y)?;
        self.push(out, &[input], || Op::MaxPool2d { input, argmax }, "maxpool2d")
    }

    /// Mean over the spatial axes: `[N, C, H, W]` → `[N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 || shape[2] == 0 || shape[3] == 0 {
            return Err(TensorError::Dimension {
                op: "global_avg_pool",
                msg: format!("expected NCHW with non-empty spatial extent, got {shape:?}"),
            });
        }
        let y = global_avg_pool_forward(self.value(input).data(), shape[0] * shape[1], shape[2] * shape[3]);
        let out = Tensor::new(&[shape[0], shape[1], 1, 1], y)?;
        self.push(out, &[input], || Op::GlobalAvgPool(input), "global_avg_pool")
    }

    /// Batch normalization. In train mode the updated running statistics
    /// are returned for the caller to store; the tape never mutates state.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<(Var, Option<BatchNormState<T>>)> {
        let shape = self.shape(input).to_vec();
        norm::check_shapes(&shape, state.channels(), self.shape(gamma), self.shape(beta))?;
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        match mode {
            Mode::Train => {
                let out = norm::train_forward(x, &shape, g, b, state, cfg)?;
                let value = Tensor::new(&shape, out.y)?;
                let (xhat, inv_std) = (out.xhat, out.inv_std);
                let v = self.push(
                    value,
                    &[input, gamma, beta],
                    || Op::BatchNormTrain {
                        input,
                        gamma,
                        beta,
                        xhat,
                        inv_std,
                    },
                    "batchnorm2d",
                )?;
                Ok((v, Some(out.updated)))
            }
            Mode::Eval => {
                let (y, inv_std) = norm::eval_forward(x, &shape, g, b, state, cfg)?;
                let value = Tensor::new(&shape, y)?;
                let mean = state.running_mean.data().to_vec();
                let v = self.push(
                    value,
                    &[input, gamma, beta],
                    || Op::BatchNormEval {
                        input,
                        gamma,
                        beta,
                        mean,
                        inv_std,
                    },
                    "batchnorm2d",
                )?;
                Ok((v, None))
            }
        }
    }

    /// Affine map `[N, F] · [F, K] + [K]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, f, k) = (xs[0], xs[1], ws[1]);
        if let Some(b) = bias {
            check_same_shape("linear bias", self.shape(b), &[k])?;
        }
        let mut y = vec![T::zero(); n * k];
        matmul(n, f, k, self.value(input).data(), Layout::Normal, self.value(weight).data(), Layout::Normal, T::zero(), &mut y);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in y.chunks_mut(k) {
                for (v, &bb) in row.iter_mut().zip(bd) {
                    *v += bb;
                }
            }
        }
        let out = Tensor::new(&[n, k], y)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(out, &inputs, || Op::Linear { input, weight, bias }, "linear")
    }

    pub fn softmax_temp(&mut self, logits: Var, tau: T) -> Result<Var> {
        check_positive_tau("softmax_temp", tau)?;
        let (_, c) = logits_dims("softmax_temp", self.shape(logits))?;
        let x = self.value(logits);
        let out = Tensor::new(x.shape(), softmax_rows(x.data(), c, tau))?;
        self.push(out, &[logits], || Op::SoftmaxTemp { input: logits, tau }, "softmax_temp")
    }

    pub fn log_softmax_temp(&mut self, logits: Var, tau: T) -> Result<Var> {
        check_positive_tau("log_softmax_temp", tau)?;
        let (_, c) = logits_dims("log_softmax_temp", self.shape(logits))?;
        let x = self.value(logits);
        let out = Tensor::new(x.shape(), log_softmax_rows(x.data(), c, tau))?;
        self.push(out, &[logits], || Op::LogSoftmaxTemp { input: logits, tau }, "log_softmax_temp")
    }

    /// Batch-mean cross entropy against a target distribution, with the
    /// target smoothed to `(1 - ε)·target + ε/C`.
    pub fn cross_entropy(&mut self, logits: Var, target: &Tensor<T>, label_smoothing: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&label_smoothing) {
            return Err(TensorError::Parameter {
                op: "cross_entropy",
                msg: format!("label smoothing must lie in [0, 1), got {label_smoothing}"),
            });
        }
        let (n, c) = logits_dims("cross_entropy", self.shape(logits))?;
        check_same_shape("cross_entropy", self.shape(logits), target.shape())?;
        check_rows_sum_to_one("cross_entropy", target)?;
        let eps = T::lit(label_smoothing);
        let uniform = eps / T::lit(c as f64);
        let smoothed: Vec<T> = if label_smoothing == 0.0 {
            target.data().to_vec()
        } else {
            target.data().iter().map(|&t| (T::one() - eps) * t + uniform).collect()
        };
        let z = self.value(logits).data();
        let log_p = log_softmax_rows(z, c, T::one());
        let total: T = smoothed.iter().zip(&log_p).map(|(&t, &lp)| t * lp).sum();
        let loss = -total / T::lit(n as f64);
        let probs = softmax_rows(z, c, T::one());
        self.push(
            Tensor::scalar(loss),
            &[logits],
            || Op::CrossEntropy {
                logits,
                probs,
                target: smoothed,
            },
            "cross_entropy",
        )
    }

    /// Batch mean of `Σ p_T · (ln p_T − log_p_S)`; zero-probability teacher
    /// entries contribute nothing. The teacher side carries no gradient.
    pub fn kl_div(&mut self, log_p_student: Var, p_teacher: &Tensor<T>) -> Result<Var> {
        let (n, _) = logits_dims("kl_div", self.shape(log_p_student))?;
        check_same_shape("kl_div", self.shape(log_p_student), p_teacher.shape())?;
        check_rows_sum_to_one("kl_div", p_teacher)?;
        let lq = self.value(log_p_student).data();
        let total: T = p_teacher
            .data()
            .iter()
            .zip(lq)
            .filter(|(&p, _)| p > T::zero())
            .map(|(&p, &q)| p * (p.ln() - q))
            .sum();
        let loss = total / T::lit(n as f64);
        let p_teacher = p_teacher.clone();
        self.push(
            Tensor::scalar(loss),
            &[log_p_student],
            || Op::KlDiv {
                log_p: log_p_student,
                p_teacher,
            },
            "kl_div",
        )
    }

    /// Reverse replay from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut out: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads: out });
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    out[i] = Some(Tensor::new(node.value.shape(), g)?);
                }
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: node.op.name() });
            }
            self.propagate(node, g, &mut pending)?;
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, pending: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut pending[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(g) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: Vec<T>, pending: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(pending, *b, g.clone());
                }
                self.accumulate(pending, *a, g);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect();
                    self.accumulate(pending, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(x).map(|(&gi, &xi)| gi * xi).collect();
                    self.accumulate(pending, *b, gb);
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(pending, *a, g.into_iter().map(|v| v * *f).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(pending, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.accumulate(pending, *a, vec![g[0] / T::lit(n as f64); n]);
            }
            Op::SumSquares(vars) => {
                let two = T::lit(2.0) * g[0];
                for &v in vars {
                    if self.wants(v) {
                        let gv = self.value(v).data().iter().map(|&x| two * x).collect();
                        self.accumulate(pending, v, gv);
                    }
                }
            }
            Op::Reshape(a) => self.accumulate(pending, *a, g),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(pending, *a, ga);
            }
            Op::ChannelScale { input, scale, plane } => {
                let ga = g
                    .chunks(*plane)
                    .zip(scale)
                    .flat_map(|(chunk, &s)| chunk.iter().map(move |&v| v * s))
                    .collect();
                self.accumulate(pending, *input, ga);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    &g,
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = grads.input {
                    self.accumulate(pending, *input, dx);
                }
                if let Some(dw) = grads.weight {
                    self.accumulate(pending, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    self.accumulate(pending, *b, db);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let dx = maxpool2d_backward(self.value(*input).numel(), argmax, &g);
                self.accumulate(pending, *input, dx);
            }
            Op::GlobalAvgPool(a) => {
                let s = self.value(*a).shape();
                self.accumulate(pending, *a, global_avg_pool_backward(&g, s[2] * s[3]));
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let shape = self.value(*input).shape();
                let (dx, dgamma, dbeta) =
                    norm::train_backward(shape, self.value(*gamma).data(), xhat, inv_std, &g);
                self.accumulate(pending, *input, dx);
                self.accumulate(pending, *gamma, dgamma);
                self.accumulate(pending, *beta, dbeta);
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let x = self.value(*input);
                let (n, c) = (x.shape()[0], x.shape()[1]);
                let plane = x.shape()[2] * x.shape()[3];
                let gm = self.value(*gamma).data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ch in 0..c {
                        let off = (ni * c + ch) * plane;
                        for i in off..off + plane {
                            dx[i] = g[i] * gm[ch] * inv_std[ch];
                            dgamma[ch] += g[i] * (x.data()[i] - mean[ch]) * inv_std[ch];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                self.accumulate(pending, *input, dx);
                self.accumulate(pending, *gamma, dgamma);
                self.accumulate(pending, *beta, dbeta);
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.value(*input).shape();
                let (n, f) = (xs[0], xs[1]);
                let k = self.value(*weight).shape()[1];
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * f];
                    matmul(n, k, f, &g, Layout::Normal, self.value(*weight).data(), Layout::Transposed, T::zero(), &mut dx);
                    self.accumulate(pending, *input, dx);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); f * k];
                    matmul(f, n, k, self.value(*input).data(), Layout::Transposed, &g, Layout::Normal, T::zero(), &mut dw);
                    self.accumulate(pending, *weight, dw);
                }
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(pending, *b, db);
                }
            }
            Op::SoftmaxTemp { input, tau } => {
                let s = node.value.data();
                let c = node.value.shape()[1];
                let mut dz = vec![T::zero(); g.len()];
                for ((srow, grow), drow) in s.chunks(c).zip(g.chunks(c)).zip(dz.chunks_mut(c)) {
                    let dot: T = srow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for ((d, &si), &gi) in drow.iter_mut().zip(srow).zip(grow) {
                        *d = si * (gi - dot) / *tau;
                    }
                }
                self.accumulate(pending, *input, dz);
            }
            Op::LogSoftmaxTemp { input, tau } => {
                let y = node.value.data();
                let c = node.value.shape()[1];
                let mut dz = vec![T::zero(); g.len()];
                for ((yrow, grow), drow) in y.chunks(c).zip(g.chunks(c)).zip(dz.chunks_mut(c)) {
                    let total: T = grow.iter().copied().sum();
                    for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = (gi - yi.exp() * total) / *tau;
                    }
                }
                self.accumulate(pending, *input, dz);
            }
            Op::CrossEntropy { logits, probs, target } => {
                let c = self.value(*logits).shape()[1];
                let n = self.value(*logits).shape()[0];
                let scale = g[0] / T::lit(n as f64);
                let mut dz = vec![T::zero(); probs.len()];
                for ((prow, trow), drow) in probs.chunks(c).zip(target.chunks(c)).zip(dz.chunks_mut(c)) {
                    let mass: T = trow.iter().copied().sum();
                    for ((d, &p), &t) in drow.iter_mut().zip(prow).zip(trow) {
                        *d = scale * (p * mass - t);
                    }
                }
                self.accumulate(pending, *logits, dz);
            }
            Op::KlDiv { log_p, p_teacher } => {
                let n = p_teacher.shape()[0];
                let scale = -g[0] / T::lit(n as f64);
                let d = p_teacher.data().iter().map(|&p| p * scale).collect();
                self.accumulate(pending, *log_p, d);
            }
        }
        Ok(())
    }
}
