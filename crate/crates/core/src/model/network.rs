use atms_tensor::{BatchNormConfig, BatchNormState, Gradients, Mode, Scalar, Tape, Tensor, Var};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::spec::{BlockSpec, ModelSpec};
use crate::error::Result;

const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer<T: Scalar> {
    pub name: String,
    pub state: BatchNormState<T>,
}

/// Flat storage for every trainable tensor and batch-norm state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    norms: Vec<NormLayer<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            norms: Vec::new(),
        }
    }
}

fn normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[NormLayer<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormLayer<T>] {
        &mut self.norms
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Parameter {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    /// Conv weight `[out, in, k, k]` with fan-in normal init.
    pub fn conv_weight<R: Rng + ?Sized>(&mut self, name: &str, out: usize, inp: usize, k: usize, rng: &mut R) -> usize {
        let std = (2.0 / (inp * k * k) as f64).sqrt();
        self.push(format!("{name}.weight"), normal(&[out, inp, k, k], std, rng))
    }

    /// Linear weight `[in, out]` plus zero bias.
    pub fn linear<R: Rng + ?Sized>(&mut self, name: &str, inp: usize, out: usize, rng: &mut R) -> (usize, usize) {
        let std = (1.0 / inp as f64).sqrt();
        let w = self.push(format!("{name}.weight"), normal(&[inp, out], std, rng));
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[out]));
        (w, b)
    }

    /// Returns (gamma, beta, norm state) indices.
    pub fn batchnorm(&mut self, name: &str, channels: usize) -> (usize, usize, usize) {
        let g = self.push(format!("{name}.weight"), Tensor::ones(&[channels]));
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[channels]));
        self.norms.push(NormLayer {
            name: name.to_string(),
            state: BatchNormState::new(channels),
        });
        (g, b, self.norms.len() - 1)
    }

    pub fn apply_updates(&mut self, updates: Vec<(usize, BatchNormState<T>)>) {
        for (i, st) in updates {
            self.norms[i].state = st;
        }
    }

    pub fn map_values(&self, f: impl Fn(T) -> T + Copy) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.map(f),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormLayer {
                    name: n.name.clone(),
                    state: BatchNormState {
                        running_mean: n.state.running_mean.map(f),
                        running_var: n.state.running_var.map(f),
                        tracked: n.state.tracked,
                    },
                })
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormLayer {
                    name: n.name.clone(),
                    state: BatchNormState {
                        running_mean: n.state.running_mean.cast(),
                        running_var: n.state.running_var.cast(),
                        tracked: n.state.tracked,
                    },
                })
                .collect(),
        }
    }
}

/// Per-forward bookkeeping: mode, dropout rng, the tape variables bound to
/// parameters, and batch-norm statistics produced in train mode.
pub struct ForwardCtx<'r, T: Scalar> {
    mode: Mode,
    rng: Option<&'r mut dyn RngCore>,
    vars: Vec<Option<Var>>,
    updates: Vec<(usize, BatchNormState<T>)>,
    bn: BatchNormConfig,
}

impl<'r, T: Scalar> ForwardCtx<'r, T> {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            rng: None,
            vars: Vec::new(),
            updates: Vec::new(),
            bn: BatchNormConfig::default(),
        }
    }

    /// Train mode with spatial dropout driven by `rng`.
    pub fn train(rng: &'r mut dyn RngCore) -> Self {
        Self {
            mode: Mode::Train,
            rng: Some(rng),
            ..Self::eval()
        }
    }

    /// Train-mode batch statistics with dropout disabled.
    pub fn train_deterministic() -> Self {
        Self {
            mode: Mode::Train,
            ..Self::eval()
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Use `var` for parameter `index` instead of a fresh leaf.
    pub fn bind(&mut self, index: usize, var: Var) {
        if self.vars.len() <= index {
            self.vars.resize(index + 1, None);
        }
        self.vars[index] = Some(var);
    }

    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars.get(index).copied().flatten()
    }

    /// Tape variables of every parameter touched so far, in index order.
    pub fn bound_vars(&self) -> Vec<Var> {
        self.vars.iter().flatten().copied().collect()
    }

    pub fn take_updates(&mut self) -> Vec<(usize, BatchNormState<T>)> {
        std::mem::take(&mut self.updates)
    }

    /// Gradient per parameter index, `None` where the parameter was unused.
    pub fn gradients(&self, grads: &Gradients<T>, n_params: usize) -> Vec<Option<Tensor<T>>> {
        (0..n_params)
            .map(|i| self.var(i).and_then(|v| grads.get(v).cloned()))
            .collect()
    }

    fn param(&mut self, store: &ParamStore<T>, tape: &mut Tape<T>, index: usize) -> Var {
        if let Some(v) = self.var(index) {
            return v;
        }
        let v = tape.param(store.params[index].value.clone());
        self.bind(index, v);
        v
    }

    fn dropout(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.mode == Mode::Train => Ok(tape.dropout_spatial(x, rate, Mode::Train, rng)?),
            _ => Ok(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvBn {
    conv: usize,
    gamma: usize,
    beta: usize,
    norm: usize,
    stride: usize,
    padding: usize,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv = store.conv_weight(&format!("{name}.conv"), out, inp, k, rng);
        let (gamma, beta, norm) = store.batchnorm(&format!("{name}.bn"), out);
        Self {
            conv,
            gamma,
            beta,
            norm,
            stride,
            padding: k / 2,
        }
    }

    fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let w = ctx.param(store, tape, self.conv);
        let y = tape.conv2d(x, w, None, self.stride, self.padding)?;
        let g = ctx.param(store, tape, self.gamma);
        let b = ctx.param(store, tape, self.beta);
        let (out, update) = tape.batchnorm2d(y, g, b, &store.norms[self.norm].state, ctx.mode, ctx.bn)?;
        if let Some(st) = update {
            ctx.updates.push((self.norm, st));
        }
        Ok(out)
    }
}

/// Bottleneck block: 1×1 reduce, 3×3 spatial, 1×1 expand, plus shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub spec: BlockSpec,
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    shortcut: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        spec: BlockSpec,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mid = spec.mid_channels();
        let reduce = ConvBn::build(store, &format!("{name}.reduce"), spec.in_channels, mid, 1, 1, rng);
        let spatial = ConvBn::build(store, &format!("{name}.spatial"), mid, mid, 3, spec.stride, rng);
        let expand = ConvBn::build(store, &format!("{name}.expand"), mid, spec.out_channels, 1, 1, rng);
        let shortcut = spec.has_projection().then(|| {
            ConvBn::build(
                store,
                &format!("{name}.shortcut"),
                spec.in_channels,
                spec.out_channels,
                1,
                spec.stride,
                rng,
            )
        });
        Ok(Self {
            spec,
            reduce,
            spatial,
            expand,
            shortcut,
        })
    }

    pub fn has_projection(&self) -> bool {
        self.shortcut.is_some()
    }

    /// Index of the expand batch-norm gamma (the last scale on the main path).
    pub fn main_path_gamma(&self) -> usize {
        self.expand.gamma
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let h = self.reduce.forward(store, tape, x, ctx)?;
        let h = tape.relu(h)?;
        let h = self.spatial.forward(store, tape, h, ctx)?;
        let h = tape.relu(h)?;
        let h = self.expand.forward(store, tape, h, ctx)?;
        let h = ctx.dropout(tape, h, self.spec.dropout_rate)?;
        let s = match &self.shortcut {
            Some(proj) => proj.forward(store, tape, x, ctx)?,
            None => x,
        };
        let sum = tape.add(h, s)?;
        Ok(tape.relu(sum)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    spec: ModelSpec,
    store: ParamStore<T>,
    stem: ConvBn,
    blocks: Vec<ResidualBlock>,
    classifier: (usize, usize),
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let stem = ConvBn::build(&mut store, "stem", 3, spec.stem_channels(), 3, 2, rng);
        let mut blocks = Vec::new();
        let mut counts = [0usize; 4];
        let mut stage = 0;
        for b in spec.blocks() {
            while counts[stage] == spec.blocks_per_stage[stage] {
                stage += 1;
            }
            let name = format!("stage{}.block{}", stage + 1, counts[stage] + 1);
            blocks.push(ResidualBlock::build(&mut store, b, &name, rng)?);
            counts[stage] += 1;
        }
        let classifier = store.linear("classifier", spec.feature_channels(), spec.num_classes, rng);
        Ok(Self {
            spec,
            store,
            stem,
            blocks,
            classifier,
        })
    }

    pub fn student<R: Rng + ?Sized>(width: f64, num_classes: usize, input_size: usize, rng: &mut R) -> Result<Self> {
        Self::build(ModelSpec::student(width, num_classes, input_size), rng)
    }

    pub fn teacher<R: Rng + ?Sized>(num_classes: usize, input_size: usize, rng: &mut R) -> Result<Self> {
        Self::build(ModelSpec::teacher(num_classes, input_size), rng)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// (weight, bias) parameter indices of the linear head.
    pub fn classifier(&self) -> (usize, usize) {
        self.classifier
    }

    /// Pooled features `[N, F]` in front of the classifier.
    pub fn features(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let h = self.stem.forward(&self.store, tape, x, ctx)?;
        let h = tape.relu(h)?;
        let mut h = tape.maxpool2d(h, 3, 2, 1)?;
        for block in &self.blocks {
            h = block.forward(&self.store, tape, h, ctx)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let n = tape.shape(pooled)[0];
        Ok(tape.reshape(pooled, &[n, self.spec.feature_channels()])?)
    }

    pub fn head(&self, tape: &mut Tape<T>, features: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let w = ctx.param(&self.store, tape, self.classifier.0);
        let b = ctx.param(&self.store, tape, self.classifier.1);
        Ok(tape.linear(features, w, Some(b))?)
    }

    /// Logits `[N, num_classes]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<T>) -> Result<Var> {
        let f = self.features(tape, x, ctx)?;
        self.head(tape, f, ctx)
    }

    fn eval_chunked(&self, images: &Tensor<T>, pooled: bool) -> Result<Tensor<T>> {
        let n = images.shape()[0];
        let mut rows = Vec::new();
        let mut width = 0;
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let chunk = images.slice_outer(start, (start + PREDICT_CHUNK).min(n))?;
            let mut tape = Tape::no_grad();
            let mut ctx = ForwardCtx::eval();
            let x = tape.constant(chunk);
            let out = if pooled {
                self.features(&mut tape, x, &mut ctx)?
            } else {
                self.forward(&mut tape, x, &mut ctx)?
            };
            width = tape.shape(out)[1];
            rows.extend_from_slice(tape.value(out).data());
        }
        Ok(Tensor::new(&[n, width], rows)?)
    }

    /// Eval-mode logits for an NCHW batch, without recording gradients.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunked(images, false)
    }

    /// Eval-mode pooled features for an NCHW batch.
    pub fn predict_features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunked(images, true)
    }

    /// Fold one train-mode pass over `images` into the batch-norm running
    /// statistics without touching weights. Dropout stays off.
    pub fn calibrate_norms(&mut self, images: &Tensor<T>) -> Result<()> {
        let mut tape = Tape::no_grad();
        let mut ctx = ForwardCtx::train_deterministic();
        let x = tape.constant(images.clone());
        self.forward(&mut tape, x, &mut ctx)?;
        let updates = ctx.take_updates();
        self.store.apply_updates(updates);
        Ok(())
    }

    /// Copy with every value rounded through 32-bit storage precision.
    pub fn round_to_storage(&self) -> Self {
        Self {
            store: self.store.map_values(|v| T::lit(v.as_f64() as f32 as f64)),
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            store: self.store.cast(),
            stem: self.stem,
            blocks: self.blocks.clone(),
            classifier: self.classifier,
        }
    }
}

pub fn count_parameters<T: Scalar>(net: &Network<T>) -> usize {
    net.num_parameters()
}
