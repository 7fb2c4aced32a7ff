use atms_tensor::softmax::argmax;
use atms_tensor::{Scalar, Tape, Tensor};

use super::{one_hot, Dataset};
use crate::error::Result;
use crate::train::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            weight_decay: 1e-2,
        }
    }
}

/// Multinomial logistic regression on raw normalized pixels, trained with
/// full-batch AdamW. Serves as a baseline for how separable a dataset is
/// without spatial features.
#[derive(Debug, Clone)]
pub struct LinearProbe<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

fn flatten<T: Scalar>(data: &Dataset<T>) -> Result<Tensor<T>> {
    let images = data.images()?;
    let n = data.len();
    Ok(images.reshape(&[n, images.numel() / n.max(1)])?)
}

impl<T: Scalar> LinearProbe<T> {
    pub fn fit(train: &Dataset<T>, cfg: &ProbeConfig) -> Result<Self> {
        let x = flatten(train)?;
        let features = x.shape()[1];
        let classes = train.num_classes();
        let y = one_hot::<T>(&train.labels(), classes);
        let mut params = [Tensor::zeros(&[features, classes]), Tensor::zeros(&[classes])];
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
            &[params[0].shape().to_vec(), params[1].shape().to_vec()],
        );
        for _ in 0..cfg.epochs {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let w = tape.param(params[0].clone());
            let b = tape.param(params[1].clone());
            let z = tape.linear(xv, w, Some(b))?;
            let loss = tape.cross_entropy(z, &y, 0.0)?;
            let mut g = tape.backward(loss)?;
            opt.step(&mut params, &[g.take(w), g.take(b)])?;
        }
        let [weight, bias] = params;
        Ok(Self { weight, bias })
    }

    /// Percentage of correctly classified samples.
    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        let x = flatten(data)?;
        let mut tape = Tape::no_grad();
        let xv = tape.constant(x);
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let z = tape.linear(xv, w, Some(b))?;
        let logits = tape.value(z);
        let cols = logits.shape()[1];
        let hits = logits
            .data()
            .chunks(cols)
            .zip(data.labels())
            .filter(|(row, y)| argmax(row) == *y)
            .count();
        Ok(100.0 * hits as f64 / data.len() as f64)
    }
}
