use atms_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay: parameters shrink by `lr * wd`
/// before the bias-corrected moment update.
#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, shapes: &[Vec<usize>]) -> Self {
        Self {
            cfg,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<T>>, grads: &[Option<Tensor<T>>]) -> Result<()>
    where
        T: 'a,
    {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(KdError::Usage(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(&params).enumerate() {
            match g {
                None => return Err(KdError::Usage(format!("missing gradient for parameter {i}"))),
                Some(g) if g.shape() != p.shape() || p.shape() != self.m[i].shape() => {
                    return Err(KdError::Usage(format!(
                        "gradient {i} has shape {:?}, parameter {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                _ => {}
            }
        }
        self.step += 1;
        let (b1, b2) = self.cfg.betas;
        let t = self.step as i32;
        let c1 = T::lit(1.0 - b1.powi(t));
        let c2 = T::lit(1.0 - b2.powi(t));
        let (b1, b2) = (T::lit(b1), T::lit(b2));
        let lr = T::lit(self.cfg.lr);
        let eps = T::lit(self.cfg.eps);
        let decay = T::one() - lr * T::lit(self.cfg.weight_decay);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].as_ref().expect("checked").data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(w: f64, g: f64, cfg: AdamWConfig) -> f64 {
        let mut p = [Tensor::new(&[1], vec![w]).unwrap()];
        let mut opt = AdamW::new(cfg, &[vec![1]]);
        opt.step(&mut p, &[Some(Tensor::new(&[1], vec![g]).unwrap())]).unwrap();
        assert_eq!(opt.steps(), 1);
        p[0].data()[0]
    }

    #[test]
    fn unit_first_step() {
        let cfg = AdamWConfig { lr: 0.1, ..Default::default() };
        let w = one_step(1.0, 1.0, cfg);
        assert!((w - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_cases() {
        assert_eq!(one_step(0.7, 0.0, AdamWConfig::default()), 0.7);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.1, ..Default::default() };
        assert!((one_step(2.0, 0.0, cfg) - 2.0 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut p = [Tensor::<f64>::zeros(&[2])];
        let mut opt = AdamW::new(AdamWConfig::default(), &[vec![2]]);
        assert!(matches!(opt.step(&mut p, &[None]), Err(KdError::Usage(_))));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Some(Tensor::new(&[2], vec![3.0f64, 4.0]).unwrap()), None];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 10.0), 1.0);
    }
}
