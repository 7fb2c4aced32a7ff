//! Mixup, CutMix and the per-batch policy that picks between them.

use atms_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMethod {
    None,
    Mixup,
    Cutmix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_trigger: f64,
    pub alpha_mixup: f64,
    pub alpha_cutmix: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_trigger: 0.5,
            alpha_mixup: 0.2,
            alpha_cutmix: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            p_trigger: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_trigger) {
            return Err(KdError::Config(format!("augment.p_trigger {} outside [0, 1]", self.p_trigger)));
        }
        for (k, a) in [("alpha_mixup", self.alpha_mixup), ("alpha_cutmix", self.alpha_cutmix)] {
            if !(a.is_finite() && a > 0.0) {
                return Err(KdError::Config(format!("augment.{k} must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch<T: Scalar> {
    pub images: Tensor<T>,
    pub targets_a: Tensor<T>,
    pub targets_b: Tensor<T>,
    pub lam: f64,
    pub method: MixMethod,
    /// Partner index of each sample; identity when unmixed.
    pub partner: Vec<usize>,
}

impl<T: Scalar> MixedBatch<T> {
    pub fn unmixed(images: Tensor<T>, targets: Tensor<T>) -> Self {
        let n = images.shape()[0];
        Self {
            images,
            targets_b: targets.clone(),
            targets_a: targets,
            lam: 1.0,
            method: MixMethod::None,
            partner: (0..n).collect(),
        }
    }

    /// `lam * targets_a + (1 - lam) * targets_b`.
    pub fn mixed_targets(&self) -> Tensor<T> {
        let lam = T::lit(self.lam);
        let rest = T::one() - lam;
        let data = self
            .targets_a
            .data()
            .iter()
            .zip(self.targets_b.data())
            .map(|(&a, &b)| lam * a + rest * b)
            .collect();
        Tensor::new(self.targets_a.shape(), data).expect("same shape")
    }
}

/// Symmetric Beta(alpha, alpha) draw in the open interval (0, 1), built
/// from two Gamma draws. Draws that round to an endpoint are redrawn.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(alpha, 1.0)
        .ok()
        .filter(|_| alpha > 0.0)
        .ok_or_else(|| KdError::Config(format!("beta alpha must be positive, got {alpha}")))?;
    loop {
        let x = gamma.sample(rng);
        let y = gamma.sample(rng);
        let lam = x / (x + y);
        if lam > 0.0 && lam < 1.0 {
            return Ok(lam);
        }
    }
}

fn check_batch<T: Scalar>(images: &Tensor<T>, targets: &Tensor<T>) -> Result<usize> {
    let (s, t) = (images.shape(), targets.shape());
    if s.len() != 4 || t.len() != 2 || s[0] != t[0] {
        return Err(KdError::Data(format!("batch shapes {s:?} and targets {t:?} disagree")));
    }
    Ok(s[0])
}

fn gather_rows<T: Scalar>(t: &Tensor<T>, order: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(t.numel());
    for &i in order {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(t.shape(), data).expect("same shape")
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || !perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
        return Err(KdError::Usage(format!("partner list is not a permutation of 0..{n}")));
    }
    Ok(())
}

/// Mixup with explicit `lam` and partner permutation.
pub fn mixup_with<T: Scalar>(images: &Tensor<T>, targets: &Tensor<T>, lam: f64, perm: &[usize]) -> Result<MixedBatch<T>> {
    let n = check_batch(images, targets)?;
    check_perm(perm, n)?;
    if !(0.0..=1.0).contains(&lam) {
        return Err(KdError::Usage(format!("lam {lam} outside [0, 1]")));
    }
    let plane = images.numel() / n.max(1);
    let (l, r) = (T::lit(lam), T::one() - T::lit(lam));
    let x = images.data();
    let mut out = Vec::with_capacity(x.len());
    for (i, &j) in perm.iter().enumerate() {
        let a = &x[i * plane..][..plane];
        let b = &x[j * plane..][..plane];
        out.extend(a.iter().zip(b).map(|(&xa, &xb)| l * xa + r * xb));
    }
    Ok(MixedBatch {
        images: Tensor::new(images.shape(), out)?,
        targets_a: targets.clone(),
        targets_b: gather_rows(targets, perm),
        lam,
        method: MixMethod::Mixup,
        partner: perm.to_vec(),
    })
}

fn random_perm<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn mixup<T: Scalar, R: Rng + ?Sized>(images: &Tensor<T>, targets: &Tensor<T>, alpha: f64, rng: &mut R) -> Result<MixedBatch<T>> {
    let n = check_batch(images, targets)?;
    if n < 2 {
        return Ok(MixedBatch::unmixed(images.clone(), targets.clone()));
    }
    let lam = sample_beta(alpha, rng)?;
    let perm = random_perm(n, rng);
    mixup_with(images, targets, lam, &perm)
}

/// Half-open pixel rectangle `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutRect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl CutRect {
    pub fn area(&self) -> usize {
        (self.bottom - self.top) * (self.right - self.left)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }

    /// Patch of side `floor(size * sqrt(1 - lam0))` centred at (cy, cx),
    /// clipped to the image.
    pub fn centered(height: usize, width: usize, lam0: f64, cy: usize, cx: usize) -> Self {
        let ratio = (1.0 - lam0).max(0.0).sqrt();
        let ch = (height as f64 * ratio).floor() as isize;
        let cw = (width as f64 * ratio).floor() as isize;
        let clip = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
        let top = cy as isize - ch / 2;
        let left = cx as isize - cw / 2;
        Self {
            top: clip(top, height),
            bottom: clip(top + ch, height),
            left: clip(left, width),
            right: clip(left + cw, width),
        }
    }
}

/// CutMix with an explicit patch and partner permutation.
pub fn cutmix_with<T: Scalar>(images: &Tensor<T>, targets: &Tensor<T>, rect: CutRect, perm: &[usize]) -> Result<MixedBatch<T>> {
    let n = check_batch(images, targets)?;
    check_perm(perm, n)?;
    let s = images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    if rect.top > rect.bottom || rect.left > rect.right || rect.bottom > h || rect.right > w {
        return Err(KdError::Usage(format!("patch {rect:?} outside {h}x{w} image")));
    }
    if rect.area() == 0 {
        return Ok(MixedBatch::unmixed(images.clone(), targets.clone()));
    }
    let mut out = images.clone();
    let x = images.data();
    let dst = out.data_mut();
    let plane = h * w;
    for (i, &j) in perm.iter().enumerate() {
        for ch in 0..c {
            for y in rect.top..rect.bottom {
                let d = ((i * c + ch) * h + y) * w;
                let src = ((j * c + ch) * h + y) * w;
                dst[d + rect.left..d + rect.right].copy_from_slice(&x[src + rect.left..src + rect.right]);
            }
        }
    }
    let lam = 1.0 - rect.area() as f64 / plane as f64;
    Ok(MixedBatch {
        images: out,
        targets_a: targets.clone(),
        targets_b: gather_rows(targets, perm),
        lam,
        method: MixMethod::Cutmix,
        partner: perm.to_vec(),
    })
}

pub fn cutmix<T: Scalar, R: Rng + ?Sized>(images: &Tensor<T>, targets: &Tensor<T>, alpha: f64, rng: &mut R) -> Result<MixedBatch<T>> {
    let n = check_batch(images, targets)?;
    let (h, w) = (images.shape()[2], images.shape()[3]);
    if n < 2 || h < 2 || w < 2 {
        return Ok(MixedBatch::unmixed(images.clone(), targets.clone()));
    }
    let lam0 = sample_beta(alpha, rng)?;
    let perm = random_perm(n, rng);
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    cutmix_with(images, targets, CutRect::centered(h, w, lam0, cy, cx), &perm)
}

/// Fires with probability `p_trigger`; when fired, Mixup or CutMix with
/// equal odds. Draw order: trigger, method, then the method's own draws.
pub fn apply_policy<T: Scalar, R: Rng + ?Sized>(
    images: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MixedBatch<T>> {
    cfg.validate()?;
    check_batch(images, targets)?;
    if cfg.p_trigger == 0.0 || rng.random::<f64>() >= cfg.p_trigger {
        return Ok(MixedBatch::unmixed(images.clone(), targets.clone()));
    }
    if rng.random::<f64>() < 0.5 {
        mixup(images, targets, cfg.alpha_mixup, rng)
    } else {
        cutmix(images, targets, cfg.alpha_cutmix, rng)
    }
}
