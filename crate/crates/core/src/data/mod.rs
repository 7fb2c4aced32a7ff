//! Datasets: synthetic generator, image-folder loader, splits and batching.

mod batch;
mod folder;
mod probe;
mod split;
mod synthetic;

use std::path::PathBuf;

use atms_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

pub use batch::{batches, Batch, Batches};
pub use folder::{export_folder, load_folder, LoadStats};
pub use probe::{LinearProbe, ProbeConfig};
pub use split::{split, SplitSpec};
pub use synthetic::{generate_synthetic, render_rgb, CLASS_NAMES, MIN_SYNTHETIC_SIZE};


pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar> {
    /// Normalized `[3, H, W]` image.
    pub image: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Provenance {
    Synthetic { seed: u64, n_per_class: usize, image_size: usize },
    Folder { root: PathBuf, image_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub samples: Vec<Sample<T>>,
    pub class_names: Vec<String>,
    pub provenance: Provenance,
}

/// Row-per-label one-hot matrix `[N, classes]`.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    Tensor::from_fn(&[labels.len(), classes], |i| {
        if labels[i / classes] == i % classes {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// `(x - mean) / std` per channel for interleaved RGB values in [0, 1],
/// producing a planar `[3, H, W]` tensor.
pub fn normalize_unit<T: Scalar>(rgb: &[f64], height: usize, width: usize) -> Tensor<T> {
    let plane = height * width;
    Tensor::from_fn(&[3, height, width], |i| {
        let (c, p) = (i / plane, i % plane);
        T::lit((rgb[p * 3 + c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c])
    })
}

pub fn normalize_rgb<T: Scalar>(rgb: &[u8], height: usize, width: usize) -> Tensor<T> {
    let unit: Vec<f64> = rgb.iter().map(|&b| f64::from(b) / 255.0).collect();
    normalize_unit(&unit, height, width)
}

/// Inverse of [`normalize_rgb`], rounded to bytes.
pub fn denormalize_rgb<T: Scalar>(image: &Tensor<T>) -> Vec<u8> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut out = vec![0u8; plane * 3];
    for (i, &v) in image.data().iter().enumerate() {
        let (c, p) = (i / plane, i % plane);
        let x = v.as_f64() * IMAGENET_STD[c] + IMAGENET_MEAN[c];
        out[p * 3 + c] = (x * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `[3, H, W]` of the first sample.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.image_shape().map(<[usize]>::to_vec);
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes() {
                return Err(KdError::Data(format!("sample {i} has label {} of {}", s.label, self.num_classes())));
            }
            if Some(s.image.shape()) != shape.as_deref() {
                return Err(KdError::Data(format!("sample {i} has shape {:?}", s.image.shape())));
            }
        }
        Ok(())
    }

    /// Images `[B, 3, H, W]` and one-hot targets for the given indices.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let items: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let images = Tensor::stack(&items)?;
        let labels: Vec<usize> = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((images, one_hot(&labels, self.num_classes())))
    }

    /// Every image stacked in dataset order.
    pub fn images(&self) -> Result<Tensor<T>> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.gather(&all)?.0)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imagenet_mean_maps_to_zero() {
        let rgb: Vec<f64> = (0..12).map(|i| IMAGENET_MEAN[i % 3]).collect();
        let z: Tensor<f64> = normalize_unit(&rgb, 2, 2);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let bytes = [124u8, 116, 104];
        let n: Tensor<f64> = normalize_rgb(&bytes, 1, 1);
        assert!(n.data().iter().all(|v| v.abs() < 0.01));
        assert_eq!(denormalize_rgb(&n), bytes.to_vec());
    }

    #[test]
    fn one_hot_rows() {
        let y: Tensor<f64> = one_hot(&[1, 0], 2);
        assert_eq!(y.data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
