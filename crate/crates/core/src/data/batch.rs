use atms_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{KdError, Result};

#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub indices: Vec<usize>,
    pub images: Tensor<T>,
    pub targets: Tensor<T>,
}

/// Iterator over one epoch of mini-batches.
pub struct Batches<'a, T: Scalar> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// One epoch in fixed-size chunks, the last one possibly partial. With
/// `shuffle` the order is a fresh permutation drawn from `rng`.
pub fn batches<'a, T: Scalar, R: Rng + ?Sized>(
    data: &'a Dataset<T>,
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(KdError::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(Batches {
        data,
        order,
        batch_size,
        pos: 0,
    })
}

impl<T: Scalar> Batches<'_, T> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.data.gather(&indices).map(|(images, targets)| Batch {
            indices,
            images,
            targets,
        }))
    }
}
