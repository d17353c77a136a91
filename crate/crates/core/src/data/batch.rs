use std::marker::PhantomData;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::{augment, center_crop, AugmentationPolicy};
use super::image::load_image;
use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Real, Tensor};

const SHUFFLE_STREAM: u64 = 0x5b0f;
const AUGMENT_STREAM: u64 = 0xa065;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B, 3, h, w]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    /// Positions of the samples within the split, in manifest order.
    pub indices: Vec<usize>,
}

/// Decoded images of one split, ready to be served in batches.
#[derive(Debug, Clone)]
pub struct Batcher {
    split: Split,
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    batch_size: usize,
    seed: u64,
    policy: AugmentationPolicy,
}

impl Batcher {
    /// Decodes every image of `split`. Train batches follow a fresh seeded
    /// permutation each epoch and are augmented when `policy.enabled`;
    /// other splits keep manifest order and are centre-cropped to
    /// `policy.crop`.
    pub fn new(manifest: &DatasetManifest, split: Split, batch_size: usize, seed: u64, policy: AugmentationPolicy) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        policy.validate()?;
        let samples = manifest.samples(split);
        if samples.is_empty() {
            return Err(Error::Manifest(format!("split `{split}` has no images")));
        }
        let images = samples
            .par_iter()
            .map(|(path, _)| load_image::<f32>(path))
            .collect::<Result<Vec<_>>>()?;
        let labels = samples.into_iter().map(|(_, label)| label).collect();
        Ok(Batcher {
            split,
            images,
            labels,
            batch_size,
            seed,
            policy,
        })
    }

    /// Same images in manifest order, centre-cropped and unaugmented.
    pub fn without_augmentation(&self) -> Batcher {
        Batcher {
            split: Split::Unassigned,
            policy: AugmentationPolicy {
                enabled: false,
                ..self.policy.clone()
            },
            ..self.clone()
        }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_batches(&self) -> usize {
        self.len().div_ceil(self.batch_size)
    }

    /// Sample order of `epoch`.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if self.split == Split::Train {
            order.shuffle(&mut stream(&[self.seed, epoch as u64, SHUFFLE_STREAM]));
        }
        order
    }

    pub fn epoch<T: Real>(&self, epoch: usize) -> BatchIterator<'_, T> {
        BatchIterator {
            batcher: self,
            epoch,
            order: self.order(epoch),
            next: 0,
            _real: PhantomData,
        }
    }

    fn prepare(&self, index: usize, epoch: usize) -> Result<Tensor<f32>> {
        let image = &self.images[index];
        if self.split == Split::Train && self.policy.enabled {
            let mut rng = stream(&[self.seed, epoch as u64, index as u64, AUGMENT_STREAM]);
            augment(image, &self.policy, &mut rng)
        } else {
            center_crop(image, self.policy.crop)
        }
    }
}

pub struct BatchIterator<'a, T> {
    batcher: &'a Batcher,
    epoch: usize,
    order: Vec<usize>,
    next: usize,
    _real: PhantomData<T>,
}

impl<T: Real> Iterator for BatchIterator<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batcher.batch_size).min(self.order.len());
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        let prepared = indices
            .par_iter()
            .map(|&i| self.batcher.prepare(i, self.epoch).map(|t| t.cast::<T>()))
            .collect::<Result<Vec<_>>>();
        Some(prepared.and_then(|images| {
            Ok(Batch {
                images: Tensor::stack(&images)?,
                labels: indices.iter().map(|&i| self.batcher.labels[i]).collect(),
                indices,
            })
        }))
    }
}
