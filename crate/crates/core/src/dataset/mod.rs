//! Labeled image sets: IDX ingestion, class filtering, and the
//! matched-magnitude random-noise control.

pub mod idx;
pub mod synth;

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Images with pixels normalized into `[0, 1]` and digit labels.
#[derive(Clone, Debug)]
pub struct LabeledImageSet {
    pixels: Vec<f32>,
    dim: usize,
    labels: Vec<u8>,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn new(pixels: Vec<f32>, dim: usize, labels: Vec<u8>, split: Split) -> Result<Self> {
        if labels.len() * dim != pixels.len() {
            return Err(Error::IdxCountMismatch {
                images: pixels.len() / dim.max(1),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::ClassOutOfRange(bad as usize, NUM_CLASSES));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig("pixel outside [0,1]".into()));
        }
        Ok(LabeledImageSet {
            pixels,
            dim,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// New set with the images at `indices`, preserving order.
    pub fn subset(&self, indices: &[usize]) -> LabeledImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        LabeledImageSet {
            pixels,
            dim: self.dim,
            labels,
            split: self.split,
        }
    }

    pub fn take(&self, n: usize) -> LabeledImageSet {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&indices)
    }

    /// All images as one `[n, dim]` tensor.
    pub fn to_tensor(&self) -> crate::tensor::Tensor<f32> {
        crate::tensor::Tensor::new(vec![self.len(), self.dim], self.pixels.clone())
            .expect("set invariants")
    }

    /// Quantized unsigned-byte pixels (`round(255 * p)`), the IDX payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect()
    }
}

/// Load a labeled set from IDX image/label files (gzip or raw).
///
/// Pixels are scaled by 1/255; counts must agree between the two files.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledImageSet> {
    let images = idx::read_images(images_path)?;
    let labels = idx::read_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let pixels = images
        .pixels
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    LabeledImageSet::new(pixels, images.rows * images.cols, labels, split)
}

/// Write a set to a pair of IDX files. Assumes square images.
pub fn save_idx(set: &LabeledImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let side = (set.dim() as f64).sqrt().round() as usize;
    assert_eq!(side * side, set.dim(), "non-square image dim {}", set.dim());
    idx::write_images(images_path, side, side, &set.to_bytes())?;
    idx::write_labels(labels_path, set.labels())
}

/// Subset with ground-truth class `class`.
pub fn filter_by_class(set: &LabeledImageSet, class: u8) -> LabeledImageSet {
    let indices: Vec<usize> = (0..set.len()).filter(|&i| set.label(i) == class).collect();
    set.subset(&indices)
}

/// Complement of [`filter_by_class`].
pub fn exclude_class(set: &LabeledImageSet, class: u8) -> LabeledImageSet {
    let indices: Vec<usize> = (0..set.len()).filter(|&i| set.label(i) != class).collect();
    set.subset(&indices)
}

/// Per-example perturbations: uniform per-pixel noise rescaled so each
/// perturbation has L2 norm exactly `magnitude` (computed in f64).
pub(crate) fn noise_perturbations(
    count: usize,
    dim: usize,
    magnitude: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, "noise-control");
    (0..count)
        .map(|_| {
            let mut delta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > 0.0 && magnitude > 0.0 {
                let scale = magnitude / norm;
                for d in &mut delta {
                    *d *= scale;
                }
            } else {
                delta.iter_mut().for_each(|d| *d = 0.0);
            }
            delta
        })
        .collect()
}

/// Random-noise control: perturb every image with noise whose L2 norm equals
/// `magnitude`, then clip back into `[0, 1]`.
pub fn noise_control(set: &LabeledImageSet, magnitude: f64, seed: u64) -> LabeledImageSet {
    let deltas = noise_perturbations(set.len(), set.dim(), magnitude, seed);
    let mut pixels = Vec::with_capacity(set.pixels().len());
    for (i, delta) in deltas.iter().enumerate() {
        for (&p, &d) in set.image(i).iter().zip(delta) {
            pixels.push(((f64::from(p) + d).clamp(0.0, 1.0)) as f32);
        }
    }
    LabeledImageSet {
        pixels,
        dim: set.dim(),
        labels: set.labels().to_vec(),
        split: set.split,
    }
}
