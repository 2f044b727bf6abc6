//! Image-classification datasets: IDX (MNIST) and CIFAR-10 binary loaders,
//! class-balanced subsets and seeded batching.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, PURPOSE_SHUFFLE};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 3073;
const CIFAR_SIDE: usize = 32;

/// Per-channel affine normalization `(x - mean) / std` applied to pixels in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn grayscale() -> Self {
        Normalization {
            mean: vec![0.1307],
            std: vec![0.3081],
        }
    }

    pub fn cifar10() -> Self {
        Normalization {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization needs {channels} mean/std values, got {}/{}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization std must be > 0 and means finite".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, value: f64, channel: usize) -> f64 {
        (value - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, value: f64, channel: usize) -> f64 {
        value * self.std[channel] + self.mean[channel]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[count, channels, height, width]`, normalized.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Normalization,
}

impl Dataset {
    /// Builds a dataset from raw bytes laid out `[count, channels, h, w]`.
    pub fn from_bytes(
        name: &str,
        pixels: &[u8],
        shape: [usize; 4],
        labels: Vec<usize>,
        num_classes: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        let [count, channels, h, w] = shape;
        normalization.validate(channels)?;
        if pixels.len() != count * channels * h * w {
            return Err(Error::Shape(format!("{} pixel bytes for shape {shape:?}", pixels.len())));
        }
        if labels.len() != count {
            return Err(Error::Shape(format!("{count} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= {num_classes} classes")));
        }
        let plane = h * w;
        let data = pixels
            .iter()
            .enumerate()
            .map(|(i, &b)| normalization.normalize(f64::from(b) / 255.0, (i / plane) % channels) as f32)
            .collect();
        Ok(Dataset {
            name: name.to_string(),
            images: Tensor::from_vec(&shape, data)?,
            labels,
            num_classes,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample {i} out of range ({})", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.sample_shape();
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Ok(Dataset {
            name: self.name.clone(),
            images,
            labels,
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Loads an IDX image/label pair with grayscale normalization.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    load_idx_with(images_path, labels_path, Normalization::grayscale(), 10)
}

pub fn load_idx_with(
    images_path: &Path,
    labels_path: &Path,
    normalization: Normalization,
    num_classes: usize,
) -> Result<Dataset> {
    let img = read(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            format!("bad magic 0x{magic:08x} for IDX images (expected 0x{IDX_IMAGES_MAGIC:08x})"),
        ));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(images_path, "image dimensions overflow"))?;
    if img.len() < 16 + need {
        return Err(Error::format(
            images_path,
            format!("truncated file: {} pixel bytes for {count}×{rows}×{cols}", img.len() - 16),
        ));
    }

    let lab = read(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            format!("bad magic 0x{magic:08x} for IDX labels (expected 0x{IDX_LABELS_MAGIC:08x})"),
        ));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if label_count != count {
        return Err(Error::format(
            labels_path,
            format!("dimension mismatch: {count} images but {label_count} labels"),
        ));
    }
    if lab.len() < 8 + count {
        return Err(Error::format(labels_path, "truncated file"));
    }
    let labels: Vec<usize> = lab[8..8 + count].iter().map(|&b| usize::from(b)).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::format(labels_path, format!("label {bad} >= {num_classes} classes")));
    }
    Dataset::from_bytes(
        &stem(images_path),
        &img[16..16 + need],
        [count, 1, rows, cols],
        labels,
        num_classes,
        normalization,
    )
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar_binary(paths: &[&Path]) -> Result<Dataset> {
    load_cifar_binary_with(paths, Normalization::cifar10(), 10)
}

pub fn load_cifar_binary_with(paths: &[&Path], normalization: Normalization, num_classes: usize) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for &path in paths {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::format(
                path,
                format!("length {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record", bytes.len()),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = usize::from(record[0]);
            if label >= num_classes {
                return Err(Error::format(path, format!("record {r}: label {label} >= {num_classes} classes")));
            }
            labels.push(label);
            pixels.extend_from_slice(&record[1..]);
        }
    }
    let name = paths.first().map_or_else(|| "cifar".to_string(), |p| stem(p));
    let count = labels.len();
    Dataset::from_bytes(&name, &pixels, [count, 3, CIFAR_SIDE, CIFAR_SIDE], labels, num_classes, normalization)
}

/// Class-balanced subset of `n_per_class` samples per class, kept in original order.
pub fn subset(d: &Dataset, n_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes];
    for (i, &l) in d.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = Vec::with_capacity(n_per_class * d.num_classes);
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < n_per_class {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} samples, {n_per_class} requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..n_per_class]);
    }
    chosen.sort_unstable();
    d.select(&chosen)
}

/// Sample order and batch size for one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub order: Vec<usize>,
    pub epoch_seed: u64,
}

impl BatchPlan {
    /// Shuffled order for `count` samples, determined by `(base_seed, stream, epoch)`.
    /// `stream` separates independent training runs sharing one base seed.
    pub fn shuffled(count: usize, batch_size: usize, base_seed: u64, stream: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let epoch_seed = derive_seed(derive_seed(base_seed, PURPOSE_SHUFFLE, stream), PURPOSE_SHUFFLE, epoch);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng_from_seed(epoch_seed));
        Ok(BatchPlan {
            batch_size,
            order,
            epoch_seed,
        })
    }

    /// Identity order (evaluation).
    pub fn sequential(count: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(BatchPlan {
            batch_size,
            order: (0..count).collect(),
            epoch_seed: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// Batches in plan order; the last may be short.
pub fn batches<'a>(
    d: &'a Dataset,
    plan: &'a BatchPlan,
) -> impl Iterator<Item = Result<(Tensor<f32>, Vec<usize>)>> + 'a {
    plan.order.chunks(plan.batch_size).map(move |idx| d.gather(idx))
}
