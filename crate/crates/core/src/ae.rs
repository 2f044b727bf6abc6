//! Activation density (AE): the fraction of post-ReLU activations that are
//! strictly positive, per measured layer and over the whole network.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ActivationCount;

/// Per-layer positive/total counters for one epoch.
///
/// `record` takes `&self` and uses atomic adds, so batches may be counted from
/// several threads; integer addition keeps the result order-independent.
#[derive(Debug)]
pub struct AeAccumulator {
    nonzero: Vec<AtomicU64>,
    total: Vec<AtomicU64>,
    epoch: usize,
}

fn checked_add(counter: &AtomicU64, v: u64) -> Result<()> {
    counter
        .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |c| c.checked_add(v))
        .map(|_| ())
        .map_err(|_| Error::InvalidArgument("activation counter overflow".into()))
}

impl AeAccumulator {
    pub fn new(layers: usize, epoch: usize) -> Self {
        AeAccumulator {
            nonzero: (0..layers).map(|_| AtomicU64::new(0)).collect(),
            total: (0..layers).map(|_| AtomicU64::new(0)).collect(),
            epoch,
        }
    }

    pub fn layers(&self) -> usize {
        self.total.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn record(&self, layer: usize, nonzero: u64, total: u64) -> Result<()> {
        if layer >= self.layers() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for {} measured layers",
                self.layers()
            )));
        }
        if total == 0 || nonzero > total {
            return Err(Error::InvalidArgument(format!(
                "invalid activation count {nonzero}/{total} for layer {layer}"
            )));
        }
        checked_add(&self.nonzero[layer], nonzero)?;
        checked_add(&self.total[layer], total)
    }

    pub fn record_count(&self, layer: usize, count: ActivationCount) -> Result<()> {
        self.record(layer, count.nonzero, count.total)
    }

    pub fn counts(&self, layer: usize) -> (u64, u64) {
        (
            self.nonzero[layer].load(Ordering::Relaxed),
            self.total[layer].load(Ordering::Relaxed),
        )
    }

    /// Closes the epoch: per-layer ratios, the count-weighted network ratio,
    /// then resets the counters and advances the epoch.
    pub fn finalize_epoch(&mut self, accuracy: f64) -> Result<AeSample> {
        let mut layer_ae = Vec::with_capacity(self.layers());
        let (mut sum_nz, mut sum_total) = (0u128, 0u128);
        for l in 0..self.layers() {
            let (nz, total) = self.counts(l);
            if total == 0 {
                return Err(Error::InvalidArgument(format!(
                    "measured layer {l} recorded no activations in epoch {}",
                    self.epoch
                )));
            }
            layer_ae.push(nz as f64 / total as f64);
            sum_nz += u128::from(nz);
            sum_total += u128::from(total);
        }
        let total_ae = if sum_total == 0 {
            0.0
        } else {
            sum_nz as f64 / sum_total as f64
        };
        let sample = AeSample {
            epoch: self.epoch,
            layer_ae,
            total_ae,
            accuracy,
        };
        for c in self.nonzero.iter().chain(&self.total) {
            c.store(0, Ordering::Relaxed);
        }
        self.epoch += 1;
        Ok(sample)
    }
}

/// Densities at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeSample {
    pub epoch: usize,
    pub layer_ae: Vec<f64>,
    pub total_ae: f64,
    /// Validation accuracy in [0, 1].
    pub accuracy: f64,
}

/// Per-epoch samples of one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeHistory {
    pub network_index: usize,
    pub samples: Vec<AeSample>,
}

impl AeHistory {
    pub fn new(network_index: usize) -> Self {
        AeHistory {
            network_index,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: AeSample) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if sample.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "epoch {} does not follow {}",
                    sample.epoch, last.epoch
                )));
            }
            if sample.layer_ae.len() != last.layer_ae.len() {
                return Err(Error::Shape(format!(
                    "sample has {} layers, history has {}",
                    sample.layer_ae.len(),
                    last.layer_ae.len()
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn totals(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.total_ae).collect()
    }

    pub fn last(&self) -> Option<&AeSample> {
        self.samples.last()
    }

    /// Layer densities recorded at `epoch`.
    pub fn ae_vector_at(&self, epoch: usize) -> Result<&[f64]> {
        self.samples
            .iter()
            .find(|s| s.epoch == epoch)
            .map(|s| s.layer_ae.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("epoch {epoch} not in history")))
    }

    /// Mean total AE over the last `n` epochs (fewer if the history is shorter).
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let tail = &self.samples[self.samples.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|s| s.total_ae).sum::<f64>() / tail.len() as f64)
    }

    pub fn head_mean(&self, n: usize) -> Option<f64> {
        let head = &self.samples[..n.min(self.samples.len())];
        (!head.is_empty()).then(|| head.iter().map(|s| s.total_ae).sum::<f64>() / head.len() as f64)
    }

    /// `epoch,accuracy,total_ae,ae_L0,...,ae_Ln`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let layers = self.samples.first().map_or(0, |s| s.layer_ae.len());
        let mut out = String::from("epoch,accuracy,total_ae");
        for l in 0..layers {
            let _ = write!(out, ",ae_L{l}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{},{}", s.epoch, s.accuracy, s.total_ae);
            for v in &s.layer_ae {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
