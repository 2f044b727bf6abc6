//! Channel-averaged activation maps of single images, exported as 8-bit PGM
//! and CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major 2-D matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColormapExport {
    /// Indices of AE-measured ReLUs.
    pub layer_indices: Vec<usize>,
    pub image_index: usize,
    /// Min-max normalized maps, one per layer index.
    pub matrices: Vec<Matrix>,
}

/// Mean over channels of a `[1, C, H, W]` (or `[C, H, W]`) activation.
pub fn channel_mean<T: Scalar>(activation: &Tensor<T>) -> Result<Matrix> {
    let (c, h, w) = match *activation.shape() {
        [1, c, h, w] | [c, h, w] => (c, h, w),
        ref s => return Err(Error::Shape(format!("expected one activation map stack, got {s:?}"))),
    };
    if c == 0 {
        return Err(Error::Shape("activation has no channels".into()));
    }
    let plane = h * w;
    let mut values = vec![0.0; plane];
    for ch in activation.data().chunks_exact(plane) {
        for (acc, v) in values.iter_mut().zip(ch) {
            *acc += v.to_f64().unwrap_or(f64::NAN);
        }
    }
    for v in &mut values {
        *v /= c as f64;
    }
    Ok(Matrix {
        height: h,
        width: w,
        values,
    })
}

/// Rescales to [0, 1]; a constant map becomes all zeros.
pub fn normalize_minmax(m: &Matrix) -> Matrix {
    let lo = m.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let values = if span > 0.0 && span.is_finite() {
        m.values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; m.values.len()]
    };
    Matrix {
        height: m.height,
        width: m.width,
        values,
    }
}

/// Binary PGM (P5, maxval 255) of a matrix with values in [0, 1].
pub fn to_pgm(m: &Matrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend(m.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn to_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.values.chunks(m.width.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Runs one image through `model` and collects the normalized channel-mean
/// map of each requested measured ReLU.
pub fn activation_maps<T: Scalar>(
    model: &mut Model<T>,
    image: &Tensor<T>,
    image_index: usize,
    layers: &[usize],
) -> Result<ColormapExport> {
    let measured = model.measured_layers();
    if let Some(&bad) = layers.iter().find(|&&l| l >= measured) {
        return Err(Error::InvalidArgument(format!(
            "layer index {bad} out of range: model has {measured} measured layers"
        )));
    }
    if image.batch() != 1 {
        return Err(Error::Shape(format!("expected a single image, got batch {}", image.batch())));
    }
    let mut captured: Vec<Option<Matrix>> = vec![None; measured];
    let mut err = None;
    model.forward_with(image, Mode::Eval, &mut |idx, y, _| {
        if layers.contains(&idx) {
            match channel_mean(y) {
                Ok(m) => captured[idx] = Some(m),
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let matrices = layers
        .iter()
        .map(|&l| normalize_minmax(captured[l].as_ref().expect("every measured layer reports")))
        .collect();
    Ok(ColormapExport {
        layer_indices: layers.to_vec(),
        image_index,
        matrices,
    })
}

/// Writes `layer{L}.pgm` and `layer{L}.csv` per layer; returns the paths.
pub fn write_export(export: &ColormapExport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (&l, m) in export.layer_indices.iter().zip(&export.matrices) {
        let pgm = dir.join(format!("layer{l}.pgm"));
        std::fs::write(&pgm, to_pgm(m)).map_err(|e| Error::io(&pgm, e))?;
        let csv = dir.join(format!("layer{l}.csv"));
        std::fs::write(&csv, to_csv(m)).map_err(|e| Error::io(&csv, e))?;
        written.extend([pgm, csv]);
    }
    Ok(written)
}
