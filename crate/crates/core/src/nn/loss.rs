use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its logit gradient
/// `(softmax - onehot) / B`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, c) = match logits.shape() {
        &[b, c] => (b, c),
        s => return Err(Error::Shape(format!("logits must be [B, C], got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0f64;
    for ((row, g), &label) in logits.data().chunks(c).zip(grad.data_mut().chunks_mut(c)).zip(labels) {
        if label >= c {
            return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
        }
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (j, (gv, &z)) in g.iter_mut().zip(&row).enumerate() {
            let p = (z - log_z).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            *gv = T::from_f64_lossy((p - onehot) * inv_b);
        }
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}
