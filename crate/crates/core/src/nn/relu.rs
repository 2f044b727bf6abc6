use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Strictly positive count over all elements of a ReLU output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActivationCount {
    pub nonzero: u64,
    pub total: u64,
}

/// `max(0, x)` elementwise, with the exact count of outputs `> 0`.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ActivationCount) {
    let mut out = input.clone();
    let mut nonzero = 0u64;
    for v in out.data_mut() {
        if *v > T::zero() {
            nonzero += 1;
        } else {
            *v = T::zero();
        }
    }
    let total = out.len() as u64;
    (out, ActivationCount { nonzero, total })
}

/// ReLU layer that keeps its output for the backward mask.
#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, train: bool) -> (Tensor<T>, ActivationCount) {
        let (out, count) = relu_forward(input);
        self.cache = train.then(|| out.clone());
        (out, count)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.cache.take().ok_or(Error::MissingCache("relu"))?;
        if out.shape() != grad_out.shape() {
            return Err(Error::Shape(format!(
                "relu upstream gradient {:?} vs output {:?}",
                grad_out.shape(),
                out.shape()
            )));
        }
        let mut g = grad_out.clone();
        for (gv, &y) in g.data_mut().iter_mut().zip(out.data()) {
            if y <= T::zero() {
                *gv = T::zero();
            }
        }
        Ok(g)
    }
}
