use rand::Rng;

use super::param::{LayerParams, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully-connected layer. Any input `[B, ...]` is flattened to `[B, F]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// Weights are `[out, in]`.
    pub params: LayerParams<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            params: LayerParams {
                weights: Param::zeros(&[out_features, in_features]),
                bias: Some(Param::zeros(&[out_features])),
            },
            cache: None,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.params.weights.init_kaiming_uniform(self.in_features, rng);
        if let Some(b) = &mut self.params.bias {
            b.value.fill_zero();
        }
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize> {
        let b = input.batch();
        if b == 0 || input.len() != b * self.in_features {
            return Err(Error::Shape(format!(
                "fc expects {} features per sample, got shape {:?}",
                self.in_features,
                input.shape()
            )));
        }
        Ok(b)
    }

    pub fn forward(&mut self, input: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let b = self.check(input)?;
        let (f, c) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[b, c]);
        if let Some(bias) = &self.params.bias {
            for row in out.data_mut().chunks_mut(c) {
                row.copy_from_slice(bias.value.data());
            }
        }
        // Y = X · Wᵀ + b
        T::gemm(
            b,
            f,
            c,
            T::one(),
            input.data(),
            f as isize,
            1,
            self.params.weights.value.data(),
            1,
            f as isize,
            T::one(),
            out.data_mut(),
            c as isize,
            1,
        );
        self.cache = train.then(|| input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or(Error::MissingCache("fc"))?;
        let b = input.batch();
        let (f, c) = (self.in_features, self.out_features);
        if grad_out.shape() != [b, c] {
            return Err(Error::Shape(format!(
                "fc upstream gradient {:?}, expected [{b}, {c}]",
                grad_out.shape()
            )));
        }
        // dW += dYᵀ · X
        T::gemm(
            c,
            b,
            f,
            T::one(),
            grad_out.data(),
            1,
            c as isize,
            input.data(),
            f as isize,
            1,
            T::one(),
            self.params.weights.grad.data_mut(),
            f as isize,
            1,
        );
        if let Some(bias) = &mut self.params.bias {
            let gb = bias.grad.data_mut();
            for row in grad_out.data().chunks(c) {
                for (a, &v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        // dX = dY · W
        let mut dx = Tensor::zeros(input.shape());
        T::gemm(
            b,
            c,
            f,
            T::one(),
            grad_out.data(),
            c as isize,
            1,
            self.params.weights.value.data(),
            f as isize,
            1,
            T::zero(),
            dx.data_mut(),
            f as isize,
            1,
        );
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut fc = Linear::<f64>::new(3, 3);
        fc.params.weights.value =
            Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(fc.forward(&x, false).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut fc = Linear::<f64>::new(4, 2);
        fc.init(&mut crate::rng::rng_from_seed(5));
        fc.params.bias.as_mut().unwrap().value = Tensor::from_f64(&[2], &[0.25, -1.5]).unwrap();
        let y = fc.forward(&Tensor::zeros(&[3, 4]), false).unwrap();
        assert_eq!(y.data(), &[0.25, -1.5, 0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn feature_mismatch() {
        let mut fc = Linear::<f32>::new(4, 2);
        assert!(matches!(fc.forward(&Tensor::zeros(&[2, 3]), false), Err(Error::Shape(_))));
    }

    #[test]
    fn flattens_4d_input() {
        let mut fc = Linear::<f32>::new(8, 1);
        let y = fc.forward(&Tensor::zeros(&[2, 2, 2, 2]), true).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        let dx = fc.backward(&Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(dx.shape(), &[2, 2, 2, 2]);
    }
}
