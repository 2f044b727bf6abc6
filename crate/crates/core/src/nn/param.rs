use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
            velocity: Tensor::zeros(shape),
        }
    }

    pub fn from_value(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            velocity: Tensor::zeros(&shape),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill_zero();
    }

    /// Kaiming-uniform (fan-in, ReLU gain): U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
    pub fn init_kaiming_uniform<R: Rng>(&mut self, fan_in: usize, rng: &mut R) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        for v in self.value.data_mut() {
            *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
        }
    }
}

/// Weights plus optional bias of one layer.
#[derive(Clone, Debug)]
pub struct LayerParams<T> {
    pub weights: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        std::iter::once(&mut self.weights).chain(self.bias.as_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        std::iter::once(&self.weights).chain(self.bias.as_ref())
    }
}
