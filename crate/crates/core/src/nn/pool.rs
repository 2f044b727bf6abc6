use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a pooling window, or an error for an invalid window.
pub fn pool_output_size(input: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool window {window} and stride {stride} must be positive"
        )));
    }
    if window > input {
        return Err(Error::Shape(format!(
            "pool window {window} larger than input {input}"
        )));
    }
    Ok((input - window) / stride + 1)
}

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Max pooling; ties go to the first position in row-major scan order.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool2d {
            window,
            stride,
            cache: None,
        }
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (b, c, h, w) = input.dims4()?;
        let oh = pool_output_size(h, self.window, self.stride)?;
        let ow = pool_output_size(w, self.window, self.stride)?;
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0usize; b * c * oh * ow];
        let x = input.data();
        let y = out.data_mut();
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + oy * self.stride * w + ox * self.stride;
                    let mut best = x[best_idx];
                    for wy in 0..self.window {
                        for wx in 0..self.window {
                            let idx = base + (oy * self.stride + wy) * w + ox * self.stride + wx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    y[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        self.cache = train.then(|| PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache("maxpool"))?;
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::Shape(format!(
                "maxpool upstream gradient has {} values, expected {}",
                grad_out.len(),
                cache.argmax.len()
            )));
        }
        let mut dx = Tensor::zeros(&cache.input_shape);
        let d = dx.data_mut();
        for (&g, &i) in grad_out.data().iter().zip(&cache.argmax) {
            d[i] += g;
        }
        Ok(dx)
    }
}

/// Averages each channel's full spatial map to a single value: `[B,C,H,W] -> [B,C,1,1]`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { input_shape: None }
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (b, c, h, w) = input.dims4()?;
        let area = h * w;
        let inv = T::one() / T::from_usize(area).unwrap_or_else(T::one);
        let data = input
            .data()
            .chunks(area)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.input_shape = train.then(|| input.shape().to_vec());
        Tensor::from_vec(&[b, c, 1, 1], data)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or(Error::MissingCache("global_avgpool"))?;
        let area = shape[2] * shape[3];
        if grad_out.len() * area != shape.iter().product::<usize>() {
            return Err(Error::Shape("global_avgpool upstream gradient".into()));
        }
        let inv = T::one() / T::from_usize(area).unwrap_or_else(T::one);
        let mut dx = Tensor::zeros(&shape);
        for (plane, &g) in dx.data_mut().chunks_mut(area).zip(grad_out.data()) {
            plane.iter_mut().for_each(|v| *v = g * inv);
        }
        Ok(dx)
    }
}
