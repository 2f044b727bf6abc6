//! 2-D convolution (cross-correlation) via im2col + GEMM.

use rand::Rng;
use rayon::prelude::*;

use super::param::{LayerParams, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples per gradient partial sum. Fixed so that the reduction order, and
/// hence the result bits, do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or an error when the
/// window does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Weights are `[out, in, k, k]`.
    pub params: LayerParams<T>,
    cache: Option<Tensor<T>>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
    p: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let n_out = self.col_cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.oh {
                        let iy = (oy * self.s + ki) as isize - self.p as isize;
                        for ox in 0..self.ow {
                            let ix = (ox * self.s + kj) as isize - self.p as isize;
                            dst[oy * self.ow + ox] = if iy >= 0
                                && (iy as usize) < self.h
                                && ix >= 0
                                && (ix as usize) < self.w
                            {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let n_out = self.col_cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    for oy in 0..self.oh {
                        let iy = (oy * self.s + ki) as isize - self.p as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.s + kj) as isize - self.p as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            dx[(c * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            params: LayerParams {
                weights: Param::zeros(&[out_channels, in_channels, kernel, kernel]),
                bias: bias.then(|| Param::zeros(&[out_channels])),
            },
            cache: None,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        self.params.weights.init_kaiming_uniform(fan_in, rng);
        if let Some(b) = &mut self.params.bias {
            b.value.fill_zero();
        }
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<(usize, Geometry)> {
        let (b, c, h, w) = input.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let oh = conv_output_size(h, self.kernel, self.stride, self.padding)?;
        let ow = conv_output_size(w, self.kernel, self.stride, self.padding)?;
        Ok((
            b,
            Geometry {
                c,
                h,
                w,
                oh,
                ow,
                k: self.kernel,
                s: self.stride,
                p: self.padding,
            },
        ))
    }

    /// Forward pass; caches the input when `train` is set.
    pub fn forward(&mut self, input: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = train.then(|| input.clone());
        Ok(out)
    }

    /// Forward pass without touching the cache.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, g) = self.geometry(input)?;
        let m = self.out_channels;
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let in_len = g.c * g.h * g.w;
        let mut out = Tensor::zeros(&[b, m, g.oh, g.ow]);
        let weights = self.params.weights.value.data();
        let bias = self.params.bias.as_ref().map(|p| p.value.data());
        let x = input.data();
        out.data_mut()
            .par_chunks_mut(m * ncols)
            .enumerate()
            .for_each_init(
                || vec![T::zero(); rows * ncols],
                |cols, (n, y)| {
                    g.im2col(&x[n * in_len..(n + 1) * in_len], cols);
                    T::gemm(
                        m,
                        rows,
                        ncols,
                        T::one(),
                        weights,
                        rows as isize,
                        1,
                        cols,
                        ncols as isize,
                        1,
                        T::zero(),
                        y,
                        ncols as isize,
                        1,
                    );
                    if let Some(bias) = bias {
                        for (oc, row) in y.chunks_mut(ncols).enumerate() {
                            row.iter_mut().for_each(|v| *v += bias[oc]);
                        }
                    }
                },
            );
        Ok(out)
    }

    /// Backward pass: returns the input gradient and accumulates weight/bias gradients.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or(Error::MissingCache("conv2d"))?;
        let (b, g) = self.geometry(&input)?;
        let m = self.out_channels;
        if grad_out.shape() != [b, m, g.oh, g.ow] {
            return Err(Error::Shape(format!(
                "conv upstream gradient {:?} does not match output [{b}, {m}, {}, {}]",
                grad_out.shape(),
                g.oh,
                g.ow
            )));
        }
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let in_len = g.c * g.h * g.w;
        let out_len = m * ncols;
        let x = input.data();
        let dy = grad_out.data();
        let weights = self.params.weights.value.data();
        let has_bias = self.params.bias.is_some();

        let mut dx = Tensor::zeros(input.shape());
        let partials: Vec<(Vec<T>, Vec<T>)> = dx
            .data_mut()
            .par_chunks_mut(GRAD_CHUNK * in_len)
            .enumerate()
            .map(|(chunk, dx_chunk)| {
                let mut dw = vec![T::zero(); m * rows];
                let mut db = vec![T::zero(); if has_bias { m } else { 0 }];
                let mut cols = vec![T::zero(); rows * ncols];
                for (j, dx_n) in dx_chunk.chunks_mut(in_len).enumerate() {
                    let n = chunk * GRAD_CHUNK + j;
                    let dy_n = &dy[n * out_len..(n + 1) * out_len];
                    g.im2col(&x[n * in_len..(n + 1) * in_len], &mut cols);
                    // dW += dY · colsᵀ
                    T::gemm(
                        m,
                        ncols,
                        rows,
                        T::one(),
                        dy_n,
                        ncols as isize,
                        1,
                        &cols,
                        1,
                        ncols as isize,
                        T::one(),
                        &mut dw,
                        rows as isize,
                        1,
                    );
                    if has_bias {
                        for (oc, row) in dy_n.chunks(ncols).enumerate() {
                            db[oc] += row.iter().copied().sum::<T>();
                        }
                    }
                    // dcols = Wᵀ · dY
                    T::gemm(
                        rows,
                        m,
                        ncols,
                        T::one(),
                        weights,
                        1,
                        rows as isize,
                        dy_n,
                        ncols as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        ncols as isize,
                        1,
                    );
                    g.col2im(&cols, dx_n);
                }
                (dw, db)
            })
            .collect();

        let gw = self.params.weights.grad.data_mut();
        for (dw, db) in &partials {
            for (a, &v) in gw.iter_mut().zip(dw) {
                *a += v;
            }
            if let Some(bias) = &mut self.params.bias {
                for (a, &v) in bias.grad.data_mut().iter_mut().zip(db) {
                    *a += v;
                }
            }
        }
        Ok(dx)
    }
}
