//! Runtime networks built from an [`ArchSpec`].

use crate::arch::{ArchSpec, LayerSpec, ResidualBlockSpec};
use crate::error::{Error, Result};
use crate::nn::{ActivationCount, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Param, Relu};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether a forward pass keeps the caches backward needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn caches(self) -> bool {
        self == Mode::Train
    }
}

/// Called for every AE-measured ReLU with its index, output and positive count.
pub type ActivationHook<'a, T> = dyn FnMut(usize, &Tensor<T>, ActivationCount) + 'a;

#[derive(Clone, Debug)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub relu1: Relu<T>,
    pub conv2: Conv2d<T>,
    pub projection: Option<Conv2d<T>>,
    pub relu_out: Relu<T>,
    /// AE index of `relu1`; `relu_out` measures at `measure + 1`.
    pub measure: usize,
}

impl<T: Scalar> ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode, hook: &mut ActivationHook<'_, T>) -> Result<Tensor<T>> {
        let train = mode.caches();
        let h = self.conv1.forward(x, train)?;
        let (h, count) = self.relu1.forward(&h, train);
        hook(self.measure, &h, count);
        let mut o = self.conv2.forward(&h, train)?;
        match &mut self.projection {
            Some(p) => o.add_assign(&p.forward(x, train)?)?,
            None => o.add_assign(x)?,
        }
        let (y, count) = self.relu_out.forward(&o, train);
        hook(self.measure + 1, &y, count);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = self.relu_out.backward(grad)?;
        let g_h = self.conv2.backward(&g_sum)?;
        let g_h = self.relu1.backward(&g_h)?;
        let mut g_x = self.conv1.backward(&g_h)?;
        match &mut self.projection {
            Some(p) => g_x.add_assign(&p.backward(&g_sum)?)?,
            None => g_x.add_assign(&g_sum)?,
        }
        Ok(g_x)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu { relu: Relu<T>, measure: Option<usize> },
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Fc(Linear<T>),
    Residual(Box<ResidualBlock<T>>),
}

impl<T: Scalar> Layer<T> {
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(c) => c.params.params_mut().collect(),
            Layer::Fc(f) => f.params.params_mut().collect(),
            Layer::Residual(b) => {
                let mut v: Vec<&mut Param<T>> = b.conv1.params.params_mut().collect();
                v.extend(b.conv2.params.params_mut());
                if let Some(p) = &mut b.projection {
                    v.extend(p.params.params_mut());
                }
                v
            }
            _ => Vec::new(),
        }
    }
}

/// A trainable network; layer order and parameter order follow the spec.
#[derive(Clone, Debug)]
pub struct Model<T> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
    measured: usize,
}

impl<T: Scalar> Model<T> {
    /// Zero-weight network for `arch`.
    pub fn build(arch: &ArchSpec) -> Result<Self> {
        let shapes = arch.validate()?;
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut measured = 0;
        for (spec, s) in arch.layers.iter().zip(&shapes) {
            let layer = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => Layer::Conv(Conv2d::new(s.input.channels, out_channels, kernel, stride, padding, true)),
                LayerSpec::Relu { measure_ae } => {
                    let measure = measure_ae.then(|| {
                        measured += 1;
                        measured - 1
                    });
                    Layer::Relu {
                        relu: Relu::new(),
                        measure,
                    }
                }
                LayerSpec::Maxpool { window, stride } => Layer::MaxPool(MaxPool2d::new(window, stride)),
                LayerSpec::GlobalAvgpool => Layer::GlobalAvgPool(GlobalAvgPool::new()),
                LayerSpec::Fc { out_features } => Layer::Fc(Linear::new(s.input.numel(), out_features)),
                LayerSpec::ResidualBlock(ResidualBlockSpec {
                    conv1_channels,
                    conv2_channels,
                    stride,
                    projection,
                }) => {
                    let n = s.input.channels;
                    let block = ResidualBlock {
                        conv1: Conv2d::new(n, conv1_channels, 3, stride, 1, true),
                        relu1: Relu::new(),
                        conv2: Conv2d::new(conv1_channels, conv2_channels, 3, 1, 1, true),
                        projection: projection.then(|| Conv2d::new(n, conv2_channels, 1, stride, 0, false)),
                        relu_out: Relu::new(),
                        measure: measured,
                    };
                    measured += 2;
                    Layer::Residual(Box::new(block))
                }
            };
            layers.push(layer);
        }
        Ok(Model {
            arch: arch.clone(),
            layers,
            measured,
        })
    }

    /// Fresh Kaiming-uniform weights and zero biases, drawn from `seed` alone.
    pub fn instantiate(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let mut model = Self::build(arch)?;
        let mut rng = rng_from_seed(seed);
        for layer in &mut model.layers {
            match layer {
                Layer::Conv(c) => c.init(&mut rng),
                Layer::Fc(f) => f.init(&mut rng),
                Layer::Residual(b) => {
                    b.conv1.init(&mut rng);
                    b.conv2.init(&mut rng);
                    if let Some(p) = &mut b.projection {
                        p.init(&mut rng);
                    }
                }
                _ => {}
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Number of AE-measured ReLUs (one per prunable conv).
    pub fn measured_layers(&self) -> usize {
        self.measured
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_with(input, mode, &mut |_, _, _| {})
    }

    /// Forward pass reporting every measured ReLU output to `hook`.
    pub fn forward_with(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        hook: &mut ActivationHook<'_, T>,
    ) -> Result<Tensor<T>> {
        let [c, h, w] = self.arch.input_shape;
        let (_, ic, ih, iw) = input.dims4()?;
        if (ic, ih, iw) != (c, h, w) {
            return Err(Error::Shape(format!(
                "model expects [B, {c}, {h}, {w}] input, got {:?}",
                input.shape()
            )));
        }
        let train = mode.caches();
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = match layer {
                Layer::Conv(conv) => conv.forward(&x, train)?,
                Layer::Relu { relu, measure } => {
                    let (y, count) = relu.forward(&x, train);
                    if let Some(m) = measure {
                        hook(*m, &y, count);
                    }
                    y
                }
                Layer::MaxPool(p) => p.forward(&x, train)?,
                Layer::GlobalAvgPool(p) => p.forward(&x, train)?,
                Layer::Fc(fc) => fc.forward(&x, train)?,
                Layer::Residual(block) => block.forward(&x, mode, hook)?,
            };
            if !x.all_finite() {
                return Err(Error::NonFinite(format!(
                    "output of layer {i} ({})",
                    self.arch.layers[i].kind_name()
                )));
            }
        }
        Ok(x)
    }

    /// Backpropagates the logit gradient, accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Conv(conv) => conv.backward(&g)?,
                Layer::Relu { relu, .. } => relu.backward(&g)?,
                Layer::MaxPool(p) => p.backward(&g)?,
                Layer::GlobalAvgPool(p) => p.backward(&g)?,
                Layer::Fc(fc) => fc.backward(&g)?,
                Layer::Residual(block) => block.backward(&g)?,
            };
        }
        Ok(g)
    }

    /// All trainable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params.params()),
                Layer::Fc(f) => out.extend(f.params.params()),
                Layer::Residual(b) => {
                    out.extend(b.conv1.params.params());
                    out.extend(b.conv2.params.params());
                    if let Some(p) = &b.projection {
                        out.extend(p.params.params());
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Weight count excluding biases (the cost model's default convention).
    pub fn weight_count(&self) -> usize {
        let mut n = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => n += c.params.weights.len(),
                Layer::Fc(f) => n += f.params.weights.len(),
                Layer::Residual(b) => {
                    n += b.conv1.params.weights.len() + b.conv2.params.weights.len();
                    n += b.projection.as_ref().map_or(0, |p| p.params.weights.len());
                }
                _ => {}
            }
        }
        n
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
