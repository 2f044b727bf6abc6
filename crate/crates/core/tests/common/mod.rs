//! Shared oracles for the integration and acceptance tests.

#![allow(dead_code)]

use densiprune::arch::{ArchSpec, LayerSpec, ResidualBlockSpec};
use densiprune::model::{Mode, Model};
use densiprune::nn::{softmax_xent, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Relu};
use densiprune::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + EPS;
            let up = f(&probe);
            probe.data_mut()[i] = orig - EPS;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

#[derive(Debug)]
pub struct GradReport {
    pub config: String,
    /// Worst relative error over the input and every parameter tensor.
    pub max_rel: f64,
}

/// Conv layer under `L = Σ out ⊙ R`: input, weight and bias gradients.
pub fn check_conv(seed: u64, batch: usize, cin: usize, cout: usize, size: usize, k: usize, s: usize, p: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Conv2d::<f64>::new(cin, cout, k, s, p, true);
    conv.init(&mut rng);
    for b in conv.params.bias.as_mut().unwrap().value.data_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = random_tensor(&mut rng, &[batch, cin, size, size]);
    let y = conv.forward(&x, true).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = conv.backward(&r).unwrap();
    let w = conv.params.weights.value.clone();
    let b = conv.params.bias.as_ref().unwrap().value.clone();
    let gw = conv.params.weights.grad.data().to_vec();
    let gb = conv.params.bias.as_ref().unwrap().grad.data().to_vec();

    let mut probe = conv.clone();
    let nx = numeric_grad(&x, |x| dot(&probe.forward(x, false).unwrap(), &r));
    let nw = numeric_grad(&w, |w| {
        probe.params.weights.value = w.clone();
        dot(&probe.forward(&x, false).unwrap(), &r)
    });
    probe.params.weights.value = w;
    let nb = numeric_grad(&b, |b| {
        probe.params.bias.as_mut().unwrap().value = b.clone();
        dot(&probe.forward(&x, false).unwrap(), &r)
    });
    GradReport {
        config: format!("conv b{batch} {cin}->{cout} {size}x{size} k{k} s{s} p{p}"),
        max_rel: rel_err(dx.data(), &nx).max(rel_err(&gw, &nw)).max(rel_err(&gb, &nb)),
    }
}

pub fn check_linear(seed: u64, batch: usize, fin: usize, fout: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fc = Linear::<f64>::new(fin, fout);
    fc.init(&mut rng);
    for b in fc.params.bias.as_mut().unwrap().value.data_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = random_tensor(&mut rng, &[batch, fin]);
    let y = fc.forward(&x, true).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = fc.backward(&r).unwrap();
    let w = fc.params.weights.value.clone();
    let b = fc.params.bias.as_ref().unwrap().value.clone();
    let gw = fc.params.weights.grad.data().to_vec();
    let gb = fc.params.bias.as_ref().unwrap().grad.data().to_vec();
    let mut probe = fc.clone();
    let nx = numeric_grad(&x, |x| dot(&probe.forward(x, false).unwrap(), &r));
    let nw = numeric_grad(&w, |w| {
        probe.params.weights.value = w.clone();
        dot(&probe.forward(&x, false).unwrap(), &r)
    });
    probe.params.weights.value = w;
    let nb = numeric_grad(&b, |b| {
        probe.params.bias.as_mut().unwrap().value = b.clone();
        dot(&probe.forward(&x, false).unwrap(), &r)
    });
    GradReport {
        config: format!("fc b{batch} {fin}->{fout}"),
        max_rel: rel_err(dx.data(), &nx).max(rel_err(&gw, &nw)).max(rel_err(&gb, &nb)),
    }
}

/// Inputs are pushed away from 0 so no difference straddles the kink.
pub fn check_relu(seed: u64, n: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random_tensor(&mut rng, &[1, n]);
    for v in x.data_mut() {
        *v += 0.1 * v.signum();
    }
    let mut relu = Relu::<f64>::new();
    let (y, _) = relu.forward(&x, true);
    let r = random_tensor(&mut rng, y.shape());
    let dx = relu.backward(&r).unwrap();
    let nx = numeric_grad(&x, |x| dot(&Relu::new().forward(x, false).0, &r));
    GradReport {
        config: format!("relu n{n}"),
        max_rel: rel_err(dx.data(), &nx),
    }
}

pub fn check_maxpool(seed: u64, c: usize, size: usize, window: usize, stride: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // distinct, well-separated values: no ties within EPS
    let n = 2 * c * size * size;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::from_vec(&[2, c, size, size], vals).unwrap();
    let mut pool = MaxPool2d::new(window, stride);
    let y = pool.forward(&x, true).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = pool.backward(&r).unwrap();
    let nx = numeric_grad(&x, |x| dot(&MaxPool2d::new(window, stride).forward(x, false).unwrap(), &r));
    GradReport {
        config: format!("maxpool c{c} {size}x{size} w{window} s{stride}"),
        max_rel: rel_err(dx.data(), &nx),
    }
}

pub fn check_gap(seed: u64, c: usize, size: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[2, c, size, size]);
    let mut gap = GlobalAvgPool::new();
    let y = gap.forward(&x, true).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = gap.backward(&r).unwrap();
    let nx = numeric_grad(&x, |x| dot(&GlobalAvgPool::new().forward(x, false).unwrap(), &r));
    GradReport {
        config: format!("global_avgpool c{c} {size}x{size}"),
        max_rel: rel_err(dx.data(), &nx),
    }
}

fn model_loss(model: &mut Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logits = model.forward(x, Mode::Eval).unwrap();
    softmax_xent(&logits, labels).unwrap().0
}

/// Whole-network check under softmax cross-entropy: input and all parameters.
pub fn check_model(arch: &ArchSpec, seed: u64, batch: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::instantiate(arch, seed).unwrap();
    for p in model.params_mut() {
        if p.value.shape().len() == 1 {
            for b in p.value.data_mut() {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
    }
    let [c, h, w] = arch.input_shape;
    let x = random_tensor(&mut rng, &[batch, c, h, w]);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..arch.num_classes)).collect();
    let logits = model.forward(&x, Mode::Train).unwrap();
    let (_, g) = softmax_xent(&logits, &labels).unwrap();
    let dx = model.backward(&g).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let values: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();

    let mut probe = model.clone();
    let mut worst = rel_err(dx.data(), &numeric_grad(&x, |x| model_loss(&mut probe, x, &labels)));
    for (i, v) in values.iter().enumerate() {
        let numeric = numeric_grad(v, |v| {
            probe.params_mut()[i].value = v.clone();
            model_loss(&mut probe, &x, &labels)
        });
        probe.params_mut()[i].value = v.clone();
        worst = worst.max(rel_err(&analytic[i], &numeric));
    }
    GradReport {
        config: describe(arch),
        max_rel: worst,
    }
}

pub fn describe(arch: &ArchSpec) -> String {
    let kinds: Vec<String> = arch
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => format!("conv{out_channels}k{kernel}s{stride}p{padding}"),
            LayerSpec::ResidualBlock(b) => format!(
                "res{}-{}s{}{}",
                b.conv1_channels,
                b.conv2_channels,
                b.stride,
                if b.projection { "P" } else { "" }
            ),
            other => other.kind_name().to_string(),
        })
        .collect();
    format!("{:?} {}", arch.input_shape, kinds.join(","))
}

/// Small random networks covering every layer kind, all shape-valid.
pub fn random_archs(count: usize, seed: u64) -> Vec<ArchSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let cin = rng.gen_range(1..=2);
        let size = rng.gen_range(4..=6);
        let classes = rng.gen_range(2..=4);
        let mut layers = Vec::new();
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let p = if k == 3 { rng.gen_range(0..=1) } else { 0 };
        let s = rng.gen_range(1..=2);
        layers.push(LayerSpec::conv(rng.gen_range(1..=3), k, s, p));
        layers.push(LayerSpec::relu(true));
        match out.len() % 3 {
            0 => layers.push(LayerSpec::Maxpool { window: 2, stride: 2 }),
            1 => {
                layers.push(LayerSpec::ResidualBlock(ResidualBlockSpec {
                    conv1_channels: rng.gen_range(1..=3),
                    conv2_channels: rng.gen_range(1..=3),
                    stride: rng.gen_range(1..=2),
                    projection: false,
                }));
                layers.push(LayerSpec::GlobalAvgpool);
            }
            _ => {}
        }
        layers.push(LayerSpec::Fc { out_features: classes });
        let mut arch = ArchSpec {
            name: format!("g{}", out.len()),
            input_shape: [cin, size, size],
            num_classes: classes,
            layers,
        };
        if arch.refresh_projections().is_ok() && arch.validate().is_ok() {
            out.push(arch);
        }
    }
    out
}

/// Brute-force MAC count: slide the window over the zero-padded map and count
/// every (output pixel, output channel, input channel, kernel cell) product.
pub fn loop_nest_macs(n: u64, m: u64, k: u64, i: u64, s: u64, p: u64) -> u64 {
    let padded = i + 2 * p;
    let mut count = 0;
    let mut y = 0;
    while y + k <= padded {
        let mut x = 0;
        while x + k <= padded {
            for _mo in 0..m {
                for _ni in 0..n {
                    for _ky in 0..k {
                        for _kx in 0..k {
                            count += 1;
                        }
                    }
                }
            }
            x += s;
        }
        y += s;
    }
    count
}

/// Direct cross-correlation, written as the textbook loop nest.
pub fn loop_nest_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, s: usize, p: usize) -> Tensor<f64> {
    let (b, c, h, wd) = x.dims4().unwrap();
    let (m, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(&[b, m, oh, ow]);
    for bi in 0..b {
        for mo in 0..m {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[mo]);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((mo * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[((bi * m + mo) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}
