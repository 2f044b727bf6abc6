//! Declarative network architectures, shape propagation and AE-driven resizing.
//!
//! An [`ArchSpec`] is the object the pruning loop rewrites: only the output
//! widths of prunable convolutions change; everything downstream (pooling,
//! residual projections, classifier fan-in) is re-derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_size, pool_output_size};

/// `(channels, height, width)` of one feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape3 {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl From<[usize; 3]> for Shape3 {
    fn from(v: [usize; 3]) -> Self {
        Shape3::new(v[0], v[1], v[2])
    }
}

/// Basic residual block: `relu(conv2(relu(conv1(x))) + shortcut(x))`.
///
/// Both convs are 3×3 / padding 1; `conv1` carries the stride. The shortcut is
/// a 1×1 projection conv whenever widths or strides differ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlockSpec {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Derived from the block's input width; recomputed by [`ArchSpec::refresh_projections`].
    #[serde(default)]
    pub projection: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ResidualBlockSpec {
    pub fn needs_projection(&self, input_channels: usize) -> bool {
        input_channels != self.conv2_channels || self.stride != 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        prunable: bool,
    },
    Relu {
        #[serde(default)]
        measure_ae: bool,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    GlobalAvgpool,
    Fc {
        out_features: usize,
    },
    ResidualBlock(ResidualBlockSpec),
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            prunable: true,
        }
    }

    pub fn relu(measure_ae: bool) -> Self {
        LayerSpec::Relu { measure_ae }
    }

    pub fn as_residual(&self) -> Option<&ResidualBlockSpec> {
        match self {
            LayerSpec::ResidualBlock(block) => Some(block),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::GlobalAvgpool => "global_avgpool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::ResidualBlock(_) => "residual_block",
        }
    }

    /// Number of prunable convolutions this entry contributes.
    pub fn prunable_count(&self) -> usize {
        match self {
            LayerSpec::Conv { prunable: true, .. } => 1,
            LayerSpec::ResidualBlock(_) => 2,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Input and output feature-map shapes of one layer entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: Shape3,
    pub output: Shape3,
}

impl ArchSpec {
    pub fn input(&self) -> Shape3 {
        Shape3::from(self.input_shape)
    }

    /// Output widths of the prunable convolutions, in network order
    /// (residual blocks contribute conv1 then conv2).
    pub fn prunable_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    prunable: true,
                    ..
                } => sizes.push(out_channels),
                LayerSpec::ResidualBlock(ref b) => sizes.extend([b.conv1_channels, b.conv2_channels]),
                _ => {}
            }
        }
        sizes
    }

    pub fn num_prunable(&self) -> usize {
        self.layers.iter().map(LayerSpec::prunable_count).sum()
    }

    /// Copy of this spec with prunable widths replaced, projections recomputed.
    pub fn with_prunable_sizes(&self, sizes: &[usize]) -> Result<ArchSpec> {
        if sizes.len() != self.num_prunable() {
            return Err(Error::InvalidArgument(format!(
                "{} sizes given for {} prunable layers",
                sizes.len(),
                self.num_prunable()
            )));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("prunable layer {pos} would have 0 channels")));
        }
        let mut out = self.clone();
        let mut it = sizes.iter().copied();
        for layer in &mut out.layers {
            match layer {
                LayerSpec::Conv {
                    out_channels,
                    prunable: true,
                    ..
                } => *out_channels = it.next().unwrap_or(*out_channels),
                LayerSpec::ResidualBlock(b) => {
                    b.conv1_channels = it.next().unwrap_or(b.conv1_channels);
                    b.conv2_channels = it.next().unwrap_or(b.conv2_channels);
                }
                _ => {}
            }
        }
        out.refresh_projections()?;
        Ok(out)
    }

    /// Recomputes every residual block's `projection` flag from its input width.
    pub fn refresh_projections(&mut self) -> Result<()> {
        let shapes = propagate_shapes(self)?;
        for (layer, s) in self.layers.iter_mut().zip(shapes) {
            if let LayerSpec::ResidualBlock(b) = layer {
                b.projection = b.needs_projection(s.input.channels);
            }
        }
        Ok(())
    }

    /// Shape propagation plus the structural invariants:
    /// a ReLU measures AE exactly when it directly follows a prunable conv,
    /// every prunable conv is followed by a ReLU, the network ends in an fc
    /// layer producing `num_classes` outputs, and projection flags are consistent.
    pub fn validate(&self) -> Result<Vec<LayerShapes>> {
        let shapes = propagate_shapes(self)?;
        let invalid = |m: String| Err(Error::InvalidArgument(format!("{}: {m}", self.name)));
        for (i, layer) in self.layers.iter().enumerate() {
            let after_prunable = i > 0 && matches!(self.layers[i - 1], LayerSpec::Conv { prunable: true, .. });
            match *layer {
                LayerSpec::Relu { measure_ae } if measure_ae != after_prunable => {
                    return invalid(format!(
                        "layer {i}: measure_ae must be {after_prunable} for a relu {} a prunable conv",
                        if after_prunable { "following" } else { "not following" }
                    ));
                }
                LayerSpec::Conv { prunable: true, .. }
                    if !matches!(self.layers.get(i + 1), Some(LayerSpec::Relu { .. })) =>
                {
                    return invalid(format!("layer {i}: prunable conv must be followed by a relu"));
                }
                LayerSpec::ResidualBlock(ref b) => {
                    let needed = b.needs_projection(shapes[i].input.channels);
                    if b.projection != needed {
                        return invalid(format!("layer {i}: projection flag must be {needed}"));
                    }
                }
                _ => {}
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Fc { out_features }) if *out_features == self.num_classes => {}
            _ => return invalid(format!("last layer must be fc with {} outputs", self.num_classes)),
        }
        Ok(shapes)
    }

    pub fn from_toml_str(text: &str) -> Result<ArchSpec> {
        toml::from_str(text).map_err(|e| Error::Config(format!("architecture: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("architecture specs always serialize")
    }

    pub fn load(path: &Path) -> Result<ArchSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let arch: ArchSpec = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        arch.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(arch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

/// Per-layer input/output shapes. Channels flow from each layer to the next;
/// pooling keeps channels and only shrinks the spatial extent.
pub fn propagate_shapes(arch: &ArchSpec) -> Result<Vec<LayerShapes>> {
    let mut cur = arch.input();
    if cur.numel() == 0 {
        return Err(Error::Shape(format!("{}: empty input shape {:?}", arch.name, arch.input_shape)));
    }
    let mut out = Vec::with_capacity(arch.layers.len());
    let at = |i: usize, e: Error| match e {
        Error::Shape(m) | Error::InvalidArgument(m) => {
            Error::Shape(format!("{} layer {i} ({}): {m}", arch.name, arch.layers[i].kind_name()))
        }
        other => other,
    };
    for (i, layer) in arch.layers.iter().enumerate() {
        let input = cur;
        cur = match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if out_channels == 0 {
                    return Err(at(i, Error::Shape("conv with 0 output channels".into())));
                }
                Shape3::new(
                    out_channels,
                    conv_output_size(cur.height, kernel, stride, padding).map_err(|e| at(i, e))?,
                    conv_output_size(cur.width, kernel, stride, padding).map_err(|e| at(i, e))?,
                )
            }
            LayerSpec::Relu { .. } => cur,
            LayerSpec::Maxpool { window, stride } => Shape3::new(
                cur.channels,
                pool_output_size(cur.height, window, stride).map_err(|e| at(i, e))?,
                pool_output_size(cur.width, window, stride).map_err(|e| at(i, e))?,
            ),
            LayerSpec::GlobalAvgpool => Shape3::new(cur.channels, 1, 1),
            LayerSpec::Fc { out_features } => {
                if out_features == 0 {
                    return Err(at(i, Error::Shape("fc with 0 outputs".into())));
                }
                Shape3::new(out_features, 1, 1)
            }
            LayerSpec::ResidualBlock(ref b) => {
                if b.conv1_channels == 0 || b.conv2_channels == 0 {
                    return Err(at(i, Error::Shape("residual conv with 0 channels".into())));
                }
                Shape3::new(
                    b.conv2_channels,
                    conv_output_size(cur.height, 3, b.stride, 1).map_err(|e| at(i, e))?,
                    conv_output_size(cur.width, 3, b.stride, 1).map_err(|e| at(i, e))?,
                )
            }
        };
        if cur.height == 0 || cur.width == 0 {
            return Err(at(i, Error::Shape("spatial collapse".into())));
        }
        out.push(LayerShapes { input, output: cur });
    }
    Ok(out)
}

/// New width of one prunable layer: `max(1, round(ae × size))`.
pub fn resized_width(ae: f64, size: usize) -> usize {
    ((ae * size as f64).round() as usize).max(1)
}

/// Rescales every prunable layer by its activation density.
pub fn resize_arch(arch: &ArchSpec, ae: &[f64]) -> Result<ArchSpec> {
    let sizes = arch.prunable_sizes();
    if ae.len() != sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "AE vector has {} entries, architecture has {} prunable layers",
            ae.len(),
            sizes.len()
        )));
    }
    if let Some((i, v)) = ae.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("AE[{i}] = {v} outside [0, 1]")));
    }
    let new_sizes: Vec<usize> = sizes.iter().zip(ae).map(|(&s, &a)| resized_width(a, s)).collect();
    arch.with_prunable_sizes(&new_sizes)
}

pub const VGG19_WIDTHS: [usize; 16] = [
    64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512,
];
/// Stem conv followed by (conv1, conv2) of the eight basic blocks.
pub const RESNET18_WIDTHS: [usize; 17] = [
    64, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512,
];
pub const VGG_LITE_WIDTHS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const RESNET_LITE_WIDTHS: [usize; 7] = [16, 16, 16, 32, 32, 64, 64];

pub const BUILTIN_NAMES: [&str; 4] = ["vgg19", "resnet18", "vgg-lite", "resnet-lite"];

/// VGG-style stack: 3×3 convs with a 2×2 max-pool after each group, then one fc.
pub fn vgg_arch(name: &str, groups: &[&[usize]], input: Shape3, num_classes: usize) -> ArchSpec {
    let mut layers = Vec::new();
    for group in groups {
        for &w in *group {
            layers.push(LayerSpec::conv(w, 3, 1, 1));
            layers.push(LayerSpec::relu(true));
        }
        layers.push(LayerSpec::Maxpool { window: 2, stride: 2 });
    }
    layers.push(LayerSpec::Fc {
        out_features: num_classes,
    });
    ArchSpec {
        name: name.to_string(),
        input_shape: [input.channels, input.height, input.width],
        num_classes,
        layers,
    }
}

/// ResNet-style: 3×3 stem conv, basic blocks, global average pooling and one
/// fc. Blocks form stages of two (one when the block count is odd); the first
/// block of every stage after the first has stride 2.
pub fn resnet_arch(name: &str, widths: &[usize], input: Shape3, num_classes: usize) -> Result<ArchSpec> {
    if widths.len() < 3 || widths.len() % 2 != 1 {
        return Err(Error::InvalidArgument(format!(
            "{name}: widths must be a stem plus pairs of blocks, got {}",
            widths.len()
        )));
    }
    let mut layers = vec![LayerSpec::conv(widths[0], 3, 1, 1), LayerSpec::relu(true)];
    let blocks = widths.len() / 2;
    let per_stage = if blocks % 2 == 0 { 2 } else { 1 };
    for (b, pair) in widths[1..].chunks(2).enumerate() {
        let stride = if b > 0 && b % per_stage == 0 { 2 } else { 1 };
        layers.push(LayerSpec::ResidualBlock(ResidualBlockSpec {
            conv1_channels: pair[0],
            conv2_channels: pair[1],
            stride,
            projection: false,
        }));
    }
    layers.push(LayerSpec::GlobalAvgpool);
    layers.push(LayerSpec::Fc {
        out_features: num_classes,
    });
    let mut arch = ArchSpec {
        name: name.to_string(),
        input_shape: [input.channels, input.height, input.width],
        num_classes,
        layers,
    };
    arch.refresh_projections()?;
    Ok(arch)
}

/// Named architectures: `vgg19` and `resnet18` at full width, plus the
/// desk-scale `vgg-lite` (6 convs) and `resnet-lite` (stem + 3 blocks).
pub fn builtin_arch(name: &str, input: Shape3, num_classes: usize) -> Result<ArchSpec> {
    let arch = match name {
        "vgg19" => {
            let w = &VGG19_WIDTHS;
            vgg_arch(name, &[&w[0..2], &w[2..4], &w[4..8], &w[8..12], &w[12..16]], input, num_classes)
        }
        "vgg-lite" => {
            let w = &VGG_LITE_WIDTHS;
            vgg_arch(name, &[&w[0..2], &w[2..4], &w[4..6]], input, num_classes)
        }
        "resnet18" => resnet_arch(name, &RESNET18_WIDTHS, input, num_classes)?,
        "resnet-lite" => resnet_arch(name, &RESNET_LITE_WIDTHS, input, num_classes)?,
        other => {
            return Err(Error::Config(format!(
                "unknown architecture {other:?} (expected one of {BUILTIN_NAMES:?})"
            )))
        }
    };
    arch.validate()?;
    Ok(arch)
}
