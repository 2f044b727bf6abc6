//! MAC and parameter accounting.
//!
//! A convolution with `N` input channels, `M` output channels, a `k×k`
//! kernel and an `O×O` output map costs `O²·N·k²·M` multiply-accumulates and
//! holds `N·M·k²` weights. Fully-connected layers are treated as 1×1
//! convolutions over a 1×1 map. ReLU, pooling and softmax cost nothing.

use serde::{Deserialize, Serialize};

use crate::arch::{propagate_shapes, ArchSpec, LayerSpec};
use crate::error::{Error, Result};

/// `O²·N·k²·M`.
pub fn layer_macs(n: u64, m: u64, k: u64, o: u64) -> u64 {
    o * o * n * k * k * m
}

/// `N·M·k²`.
pub fn layer_params(n: u64, m: u64, k: u64) -> u64 {
    n * m * k * k
}

/// Which optional terms enter the totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConventions {
    /// Add one parameter per output channel for layers that carry a bias.
    pub include_bias: bool,
    /// Count residual 1×1 projection convs.
    pub count_projections: bool,
}

impl Default for CostConventions {
    fn default() -> Self {
        CostConventions {
            include_bias: false,
            count_projections: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Index of the owning entry in `ArchSpec::layers`.
    pub layer_index: usize,
    pub name: String,
    /// Input channels (fc: flattened input features).
    pub n: u64,
    /// Output channels.
    pub m: u64,
    pub k: u64,
    /// Input spatial size `(height, width)`.
    pub input_size: (u64, u64),
    /// Output spatial size `(height, width)`.
    pub output_size: (u64, u64),
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub arch: String,
    pub conventions: CostConventions,
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
    /// Baseline MACs over these MACs; set by [`CostReport::against`].
    pub ops_reduction: Option<f64>,
    /// Baseline parameters over these parameters.
    pub params_reduction: Option<f64>,
}

impl CostReport {
    /// Fills in the reduction ratios relative to `baseline`.
    pub fn against(mut self, baseline: &CostReport) -> Result<Self> {
        self.ops_reduction = Some(ops_reduction(baseline, &self)?);
        self.params_reduction = Some(params_reduction(baseline, &self)?);
        Ok(self)
    }
}

struct Builder {
    conv: CostConventions,
    rows: Vec<LayerCost>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        layer_index: usize,
        name: String,
        n: usize,
        m: usize,
        k: usize,
        input: (usize, usize),
        output: (usize, usize),
        bias: bool,
    ) {
        let (n, m, k) = (n as u64, m as u64, k as u64);
        let (oh, ow) = (output.0 as u64, output.1 as u64);
        let macs = oh * ow * n * k * k * m;
        let mut params = layer_params(n, m, k);
        if bias && self.conv.include_bias {
            params += m;
        }
        self.rows.push(LayerCost {
            layer_index,
            name,
            n,
            m,
            k,
            input_size: (input.0 as u64, input.1 as u64),
            output_size: (oh, ow),
            macs,
            params,
        });
    }
}

pub fn network_cost(arch: &ArchSpec) -> Result<CostReport> {
    network_cost_with(arch, CostConventions::default())
}

/// Per-layer costs for every conv, residual conv (and projection) and fc layer.
pub fn network_cost_with(arch: &ArchSpec, conventions: CostConventions) -> Result<CostReport> {
    let shapes = propagate_shapes(arch)?;
    let mut b = Builder {
        conv: conventions,
        rows: Vec::new(),
    };
    for (i, (layer, s)) in arch.layers.iter().zip(&shapes).enumerate() {
        let hw_in = (s.input.height, s.input.width);
        let hw_out = (s.output.height, s.output.width);
        match layer {
            LayerSpec::Conv {
                out_channels, kernel, ..
            } => b.push(i, format!("conv{i}"), s.input.channels, *out_channels, *kernel, hw_in, hw_out, true),
            LayerSpec::Fc { out_features } => {
                b.push(i, format!("fc{i}"), s.input.numel(), *out_features, 1, (1, 1), (1, 1), true)
            }
            LayerSpec::ResidualBlock(block) => {
                let n = s.input.channels;
                b.push(i, format!("block{i}.conv1"), n, block.conv1_channels, 3, hw_in, hw_out, true);
                b.push(
                    i,
                    format!("block{i}.conv2"),
                    block.conv1_channels,
                    block.conv2_channels,
                    3,
                    hw_out,
                    hw_out,
                    true,
                );
                if block.projection && conventions.count_projections {
                    b.push(i, format!("block{i}.projection"), n, block.conv2_channels, 1, hw_in, hw_out, false);
                }
            }
            LayerSpec::Relu { .. } | LayerSpec::Maxpool { .. } | LayerSpec::GlobalAvgpool => {}
        }
    }
    let total_macs = b.rows.iter().map(|r| r.macs).sum();
    let total_params = b.rows.iter().map(|r| r.params).sum();
    Ok(CostReport {
        arch: arch.name.clone(),
        conventions,
        per_layer: b.rows,
        total_macs,
        total_params,
        ops_reduction: None,
        params_reduction: None,
    })
}

/// Baseline total MACs over pruned total MACs.
pub fn ops_reduction(baseline: &CostReport, pruned: &CostReport) -> Result<f64> {
    ratio(baseline.total_macs, pruned.total_macs, "MACs")
}

/// Baseline total parameters over pruned total parameters.
pub fn params_reduction(baseline: &CostReport, pruned: &CostReport) -> Result<f64> {
    ratio(baseline.total_params, pruned.total_params, "parameters")
}

fn ratio(base: u64, pruned: u64, what: &str) -> Result<f64> {
    if base == 0 || pruned == 0 {
        return Err(Error::InvalidArgument(format!("reduction needs nonzero {what} (baseline {base}, pruned {pruned})")));
    }
    Ok(base as f64 / pruned as f64)
}

/// One network in a prune-in-training chain: its reduction factor relative to
/// the baseline and the epochs it was trained for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityStage {
    pub reduction: f64,
    pub epochs: f64,
}

impl ComplexityStage {
    pub const fn new(reduction: f64, epochs: f64) -> Self {
        ComplexityStage { reduction, epochs }
    }
}

/// `Σ epochs_i / ops_reduction_i` over the chain of trained networks.
pub fn training_complexity(stages: &[ComplexityStage]) -> Result<f64> {
    if stages.is_empty() {
        return Err(Error::InvalidArgument("complexity needs at least one stage".into()));
    }
    let mut total = 0.0;
    for (i, s) in stages.iter().enumerate() {
        if !(s.reduction > 0.0 && s.reduction.is_finite()) {
            return Err(Error::InvalidArgument(format!("stage {i}: reduction {} must be > 0", s.reduction)));
        }
        if !(s.epochs >= 0.0 && s.epochs.is_finite()) {
            return Err(Error::InvalidArgument(format!("stage {i}: epochs {} must be >= 0", s.epochs)));
        }
        total += s.epochs / s.reduction;
    }
    Ok(total)
}

/// Same sum with parameter reductions in place of OPS reductions.
pub fn training_memory_complexity(stages: &[ComplexityStage]) -> Result<f64> {
    training_complexity(stages)
}

/// `iterations × batch_size / train_size`.
pub fn iterations_to_epochs(iterations: u64, batch_size: u64, train_size: u64) -> Result<f64> {
    if batch_size == 0 || train_size == 0 {
        return Err(Error::InvalidArgument("batch size and training-set size must be > 0".into()));
    }
    Ok(iterations as f64 * batch_size as f64 / train_size as f64)
}
