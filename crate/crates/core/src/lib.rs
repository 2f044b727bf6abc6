//! Activation-density driven pruning in training.
//!
//! A small CPU neural-network engine (conv, ReLU, max-pool, residual blocks,
//! fc, softmax cross-entropy, SGD) instrumented to count positive activations
//! per layer. Networks are trained until their activation density saturates,
//! every prunable layer is resized to `round(density × width)`, and the
//! smaller network is re-initialized and trained again. A cost model gives
//! MAC/parameter counts, reduction ratios and training-complexity sums.
//!
//! The engine is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); aliases for both are re-exported here.

pub mod ae;
pub mod arch;
pub mod checkpoint;
pub mod colormap;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod prune;
pub mod rng;
pub mod scalar;
pub mod tables;
pub mod tensor;
pub mod train;

pub use ae::{AeAccumulator, AeHistory, AeSample};
pub use arch::{builtin_arch, propagate_shapes, resize_arch, ArchSpec, LayerSpec, ResidualBlockSpec, Shape3};
pub use config::RunConfig;
pub use cost::{network_cost, training_complexity, training_memory_complexity, ComplexityStage, CostReport};
pub use data::{BatchPlan, Dataset};
pub use error::{Error, Result};
pub use model::{Mode, Model};
pub use nn::OptimizerConfig;
pub use prune::{run_pruning_in_training, AeProfile, PruneCriteria, PruneEvent, StageRecord};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
