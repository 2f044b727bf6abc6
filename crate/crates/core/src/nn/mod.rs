//! Layer implementations: forward, backward, and the SGD update.

pub mod conv;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod param;
pub mod pool;
pub mod relu;

pub use conv::{conv_output_size, Conv2d};
pub use linear::Linear;
pub use loss::softmax_xent;
pub use optim::{sgd_step, OptimizerConfig};
pub use param::{LayerParams, Param};
pub use pool::{pool_output_size, GlobalAvgPool, MaxPool2d};
pub use relu::{relu_forward, ActivationCount, Relu};
