//! Differentiable kernels. Every forward has a hand-written backward.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod gap;
pub mod pool;
pub mod relu;
pub mod softmax;
pub mod upsample;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use gap::{gap_backward, gap_forward};
pub use pool::{maxpool_backward, maxpool_forward, MaxPoolOutput};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{one_hot, softmax, softmax_ce, LOG_CLAMP};
pub use upsample::bilinear_upsample;
