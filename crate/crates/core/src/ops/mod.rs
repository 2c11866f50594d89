//! Forward and backward kernels for the layers of the network.
//!
//! Every backward function computes the exact adjoint of its forward
//! counterpart: given `upstream = ∂ℓ/∂output` it returns `∂ℓ/∂(inputs and
//! parameters)`. Shapes are validated before any arithmetic happens.

pub(crate) mod activation;
mod concat;
mod conv;
pub mod dense;
mod gemm;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use concat::{concat, concat_backward};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_shape, ConvGradients, ConvKernel};
pub use dense::{dense_backward, dense_forward, DenseGradients, DenseLayer};
pub use pool::{pool_backward, pool_forward, PoolMode, PoolSpec};

pub(crate) use conv::conv2d_backward_into;
