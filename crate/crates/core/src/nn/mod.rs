//! Forward and backward passes for every layer kind of the architecture.
//!
//! Backpropagation is explicit: each forward returns a cache that the
//! matching backward consumes.

mod activation;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid, softmax, softmax_slice, ReluCache};
pub use conv::{conv2d_backward, conv2d_forward, ConvCache, ConvGrads, ConvParams};
pub(crate) use conv::conv2d_backward_parts;
pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads, DenseParams};
pub use dropout::{check_rate as check_dropout_rate, dropout_backward, dropout_forward, DropoutCache};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolCache};
