//! Differentiable primitives. Each forward has a matching backward.

pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod pool;
pub mod resize;

pub use conv::{conv2d_dilated, conv2d_dilated_backward, ConvGeometry, ConvGrads};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_normalise, BatchNormCache};
pub use pointwise::{
    add, concat_backward, concat_channels, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, softmax_backward, softmax_channels,
};
pub use pool::{maxpool_2x2_ceil, maxpool_backward, pooled_dims};
pub use resize::{bilinear_resize, bilinear_resize_backward};
