//! Densely connected encoder-decoder segmentation network with atrous
//! spatial pyramid pooling, for chip-fine defect maps of photoluminescence
//! wafer images.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod registry;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{BatchNormState, ConvKernel, KernelShape, Mode};
pub use registry::{ParamId, Registry};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::{Shape4, Tensor4};
pub use model::{ForwardPass, Model, ModelConfig, Variant};
