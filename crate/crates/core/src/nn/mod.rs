//! Minimal reverse-mode automatic differentiation, restricted to the
//! operators a UNet needs: 3x3 convolution, 2x2 max pooling, nearest
//! upsampling, ReLU, channel concatenation and MSE, plus Adam.

mod adam;
mod checkpoint;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_MAGIC,
};
pub use scalar::Scalar;
pub use tape::{ParamId, ParamStore, Parameter, Tape, Var};
pub use tensor::Tensor4;
