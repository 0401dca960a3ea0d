//! Small dense-tensor engine: the layers the compressor needs, their exact
//! backward passes, and Adam.

mod activation;
mod adam;
mod conv;
pub mod gradcheck;
mod norm;
mod param;
mod resample;
mod scalar;
mod tensor;

pub use activation::{prelu, prelu_backward, Prelu, PreluGrads, PRELU_INIT_SLOPE};
pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads};
pub use norm::{BatchNorm2d, BnCache, BN_EPS, BN_MOMENTUM};
pub(crate) use param::join;
pub use param::{he_uniform, Param, Parameters};
pub use resample::{avg_pool, avg_pool_backward, upsample_nearest, upsample_nearest_backward};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Batch-norm behaviour: batch statistics while training, running
/// statistics at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
