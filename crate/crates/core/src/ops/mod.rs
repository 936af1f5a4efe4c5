//! Differentiable operators with hand-written backward passes.

mod activation;
mod conv;
mod gradcheck;
mod norm;
mod sample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{
    conv2d, conv2d_backward, conv_out_len, deconv2d, deconv2d_backward, deconv_out_len, ConvSpec,
};
pub use gradcheck::finite_diff_check;
pub use norm::LayerNorm;
pub use sample::{bilinear_sample, bilinear_tap, BilinearTap};
