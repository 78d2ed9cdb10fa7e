//! Dense tensors with a dynamic reverse-mode tape, the layer set needed for
//! small convolutional classifiers, an Adam optimizer, finite-difference
//! gradient checks and a flat checkpoint archive.

pub mod adam;
pub mod archive;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use gradcheck::{check_params, finite_diff_check, ParamCheck};
pub use params::{Bindings, ParamSet};
pub use tape::{softmax, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Seeded generator used throughout for reproducible runs.
pub type EngineRng = rand_chacha::ChaCha8Rng;

/// Forward-only 2-D average pooling over a `[C,H,W]` tensor.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if kernel == 0 || stride == 0 {
        return Err(TensorError::Argument { op: "avg_pool2d", detail: "kernel and stride must be positive".into() });
    }
    if s.len() != 3 || kernel > s[1] || kernel > s[2] {
        return Err(TensorError::Shape { op: "avg_pool2d", detail: format!("window {kernel} over {s:?}") });
    }
    let geom = kernels::PoolGeometry { channels: s[0], height: s[1], width: s[2], kernel, stride };
    let out = kernels::avg_pool2d_forward(&geom, input.data());
    Tensor::new([geom.channels, geom.out_height(), geom.out_width()], out)
}
