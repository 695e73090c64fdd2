//! Learned lossy compression for 8-bit grayscale radiographs.
//!
//! An encoder of strided ConvLSTM layers maps each `N x N` patch to a small
//! latent, which is quantized, entropy coded and written to an `.xrc`
//! container. A decoder of ConvLSTM branches and depth-to-space upsampling
//! reconstructs the patch.
//!
//! ```
//! use xray_codec::{CodecConfig, CodecModel, compression_ratio};
//!
//! let config = CodecConfig::desk(64, 32);
//! assert_eq!(config.latent_shape(1).dims(), [1, 32, 4, 4]);
//! assert_eq!(compression_ratio(&config), 8.0);
//! let model = CodecModel::build(config, 7).unwrap();
//! assert!(model.params().count() > 0);
//! ```

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod container;
pub mod convlstm;
pub mod corpus;
pub mod entropy;
mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod ops;
pub mod params;
pub mod pipeline;
pub mod quantize;
pub mod synthetic;
pub mod tensor;
pub mod tiling;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use autodiff::{Gradients, Graph, Var};
pub use codec::{compression_ratio, CodecConfig, CodecModel};
pub use container::Container;
pub use convlstm::{ConvLstmParams, ConvLstmSpec, ConvLstmState};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalRecord, EvalReport};
pub use image::GrayImage;
pub use metrics::{psnr, ssim, Plane, SsimParams};
pub use ops::{ConvSpec, Padding};
pub use quantize::{dequantize, quantize, QuantizedLatent};
pub use tensor::{Shape, Tensor};
pub use train::{train, TrainReport, TrainRunConfig};

/// The guide in `book/`, compiled so that its snippets run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub mod tensors {}
    #[doc = include_str!("../../../book/src/convlstm.md")]
    pub mod convlstm {}
    #[doc = include_str!("../../../book/src/codec.md")]
    pub mod codec {}
    #[doc = include_str!("../../../book/src/container.md")]
    pub mod container {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
