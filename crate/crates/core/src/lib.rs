//! Dynamic multi-scale voxel flow network (DMVFN) for video frame prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autodiff`] and [`kernels`]: dense tensors, a reverse-mode tape and the
//!   convolution/resampling/warping kernels behind it.
//! * [`warp`]: backward warping and voxel-flow fusion.
//! * [`net`]: the multi-scale voxel flow block and the routed block chain.
//! * [`routing`]: the routing network plus STE-Bernoulli and Gumbel sampling.
//! * [`objective`]: Laplacian-pyramid L1 loss with geometric deep supervision.
//! * [`metrics`] and [`flops`]: MS-SSIM, PSNR, evaluation reports and cost accounting.
//! * [`data`]: synthetic moving shapes, PNG sequence I/O and patch sampling.
//! * [`train`]: AdamW, cosine annealing, the training loop and checkpoints.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod flops;
pub mod frame;
pub mod kernels;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod params;
pub mod routing;
pub mod tensor;
pub mod train;
pub mod warp;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use frame::Frame;
pub use tensor::Tensor;
