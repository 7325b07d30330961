//! Desk-scale 3D convolutional segmentation framework.
//!
//! Everything runs on the CPU over a dense 5-axis tensor type
//! (batch, channel, depth, height, width). The pieces:
//!
//! * [`tensor`] — the tensor type and the primitive numerical kernels
//!   (3D convolution with dilation, transposed convolution, pooling,
//!   batch norm, activations).
//! * [`autodiff`] — a tape recorded eagerly during the forward pass,
//!   walked backwards for gradients, plus a central-difference gradient
//!   checker.
//! * [`blocks`] — composite layers: residual blocks, the feature-variation
//!   block with its contrast-enhancement and position-sensitive branches,
//!   and the ASPP / ResASPP / PASPP pyramid-pooling family.
//! * [`network`] — the encoder/decoder segmentation network assembled from
//!   blocks, configurable over the full ablation space, with checkpoint I/O.
//! * [`loss`] / [`metrics`] — soft Dice + cross-entropy training losses and
//!   Dice/sensitivity/precision evaluation.
//! * [`phantom`] / [`volume`] — synthetic chest phantoms with exact
//!   ground-truth masks, CT-style intensity windowing, and volume file I/O.
//! * [`train`] — the Adam loop with inverse-time learning-rate decay,
//!   logging, checkpointing, and the evaluation driver.
//!
//! All kernels compute each output element with a fixed sequential
//! reduction order, so results are bit-reproducible regardless of how many
//! worker threads run (the `parallel` feature only changes who computes
//! which element).

pub mod autodiff;
pub mod blocks;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Element, Shape5, Tensor};
