//! Bit-exact simulator for fixed-point DNN training on a time-multiplexed
//! accelerator.
//!
//! - [`qnum`]: `(I,F)` fixed-point values, saturating round-half-even arithmetic.
//! - [`netgraph`]: network description, LeNet presets, shape checking.
//! - [`engine`]: per-layer forward pass and the unrolled backward recursion, generic over [`Scalar`].
//! - [`pesim`]: the PE's four-step TDM datapath and the cycle model.
//! - [`data`]: IDX and CIFAR-10 readers and the seeded batch sampler.
//! - [`oracle`]: independent double-precision reference.
//! - [`cli`]: the `qtrain` command.

pub mod cli;
pub mod data;
pub mod engine;
pub mod netgraph;
pub mod oracle;
pub mod pesim;
pub mod qnum;
pub mod rng;
pub mod scalar;

pub use engine::{TensorQ, TrainState};
pub use netgraph::NetworkConfig;
pub use qnum::{QFormat, QValue};
pub use scalar::Scalar;

/// Bit-exact fixed-point training state.
pub type QTrainState = TrainState<QValue>;
/// Double-precision training state (formats ignored).
pub type F64TrainState = TrainState<f64>;
pub type F32TrainState = TrainState<f32>;
pub type QTensor = TensorQ<QValue>;
pub type F64Tensor = TensorQ<f64>;
