//! Dual axial spatial×temporal transformer for real-world video super-resolution.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`autograd`], [`rng`], [`gradcheck`]: dense tensors, a reverse-mode tape,
//!   the project-wide seeded generator and finite-difference verification.
//! * [`nn`]: convolution, layer norm, rotary attention, MLP and pixel shuffle.
//! * [`topology`]: token-grid views, the attention-variant taxonomy and its
//!   closed-form cost model.
//! * [`model`]: the full network, its configuration, weights and checkpoints.
//! * [`degrade`], [`metrics`], [`tiling`], [`train`]: data synthesis,
//!   evaluation, overlapped inference and the staged trainer.
//! * [`io`], [`synth`]: frame-sequence clips on disk and procedural test scenes.
//! * [`profile`], [`resample`]: closed-form parameter/MAC counts and bicubic resizing.

pub mod autograd;
pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod profile;
pub mod resample;
pub mod synth;
pub mod rng;
pub mod tensor;
pub mod tiling;
pub mod topology;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelWeights, VideoClip};
pub use rng::Rng;
pub use tensor::{Init, Real, Tensor};
