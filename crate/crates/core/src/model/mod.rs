//! The full network: configuration, weights, forward pass and checkpoints.

pub mod checkpoint;
pub mod clip;
pub mod config;
pub mod forward;
pub mod weights;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use clip::VideoClip;
pub use config::{ModelConfig, PreExtraction};
pub use forward::{dualx_transform, embed_input, forward, infer, patchify, reconstruct, unpatchify};
pub use weights::{param_specs, ModelWeights};
