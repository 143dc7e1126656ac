//! Network building blocks on top of the autograd tape.

pub mod attention;
pub mod params;
pub mod rope;

pub use attention::{
    mlp_block, multi_head_attention, transformer_block, AttentionBlockWeights, BlockDims, LayerNorm, Linear,
};
pub use params::{conv_specs, layer_norm_specs, linear_specs, ParamInit, ParamSet, ParamSpec};
pub use rope::{rope_apply, RopeParams, RopeTable, TokenPositions};

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

/// Same-size 3×3 (or 3×3×3) convolution looked up by name.
pub struct Conv<'a, T> {
    pub weight: &'a Var<T>,
    pub bias: &'a Var<T>,
}

impl<'a, T: Real> Conv<'a, T> {
    pub fn from_params(params: &'a ParamSet<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: params.get(&format!("{prefix}.weight"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        if self.weight.shape().len() == 5 {
            tape.conv3d(x, self.weight, self.bias)
        } else {
            tape.conv2d(x, self.weight, self.bias)
        }
    }
}
