use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::attention::BlockDims;
use crate::nn::rope::DEFAULT_BASE;
use crate::topology::AttentionVariant;

/// Shallow feature extractor applied before the temporal embedding attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreExtraction {
    /// Per-frame 3×3 convolution.
    Conv2d,
    /// 3×3×3 convolution across frames.
    Conv3d,
}

/// Every architectural hyperparameter. Defaults are the full-size network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub upscale: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub frame_patch: usize,
    /// Channels `d` of the shallow features.
    pub feat_channels: usize,
    pub pre_extraction: PreExtraction,
    pub embed_depth: usize,
    pub embed_heads: usize,
    pub embed_mlp: usize,
    /// Token width `D` of the transformer and reconstruction attention.
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub variant: AttentionVariant,
    /// Total attention blocks of the transformer; two-mechanism variants split them evenly.
    pub transformer_units: usize,
    pub recon_depth: usize,
    pub recon_channels: usize,
    pub shuffle_factor: usize,
    pub rope_base: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 3] = ["full", "desk", "tiny"];

    /// Full-size network.
    pub fn full() -> Self {
        Self {
            upscale: 4,
            patch_h: 2,
            patch_w: 2,
            frame_patch: 1,
            feat_channels: 64,
            pre_extraction: PreExtraction::Conv2d,
            embed_depth: 2,
            embed_heads: 4,
            embed_mlp: 128,
            embed_dim: 1280,
            heads: 10,
            mlp_dim: 2560,
            variant: AttentionVariant::DualAxialSerialVtHt,
            transformer_units: 12,
            recon_depth: 2,
            recon_channels: 64,
            shuffle_factor: 2,
            rope_base: DEFAULT_BASE,
            ln_eps: 1e-5,
        }
    }

    /// Scaled-down network for CPU training and experiments.
    pub fn desk() -> Self {
        Self {
            feat_channels: 16,
            embed_depth: 1,
            embed_heads: 4,
            embed_mlp: 32,
            embed_dim: 64,
            heads: 4,
            mlp_dim: 128,
            transformer_units: 2,
            recon_depth: 1,
            recon_channels: 16,
            ..Self::full()
        }
    }

    /// Under ten thousand parameters; sized for exhaustive finite differences.
    pub fn tiny() -> Self {
        Self {
            feat_channels: 4,
            embed_depth: 1,
            embed_heads: 2,
            embed_mlp: 8,
            embed_dim: 16,
            heads: 2,
            mlp_dim: 32,
            transformer_units: 2,
            recon_depth: 1,
            recon_channels: 4,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(config_err!("unknown model preset {name:?}; expected one of {:?}", Self::PRESETS)),
        }
    }

    /// Number of `[conv → pixel shuffle]` upsampling stages.
    pub fn upsample_stages(&self) -> usize {
        let mut s = 1;
        let mut n = 0;
        while s < self.upscale {
            s *= self.shuffle_factor;
            n += 1;
        }
        n
    }

    /// Flattened patch width `d·n·h·w`.
    pub fn patch_width(&self) -> usize {
        self.feat_channels * self.frame_patch * self.patch_h * self.patch_w
    }

    pub fn embed_block(&self) -> Result<BlockDims> {
        BlockDims::new(self.feat_channels, self.embed_heads, self.embed_mlp)
    }

    pub fn transformer_block(&self) -> Result<BlockDims> {
        BlockDims::new(self.embed_dim, self.heads, self.mlp_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("upscale", self.upscale),
            ("patch_h", self.patch_h),
            ("patch_w", self.patch_w),
            ("frame_patch", self.frame_patch),
            ("feat_channels", self.feat_channels),
            ("embed_dim", self.embed_dim),
            ("recon_channels", self.recon_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_err!("{name} must be positive"));
            }
        }
        if self.shuffle_factor < 2 {
            return Err(config_err!("shuffle_factor must be at least 2"));
        }
        if self.shuffle_factor.pow(self.upsample_stages() as u32) != self.upscale {
            return Err(config_err!(
                "upscale {} is not a power of shuffle_factor {}",
                self.upscale,
                self.shuffle_factor
            ));
        }
        let embed = self.embed_block()?;
        if embed.head_dim() % 2 != 0 {
            return Err(config_err!("embedding head width {} must be even", embed.head_dim()));
        }
        let tr = self.transformer_block()?;
        let two_axis = self.variant != AttentionVariant::Temporal;
        if tr.head_dim() % if two_axis { 4 } else { 2 } != 0 {
            return Err(config_err!(
                "transformer head width {} cannot carry rotary pairs on every axis",
                tr.head_dim()
            ));
        }
        self.variant.schedule(self.transformer_units)?;
        if !(self.rope_base > 0.0) || !(self.ln_eps > 0.0) {
            return Err(config_err!("rope_base and ln_eps must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in ModelConfig::PRESETS {
            ModelConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn upscale_must_be_power_of_shuffle() {
        let mut c = ModelConfig::desk();
        assert_eq!(c.upsample_stages(), 2);
        c.upscale = 3;
        assert!(c.validate().is_err());
        c.upscale = 8;
        assert_eq!(c.upsample_stages(), 3);
        c.validate().unwrap();
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut c = ModelConfig::full();
        c.heads = 12;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::full();
        c.embed_heads = 12;
        assert!(c.validate().is_err());
    }

    #[test]
    fn odd_unit_split_rejected() {
        let mut c = ModelConfig::desk();
        c.transformer_units = 3;
        assert!(c.validate().is_err());
        c.variant = AttentionVariant::Spatial;
        c.validate().unwrap();
    }
}
