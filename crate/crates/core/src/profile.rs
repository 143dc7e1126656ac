//! Closed-form parameter and multiply-accumulate counts of the network.
//!
//! One MAC is one multiply-accumulate. Counted: convolutions, the token
//! embedding and decoding projections, the q/k/v/output projections, the
//! attention score (`q·kᵀ`) and value (`softmax·v`) products, and the MLPs.
//! Not counted: biases, normalization, softmax, rotary encoding, GELU, pixel
//! shuffle, and the bicubic skip path.

use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelConfig, PreExtraction};
use crate::nn::attention::BlockDims;
use crate::topology::{attention_cost, block_cost, AttentionVariant, CostReport, GridShape, View};

pub const COUNTING_CONVENTION: &str = "1 MAC = one multiply-accumulate; counts convolutions, \
embedding/decoding projections, q/k/v/out projections, attention score and value matmuls, and MLPs; \
excludes biases, layer norm, softmax, rotary encoding, GELU, pixel shuffle and the bicubic skip";

/// Published parameter count of the full-size network.
pub const REFERENCE_PARAMS: f64 = 127.95e6;
/// Published MAC count on a 16-frame 64×64 input.
pub const REFERENCE_MACS: f64 = 99.41e9;
/// Input shape of the published MAC count, `[B, 3, N, H, W]`.
pub const REFERENCE_INPUT: [usize; 5] = [1, 3, 16, 64, 64];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleCost {
    pub module: String,
    pub params: u64,
    pub macs: u64,
    /// Component split for attention stacks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<CostReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub reference_params: f64,
    pub reference_macs: f64,
    pub params_delta_pct: f64,
    pub macs_delta_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileReport {
    pub input_shape: [usize; 5],
    pub modules: Vec<ModuleCost>,
    pub total_params: u64,
    pub total_macs: u64,
    pub convention: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

fn conv_params(c_in: usize, c_out: usize, taps: usize) -> u64 {
    (c_in * c_out * taps + c_out) as u64
}

fn linear_params(i: usize, o: usize) -> u64 {
    (i * o + o) as u64
}

fn module(name: &str, params: u64, macs: u64) -> ModuleCost {
    ModuleCost {
        module: name.into(),
        params,
        macs,
        attention: None,
    }
}

fn stack(name: &str, cost: CostReport) -> ModuleCost {
    ModuleCost {
        module: name.into(),
        params: cost.params,
        macs: cost.total_macs(),
        attention: Some(cost),
    }
}

/// Count every module of `cfg` on an input of `[B, 3, N, H, W]`.
pub fn profile(cfg: &ModelConfig, input: [usize; 5]) -> Result<ProfileReport> {
    cfg.validate()?;
    let [b, _, n, h, w] = input;
    let d = cfg.feat_channels;
    let taps = match cfg.pre_extraction {
        PreExtraction::Conv2d => 9,
        PreExtraction::Conv3d => 27,
    };
    let pixels = (b * n * h * w) as u64;
    let mut modules = vec![module("pre_conv", conv_params(3, d, taps), pixels * (3 * taps * d) as u64)];

    let embed_dims = cfg.embed_block()?;
    let feat_grid = GridShape::new(b, d, n, h, w);
    let embed = (0..cfg.embed_depth).fold(CostReport::default(), |acc, _| {
        acc.add(&block_cost(View::Temporal, &feat_grid, &embed_dims))
    });
    modules.push(stack("embed_attention", embed));

    let p = cfg.patch_width();
    let grid = GridShape::new(
        b,
        cfg.embed_dim,
        n / cfg.frame_patch,
        h / cfg.patch_h,
        w / cfg.patch_w,
    );
    let tokens = grid.tokens() as u64;
    modules.push(module("embed_proj", linear_params(p, cfg.embed_dim), tokens * (p * cfg.embed_dim) as u64));

    let dims: BlockDims = cfg.transformer_block()?;
    modules.push(stack("transformer", attention_cost(cfg.variant, &grid, &dims, cfg.transformer_units)?));
    let recon = if cfg.recon_depth == 0 {
        CostReport::default()
    } else {
        attention_cost(AttentionVariant::Temporal, &grid, &dims, cfg.recon_depth)?
    };
    modules.push(stack("recon_attention", recon));
    modules.push(module("decode", linear_params(cfg.embed_dim, p), tokens * (cfg.embed_dim * p) as u64));

    let r2 = cfg.shuffle_factor * cfg.shuffle_factor;
    let c = cfg.recon_channels;
    let (mut c_in, mut params, mut macs) = (d, 0u64, 0u64);
    let mut area = (h * w) as u64;
    for _ in 0..cfg.upsample_stages() {
        params += conv_params(c_in, r2 * c, 9);
        macs += (b * n) as u64 * area * (c_in * 9 * r2 * c) as u64;
        area *= r2 as u64;
        c_in = c;
    }
    modules.push(module("upsample", params, macs));
    modules.push(module("out_conv", conv_params(c_in, 3, 9), (b * n) as u64 * area * (c_in * 9 * 3) as u64));

    let total_params = modules.iter().map(|m| m.params).sum();
    let total_macs = modules.iter().map(|m| m.macs).sum();
    Ok(ProfileReport {
        input_shape: input,
        modules,
        total_params,
        total_macs,
        convention: COUNTING_CONVENTION,
        comparison: None,
    })
}

impl ProfileReport {
    /// Attach percentage deltas against the published figures.
    pub fn with_reference(mut self) -> Self {
        let pct = |v: u64, r: f64| (v as f64 - r) / r * 100.0;
        self.comparison = Some(Comparison {
            reference_params: REFERENCE_PARAMS,
            reference_macs: REFERENCE_MACS,
            params_delta_pct: pct(self.total_params, REFERENCE_PARAMS),
            macs_delta_pct: pct(self.total_macs, REFERENCE_MACS),
        });
        self
    }

    pub fn module(&self, name: &str) -> Option<&ModuleCost> {
        self.modules.iter().find(|m| m.module == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelWeights;

    #[test]
    fn parameter_count_matches_weights() {
        for p in ModelConfig::PRESETS {
            let cfg = ModelConfig::preset(p).unwrap();
            let counted = profile(&cfg, [1, 3, 2, 8, 8]).unwrap().total_params;
            let specs: usize = crate::model::param_specs(&cfg).unwrap().iter().map(|s| s.numel()).sum();
            assert_eq!(counted, specs as u64, "{p}");
        }
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::<f32>::zeros(&cfg).unwrap();
        assert_eq!(profile(&cfg, [1, 3, 1, 2, 2]).unwrap().total_params, w.num_params() as u64);
    }

    #[test]
    fn totals_are_sums() {
        let r = profile(&ModelConfig::desk(), [1, 3, 4, 16, 16]).unwrap();
        assert_eq!(r.total_macs, r.modules.iter().map(|m| m.macs).sum::<u64>());
        let t = r.module("transformer").unwrap();
        assert_eq!(t.macs, t.attention.unwrap().total_macs());
    }

    #[test]
    fn transformer_macs_linear_in_depth() {
        let mut cfg = ModelConfig::desk();
        let a = profile(&cfg, [1, 3, 4, 16, 16]).unwrap();
        cfg.transformer_units *= 2;
        let b = profile(&cfg, [1, 3, 4, 16, 16]).unwrap();
        let (ta, tb) = (a.module("transformer").unwrap(), b.module("transformer").unwrap());
        assert_eq!(tb.macs, 2 * ta.macs);
        assert_eq!(b.total_macs - a.total_macs, ta.macs);
    }

    #[test]
    fn reference_comparison_is_attached() {
        let r = profile(&ModelConfig::full(), REFERENCE_INPUT).unwrap().with_reference();
        let c = r.comparison.unwrap();
        assert_eq!(c.reference_macs, 99.41e9);
        assert_eq!(c.reference_params, 127.95e6);
    }
}
