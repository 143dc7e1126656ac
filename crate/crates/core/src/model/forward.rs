//! Embedding → dual axial transformer → reconstruction.

use crate::autograd::{Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::model::config::{ModelConfig, PreExtraction};
use crate::nn::attention::{AttentionBlockWeights, BlockDims, Linear};
use crate::nn::params::ParamSet;
use crate::nn::Conv;
use crate::resample::Filter;
use crate::tensor::{Real, Tensor};
use crate::topology::{apply_variant, AttentionVariant, GridShape};

fn dims5(s: &[usize]) -> Result<[usize; 5]> {
    s.try_into().map_err(|_| shape_err!("expected 5 axes, got {s:?}"))
}

fn blocks<'a, T: Real>(
    params: &'a ParamSet<T>,
    prefix: &str,
    depth: usize,
    dims: BlockDims,
) -> Result<Vec<AttentionBlockWeights<'a, T>>> {
    (0..depth)
        .map(|i| AttentionBlockWeights::from_params(params, &format!("{prefix}.{i}"), dims))
        .collect()
}

fn check_divisible(cfg: &ModelConfig, n: usize, h: usize, w: usize) -> Result<()> {
    if n % cfg.frame_patch != 0 || h % cfg.patch_h != 0 || w % cfg.patch_w != 0 {
        return Err(shape_err!(
            "clip extents (N={n}, H={h}, W={w}) are not divisible by the patch ({}, {}, {})",
            cfg.frame_patch,
            cfg.patch_h,
            cfg.patch_w
        ));
    }
    Ok(())
}

/// `[B, d, N, H, W]` features → `[B, nN, nH, nW, d·n·h·w]` flattened patches.
pub fn patchify<T: Real>(tape: &Tape<T>, feats: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let [b, d, n, h, w] = dims5(feats.shape())?;
    check_divisible(cfg, n, h, w)?;
    let (pn, ph, pw) = (cfg.frame_patch, cfg.patch_h, cfg.patch_w);
    let x = tape.reshape(feats, &[b, d, n / pn, pn, h / ph, ph, w / pw, pw])?;
    let x = tape.permute(&x, &[0, 2, 4, 6, 1, 3, 5, 7])?;
    tape.reshape(&x, &[b, n / pn, h / ph, w / pw, d * pn * ph * pw])
}

/// Inverse of [`patchify`], given the feature channel count `d`.
pub fn unpatchify<T: Real>(tape: &Tape<T>, patches: &Var<T>, cfg: &ModelConfig, d: usize) -> Result<Var<T>> {
    let [b, nn, nh, nw, width] = dims5(patches.shape())?;
    let (pn, ph, pw) = (cfg.frame_patch, cfg.patch_h, cfg.patch_w);
    if width != d * pn * ph * pw {
        return Err(shape_err!("patch width {width} is not {d}·{pn}·{ph}·{pw}"));
    }
    let x = tape.reshape(patches, &[b, nn, nh, nw, d, pn, ph, pw])?;
    let x = tape.permute(&x, &[0, 4, 1, 5, 2, 6, 3, 7])?;
    tape.reshape(&x, &[b, d, nn * pn, nh * ph, nw * pw])
}

/// Apply a per-frame 2D op to `[B, C, N, H, W]` by folding frames into the batch.
fn per_frame<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    f: impl FnOnce(&Var<T>) -> Result<Var<T>>,
) -> Result<Var<T>> {
    let [b, c, n, h, w] = dims5(x.shape())?;
    let y = tape.permute(x, &[0, 2, 1, 3, 4])?;
    let y = tape.reshape(&y, &[b * n, c, h, w])?;
    let y = f(&y)?;
    let [_, c2, h2, w2] = y.shape().try_into().map_err(|_| shape_err!("per-frame op must return 4 axes"))?;
    let y = tape.reshape(&y, &[b, n, c2, h2, w2])?;
    tape.permute(&y, &[0, 2, 1, 3, 4])
}

/// Clip `[B, 3, N, H, W]` → token grid `[B, D, nN, nH, nW]`.
pub fn embed_input<T: Real>(tape: &Tape<T>, params: &ParamSet<T>, cfg: &ModelConfig, clip: &Var<T>) -> Result<Var<T>> {
    let [_, c, n, h, w] = dims5(clip.shape())?;
    if c != 3 {
        return Err(shape_err!("clip must have 3 channels, got {c}"));
    }
    check_divisible(cfg, n, h, w)?;
    let conv = Conv::from_params(params, "pre")?;
    let feats = match cfg.pre_extraction {
        PreExtraction::Conv2d => per_frame(tape, clip, |x| conv.forward(tape, x))?,
        PreExtraction::Conv3d => conv.forward(tape, clip)?,
    };
    let embed = blocks(params, "embed.attn", cfg.embed_depth, cfg.embed_block()?)?;
    let feats = if embed.is_empty() {
        feats
    } else {
        apply_variant(tape, &feats, AttentionVariant::Temporal, &embed, cfg.rope_base, cfg.ln_eps)?
    };
    let patches = patchify(tape, &feats, cfg)?;
    let tokens = Linear::from_params(params, "embed.proj")?.forward(tape, &patches)?;
    tape.permute(&tokens, &[0, 4, 1, 2, 3])
}

/// The configured attention variant over the token grid.
pub fn dualx_transform<T: Real>(tape: &Tape<T>, params: &ParamSet<T>, cfg: &ModelConfig, grid: &Var<T>) -> Result<Var<T>> {
    let shape = GridShape::of(grid.shape())?;
    if shape.embed != cfg.embed_dim {
        return Err(config_err!("grid width {} vs configured {}", shape.embed, cfg.embed_dim));
    }
    let units = blocks(params, "transformer", cfg.transformer_units, cfg.transformer_block()?)?;
    apply_variant(tape, grid, cfg.variant, &units, cfg.rope_base, cfg.ln_eps)
}

/// Token grid → `[B, 3, N, sH, sW]`, adding the bicubic upsample of `clip`.
pub fn reconstruct<T: Real>(
    tape: &Tape<T>,
    params: &ParamSet<T>,
    cfg: &ModelConfig,
    grid: &Var<T>,
    clip: &Var<T>,
) -> Result<Var<T>> {
    let recon = blocks(params, "recon.attn", cfg.recon_depth, cfg.transformer_block()?)?;
    let grid = if recon.is_empty() {
        grid.clone()
    } else {
        apply_variant(tape, grid, AttentionVariant::Temporal, &recon, cfg.rope_base, cfg.ln_eps)?
    };
    let tokens = tape.permute(&grid, &[0, 2, 3, 4, 1])?;
    let patches = Linear::from_params(params, "recon.decode")?.forward(tape, &tokens)?;
    let feats = unpatchify(tape, &patches, cfg, cfg.feat_channels)?;
    let out = per_frame(tape, &feats, |x| {
        let mut x = x.clone();
        for i in 0..cfg.upsample_stages() {
            x = Conv::from_params(params, &format!("recon.up.{i}"))?.forward(tape, &x)?;
            x = tape.pixel_shuffle(&x, cfg.shuffle_factor)?;
            x = tape.gelu(&x);
        }
        Conv::from_params(params, "recon.out")?.forward(tape, &x)
    })?;
    let [.., h, w] = *clip.shape() else {
        return Err(shape_err!("clip must be [B, 3, N, H, W], got {:?}", clip.shape()));
    };
    let base = tape.resize(clip, h * cfg.upscale, w * cfg.upscale, Filter::Bicubic)?;
    if base.shape() != out.shape() {
        return Err(shape_err!("reconstruction {:?} vs upsampled input {:?}", out.shape(), base.shape()));
    }
    tape.add(&out, &base)
}

/// Full network on `[B, 3, N, H, W]`. Output is not clamped.
pub fn forward<T: Real>(tape: &Tape<T>, params: &ParamSet<T>, cfg: &ModelConfig, clip: &Var<T>) -> Result<Var<T>> {
    let grid = embed_input(tape, params, cfg, clip)?;
    let grid = dualx_transform(tape, params, cfg, &grid)?;
    reconstruct(tape, params, cfg, &grid, clip)
}

/// Forward pass without gradient recording.
pub fn infer<T: Real>(cfg: &ModelConfig, weights: &crate::model::ModelWeights<T>, clip: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let params = weights.to_params(&tape);
    let x = tape.constant(clip.clone());
    Ok(forward(&tape, &params, cfg, &x)?.into_tensor())
}
