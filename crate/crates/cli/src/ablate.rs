//! Variant suites trained at equal budget and scored on held-out synthetic clips.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use dualx_core::degrade::{bicubic_down4, degrade_clip, DegradationConfig};
use dualx_core::metrics::evaluate;
use dualx_core::model::{infer, PreExtraction};
use dualx_core::resample::upscale_bicubic;
use dualx_core::synth::{scene, SceneConfig};
use dualx_core::topology::{attention_cost, AttentionVariant, GridShape};
use dualx_core::train::{run_stage, TrainConfig};
use dualx_core::{ModelConfig, ModelWeights, Tensor, VideoClip};
use serde::Serialize;
use serde_json::json;

use crate::commands::load_clips;
use crate::config::RunConfig;
use crate::provenance::write_json;
use crate::Suite;

/// Low-resolution extent of the cost columns: 320×180, 16 frames.
pub const COST_INPUT: (usize, usize, usize) = (16, 180, 320);

/// One row of a suite before training.
#[derive(Clone, Debug)]
pub struct Setup {
    pub name: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Run stage 1 before the stage-2 budget.
    pub pretrain: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub name: String,
    pub variant: &'static str,
    pub pre_extraction: PreExtraction,
    pub patch: [usize; 2],
    pub frames: usize,
    pub pretrain: bool,
    pub units: usize,
    pub params: usize,
    pub score_macs: u64,
    pub attention_macs: u64,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn with_variant(base: &ModelConfig, variant: AttentionVariant) -> ModelConfig {
    ModelConfig { variant, ..base.clone() }
}

pub fn setups(cfg: &RunConfig, suite: Suite) -> Vec<Setup> {
    let base = &cfg.model;
    let row = |name, model, pretrain| Setup {
        name,
        model,
        train: cfg.train.clone(),
        pretrain,
    };
    match suite {
        Suite::Table1 => [
            ("spatial", AttentionVariant::Spatial),
            ("temporal", AttentionVariant::Temporal),
            ("spatial_temporal", AttentionVariant::SpatialTemporal),
            ("vertical_temporal", AttentionVariant::VerticalTemporal),
            ("horizontal_temporal", AttentionVariant::HorizontalTemporal),
            ("dual_axial", AttentionVariant::DualAxialSerialVtHt),
        ]
        .into_iter()
        .map(|(n, v)| row(n, with_variant(base, v), false))
        .collect(),
        Suite::Table7 => vec![
            row("ht_then_vt", with_variant(base, AttentionVariant::DualAxialSerialHtVt), false),
            row("interleaved", with_variant(base, AttentionVariant::DualAxialInterleaved), false),
            row(
                "conv3d_extraction",
                ModelConfig {
                    pre_extraction: PreExtraction::Conv3d,
                    ..with_variant(base, AttentionVariant::DualAxialSerialVtHt)
                },
                false,
            ),
            row(
                "vt_then_ht",
                ModelConfig {
                    pre_extraction: PreExtraction::Conv2d,
                    ..with_variant(base, AttentionVariant::DualAxialSerialVtHt)
                },
                false,
            ),
        ],
        Suite::Table8 => {
            let mut half = row("half_frames", base.clone(), true);
            half.train.frames = (cfg.train.frames / 2).max(1);
            vec![
                row("pretrained", base.clone(), true),
                row("patch_4", ModelConfig { patch_h: 4, patch_w: 4, ..base.clone() }, true),
                half,
                row("scratch", base.clone(), false),
            ]
        }
    }
}

/// Equal total block count across a suite.
pub fn check_budget(setups: &[Setup]) -> Result<usize> {
    let units = setups[0].model.transformer_units;
    if let Some(s) = setups.iter().find(|s| s.model.transformer_units != units) {
        bail!("suite rows differ in block count: {} has {} units, expected {units}", s.name, s.model.transformer_units);
    }
    Ok(units)
}

fn cost_columns(model: &ModelConfig) -> Result<(u64, u64)> {
    let (n, h, w) = COST_INPUT;
    let shape = GridShape::new(1, model.embed_dim, n / model.frame_patch, h / model.patch_h, w / model.patch_w);
    let c = attention_cost(model.variant, &shape, &model.transformer_block()?, model.transformer_units)?;
    Ok((c.scores, c.total_macs()))
}

struct Holdout {
    hq: Vec<VideoClip<f32>>,
    bicubic: Vec<Tensor<f32>>,
    degraded: Vec<Tensor<f32>>,
}

fn holdout(cfg: &RunConfig) -> Result<Holdout> {
    let deg = DegradationConfig {
        seed: cfg.eval.holdout_seed,
        ..cfg.degrade.clone()
    };
    let mut h = Holdout {
        hq: Vec::new(),
        bicubic: Vec::new(),
        degraded: Vec::new(),
    };
    for i in 0..cfg.eval.holdout_clips {
        let clip: VideoClip<f32> = scene(&SceneConfig {
            seed: cfg.eval.holdout_seed.wrapping_add(i as u64),
            ..cfg.synth.clone()
        })?;
        h.bicubic.push(bicubic_down4(clip.tensor())?);
        h.degraded.push(degrade_clip(clip.tensor(), &deg, i as u64)?.0);
        h.hq.push(clip);
    }
    if h.hq.is_empty() {
        bail!("eval.holdout_clips must be positive");
    }
    Ok(h)
}

/// Mean PSNR and SSIM of `upscale(lq)` against the held-out references.
fn score(h: &Holdout, stage: u8, upscale: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>) -> Result<(f64, f64)> {
    let inputs = if stage == 2 { &h.degraded } else { &h.bicubic };
    let (mut p, mut s) = (0.0, 0.0);
    for (lq, hq) in inputs.iter().zip(&h.hq) {
        let m = evaluate(&VideoClip::new(upscale(lq)?)?.clamped(), hq)?;
        p += m.psnr;
        s += m.ssim;
    }
    let n = h.hq.len() as f64;
    Ok((p / n, s / n))
}

fn train_row(s: &Setup, data: &[Tensor<f32>], cfg: &RunConfig) -> Result<(ModelWeights<f32>, f64, u8)> {
    let mut w = ModelWeights::init(&s.model, cfg.seed)?;
    let mut stage = s.train.stage;
    if s.pretrain {
        let pre = TrainConfig { stage: 1, ..s.train.clone() };
        w = run_stage(data, &s.model, w, &pre, &cfg.degrade, &mut |_, _| Ok(()))?.weights;
        stage = 2;
    }
    let t = TrainConfig { stage, ..s.train.clone() };
    let out = run_stage(data, &s.model, w, &t, &cfg.degrade, &mut |_, _| Ok(()))?;
    let loss = out.trace.last().map_or(f64::NAN, |r| r.loss);
    Ok((out.weights, loss, stage))
}

/// Train and score every row of `suite`.
pub fn evaluate_suite(cfg: &RunConfig, suite: Suite, data: &[Tensor<f32>]) -> Result<(Vec<Row>, f64)> {
    let setups = setups(cfg, suite);
    let units = check_budget(&setups)?;
    let h = holdout(cfg)?;
    let final_stage = if setups.iter().any(|s| s.pretrain) { 2 } else { cfg.train.stage };
    let (baseline, _) = score(&h, final_stage, |lq| Ok(upscale_bicubic(lq, 4)?))?;
    let mut rows = Vec::new();
    for s in &setups {
        let (w, final_loss, stage) = train_row(s, data, cfg).with_context(|| format!("row {}", s.name))?;
        let (psnr, ssim) = score(&h, stage, |lq| Ok(infer(&s.model, &w, lq)?)).with_context(|| format!("row {}", s.name))?;
        let (score_macs, attention_macs) = cost_columns(&s.model)?;
        rows.push(Row {
            name: s.name.into(),
            variant: s.model.variant.name(),
            pre_extraction: s.model.pre_extraction,
            patch: [s.model.patch_h, s.model.patch_w],
            frames: s.train.frames,
            pretrain: s.pretrain,
            units,
            params: w.num_params(),
            score_macs,
            attention_macs,
            final_loss,
            psnr,
            ssim,
        });
    }
    Ok((rows, baseline))
}

fn table(rows: &[Row], baseline: f64) -> String {
    let mut s = format!(
        "{:<20} {:<24} {:>5} {:>14} {:>14} {:>10} {:>8} {:>7}\n",
        "row", "variant", "units", "score MACs", "attn MACs", "loss", "PSNR", "SSIM"
    );
    for r in rows {
        s += &format!(
            "{:<20} {:<24} {:>5} {:>14.4e} {:>14.4e} {:>10.6} {:>8.3} {:>7.4}\n",
            r.name, r.variant, r.units, r.score_macs as f64, r.attention_macs as f64, r.final_loss, r.psnr, r.ssim
        );
    }
    s + &format!("bicubic baseline PSNR {baseline:.3}")
}

pub fn run(cfg: &RunConfig, suite: Suite, input: Option<PathBuf>, as_json: bool, out: Option<PathBuf>) -> Result<()> {
    let data: Vec<Tensor<f32>> = match input.or_else(|| cfg.paths.hq.clone()) {
        Some(dir) => load_clips(&dir)?.into_iter().map(|(_, c)| c.into_tensor()).collect(),
        None => vec![scene::<f32>(&cfg.synth)?.into_tensor()],
    };
    let (rows, baseline) = evaluate_suite(cfg, suite, &data)?;
    let report = json!({
        "config_hash": cfg.hash(),
        "suite": format!("{suite:?}").to_lowercase(),
        "cost_input": { "frames": COST_INPUT.0, "height": COST_INPUT.1, "width": COST_INPUT.2 },
        "baseline_psnr": baseline,
        "rows": rows,
    });
    let target = out.or_else(|| cfg.paths.reports.as_ref().map(|d| d.join(format!("ablate_{}.json", report["suite"].as_str().unwrap_or("suite")))));
    if let Some(p) = &target {
        write_json(p, &report)?;
    }
    if as_json {
        say!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        say!("{}", table(&rows, baseline));
    }
    Ok(())
}
