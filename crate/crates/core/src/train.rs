//! Staged training: bicubic pretraining, then degradation finetuning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::degrade::{bicubic_down4, degrade_clip, DegradationConfig};
use crate::error::{config_err, shape_err, Error, Result};
use crate::metrics::charbonnier_loss;
use crate::model::{forward, ModelConfig, ModelWeights};
use crate::rng::{mix_seed, Rng};
use crate::tensor::{Real, Tensor};

/// How low-quality inputs are synthesized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Plain bicubic ×¼ reduction.
    Bicubic,
    /// Random first-order degradation.
    Degraded,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Bicubic => 1,
            Stage::Degraded => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Bicubic),
            2 => Ok(Stage::Degraded),
            _ => Err(config_err!("training stage must be 1 or 2, got {n}")),
        }
    }
}

/// Weights of the pixel, perceptual and adversarial loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pix: f64,
    pub per: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pix: 1e-2,
            per: 1.0,
            adv: 5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; zero disables clipping.
    pub grad_clip: f64,
    pub batch: usize,
    /// Side of the square high-quality crop.
    pub crop: usize,
    pub frames: usize,
    pub iterations: usize,
    /// Checkpoint period in iterations; zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            batch: 1,
            crop: 64,
            frames: 16,
            iterations: 500,
            checkpoint_every: 0,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn stage(&self) -> Result<Stage> {
        Stage::from_number(self.stage)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.stage()?;
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("invalid optimizer hyperparameters"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(config_err!("eps must be positive; weight_decay and grad_clip nonnegative"));
        }
        let lw = self.loss_weights;
        if lw.pix < 0.0 || lw.per < 0.0 || lw.adv < 0.0 {
            return Err(config_err!("loss weights must be nonnegative"));
        }
        if self.batch == 0 || self.frames == 0 || self.crop == 0 {
            return Err(config_err!("batch, frames and crop must be positive"));
        }
        let (ch, cw) = (model.upscale * model.patch_h, model.upscale * model.patch_w);
        if self.crop % ch != 0 || self.crop % cw != 0 {
            return Err(config_err!("crop {} must be divisible by {ch} and {cw}", self.crop));
        }
        if self.frames % model.frame_patch != 0 {
            return Err(config_err!("frames {} must be divisible by {}", self.frames, model.frame_patch));
        }
        Ok(())
    }
}

/// A loss term over a prediction and a target.
pub trait LossTerm<T: Real> {
    fn name(&self) -> &str;
    fn eval(&self, tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>>;
}

pub struct Charbonnier;

impl<T: Real> LossTerm<T> for Charbonnier {
    fn name(&self) -> &str {
        "charbonnier"
    }

    fn eval(&self, tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
        charbonnier_loss(tape, pred, target)
    }
}

/// `Σ λ_i · term_i(pred, target)`.
pub fn combined_loss<T: Real>(
    tape: &Tape<T>,
    pred: &Var<T>,
    target: &Var<T>,
    terms: &[(f64, &dyn LossTerm<T>)],
) -> Result<Var<T>> {
    let mut total: Option<Var<T>> = None;
    for &(lambda, term) in terms {
        if !(lambda >= 0.0) {
            return Err(config_err!("weight {lambda} of {} must be nonnegative", term.name()));
        }
        let v = tape.scale(&term.eval(tape, pred, target)?, T::of(lambda));
        total = Some(match total {
            Some(t) => tape.add(&t, &v)?,
            None => v,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero()))))
}

/// Per-array first and second moments.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }

    /// One bias-corrected update with decoupled weight decay:
    /// `w ← w − lr·(m̂/(√v̂ + eps) + wd·w)`.
    pub fn step<T: Real>(
        &self,
        weights: &mut ModelWeights<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        state: &mut AdamState<T>,
    ) -> Result<()> {
        for (name, w) in weights.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| shape_err!("no gradient for {name}"))?;
            if g.shape() != w.shape() {
                return Err(shape_err!("gradient of {name} is {:?}, weight is {:?}", g.shape(), w.shape()));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, w) in weights.iter_mut() {
            let g = &grads[name];
            let m = state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(w.shape()).expect("weight shapes are valid"));
            let v = state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(w.shape()).expect("weight shapes are valid"));
            let (wd, md, vd, gd) = (w.data_mut(), m.data_mut(), v.data_mut(), g.data());
            for i in 0..wd.len() {
                let gi = gd[i].as_f64();
                let mi = b1 * md[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * vd[i].as_f64() + (1.0 - b2) * gi * gi;
                md[i] = T::of(mi);
                vd[i] = T::of(vi);
                let wi = wd[i].as_f64();
                let update = (mi / c1) / ((vi / c2).sqrt() + self.eps) + self.weight_decay * wi;
                wd[i] = T::of(wi - self.lr * update);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over every gradient array.
pub fn global_norm<T: Real>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One loss-trace record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: u8,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// A high-quality training crop and its low-quality input.
pub struct Sample {
    pub lq: Tensor<f32>,
    pub hq: Tensor<f32>,
}

fn crop_clip(clip: &Tensor<f32>, t0: usize, nt: usize, y0: usize, x0: usize, side: usize) -> Result<Tensor<f32>> {
    let [1, c, n, h, w] = *clip.shape() else {
        return Err(shape_err!("training clips are [1, 3, N, H, W], got {:?}", clip.shape()));
    };
    let d = clip.data();
    let mut out = Vec::with_capacity(c * nt * side * side);
    for ch in 0..c {
        for f in t0..t0 + nt {
            for y in y0..y0 + side {
                let s = ((ch * n + f) * h + y) * w + x0;
                out.extend_from_slice(&d[s..s + side]);
            }
        }
    }
    Tensor::new(vec![1, c, nt, side, side], out)
}

fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let mut shape = items[0].shape().to_vec();
    shape[0] = items.len();
    Tensor::new(shape, items.iter().flat_map(|t| t.data().iter().copied()).collect())
}

/// Draw the sample of `iteration`: a random clip, a random frame window and an
/// aligned random crop per batch item.
pub fn draw_sample(
    dataset: &[Tensor<f32>],
    tcfg: &TrainConfig,
    deg: &DegradationConfig,
    iteration: usize,
) -> Result<Sample> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no training clips".into()));
    }
    let stage = tcfg.stage()?;
    let mut rng = Rng::new(mix_seed(tcfg.seed, iteration as u64));
    let mut lqs = Vec::with_capacity(tcfg.batch);
    let mut hqs = Vec::with_capacity(tcfg.batch);
    for b in 0..tcfg.batch {
        let clip = &dataset[rng.index(dataset.len())];
        let &[_, _, n, h, w] = clip.shape() else {
            return Err(shape_err!("training clips are [1, 3, N, H, W], got {:?}", clip.shape()));
        };
        if n < tcfg.frames || h < tcfg.crop || w < tcfg.crop {
            return Err(shape_err!(
                "clip {n}×{h}×{w} is smaller than the {}-frame {}px crop",
                tcfg.frames,
                tcfg.crop
            ));
        }
        let t0 = rng.index(n - tcfg.frames + 1);
        let y0 = rng.index((h - tcfg.crop) / 4 + 1) * 4;
        let x0 = rng.index((w - tcfg.crop) / 4 + 1) * 4;
        let hq = crop_clip(clip, t0, tcfg.frames, y0, x0, tcfg.crop)?;
        let lq = match stage {
            Stage::Bicubic => bicubic_down4(&hq)?,
            Stage::Degraded => {
                let index = (iteration * tcfg.batch + b) as u64;
                let cfg = DegradationConfig {
                    seed: mix_seed(deg.seed, tcfg.seed),
                    ..deg.clone()
                };
                degrade_clip(&hq, &cfg, index)?.0
            }
        };
        lqs.push(lq);
        hqs.push(hq);
    }
    Ok(Sample {
        lq: stack(&lqs)?,
        hq: stack(&hqs)?,
    })
}

/// Forward, Charbonnier loss and gradients of every weight.
pub fn loss_and_grads<T: Real>(
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
    lq: &Tensor<T>,
    hq: &Tensor<T>,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let tape = Tape::new();
    let params = weights.to_params(&tape);
    let pred = forward(&tape, &params, cfg, &tape.constant(lq.clone()))?;
    let loss = charbonnier_loss(&tape, &pred, &tape.constant(hq.clone()))?;
    let value = loss.value().item().as_f64();
    let grads = tape.backward(&loss)?;
    let map = params.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect();
    Ok((value, map))
}

/// Result of [`run_stage`].
pub struct TrainOutcome {
    pub weights: ModelWeights<f32>,
    pub trace: Vec<StepRecord>,
}

/// Train for `tcfg.iterations` steps. `on_step` sees every record and the
/// weights after the update, and may write checkpoints or traces.
pub fn run_stage(
    dataset: &[Tensor<f32>],
    cfg: &ModelConfig,
    mut weights: ModelWeights<f32>,
    tcfg: &TrainConfig,
    deg: &DegradationConfig,
    on_step: &mut dyn FnMut(&StepRecord, &ModelWeights<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate(cfg)?;
    deg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no training clips".into()));
    }
    let opt = AdamW::from_config(tcfg);
    let mut state = AdamState::default();
    let mut trace = Vec::with_capacity(tcfg.iterations);
    for it in 0..tcfg.iterations {
        let sample = draw_sample(dataset, tcfg, deg, it)?;
        let (loss, mut grads) = loss_and_grads(cfg, &weights, &sample.lq, &sample.hq)?;
        let grad_norm = clip_grad_norm(&mut grads, tcfg.grad_clip);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged(format!(
                "iteration {it}: loss {loss}, gradient norm {grad_norm}"
            )));
        }
        opt.step(&mut weights, &grads, &mut state)?;
        let record = StepRecord {
            stage: tcfg.stage,
            iteration: it,
            loss,
            grad_norm,
        };
        on_step(&record, &weights)?;
        trace.push(record);
    }
    Ok(TrainOutcome { weights, trace })
}
