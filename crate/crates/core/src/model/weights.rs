use std::collections::BTreeMap;

use crate::autograd::Tape;
use crate::error::{config_err, Result};
use crate::model::config::{ModelConfig, PreExtraction};
use crate::nn::params::{conv_specs, linear_specs, ParamInit, ParamSet, ParamSpec};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Every learnable array of `cfg`, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let d = cfg.feat_channels;
    let pre_dims = match cfg.pre_extraction {
        PreExtraction::Conv2d => 2,
        PreExtraction::Conv3d => 3,
    };
    let mut v = conv_specs("pre", 3, d, pre_dims, false);
    let embed = cfg.embed_block()?;
    for i in 0..cfg.embed_depth {
        v.extend(embed.specs(&format!("embed.attn.{i}")));
    }
    v.extend(linear_specs("embed.proj", cfg.patch_width(), cfg.embed_dim, ParamInit::Projection));
    let block = cfg.transformer_block()?;
    for i in 0..cfg.transformer_units {
        v.extend(block.specs(&format!("transformer.{i}")));
    }
    for i in 0..cfg.recon_depth {
        v.extend(block.specs(&format!("recon.attn.{i}")));
    }
    v.extend(linear_specs("recon.decode", cfg.embed_dim, cfg.patch_width(), ParamInit::Projection));
    let r2 = cfg.shuffle_factor * cfg.shuffle_factor;
    let mut c_in = d;
    for i in 0..cfg.upsample_stages() {
        v.extend(conv_specs(&format!("recon.up.{i}"), c_in, r2 * cfg.recon_channels, 2, false));
        c_in = cfg.recon_channels;
    }
    v.extend(conv_specs("recon.out", c_in, 3, 2, true));
    Ok(v)
}

/// Named learnable arrays of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ModelWeights<T> {
    /// Seeded initialization following each array's init rule.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut tensors = BTreeMap::new();
        for s in param_specs(cfg)? {
            let t = s.initialize(&mut rng)?;
            tensors.insert(s.name, t);
        }
        Ok(Self { tensors })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let tensors = param_specs(cfg)?
            .into_iter()
            .map(|s| Ok((s.name, Tensor::zeros(&s.shape)?)))
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    /// Adopt `tensors` after checking names and shapes against `cfg`.
    pub fn from_map(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let specs = param_specs(cfg)?;
        if specs.len() != tensors.len() {
            return Err(config_err!("expected {} arrays, found {}", specs.len(), tensors.len()));
        }
        for s in &specs {
            let t = tensors
                .get(&s.name)
                .ok_or_else(|| config_err!("missing array {}", s.name))?;
            if t.shape() != s.shape.as_slice() {
                return Err(config_err!("array {} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape));
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| config_err!("missing array {name}"))
    }

    /// Replace an array with one of identical shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| config_err!("missing array {name}"))?;
        if slot.shape() != value.shape() {
            return Err(config_err!("array {name}: shape {:?} vs {:?}", value.shape(), slot.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Register every array on `tape` as a trainable leaf.
    pub fn to_params(&self, tape: &Tape<T>) -> ParamSet<T> {
        ParamSet::register(tape, self.tensors.iter())
    }
}
