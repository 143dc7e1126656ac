use std::collections::BTreeMap;

use crate::autograd::{Tape, Var};
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::{Init, Real, Tensor};

/// Standard deviation of projection initializers.
pub const PROJECTION_STD: f64 = 0.02;

/// How a named array is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Truncated normal, σ = 0.02.
    Projection,
    /// Output projection of a residual branch; zero so the branch starts as identity.
    ResidualOut,
    /// Normal with σ = 1/sqrt(fan_in).
    Conv { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: ParamInit) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn initialize<T: Real>(&self, rng: &mut Rng) -> Result<Tensor<T>> {
        let init = match self.init {
            ParamInit::Projection => Init::TruncatedNormal {
                mean: 0.0,
                std: PROJECTION_STD,
            },
            ParamInit::Conv { fan_in } => Init::Normal {
                mean: 0.0,
                std: 1.0 / (fan_in as f64).sqrt(),
            },
            ParamInit::ResidualOut | ParamInit::Zeros => Init::Zeros,
            ParamInit::Ones => Init::Ones,
        };
        Tensor::create(&self.shape, init, rng)
    }
}

/// Specs of a linear layer `y = x·W + b` with `W: [input, output]`.
pub fn linear_specs(prefix: &str, input: usize, output: usize, init: ParamInit) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.weight"), &[input, output], init),
        ParamSpec::new(format!("{prefix}.bias"), &[output], ParamInit::Zeros),
    ]
}

pub fn layer_norm_specs(prefix: &str, width: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.gamma"), &[width], ParamInit::Ones),
        ParamSpec::new(format!("{prefix}.beta"), &[width], ParamInit::Zeros),
    ]
}

pub fn conv_specs(prefix: &str, in_ch: usize, out_ch: usize, kernel_dims: usize, init_zero: bool) -> Vec<ParamSpec> {
    let mut shape = vec![out_ch, in_ch];
    shape.extend(std::iter::repeat(3).take(kernel_dims));
    let fan_in = in_ch * 3usize.pow(kernel_dims as u32);
    let init = if init_zero {
        ParamInit::Zeros
    } else {
        ParamInit::Conv { fan_in }
    };
    vec![
        ParamSpec::new(format!("{prefix}.weight"), &shape, init),
        ParamSpec::new(format!("{prefix}.bias"), &[out_ch], ParamInit::Zeros),
    ]
}

/// Named tape variables for one forward pass.
pub struct ParamSet<T> {
    vars: BTreeMap<String, Var<T>>,
}

impl<T: Real> ParamSet<T> {
    /// Register every tensor of `weights` as a trainable leaf.
    pub fn register<'a>(tape: &Tape<T>, weights: impl IntoIterator<Item = (&'a String, &'a Tensor<T>)>) -> Self {
        let vars = weights
            .into_iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect();
        Self { vars }
    }

    /// Wrap variables that already live on a tape.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<T>)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    /// Fresh parameters for `specs`, each initialized from `rng`.
    pub fn from_specs(tape: &Tape<T>, specs: &[ParamSpec], rng: &mut Rng) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for s in specs {
            vars.insert(s.name.clone(), tape.param(s.initialize(rng)?));
        }
        Ok(Self { vars })
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| config_err!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<T>)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}
