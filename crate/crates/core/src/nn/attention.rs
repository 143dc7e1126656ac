//! Pre-norm transformer blocks with rotary multi-head self-attention.

use crate::autograd::{Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::nn::params::{layer_norm_specs, linear_specs, ParamInit, ParamSet, ParamSpec};
use crate::nn::rope::{rope_apply, RopeTable};
use crate::tensor::Real;

pub struct Linear<'a, T> {
    pub weight: &'a Var<T>,
    pub bias: &'a Var<T>,
}

impl<'a, T: Real> Linear<'a, T> {
    pub fn from_params(params: &'a ParamSet<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: params.get(&format!("{prefix}.weight"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = tape.matmul(x, self.weight)?;
        tape.add(&y, self.bias)
    }
}

pub struct LayerNorm<'a, T> {
    pub gamma: &'a Var<T>,
    pub beta: &'a Var<T>,
}

impl<'a, T: Real> LayerNorm<'a, T> {
    pub fn from_params(params: &'a ParamSet<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: params.get(&format!("{prefix}.gamma"))?,
            beta: params.get(&format!("{prefix}.beta"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>, eps: f64) -> Result<Var<T>> {
        tape.layer_norm(x, self.gamma, self.beta, T::of(eps))
    }
}

/// Shape contract of one attention block: projections sized by
/// `(embed, heads, mlp)` with an integral head width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub embed: usize,
    pub heads: usize,
    pub mlp: usize,
}

impl BlockDims {
    pub fn new(embed: usize, heads: usize, mlp: usize) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(config_err!("embed width {embed} is not divisible by {heads} heads"));
        }
        if mlp == 0 {
            return Err(config_err!("MLP width must be positive"));
        }
        Ok(Self { embed, heads, mlp })
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    /// Parameter specs under `prefix`; residual output projections start at zero.
    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let (d, m) = (self.embed, self.mlp);
        let mut v = layer_norm_specs(&format!("{prefix}.norm1"), d);
        for proj in ["q", "k", "v"] {
            v.extend(linear_specs(&format!("{prefix}.attn.{proj}"), d, d, ParamInit::Projection));
        }
        v.extend(linear_specs(&format!("{prefix}.attn.out"), d, d, ParamInit::ResidualOut));
        v.extend(layer_norm_specs(&format!("{prefix}.norm2"), d));
        v.extend(linear_specs(&format!("{prefix}.mlp.fc1"), d, m, ParamInit::Projection));
        v.extend(linear_specs(&format!("{prefix}.mlp.fc2"), m, d, ParamInit::ResidualOut));
        v
    }

    pub fn param_count(&self) -> usize {
        let (d, m) = (self.embed, self.mlp);
        4 * d + 4 * (d * d + d) + (d * m + m) + (m * d + d)
    }
}

/// Borrowed weights of one attention + MLP block.
pub struct AttentionBlockWeights<'a, T> {
    pub dims: BlockDims,
    pub norm1: LayerNorm<'a, T>,
    pub q: Linear<'a, T>,
    pub k: Linear<'a, T>,
    pub v: Linear<'a, T>,
    pub out: Linear<'a, T>,
    pub norm2: LayerNorm<'a, T>,
    pub fc1: Linear<'a, T>,
    pub fc2: Linear<'a, T>,
}

impl<'a, T: Real> AttentionBlockWeights<'a, T> {
    pub fn from_params(params: &'a ParamSet<T>, prefix: &str, dims: BlockDims) -> Result<Self> {
        let lin = |s: &str| Linear::from_params(params, &format!("{prefix}.{s}"));
        let block = Self {
            dims,
            norm1: LayerNorm::from_params(params, &format!("{prefix}.norm1"))?,
            q: lin("attn.q")?,
            k: lin("attn.k")?,
            v: lin("attn.v")?,
            out: lin("attn.out")?,
            norm2: LayerNorm::from_params(params, &format!("{prefix}.norm2"))?,
            fc1: lin("mlp.fc1")?,
            fc2: lin("mlp.fc2")?,
        };
        block.validate()?;
        Ok(block)
    }

    fn validate(&self) -> Result<()> {
        let (d, m) = (self.dims.embed, self.dims.mlp);
        let checks: [(&Var<T>, Vec<usize>); 6] = [
            (self.q.weight, vec![d, d]),
            (self.k.weight, vec![d, d]),
            (self.v.weight, vec![d, d]),
            (self.out.weight, vec![d, d]),
            (self.fc1.weight, vec![d, m]),
            (self.fc2.weight, vec![m, d]),
        ];
        for (v, want) in checks {
            if v.shape() != want.as_slice() {
                return Err(config_err!("block weight {:?} where {want:?} expected", v.shape()));
            }
        }
        Ok(())
    }
}

/// `x + proj(concat_heads(softmax(q·kᵀ/√d_h)·v))` on pre-normalized `x: [Batch, L, D]`.
pub fn multi_head_attention<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &AttentionBlockWeights<'_, T>,
    rope: &RopeTable<T>,
    eps: f64,
) -> Result<Var<T>> {
    let &[batch, len, d] = x.shape() else {
        return Err(shape_err!("attention input must be [Batch, L, D], got {:?}", x.shape()));
    };
    if d != w.dims.embed {
        return Err(config_err!("attention width {d} vs block width {}", w.dims.embed));
    }
    let heads = w.dims.heads;
    let dh = w.dims.head_dim();
    let h = w.norm1.forward(tape, x, eps)?;
    let split = |t: Var<T>| -> Result<Var<T>> {
        let t = tape.reshape(&t, &[batch, len, heads, dh])?;
        tape.permute(&t, &[0, 2, 1, 3])
    };
    let q = split(w.q.forward(tape, &h)?)?;
    let k = split(w.k.forward(tape, &h)?)?;
    let v = split(w.v.forward(tape, &h)?)?;
    let q = rope_apply(tape, &q, rope)?;
    let k = rope_apply(tape, &k, rope)?;
    let kt = tape.permute(&k, &[0, 1, 3, 2])?;
    let scores = tape.matmul(&q, &kt)?;
    let scores = tape.scale(&scores, T::one() / T::of(dh as f64).sqrt());
    let attn = tape.softmax(&scores, 3)?;
    let ctx = tape.matmul(&attn, &v)?;
    let ctx = tape.permute(&ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(&ctx, &[batch, len, d])?;
    let out = w.out.forward(tape, &ctx)?;
    tape.add(x, &out)
}

/// `x + W₂·GELU(W₁·norm(x))`.
pub fn mlp_block<T: Real>(tape: &Tape<T>, x: &Var<T>, w: &AttentionBlockWeights<'_, T>, eps: f64) -> Result<Var<T>> {
    let h = w.norm2.forward(tape, x, eps)?;
    let h = w.fc1.forward(tape, &h)?;
    let h = tape.gelu(&h);
    let h = w.fc2.forward(tape, &h)?;
    tape.add(x, &h)
}

/// One transformer unit: attention then MLP, both residual.
pub fn transformer_block<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &AttentionBlockWeights<'_, T>,
    rope: &RopeTable<T>,
    eps: f64,
) -> Result<Var<T>> {
    let y = multi_head_attention(tape, x, w, rope, eps)?;
    mlp_block(tape, &y, w, eps)
}
