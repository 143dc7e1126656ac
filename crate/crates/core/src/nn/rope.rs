//! Rotary positional encoding.
//!
//! Channel pair `(2p, 2p+1)` of a token at index `u` is treated as a complex
//! number and multiplied by `exp(i·u·θ_p)` with `θ_p = base^(-2p/D)`. Tokens
//! on a multi-axis grid split the head width evenly between axes; each axis
//! chunk is rotated by its own coordinate with frequencies computed over the
//! chunk width.

use std::rc::Rc;

use crate::autograd::{Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(config_err!("rotary head width {head_dim} must be even and positive"));
        }
        if !(base > 0.0) {
            return Err(config_err!("rotary base {base} must be positive"));
        }
        Ok(Self { head_dim, base })
    }

    /// `θ_d = base^(-2d/head_dim)` for `d = 0..head_dim/2`.
    pub fn frequencies(&self) -> Vec<f64> {
        frequencies(self.head_dim, self.base)
    }
}

fn frequencies(width: usize, base: f64) -> Vec<f64> {
    (0..width / 2)
        .map(|d| base.powf(-2.0 * d as f64 / width as f64))
        .collect()
}

/// Per-token integer coordinates, `axes` values per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenPositions {
    axes: usize,
    coords: Vec<usize>,
}

impl TokenPositions {
    pub fn new(axes: usize, coords: Vec<usize>) -> Result<Self> {
        if axes == 0 || coords.len() % axes != 0 {
            return Err(shape_err!("{} coordinates do not split into {axes} axes", coords.len()));
        }
        Ok(Self { axes, coords })
    }

    /// Single-axis positions `0..len`.
    pub fn linear(len: usize) -> Self {
        Self {
            axes: 1,
            coords: (0..len).collect(),
        }
    }

    /// Single-axis positions from explicit indices.
    pub fn from_indices(indices: &[usize]) -> Self {
        Self {
            axes: 1,
            coords: indices.to_vec(),
        }
    }

    /// Row-major grid `outer × inner`; token `i·inner + j` sits at `(i, j)`.
    pub fn grid(outer: usize, inner: usize) -> Self {
        let mut coords = Vec::with_capacity(outer * inner * 2);
        for i in 0..outer {
            for j in 0..inner {
                coords.push(i);
                coords.push(j);
            }
        }
        Self { axes: 2, coords }
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.axes
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, token: usize, axis: usize) -> usize {
        self.coords[token * self.axes + axis]
    }

    pub fn shifted(&self, by: usize) -> Self {
        Self {
            axes: self.axes,
            coords: self.coords.iter().map(|c| c + by).collect(),
        }
    }
}

/// Precomputed `cos`/`sin` of every token's pair angles, shape `[L, D/2]`.
#[derive(Clone, Debug)]
pub struct RopeTable<T> {
    pub cos: Rc<Tensor<T>>,
    pub sin: Rc<Tensor<T>>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(positions: &TokenPositions, params: &RopeParams) -> Result<Self> {
        let axes = positions.axes();
        let chunk = params.head_dim / axes;
        if params.head_dim % axes != 0 || chunk % 2 != 0 {
            return Err(config_err!(
                "head width {} cannot be split into {axes} even rotary chunks",
                params.head_dim
            ));
        }
        let freqs = frequencies(chunk, params.base);
        let half = params.head_dim / 2;
        let len = positions.len();
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for t in 0..len {
            for axis in 0..axes {
                let u = positions.coord(t, axis) as f64;
                for &theta in &freqs {
                    let angle = u * theta;
                    cos.push(T::of(angle.cos()));
                    sin.push(T::of(angle.sin()));
                }
            }
        }
        Ok(Self {
            cos: Rc::new(Tensor::new(vec![len, half], cos)?),
            sin: Rc::new(Tensor::new(vec![len, half], sin)?),
        })
    }
}

/// Rotate the trailing `[L, D]` axes of `tokens` by their positions.
pub fn rope_apply<T: Real>(tape: &Tape<T>, tokens: &Var<T>, table: &RopeTable<T>) -> Result<Var<T>> {
    tape.rotate_pairs(tokens, &table.cos, &table.sin)
}

/// Raw (unscaled) score matrix `A[u, v] = ⟨q_u, k_v⟩` of rotated `[L, D]` inputs.
pub fn attention_scores<T: Real>(q_rot: &Tensor<T>, k_rot: &Tensor<T>) -> Result<Tensor<T>> {
    if q_rot.ndim() != 2 || q_rot.shape() != k_rot.shape() {
        return Err(shape_err!("scores need equal [L, D] inputs, got {:?} and {:?}", q_rot.shape(), k_rot.shape()));
    }
    q_rot.matmul(&k_rot.transpose_last2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotate(x: &Tensor<f64>, pos: &TokenPositions, dim: usize) -> Tensor<f64> {
        let tape = Tape::inference();
        let table = RopeTable::new(pos, &RopeParams::new(dim, DEFAULT_BASE).unwrap()).unwrap();
        rope_apply(&tape, &tape.constant(x.clone()), &table).unwrap().into_tensor()
    }

    #[test]
    fn frequencies_closed_form() {
        let p = RopeParams::new(4, DEFAULT_BASE).unwrap();
        let f = p.frequencies();
        assert_eq!(f[0], 1.0);
        assert!((f[1] - 0.01).abs() < 1e-15);
        let f = RopeParams::new(64, DEFAULT_BASE).unwrap().frequencies();
        assert!(f.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(RopeParams::new(3, DEFAULT_BASE).is_err());
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let t = RopeTable::<f64>::new(&TokenPositions::linear(2), &RopeParams::new(2, DEFAULT_BASE).unwrap()).unwrap();
        assert!(rope_apply(&tape, &x, &t).is_err());
    }

    #[test]
    fn position_zero_is_identity() {
        let x = Tensor::new(vec![1, 6], vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.1]).unwrap();
        let y = rotate(&x, &TokenPositions::linear(1), 6);
        assert_eq!(x, y);
    }

    #[test]
    fn single_complex_rotation() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = rotate(&x, &TokenPositions::linear(2), 2);
        assert_eq!(&y.data()[..2], &[1.0, 0.0]);
        assert!((y.data()[2] - 1f64.cos()).abs() < 1e-15);
        assert!((y.data()[3] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn score_of_unit_vectors_is_cosine_of_offset() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let r = rotate(&x, &TokenPositions::from_indices(&[3, 2]), 2);
        let a = attention_scores(&r, &r).unwrap();
        assert!((a.data()[0] - 1.0).abs() < 1e-15);
        assert!((a.data()[1] - 0.540_302_305_868_139_8).abs() < 1e-12);
    }

    #[test]
    fn axial_split_uses_each_axis() {
        // Head width 4 over two axes: pair 0 follows axis 0, pair 1 follows axis 1.
        let x = Tensor::new(vec![1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let pos = TokenPositions::new(2, vec![1, 2]).unwrap();
        let y = rotate(&x, &pos, 4);
        assert!((y.data()[0] - 1f64.cos()).abs() < 1e-15);
        assert!((y.data()[2] - 2f64.cos()).abs() < 1e-15);
        assert!((y.data()[3] - 2f64.sin()).abs() < 1e-15);
    }
}
