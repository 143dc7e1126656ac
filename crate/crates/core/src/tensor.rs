//! Dense row-major tensors.

use std::fmt::{Debug, Display};
use std::io::{BufRead, Write};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Scalar element type. `f32` is the compute default; `f64` backs gradient checks.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Fill used by [`Tensor::create`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
    /// Normal redrawn outside two standard deviations.
    TruncatedNormal { mean: f64, std: f64 },
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{:?} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "..")?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(shape_err!("zero-length axis in {shape:?}"));
    }
    Ok(())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Real> Tensor<T> {
    /// Validating constructor: positive extents, matching length, finite values.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_extents(&shape)?;
        if numel(&shape) != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {} elements, data has {}",
                numel(&shape),
                data.len()
            ));
        }
        let t = Self { shape, data };
        t.ensure_finite()?;
        Ok(t)
    }

    /// Constructor for kernel outputs whose shape is correct by construction.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Self::from_raw(vec![], vec![v])
    }

    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        check_extents(shape)?;
        Ok(Self::from_raw(shape.to_vec(), vec![v; numel(shape)]))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn create(shape: &[usize], init: Init, rng: &mut Rng) -> Result<Self> {
        check_extents(shape)?;
        let n = numel(shape);
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform { lo, hi } => {
                if hi < lo {
                    return Err(shape_err!("uniform bounds reversed: [{lo}, {hi}]"));
                }
                (0..n).map(|_| T::of(rng.uniform(lo, hi))).collect()
            }
            Init::Normal { mean, std } => {
                if std < 0.0 {
                    return Err(Error::InvalidConfig(format!("negative sigma {std}")));
                }
                (0..n).map(|_| T::of(rng.normal(mean, std))).collect()
            }
            Init::TruncatedNormal { mean, std } => {
                if std < 0.0 {
                    return Err(Error::InvalidConfig(format!("negative sigma {std}")));
                }
                (0..n).map(|_| T::of(rng.truncated_normal(mean, std))).collect()
            }
        };
        Ok(Self::from_raw(shape.to_vec(), data))
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_extents(shape)?;
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "element {i} of tensor {:?} is {}",
                self.shape, self.data[i]
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self::from_raw(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        check_extents(new_shape)?;
        if numel(new_shape) != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) to {new_shape:?}",
                self.shape,
                self.numel()
            ));
        }
        Ok(Self::from_raw(new_shape.to_vec(), self.data.clone()))
    }

    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.ndim())?;
        let (shape, data) = permute_data(&self.data, &self.shape, order);
        Ok(Self::from_raw(shape, data))
    }

    /// Swap the two trailing axes.
    pub fn transpose_last2(&self) -> Self {
        let n = self.ndim();
        assert!(n >= 2);
        let mut order: Vec<usize> = (0..n).collect();
        order.swap(n - 2, n - 1);
        let (shape, data) = permute_data(&self.data, &self.shape, &order);
        Self::from_raw(shape, data)
    }

    /// Batched matrix product with leading-axis broadcasting.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        Ok(plan.run(&self.data, &other.data))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return Err(shape_err!("softmax axis {axis} out of range for {:?}", self.shape));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for a in 0..len {
                    m = m.max(self.data[base + a * inner]);
                }
                let mut s = T::zero();
                for a in 0..len {
                    let e = (self.data[base + a * inner] - m).exp();
                    out[base + a * inner] = e;
                    s += e;
                }
                for a in 0..len {
                    out[base + a * inner] /= s;
                }
            }
        }
        Ok(Self::from_raw(self.shape.clone(), out))
    }

    /// Write the `DXTENSOR v1` dump: ASCII header line then little-endian payload.
    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        let extents: Vec<String> = self.shape.iter().map(|e| e.to_string()).collect();
        let mut header = format!("DXTENSOR v1 {} {}", T::DTYPE, self.ndim());
        for e in &extents {
            header.push(' ');
            header.push_str(e);
        }
        header.push('\n');
        w.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(self.numel() * T::BYTES);
        for &v in &self.data {
            v.write_le(&mut payload);
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("write to Vec");
        buf
    }

    pub fn read_dump(r: &mut impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut fields = header.trim_end_matches('\n').split(' ');
        let magic = fields.next();
        let version = fields.next();
        if magic != Some("DXTENSOR") || version != Some("v1") {
            return Err(Error::Malformed(format!("bad tensor header {header:?}")));
        }
        let dtype = fields.next().unwrap_or("");
        if dtype != T::DTYPE {
            return Err(Error::UnsupportedFormat(format!(
                "tensor dtype {dtype}, expected {}",
                T::DTYPE
            )));
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed(format!("bad tensor header {header:?}")))
        };
        let ndim = parse(fields.next())?;
        let shape = (0..ndim)
            .map(|_| parse(fields.next()))
            .collect::<Result<Vec<_>>>()?;
        if fields.next().is_some() {
            return Err(Error::Malformed(format!("trailing header fields in {header:?}")));
        }
        check_extents(&shape)?;
        let mut payload = vec![0u8; numel(&shape) * T::BYTES];
        r.read_exact(&mut payload)?;
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        Self::new(shape, data)
    }
}

pub(crate) fn check_permutation(order: &[usize], ndim: usize) -> Result<()> {
    let mut seen = vec![false; ndim];
    if order.len() != ndim {
        return Err(shape_err!("axis order {order:?} has wrong length for rank {ndim}"));
    }
    for &a in order {
        if a >= ndim || seen[a] {
            return Err(shape_err!("{order:?} is not a permutation of 0..{ndim}"));
        }
        seen[a] = true;
    }
    Ok(())
}

pub(crate) fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &a) in order.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], order: &[usize]) -> (Vec<usize>, Vec<T>) {
    let nd = shape.len();
    let out_shape: Vec<usize> = order.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if nd == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    // Innermost output axis is walked in a tight loop.
    let last = nd - 1;
    let inner_len = out_shape[last];
    let inner_stride = src_strides[last];
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    while out.len() < n {
        let mut o = offset;
        for _ in 0..inner_len {
            out.push(data[o]);
            o += inner_stride;
        }
        // advance the outer odometer
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

/// `(outer, axis_len, inner)` decomposition around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Batch layout of a broadcast matrix product.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub batch_shape: Vec<usize>,
    /// Matrix offsets into `a` and `b` for each output batch entry.
    pub a_index: Vec<usize>,
    pub b_index: Vec<usize>,
    pub a_batch: usize,
    pub b_batch: usize,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(shape_err!("matmul needs rank >= 2, got {a:?} and {b:?}"));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(shape_err!("matmul inner mismatch: {a:?} x {b:?}"));
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let nd = ab.len().max(bb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; nd - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ab), pad(bb));
        let mut batch_shape = Vec::with_capacity(nd);
        for i in 0..nd {
            let e = match (pa[i], pb[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(shape_err!("matmul batch axes do not broadcast: {a:?} x {b:?}")),
            };
            batch_shape.push(e);
        }
        let sa = strides(&pa);
        let sb = strides(&pb);
        let total = numel(&batch_shape);
        let mut a_index = Vec::with_capacity(total);
        let mut b_index = Vec::with_capacity(total);
        let bs = strides(&batch_shape);
        for flat in 0..total {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..nd {
                let coord = (flat / bs[d]) % batch_shape[d];
                if pa[d] != 1 {
                    ia += coord * sa[d];
                }
                if pb[d] != 1 {
                    ib += coord * sb[d];
                }
            }
            a_index.push(ia);
            b_index.push(ib);
        }
        Ok(Self {
            m,
            k,
            n,
            batch_shape,
            a_index,
            b_index,
            a_batch: numel(ab),
            b_batch: numel(bb),
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = self.batch_shape.clone();
        s.push(self.m);
        s.push(self.n);
        s
    }

    pub fn macs(&self) -> u64 {
        (self.a_index.len() * self.m * self.k * self.n) as u64
    }

    pub fn run<T: Real>(&self, a: &[T], b: &[T]) -> Tensor<T> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![T::zero(); self.a_index.len() * m * n];
        // A shared right operand folds the batch into the row dimension.
        if self.b_batch == 1 && self.a_batch == self.a_index.len() {
            gemm(a, b, &mut out, self.a_index.len() * m, k, n);
        } else {
            out.par_chunks_mut(m * n)
                .enumerate()
                .for_each(|(bi, c)| {
                    let ao = self.a_index[bi] * m * k;
                    let bo = self.b_index[bi] * k * n;
                    gemm_serial(&a[ao..ao + m * k], &b[bo..bo + k * n], c, m, k, n);
                });
        }
        Tensor::from_raw(self.out_shape(), out)
    }
}

const PAR_ROWS: usize = 64;

/// `c[m×n] += a[m×k] · b[k×n]`, rows split across threads.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    if m * k * n < 1 << 16 {
        gemm_serial(a, b, c, m, k, n);
        return;
    }
    c.par_chunks_mut(PAR_ROWS * n)
        .enumerate()
        .for_each(|(ci, rows)| {
            let r0 = ci * PAR_ROWS;
            let nr = rows.len() / n;
            gemm_serial(&a[r0 * k..(r0 + nr) * k], b, rows, nr, k, n);
        });
}

pub(crate) fn gemm_serial<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
