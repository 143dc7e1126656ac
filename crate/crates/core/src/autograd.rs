//! Minimal reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to tracked [`Var`]s in execution
//! order, which is a topological order by construction. [`Tape::backward`]
//! replays the records in reverse, accumulating vector-Jacobian products into
//! each producer. An inference tape records nothing and lets intermediates
//! drop as soon as their last handle does.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::resample::{resize, resize_adjoint, Filter};
use crate::tensor::{
    check_permutation, gemm, inverse_permutation, numel, permute_data, split_axis, strides, MatmulPlan,
    Real, Tensor,
};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Handle to a value, optionally tracked by a tape.
#[derive(Clone)]
pub struct Var<T> {
    value: Rc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    macs: Cell<u64>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.node.and_then(|n| self.grads.get(n)).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::from_raw(v.shape().to_vec(), vec![T::zero(); v.value.numel()]))
    }
}

impl<T: Real> Tape<T> {
    /// Recording tape.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            macs: Cell::new(0),
        }
    }

    /// Tape that evaluates without recording.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates executed by matmul and convolution primitives so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var<T> {
        let node = self.recording.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: Vec::new(),
                backward: None,
            });
            nodes.len() - 1
        });
        Var {
            value: Rc::new(t),
            node,
        }
    }

    /// Untracked input.
    pub fn constant(&self, t: Tensor<T>) -> Var<T> {
        Var {
            value: Rc::new(t),
            node: None,
        }
    }

    fn record(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Var<T> {
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: inputs.iter().map(|v| v.node).collect(),
                backward: Some(Box::new(backward)),
            });
            nodes.len() - 1
        });
        Var {
            value: Rc::new(value),
            node,
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", loss.shape()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::from_raw(loss.shape().to_vec(), vec![T::one()]));
        for i in (0..=root).rev() {
            let Some(backward) = nodes[i].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let input_grads = backward(&g);
            debug_assert_eq!(input_grads.len(), nodes[i].parents.len());
            for (parent, ig) in nodes[i].parents.iter().zip(input_grads) {
                let Some(p) = *parent else { continue };
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let bshape = broadcast_check(a.shape(), b.shape())?;
        let out = broadcast_zip(a.value(), b.value(), |x, y| x + y);
        Ok(self.record(out, &[a, b], move |g| {
            vec![g.clone(), sum_to_suffix(g, &bshape)]
        }))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let bshape = broadcast_check(a.shape(), b.shape())?;
        let out = broadcast_zip(a.value(), b.value(), |x, y| x - y);
        Ok(self.record(out, &[a, b], move |g| {
            vec![g.clone(), sum_to_suffix(g, &bshape).map(|v| -v)]
        }))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let bshape = broadcast_check(a.shape(), b.shape())?;
        let out = broadcast_zip(a.value(), b.value(), |x, y| x * y);
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.record(out, &[a, b], move |g| {
            let ga = broadcast_zip(g, &bv, |x, y| x * y);
            let gb_full = g.zip_map(&av, |x, y| x * y).expect("same shape");
            vec![ga, sum_to_suffix(&gb_full, &bshape)]
        }))
    }

    pub fn scale(&self, a: &Var<T>, c: T) -> Var<T> {
        let out = a.value().map(|v| v * c);
        self.record(out, &[a], move |g| vec![g.map(|v| v * c)])
    }

    pub fn add_scalar(&self, a: &Var<T>, c: T) -> Var<T> {
        let out = a.value().map(|v| v + c);
        self.record(out, &[a], |g| vec![g.clone()])
    }

    pub fn square(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(|v| v * v);
        let av = a.value.clone();
        self.record(out, &[a], move |g| {
            vec![g.zip_map(&av, |g, x| g * (x + x)).expect("same shape")]
        })
    }

    pub fn sqrt(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(|v| v.sqrt());
        let ov = Rc::new(out.clone());
        self.record(out, &[a], move |g| {
            let half = T::of(0.5);
            vec![g.zip_map(&ov, |g, y| g * half / y).expect("same shape")]
        })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(gelu);
        let av = a.value.clone();
        self.record(out, &[a], move |g| {
            vec![g.zip_map(&av, |g, x| g * gelu_grad(x)).expect("same shape")]
        })
    }

    pub fn sum(&self, a: &Var<T>) -> Var<T> {
        let out = Tensor::scalar(a.value().sum());
        let shape = a.shape().to_vec();
        self.record(out, &[a], move |g| {
            vec![Tensor::from_raw(shape.clone(), vec![g.item(); numel(&shape)])]
        })
    }

    pub fn mean(&self, a: &Var<T>) -> Var<T> {
        let n = T::of(a.value().numel() as f64);
        let s = self.sum(a);
        self.scale(&s, T::one() / n)
    }

    // ---- shape ----

    pub fn reshape(&self, a: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = a.value().reshape(shape)?;
        let orig = a.shape().to_vec();
        Ok(self.record(out, &[a], move |g| {
            vec![Tensor::from_raw(orig.clone(), g.data().to_vec())]
        }))
    }

    pub fn permute(&self, a: &Var<T>, order: &[usize]) -> Result<Var<T>> {
        check_permutation(order, a.value().ndim())?;
        let (shape, data) = permute_data(a.value().data(), a.shape(), order);
        let inv = inverse_permutation(order);
        Ok(self.record(Tensor::from_raw(shape, data), &[a], move |g| {
            let (s, d) = permute_data(g.data(), g.shape(), &inv);
            vec![Tensor::from_raw(s, d)]
        }))
    }

    /// Inverse of space-to-depth: `[B, C·r², H, W] → [B, C, r·H, r·W]`.
    ///
    /// Channel `c·r² + i·r + j` at `(h, w)` lands on channel `c` at `(r·h + i, r·w + j)`.
    pub fn pixel_shuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let [b, cr, h, w] = dims4(x.shape())?;
        if r == 0 || cr % (r * r) != 0 {
            return Err(shape_err!("pixel_shuffle: {cr} channels not divisible by {r}²"));
        }
        let c = cr / (r * r);
        let t = self.reshape(x, &[b, c, r, r, h, w])?;
        let t = self.permute(&t, &[0, 1, 4, 2, 5, 3])?;
        self.reshape(&t, &[b, c, h * r, w * r])
    }

    /// Space-to-depth, the inverse of [`Tape::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, x: &Var<T>, r: usize) -> Result<Var<T>> {
        let [b, c, hr, wr] = dims4(x.shape())?;
        if r == 0 || hr % r != 0 || wr % r != 0 {
            return Err(shape_err!("pixel_unshuffle: {hr}x{wr} not divisible by {r}"));
        }
        let (h, w) = (hr / r, wr / r);
        let t = self.reshape(x, &[b, c, h, r, w, r])?;
        let t = self.permute(&t, &[0, 1, 3, 5, 2, 4])?;
        self.reshape(&t, &[b, c * r * r, h, w])
    }

    /// Resample the trailing two axes; linear in `x`.
    pub fn resize(&self, x: &Var<T>, oh: usize, ow: usize, filter: Filter) -> Result<Var<T>> {
        let out = resize(x.value(), oh, ow, filter)?;
        let nd = x.shape().len();
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        Ok(self.record(out, &[x], move |g| {
            vec![resize_adjoint(g, h, w, filter).expect("extents checked in forward")]
        }))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        self.count_macs(plan.macs());
        let out = plan.run(a.value().data(), b.value().data());
        let (av, bv) = (a.value.clone(), b.value.clone());
        Ok(self.record(out, &[a, b], move |g| {
            let (ga, gb) = matmul_backward(&plan, &av, &bv, g);
            vec![ga, gb]
        }))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, a: &Var<T>, axis: usize) -> Result<Var<T>> {
        let out = a.value().softmax(axis)?;
        let y = Rc::new(out.clone());
        Ok(self.record(out, &[a], move |g| {
            let (outer, len, inner) = split_axis(y.shape(), axis);
            let (yd, gd) = (y.data(), g.data());
            let mut gx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        dot += yd[base + k * inner] * gd[base + k * inner];
                    }
                    for k in 0..len {
                        let idx = base + k * inner;
                        gx[idx] = yd[idx] * (gd[idx] - dot);
                    }
                }
            }
            vec![Tensor::from_raw(y.shape().to_vec(), gx)]
        }))
    }

    /// Layer normalization over the trailing axis.
    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let d = *x.shape().last().ok_or_else(|| shape_err!("layer_norm on a scalar"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err!(
                "layer_norm params {:?}/{:?} do not match width {d}",
                gamma.shape(),
                beta.shape()
            ));
        }
        let rows = x.value().numel() / d;
        let xd = x.value().data();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        let inv_d = T::one() / T::of(d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let shape = x.shape().to_vec();
        let gv = gamma.value.clone();
        Ok(self.record(Tensor::from_raw(shape.clone(), out), &[x, gamma, beta], move |g| {
            let gdat = g.data();
            let gam = gv.data();
            let mut gx = vec![T::zero(); gdat.len()];
            let mut ggamma = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            for r in 0..rows {
                let mut mean_dh = T::zero();
                let mut mean_dh_h = T::zero();
                for j in 0..d {
                    let i = r * d + j;
                    let dh = gdat[i] * gam[j];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[i];
                    ggamma[j] += gdat[i] * xhat[i];
                    gbeta[j] += gdat[i];
                }
                mean_dh *= inv_d;
                mean_dh_h *= inv_d;
                for j in 0..d {
                    let i = r * d + j;
                    let dh = gdat[i] * gam[j];
                    gx[i] = rstd[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
                }
            }
            vec![
                Tensor::from_raw(shape.clone(), gx),
                Tensor::from_raw(vec![d], ggamma),
                Tensor::from_raw(vec![d], gbeta),
            ]
        }))
    }

    /// Rotate channel pairs `(2p, 2p+1)` of `x[..., L, D]` by per-token angles
    /// given as `cos`/`sin` tables of shape `[L, D/2]`.
    pub fn rotate_pairs(&self, x: &Var<T>, cos: &Rc<Tensor<T>>, sin: &Rc<Tensor<T>>) -> Result<Var<T>> {
        let nd = x.value().ndim();
        if nd < 2 {
            return Err(shape_err!("rotary input needs [.., L, D], got {:?}", x.shape()));
        }
        let (l, d) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        if d % 2 != 0 {
            return Err(shape_err!("rotary width {d} is odd"));
        }
        if cos.shape() != [l, d / 2] || sin.shape() != [l, d / 2] {
            return Err(shape_err!(
                "rotary tables {:?} do not match [{l}, {}]",
                cos.shape(),
                d / 2
            ));
        }
        let out = rotate(x.value(), cos, sin, false);
        let (c, s) = (cos.clone(), sin.clone());
        Ok(self.record(out, &[x], move |g| vec![rotate(g, &c, &s, true)]))
    }

    // ---- convolution ----

    /// Zero-padded "same" 2D convolution with an odd square kernel.
    /// `x: [B, C, H, W]`, `w: [O, C, k, k]`, `bias: [O]`.
    pub fn conv2d(&self, x: &Var<T>, w: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, wd] = dims4(x.shape())?;
        let [o, c2, k, k2] = dims4(w.shape())?;
        if c != c2 || k != k2 || k % 2 == 0 || bias.shape() != [o] {
            return Err(shape_err!(
                "conv2d: input {:?}, kernel {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                bias.shape()
            ));
        }
        let geo = ConvGeometry {
            channels: c,
            extents: vec![h, wd],
            kernel: k,
        };
        self.conv_nd(x, w, bias, b, o, geo)
    }

    /// Zero-padded "same" 3D convolution. `x: [B, C, N, H, W]`, `w: [O, C, k, k, k]`.
    pub fn conv3d(&self, x: &Var<T>, w: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let ws = w.shape();
        if xs.len() != 5 || ws.len() != 5 {
            return Err(shape_err!("conv3d expects rank-5 input and kernel"));
        }
        let k = ws[2];
        if xs[1] != ws[1] || ws[3] != k || ws[4] != k || k % 2 == 0 || bias.shape() != [ws[0]] {
            return Err(shape_err!(
                "conv3d: input {xs:?}, kernel {ws:?}, bias {:?}",
                bias.shape()
            ));
        }
        let geo = ConvGeometry {
            channels: xs[1],
            extents: vec![xs[2], xs[3], xs[4]],
            kernel: k,
        };
        self.conv_nd(x, w, bias, xs[0], ws[0], geo)
    }

    fn conv_nd(&self, x: &Var<T>, w: &Var<T>, bias: &Var<T>, batch: usize, out_ch: usize, geo: ConvGeometry) -> Result<Var<T>> {
        let spatial = numel(&geo.extents);
        let ck = geo.channels * geo.kernel.pow(geo.extents.len() as u32);
        self.count_macs((batch * out_ch * ck * spatial) as u64);
        let xd = x.value().data();
        let wd = w.value().data();
        let bd = bias.value().data();
        let mut out = vec![T::zero(); batch * out_ch * spatial];
        let mut cols = vec![T::zero(); ck * spatial];
        for bi in 0..batch {
            geo.im2col(&xd[bi * geo.channels * spatial..(bi + 1) * geo.channels * spatial], &mut cols);
            let o = &mut out[bi * out_ch * spatial..(bi + 1) * out_ch * spatial];
            for (oc, row) in o.chunks_mut(spatial).enumerate() {
                row.fill(bd[oc]);
            }
            gemm(wd, &cols, o, out_ch, ck, spatial);
        }
        let mut shape = vec![batch, out_ch];
        shape.extend_from_slice(&geo.extents);
        let (xv, wv) = (x.value.clone(), w.value.clone());
        let in_shape = x.shape().to_vec();
        let w_shape = w.shape().to_vec();
        Ok(self.record(Tensor::from_raw(shape, out), &[x, w, bias], move |g| {
            let gd = g.data();
            let xd = xv.data();
            let wt = transpose2(wv.data(), out_ch, ck);
            let mut gx = vec![T::zero(); xd.len()];
            let mut gw = vec![T::zero(); out_ch * ck];
            let mut gb = vec![T::zero(); out_ch];
            let mut cols = vec![T::zero(); ck * spatial];
            let mut gcols = vec![T::zero(); ck * spatial];
            for bi in 0..batch {
                let go = &gd[bi * out_ch * spatial..(bi + 1) * out_ch * spatial];
                for (oc, row) in go.chunks(spatial).enumerate() {
                    gb[oc] += row.iter().copied().sum::<T>();
                }
                let xs = &xd[bi * geo.channels * spatial..(bi + 1) * geo.channels * spatial];
                geo.im2col(xs, &mut cols);
                let cols_t = transpose2(&cols, ck, spatial);
                gemm(go, &cols_t, &mut gw, out_ch, spatial, ck);
                gcols.fill(T::zero());
                gemm(&wt, go, &mut gcols, ck, out_ch, spatial);
                geo.col2im(&gcols, &mut gx[bi * geo.channels * spatial..(bi + 1) * geo.channels * spatial]);
            }
            vec![
                Tensor::from_raw(in_shape.clone(), gx),
                Tensor::from_raw(w_shape.clone(), gw),
                Tensor::from_raw(vec![out_ch], gb),
            ]
        }))
    }
}

fn dims4(s: &[usize]) -> Result<[usize; 4]> {
    s.try_into()
        .map_err(|_| shape_err!("expected a rank-4 tensor, got {s:?}"))
}

/// Zero-padded same-size convolution geometry over 2 or 3 spatial axes.
#[derive(Clone)]
struct ConvGeometry {
    channels: usize,
    extents: Vec<usize>,
    kernel: usize,
}

impl ConvGeometry {
    /// Offsets `(kernel tap, column)` pairs visited in a fixed order by both
    /// `im2col` and `col2im`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel as isize;
        let r = k / 2;
        let spatial: usize = numel(&self.extents);
        let ext: Vec<isize> = self.extents.iter().map(|&e| e as isize).collect();
        let nd = ext.len();
        let taps = self.kernel.pow(nd as u32);
        for tap in 0..taps {
            // decompose tap into per-axis offsets
            let mut off = [0isize; 3];
            let mut rem = tap;
            for a in (0..nd).rev() {
                off[a] = (rem % self.kernel) as isize - r;
                rem /= self.kernel;
            }
            for pos in 0..spatial {
                let mut p = pos;
                let mut coord = [0isize; 3];
                for a in (0..nd).rev() {
                    coord[a] = (p % self.extents[a]) as isize;
                    p /= self.extents[a];
                }
                let mut src = 0isize;
                let mut inside = true;
                for a in 0..nd {
                    let c = coord[a] + off[a];
                    if c < 0 || c >= ext[a] {
                        inside = false;
                        break;
                    }
                    src = src * ext[a] + c;
                }
                if inside {
                    f(tap, pos, src as usize);
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let spatial = numel(&self.extents);
        let taps = self.kernel.pow(self.extents.len() as u32);
        cols.fill(T::zero());
        let mut map = Vec::with_capacity(taps * spatial);
        self.for_each_tap(|tap, pos, src| map.push((tap, pos, src)));
        for c in 0..self.channels {
            let xc = &x[c * spatial..(c + 1) * spatial];
            let base = c * taps * spatial;
            for &(tap, pos, src) in &map {
                cols[base + tap * spatial + pos] = xc[src];
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let spatial = numel(&self.extents);
        let taps = self.kernel.pow(self.extents.len() as u32);
        let mut map = Vec::with_capacity(taps * spatial);
        self.for_each_tap(|tap, pos, src| map.push((tap, pos, src)));
        for c in 0..self.channels {
            let base = c * taps * spatial;
            let xc = &mut x[c * spatial..(c + 1) * spatial];
            for &(tap, pos, src) in &map {
                xc[src] += cols[base + tap * spatial + pos];
            }
        }
    }
}

fn transpose2<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn rotate<T: Real>(x: &Tensor<T>, cos: &Tensor<T>, sin: &Tensor<T>, inverse: bool) -> Tensor<T> {
    let nd = x.ndim();
    let (l, d) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let half = d / 2;
    let (cd, sd) = (cos.data(), sin.data());
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for (chunk, o) in xd.chunks(l * d).zip(out.chunks_mut(l * d)) {
        for t in 0..l {
            for p in 0..half {
                let (c, s) = (cd[t * half + p], sd[t * half + p]);
                let s = if inverse { -s } else { s };
                let i = t * d + 2 * p;
                let (x0, x1) = (chunk[i], chunk[i + 1]);
                o[i] = x0 * c - x1 * s;
                o[i + 1] = x0 * s + x1 * c;
            }
        }
    }
    Tensor::from_raw(x.shape().to_vec(), out)
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// `b` must equal `a`, be a trailing suffix of `a`, or hold a single element.
fn broadcast_check(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ok = numel(b) == 1 || (b.len() <= a.len() && a[a.len() - b.len()..] == *b);
    if !ok {
        return Err(shape_err!("{b:?} does not broadcast onto {a:?}"));
    }
    Ok(b.to_vec())
}

fn broadcast_zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let bd = b.data();
    let m = bd.len();
    let out = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[i % m]))
        .collect();
    Tensor::from_raw(a.shape().to_vec(), out)
}

fn sum_to_suffix<T: Real>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    let m = numel(target);
    let mut acc = vec![T::zero(); m];
    for (i, &v) in g.data().iter().enumerate() {
        acc[i % m] += v;
    }
    Tensor::from_raw(target.to_vec(), acc)
}

/// Reduce a gradient of broadcast batch shape back onto an operand's batch shape.
fn sum_to_batch<T: Real>(g: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g;
    }
    let gs = g.shape().to_vec();
    let nd = gs.len();
    let mut padded = vec![1; nd - target.len()];
    padded.extend_from_slice(target);
    let ts = strides(&padded);
    let gstr = strides(&gs);
    let mut acc = vec![T::zero(); numel(target)];
    for (flat, &v) in g.data().iter().enumerate() {
        let mut ti = 0;
        for d in 0..nd {
            if padded[d] != 1 {
                ti += ((flat / gstr[d]) % gs[d]) * ts[d];
            }
        }
        acc[ti] += v;
    }
    Tensor::from_raw(target.to_vec(), acc)
}

fn matmul_backward<T: Real>(plan: &MatmulPlan, a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let bt = b.transpose_last2();
    let ga = sum_to_batch(g.matmul(&bt).expect("shapes from forward"), a.shape());
    let gb = if plan.b_batch == 1 && plan.a_batch == plan.a_index.len() {
        // shared weight: gB = Aᵀ·G with the batch folded into rows
        let rows = plan.a_index.len() * m;
        let at = transpose2(a.data(), rows, k);
        let mut gb = vec![T::zero(); k * n];
        gemm(&at, g.data(), &mut gb, k, rows, n);
        Tensor::from_raw(b.shape().to_vec(), gb)
    } else {
        let at = a.transpose_last2();
        sum_to_batch(at.matmul(g).expect("shapes from forward"), b.shape())
    };
    (ga, gb)
}
