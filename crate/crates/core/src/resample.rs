//! Separable image resampling.
//!
//! Output pixel `i` samples the source at `(i + 0.5)·in/out − 0.5`. On
//! downscale the kernel is stretched by `in/out` so every source pixel
//! contributes (antialiasing). Taps falling outside the image clamp to the
//! nearest edge pixel and weights are normalized to sum to one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Free parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Bicubic,
    Bilinear,
    Nearest,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::Bicubic, Filter::Bilinear, Filter::Nearest];

    pub fn name(self) -> &'static str {
        match self {
            Filter::Bicubic => "bicubic",
            Filter::Bilinear => "bilinear",
            Filter::Nearest => "nearest",
        }
    }

    fn support(self) -> f64 {
        match self {
            Filter::Bicubic => 2.0,
            Filter::Bilinear => 1.0,
            Filter::Nearest => 0.5,
        }
    }

    fn weight(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Filter::Bicubic => cubic(x),
            Filter::Bilinear => (1.0 - x).max(0.0),
            Filter::Nearest => unreachable!("nearest has no kernel"),
        }
    }
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Normalized taps of one output sample.
#[derive(Clone, Debug)]
struct Taps {
    start: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

fn taps(input: usize, output: usize, filter: Filter) -> Taps {
    let scale = input as f64 / output as f64;
    let mut start = Vec::with_capacity(output);
    let mut weights = Vec::with_capacity(output);
    if filter == Filter::Nearest {
        for i in 0..output {
            let j = (((i as f64 + 0.5) * scale).floor() as usize).min(input - 1);
            start.push(j);
            weights.push(vec![1.0]);
        }
        return Taps { start, weights };
    }
    let stretch = scale.max(1.0);
    let support = filter.support() * stretch;
    let last = input as i64 - 1;
    for i in 0..output {
        let center = (i as f64 + 0.5) * scale;
        let lo = (center - support).floor() as i64;
        let hi = (center + support).ceil() as i64;
        // Accumulate clamped taps onto their edge pixel.
        let first = lo.clamp(0, last) as usize;
        let end = hi.clamp(0, last) as usize;
        let mut w = vec![0.0; end - first + 1];
        for j in lo..=hi {
            let v = filter.weight((j as f64 + 0.5 - center) / stretch);
            if v != 0.0 {
                w[j.clamp(0, last) as usize - first] += v;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        start.push(first);
        weights.push(w);
    }
    Taps { start, weights }
}

fn check_extents(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::InvalidScale(format!("cannot resample {h}×{w} to {oh}×{ow}")));
    }
    Ok(())
}

/// Resample one `h × w` plane to `oh × ow`.
pub fn resize_plane<T: Real>(src: &[T], h: usize, w: usize, oh: usize, ow: usize, filter: Filter) -> Result<Vec<T>> {
    check_extents(h, w, oh, ow)?;
    let tx = taps(w, ow, filter);
    let ty = taps(h, oh, filter);
    Ok(apply(src, h, w, oh, ow, &ty, &tx))
}

fn apply<T: Real>(src: &[T], h: usize, w: usize, oh: usize, ow: usize, ty: &Taps, tx: &Taps) -> Vec<T> {
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let s = tx.start[x];
            rows[y * ow + x] = tx.weights[x]
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * row[s + k].as_f64())
                .sum();
        }
    }
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let s = ty.start[y];
        for x in 0..ow {
            let v: f64 = ty.weights[y]
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * rows[(s + k) * ow + x])
                .sum();
            out.push(T::of(v));
        }
    }
    out
}

/// Resample the trailing two axes of `t` to `oh × ow`.
pub fn resize<T: Real>(t: &Tensor<T>, oh: usize, ow: usize, filter: Filter) -> Result<Tensor<T>> {
    let nd = t.ndim();
    if nd < 2 {
        return Err(Error::InvalidShape(format!("resize needs at least 2 axes, got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[nd - 2], t.shape()[nd - 1]);
    check_extents(h, w, oh, ow)?;
    let tx = taps(w, ow, filter);
    let ty = taps(h, oh, filter);
    let planes: Vec<Vec<T>> = t
        .data()
        .par_chunks(h * w)
        .map(|p| apply(p, h, w, oh, ow, &ty, &tx))
        .collect();
    let mut shape = t.shape().to_vec();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::new(shape, planes.concat())
}

fn apply_adjoint<T: Real>(g: &[T], h: usize, w: usize, oh: usize, ow: usize, ty: &Taps, tx: &Taps) -> Vec<T> {
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..oh {
        let s = ty.start[y];
        for x in 0..ow {
            let gv = g[y * ow + x].as_f64();
            for (k, &wt) in ty.weights[y].iter().enumerate() {
                rows[(s + k) * ow + x] += wt * gv;
            }
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..ow {
            let s = tx.start[x];
            let rv = rows[y * ow + x];
            for (k, &wt) in tx.weights[x].iter().enumerate() {
                out[y * w + s + k] += wt * rv;
            }
        }
    }
    out.into_iter().map(T::of).collect()
}

/// Transpose of [`resize`]: maps `[.., oh, ow]` gradients back to `[.., h, w]`.
pub fn resize_adjoint<T: Real>(g: &Tensor<T>, h: usize, w: usize, filter: Filter) -> Result<Tensor<T>> {
    let nd = g.ndim();
    if nd < 2 {
        return Err(Error::InvalidShape(format!("resize needs at least 2 axes, got {:?}", g.shape())));
    }
    let (oh, ow) = (g.shape()[nd - 2], g.shape()[nd - 1]);
    check_extents(h, w, oh, ow)?;
    let tx = taps(w, ow, filter);
    let ty = taps(h, oh, filter);
    let planes: Vec<Vec<T>> = g
        .data()
        .par_chunks(oh * ow)
        .map(|p| apply_adjoint(p, h, w, oh, ow, &ty, &tx))
        .collect();
    let mut shape = g.shape().to_vec();
    shape[nd - 2] = h;
    shape[nd - 1] = w;
    Tensor::new(shape, planes.concat())
}

/// Bicubic upscale of the trailing two axes by an integer factor.
pub fn upscale_bicubic<T: Real>(t: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let nd = t.ndim();
    if nd < 2 || factor == 0 {
        return Err(Error::InvalidScale(format!("cannot upscale {:?} by {factor}", t.shape())));
    }
    resize(t, t.shape()[nd - 2] * factor, t.shape()[nd - 1] * factor, Filter::Bicubic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // a = -0.5 at x = 0.5: (1.5·0.125) − (2.5·0.25) + 1
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_inner_products() {
        let mut rng = crate::rng::Rng::new(4);
        for f in Filter::ALL {
            for (h, w, oh, ow) in [(5, 7, 11, 3), (8, 8, 2, 2), (3, 4, 12, 16)] {
                let x = Tensor::<f64>::from_fn(&[2, h, w], |_| rng.normal(0.0, 1.0)).unwrap();
                let g = Tensor::<f64>::from_fn(&[2, oh, ow], |_| rng.normal(0.0, 1.0)).unwrap();
                let ax = resize(&x, oh, ow, f).unwrap();
                let atg = resize_adjoint(&g, h, w, f).unwrap();
                let lhs: f64 = ax.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let rhs: f64 = x.data().iter().zip(atg.data()).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-10, "{f:?}");
            }
        }
    }

    #[test]
    fn constant_is_preserved() {
        for f in Filter::ALL {
            for (oh, ow) in [(3, 5), (20, 17), (7, 7)] {
                let out = resize_plane(&[0.3f64; 7 * 7], 7, 7, oh, ow, f).unwrap();
                assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-12), "{f:?}");
            }
        }
    }

    #[test]
    fn identity_size_is_identity() {
        let src: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        for f in Filter::ALL {
            let out = resize_plane(&src, 5, 6, 5, 6, f).unwrap();
            for (a, b) in src.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn box_downscale_by_two_bilinear() {
        // Stretched triangle over a 2× reduction weights (1,3,3,1)/8.
        let src = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let out: Vec<f64> = resize_plane(&src, 1, 8, 1, 4, Filter::Bilinear).unwrap();
        assert!((out[1] - (1.0 + 3.0 * 2.0 + 3.0 * 3.0 + 4.0) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_picks_source_pixels() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(resize_plane(&src, 1, 4, 1, 2, Filter::Nearest).unwrap(), vec![2.0, 4.0]);
        assert_eq!(resize_plane(&src, 1, 4, 1, 8, Filter::Nearest).unwrap(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize_plane(&[1.0f32], 1, 1, 0, 1, Filter::Bicubic).is_err());
    }
}
