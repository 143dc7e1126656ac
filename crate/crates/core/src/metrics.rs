//! Full-reference quality metrics, the Charbonnier loss and block-matching motion.
//!
//! PSNR and SSIM are computed on ITU-R BT.601 luma of `[0, 1]` RGB frames.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::model::VideoClip;
use crate::tensor::{Real, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// `ε²` of the Charbonnier penalty.
pub const CHARBONNIER_EPS2: f64 = 1e-12;

/// A single-channel `h × w` image in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!("{} values for a {height}×{width} plane", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Luma of a `[3, H, W]` frame.
pub fn luma<T: Real>(frame: &Tensor<T>) -> Result<Plane> {
    let [3, h, w] = *frame.shape() else {
        return Err(shape_err!("expected a [3, H, W] frame, got {:?}", frame.shape()));
    };
    let d = frame.data();
    let n = h * w;
    let data = (0..n)
        .map(|i| LUMA[0] * d[i].as_f64() + LUMA[1] * d[n + i].as_f64() + LUMA[2] * d[2 * n + i].as_f64())
        .collect();
    Plane::new(h, w, data)
}

fn same_extent(a: &Plane, b: &Plane) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(shape_err!("{}×{} vs {}×{}", a.height, a.width, b.height, b.width));
    }
    Ok(())
}

/// `10·log10(1/MSE)` on a unit dynamic range, capped at 100 dB.
pub fn psnr(x: &Plane, y: &Plane) -> Result<f64> {
    same_extent(x, y)?;
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over all fully-covered 11×11 windows.
pub fn ssim(x: &Plane, y: &Plane) -> Result<f64> {
    same_extent(x, y)?;
    let (h, w) = (x.height, x.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("SSIM needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"));
    }
    let k = gaussian_window();
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    let [mx, my, sxx, syy, sxy] =
        [&x.data, &y.data, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let va = sxx[i] - a * a;
            let vb = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            ((2.0 * a * b + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((a * a + b * b + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// `mean(sqrt((x − y)² + ε²))`.
pub fn charbonnier<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(shape_err!("{:?} vs {:?}", x.shape(), y.shape()));
    }
    let s: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            (d * d + CHARBONNIER_EPS2).sqrt()
        })
        .sum();
    Ok(s / x.numel() as f64)
}

/// Differentiable Charbonnier penalty between a prediction and a constant target.
pub fn charbonnier_loss<T: Real>(tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("{:?} vs {:?}", pred.shape(), target.shape()));
    }
    let d = tape.sub(pred, target)?;
    let d = tape.square(&d);
    let d = tape.add_scalar(&d, T::of(CHARBONNIER_EPS2));
    let d = tape.sqrt(&d);
    Ok(tape.mean(&d))
}

/// Displacement minimizing SAD of one block; ties go to the smallest `|dy| + |dx|`,
/// then to the first in raster order.
fn best_match(prev: &Plane, next: &Plane, by: usize, bx: usize, block: usize, search: i64) -> (i64, i64) {
    let mut best = (f64::INFINITY, i64::MAX, 0i64, 0i64);
    for dy in -search..=search {
        for dx in -search..=search {
            let mut sad = 0.0;
            for y in 0..block {
                let py = (by + y) as i64 + dy;
                for x in 0..block {
                    let px = (bx + x) as i64 + dx;
                    sad += (next.at(by + y, bx + x) - prev.at(py as usize, px as usize)).abs();
                }
            }
            let radius = dy.abs() + dx.abs();
            if sad < best.0 || (sad == best.0 && radius < best.1) {
                best = (sad, radius, dy, dx);
            }
        }
    }
    (best.2, best.3)
}

/// Mean `(|u|, |v|)` block displacement between consecutive luma frames, in
/// pixels per frame. Only blocks whose whole search window lies inside the
/// frame are matched.
pub fn motion_amplitude(frames: &[Plane], block: usize, search: usize) -> Result<(f64, f64)> {
    if frames.len() < 2 {
        return Err(shape_err!("motion needs at least 2 frames, got {}", frames.len()));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if block == 0 || h < block + 2 * search || w < block + 2 * search {
        return Err(shape_err!("{h}×{w} frames are too small for {block}px blocks with ±{search} search"));
    }
    for f in frames {
        same_extent(f, &frames[0])?;
    }
    let starts = |extent: usize| -> Vec<usize> { (search..=extent - block - search).step_by(block).collect() };
    let blocks: Vec<(usize, usize)> = starts(h)
        .into_iter()
        .flat_map(|y| starts(w).into_iter().map(move |x| (y, x)))
        .collect();
    let per_pair: Vec<(f64, f64)> = frames
        .par_windows(2)
        .map(|pair| {
            let (mut su, mut sv) = (0.0, 0.0);
            for &(by, bx) in &blocks {
                let (dy, dx) = best_match(&pair[0], &pair[1], by, bx, block, search as i64);
                su += dx.abs() as f64;
                sv += dy.abs() as f64;
            }
            (su / blocks.len() as f64, sv / blocks.len() as f64)
        })
        .collect();
    let n = per_pair.len() as f64;
    Ok((
        per_pair.iter().map(|p| p.0).sum::<f64>() / n,
        per_pair.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Luma planes of every frame of batch item `b`.
pub fn clip_luma<T: Real>(clip: &VideoClip<T>, b: usize) -> Result<Vec<Plane>> {
    clip.frames(b).iter().map(luma).collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricsReport {
    pub frame_psnr: Vec<f64>,
    pub frame_ssim: Vec<f64>,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_v: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

/// Per-frame and mean PSNR/SSIM of `test` against `reference` (batch item 0).
pub fn evaluate<T: Real>(test: &VideoClip<T>, reference: &VideoClip<T>) -> Result<MetricsReport> {
    if test.tensor().shape() != reference.tensor().shape() {
        return Err(shape_err!(
            "test clip {:?} vs reference {:?}",
            test.tensor().shape(),
            reference.tensor().shape()
        ));
    }
    let a = clip_luma(test, 0)?;
    let b = clip_luma(reference, 0)?;
    let pairs: Vec<(f64, f64)> = a
        .par_iter()
        .zip(&b)
        .map(|(x, y)| Ok((psnr(x, y)?, ssim(x, y)?)))
        .collect::<Result<_>>()?;
    let n = pairs.len() as f64;
    let frame_psnr: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let frame_ssim: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(MetricsReport {
        psnr: frame_psnr.iter().sum::<f64>() / n,
        ssim: frame_ssim.iter().sum::<f64>() / n,
        frame_psnr,
        frame_ssim,
        ..Default::default()
    })
}
