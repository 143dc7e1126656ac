//! First-order degradation synthesis: blur → resize → noise → compression.
//!
//! Every operation acts independently on the trailing `H × W` planes of a
//! tensor, so frames, channels and batch items are all handled alike.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::resample::{resize, Filter};
use crate::rng::{mix_seed, Rng};
use crate::tensor::{Real, Tensor};

/// Taps of the blur kernel along each axis.
pub const BLUR_TAPS: usize = 21;

/// Standard JPEG luminance quantization table (quality 50), row-major.
pub const LUMA_QUANT: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Inclusive `[lo, hi]` sampling range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }

    fn check(&self, name: &str, min: f64, max: f64) -> Result<()> {
        if !(self.lo <= self.hi) || self.lo < min || self.hi > max {
            return Err(config_err!("{name} range [{}, {}] must be ordered within [{min}, {max}]", self.lo, self.hi));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub blur_sigma: Range,
    pub scale: Range,
    pub modes: Vec<Filter>,
    pub noise_sigma: Range,
    pub quality: Range,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma: Range::new(0.2, 3.0),
            scale: Range::new(0.25, 1.0),
            modes: Filter::ALL.to_vec(),
            noise_sigma: Range::new(0.0, 0.1),
            quality: Range::new(30.0, 95.0),
            seed: 0,
        }
    }
}

impl DegradationConfig {
    /// All stages neutral apart from the final bicubic reduction.
    pub fn neutral(seed: u64) -> Self {
        Self {
            blur_sigma: Range::fixed(0.0),
            scale: Range::fixed(0.25),
            modes: vec![Filter::Bicubic],
            noise_sigma: Range::fixed(0.0),
            quality: Range::fixed(100.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.blur_sigma.check("blur_sigma", 0.0, f64::MAX)?;
        self.scale.check("scale", f64::MIN_POSITIVE, f64::MAX)?;
        self.noise_sigma.check("noise_sigma", 0.0, f64::MAX)?;
        self.quality.check("quality", 1.0, 100.0)?;
        if self.modes.is_empty() {
            return Err(config_err!("at least one resize mode is required"));
        }
        Ok(())
    }
}

/// Parameters drawn for one clip; replaying them reproduces the clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawnParams {
    pub seed: u64,
    pub clip_index: u64,
    pub blur_sigma: f64,
    pub scale: f64,
    pub mode: Filter,
    pub noise_sigma: f64,
    pub quality: f64,
}

fn planes(t: &Tensor<impl Real>) -> Result<(usize, usize)> {
    match t.shape() {
        [.., h, w] if t.ndim() >= 2 => Ok((*h, *w)),
        s => Err(Error::InvalidShape(format!("expected at least 2 axes, got {s:?}"))),
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Normalized sampled Gaussian of [`BLUR_TAPS`] taps.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (BLUR_TAPS / 2) as f64;
    let g: Vec<f64> = (0..BLUR_TAPS)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable isotropic Gaussian blur with reflected borders; `sigma = 0` is the identity.
pub fn gaussian_blur<T: Real>(t: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) {
        return Err(config_err!("blur sigma {sigma} must be nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let (h, w) = planes(t)?;
    let k = gaussian_kernel(sigma);
    let r = (BLUR_TAPS / 2) as i64;
    let mut out = t.clone();
    out.data_mut().par_chunks_mut(h * w).for_each(|p| {
        let mut rows = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * p[y * w + reflect(x as i64 + i as i64 - r, w)].as_f64())
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * rows[reflect(y as i64 + i as i64 - r, h) * w + x])
                    .sum();
                p[y * w + x] = T::of(v);
            }
        }
    });
    Ok(out)
}

/// Resize planes by `scale`; output extents are `round(extent·scale)`.
pub fn resize_by<T: Real>(t: &Tensor<T>, scale: f64, mode: Filter) -> Result<Tensor<T>> {
    let (h, w) = planes(t)?;
    let (oh, ow) = ((h as f64 * scale).round(), (w as f64 * scale).round());
    if !(scale > 0.0) || oh < 1.0 || ow < 1.0 {
        return Err(Error::InvalidScale(format!("scale {scale} maps {h}×{w} to {oh}×{ow}")));
    }
    resize(t, oh as usize, ow as usize, mode)
}

/// Add i.i.d. `N(0, sigma²)` to every value.
pub fn add_gaussian_noise<T: Real>(t: &Tensor<T>, sigma: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) {
        return Err(config_err!("noise sigma {sigma} must be nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = T::of(v.as_f64() + rng.normal(0.0, sigma));
    }
    Ok(out)
}

/// Quantization steps for `quality` on the 0–255 scale; quality 100 gives zero steps.
pub fn quant_steps(quality: f64) -> Result<[f64; 64]> {
    if !(1.0..=100.0).contains(&quality) {
        return Err(config_err!("quality {quality} outside [1, 100]"));
    }
    let s = if quality < 50.0 { 5000.0 / quality } else { 200.0 - 2.0 * quality };
    Ok(LUMA_QUANT.map(|q| q * s / 100.0))
}

/// Orthonormal `n`-point DCT-II basis, `basis[k][i]`.
fn dct_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Quantize one level-shifted `m × n` block (row-major) in place.
fn jpeg_block(block: &mut [f64], m: usize, n: usize, steps: &[f64; 64], rows: &[Vec<f64>], cols: &[Vec<f64>]) {
    let mut tmp = vec![0.0; m * n];
    let mut coef = vec![0.0; m * n];
    for u in 0..m {
        for x in 0..n {
            tmp[u * n + x] = (0..m).map(|y| rows[u][y] * block[y * n + x]).sum();
        }
    }
    for u in 0..m {
        for v in 0..n {
            coef[u * n + v] = (0..n).map(|x| cols[v][x] * tmp[u * n + x]).sum();
        }
    }
    for u in 0..m {
        for v in 0..n {
            // Frequency (u, v) of a short block sits at (8u/m, 8v/n) on the 8-point grid.
            let s = steps[(u * 8 / m) * 8 + v * 8 / n];
            if s > 0.0 {
                let c = &mut coef[u * n + v];
                *c = (*c / s).round() * s;
            }
        }
    }
    for y in 0..m {
        for v in 0..n {
            tmp[y * n + v] = (0..m).map(|u| rows[u][y] * coef[u * n + v]).sum();
        }
    }
    for y in 0..m {
        for x in 0..n {
            block[y * n + x] = (0..n).map(|v| cols[v][x] * tmp[y * n + v]).sum();
        }
    }
}

/// Block-DCT quantization proxy for lossy compression.
///
/// Values are mapped to `0..255`, level-shifted by 128, transformed per 8×8
/// block, quantized with the luminance table scaled by `quality`, and
/// transformed back. No clamping. Partial blocks at the right and bottom
/// edges use a DCT of their own extent, so the operation is a projection and
/// applying it twice changes nothing.
pub fn jpeg_proxy<T: Real>(t: &Tensor<T>, quality: f64) -> Result<Tensor<T>> {
    let steps = quant_steps(quality)?;
    let (h, w) = planes(t)?;
    let bases: Vec<Vec<Vec<f64>>> = (0..=8).map(|n| if n == 0 { Vec::new() } else { dct_basis(n) }).collect();
    let mut out = t.clone();
    out.data_mut().par_chunks_mut(h * w).for_each(|p| {
        let mut block = [0.0; 64];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let (m, n) = (8.min(h - by), 8.min(w - bx));
                for y in 0..m {
                    for x in 0..n {
                        block[y * n + x] = p[(by + y) * w + bx + x].as_f64() * 255.0 - 128.0;
                    }
                }
                jpeg_block(&mut block[..m * n], m, n, &steps, &bases[m], &bases[n]);
                for y in 0..m {
                    for x in 0..n {
                        p[(by + y) * w + bx + x] = T::of((block[y * n + x] + 128.0) / 255.0);
                    }
                }
            }
        }
    });
    Ok(out)
}

fn quarter_extent(t: &Tensor<impl Real>) -> Result<(usize, usize)> {
    let (h, w) = planes(t)?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidShape(format!("frame extents {h}×{w} are not divisible by 4")));
    }
    Ok((h / 4, w / 4))
}

/// Antialiased bicubic ×¼ reduction.
pub fn bicubic_down4<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = quarter_extent(t)?;
    resize(t, h, w, Filter::Bicubic)
}

/// Draw one parameter set for clip `clip_index`.
pub fn draw_params(cfg: &DegradationConfig, clip_index: u64) -> Result<(DrawnParams, Rng)> {
    cfg.validate()?;
    let mut rng = Rng::new(mix_seed(cfg.seed, clip_index));
    let blur_sigma = cfg.blur_sigma.draw(&mut rng);
    let scale = cfg.scale.draw(&mut rng);
    let mode = cfg.modes[if cfg.modes.len() == 1 { 0 } else { rng.index(cfg.modes.len()) }];
    let noise_sigma = cfg.noise_sigma.draw(&mut rng);
    let quality = cfg.quality.draw(&mut rng);
    let params = DrawnParams {
        seed: cfg.seed,
        clip_index,
        blur_sigma,
        scale,
        mode,
        noise_sigma,
        quality,
    };
    Ok((params, rng))
}

/// Apply already-drawn parameters; `rng` supplies the noise.
pub fn apply_params<T: Real>(hq: &Tensor<T>, p: &DrawnParams, rng: &mut Rng) -> Result<Tensor<T>> {
    let (qh, qw) = quarter_extent(hq)?;
    let x = gaussian_blur(hq, p.blur_sigma)?;
    let x = resize_by(&x, p.scale, p.mode)?;
    let x = add_gaussian_noise(&x, p.noise_sigma, rng)?;
    let x = jpeg_proxy(&x, p.quality)?;
    resize(&x, qh, qw, Filter::Bicubic)
}

/// Degrade a high-quality clip to a quarter-resolution low-quality clip.
/// All frames share one parameter draw.
pub fn degrade_clip<T: Real>(hq: &Tensor<T>, cfg: &DegradationConfig, clip_index: u64) -> Result<(Tensor<T>, DrawnParams)> {
    let (params, mut rng) = draw_params(cfg, clip_index)?;
    let lq = apply_params(hq, &params, &mut rng)?;
    Ok((lq, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(12, 5), 4);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn quality_scaling() {
        assert_eq!(quant_steps(50.0).unwrap(), LUMA_QUANT);
        assert!(quant_steps(100.0).unwrap().iter().all(|&s| s == 0.0));
        assert_eq!(quant_steps(25.0).unwrap()[0], 32.0);
        assert!(quant_steps(0.0).is_err() && quant_steps(101.0).is_err());
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        for n in 1..=8 {
            let b = dct_basis(n);
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = (0..n).map(|k| b[i][k] * b[j][k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    /// Direct 2-D DCT-II / quantize / inverse on one 8×8 block, written from the definition.
    fn scalar_oracle(x: &[f64; 64], steps: &[f64; 64]) -> [f64; 64] {
        use std::f64::consts::PI;
        let c = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
        let mut coef = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for y in 0..8 {
                    for xx in 0..8 {
                        acc += x[y * 8 + xx]
                            * ((2 * y + 1) as f64 * u as f64 * PI / 16.0).cos()
                            * ((2 * xx + 1) as f64 * v as f64 * PI / 16.0).cos();
                    }
                }
                let q = steps[u * 8 + v];
                coef[u * 8 + v] = (c(u) * c(v) * acc / q).round() * q;
            }
        }
        let mut out = [0.0; 64];
        for y in 0..8 {
            for xx in 0..8 {
                let mut acc = 0.0;
                for u in 0..8 {
                    for v in 0..8 {
                        acc += c(u) * c(v) * coef[u * 8 + v]
                            * ((2 * y + 1) as f64 * u as f64 * PI / 16.0).cos()
                            * ((2 * xx + 1) as f64 * v as f64 * PI / 16.0).cos();
                    }
                }
                out[y * 8 + xx] = acc;
            }
        }
        out
    }

    #[test]
    fn single_block_matches_scalar_oracle() {
        let mut rng = Rng::new(12);
        let img = Tensor::<f64>::from_fn(&[8, 8], |_| rng.uniform(0.0, 1.0)).unwrap();
        let got = jpeg_proxy(&img, 50.0).unwrap();
        let shifted: [f64; 64] = std::array::from_fn(|i| img.data()[i] * 255.0 - 128.0);
        let want = scalar_oracle(&shifted, &LUMA_QUANT);
        for i in 0..64 {
            assert!((got.data()[i] - (want[i] + 128.0) / 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_block_survives() {
        let img = Tensor::<f64>::full(&[8, 8], 0.6).unwrap();
        let got = jpeg_proxy(&img, 50.0).unwrap();
        let v = got.data()[0];
        assert!(got.data().iter().all(|x| (x - v).abs() < 1e-12));
        // DC of a constant block is 8·(0.6·255 − 128); step 16.
        let dc: f64 = 8.0 * (0.6 * 255.0 - 128.0);
        assert!((v - ((dc / 16.0).round() * 16.0 / 8.0 + 128.0) / 255.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut c = DegradationConfig::default();
        c.validate().unwrap();
        c.scale = Range::new(0.5, 0.25);
        assert!(c.validate().is_err());
        let c = DegradationConfig {
            quality: Range::new(10.0, 120.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn noise_is_centered_and_seeded() {
        let z = Tensor::<f64>::zeros(&[1000, 1000]).unwrap();
        let a = add_gaussian_noise(&z, 0.1, &mut Rng::new(6)).unwrap();
        let mean = a.sum() / a.numel() as f64;
        assert!(mean.abs() < 3.0 * 0.1 / 1000.0);
        assert_eq!(a, add_gaussian_noise(&z, 0.1, &mut Rng::new(6)).unwrap());
        assert_eq!(add_gaussian_noise(&z, 0.0, &mut Rng::new(6)).unwrap(), z);
    }

    #[test]
    fn tiny_scale_is_invalid() {
        let t = Tensor::<f32>::zeros(&[4, 4]).unwrap();
        assert!(matches!(resize_by(&t, 0.01, Filter::Bicubic), Err(Error::InvalidScale(_))));
    }
}
