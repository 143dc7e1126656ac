//! Overlapped spatial tiles and temporal windows for full-clip inference.
//!
//! Tiles advance by `tile − overlap` and the last one is clamped to the
//! border. Between consecutive tiles the blend hands over inside a transition
//! zone placed at the far end of their overlap, `overlap/4` pixels short of the
//! earlier tile's edge, so pixels near any tile border carry no weight. Spatial
//! zones use raised-cosine ramps evaluated at output resolution; temporal zones
//! span the whole frame overlap with linear ramps. Per-axis weights are
//! products `rise_j · (1 − rise_{j+1})` and are renormalized after
//! accumulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::model::{infer, ModelConfig, ModelWeights};
use crate::resample::upscale_bicubic;
use crate::tensor::Tensor;

/// Something that maps `[B, 3, N, H, W]` to `[B, 3, N, sH, sW]`.
pub trait Upscaler: Sync {
    fn scale(&self) -> usize;

    /// Divisors `(frames, height, width)` that input extents must respect.
    fn granularity(&self) -> (usize, usize, usize) {
        (1, 1, 1)
    }

    fn upscale(&self, clip: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// The network as an [`Upscaler`].
pub struct ModelUpscaler<'a> {
    pub config: &'a ModelConfig,
    pub weights: &'a ModelWeights<f32>,
}

impl Upscaler for ModelUpscaler<'_> {
    fn scale(&self) -> usize {
        self.config.upscale
    }

    fn granularity(&self) -> (usize, usize, usize) {
        (self.config.frame_patch, self.config.patch_h, self.config.patch_w)
    }

    fn upscale(&self, clip: &Tensor<f32>) -> Result<Tensor<f32>> {
        infer(self.config, self.weights, clip)
    }
}

/// Plain bicubic interpolation, the baseline every model is compared to.
pub struct Bicubic(pub usize);

impl Upscaler for Bicubic {
    fn scale(&self) -> usize {
        self.0
    }

    fn upscale(&self, clip: &Tensor<f32>) -> Result<Tensor<f32>> {
        upscale_bicubic(clip, self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileConfig {
    /// Spatial tile side on the low-resolution input.
    pub tile: usize,
    pub overlap: usize,
    /// Frames per temporal window.
    pub window: usize,
    pub window_overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile: 112,
            overlap: 16,
            window: 16,
            window_overlap: 4,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.tile < 2 * self.overlap {
            return Err(config_err!("tile {} must be positive and at least twice the overlap {}", self.tile, self.overlap));
        }
        if self.window == 0 || self.window_overlap >= self.window {
            return Err(config_err!(
                "window {} must be positive and exceed its overlap {}",
                self.window,
                self.window_overlap
            ));
        }
        Ok(())
    }
}

/// Tile positions along one axis, with the blend zones between neighbours.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisPlan {
    pub extent: usize,
    pub size: usize,
    pub starts: Vec<usize>,
    /// Transition zone `[a, b)` (input coordinates) where tile `j` takes over from `j − 1`; entry 0 is unused.
    pub zones: Vec<(f64, f64)>,
    pub raised_cosine: bool,
}

impl AxisPlan {
    fn new(extent: usize, size: usize, overlap: usize, raised_cosine: bool) -> Self {
        let size = size.min(extent);
        let mut starts = vec![0];
        let stride = size.saturating_sub(overlap).max(1);
        let mut p = 0;
        while p + size < extent {
            p += stride;
            starts.push(p.min(extent - size));
        }
        starts.dedup();
        let margin = if raised_cosine { overlap / 4 } else { 0 };
        let width = overlap.saturating_sub(2 * margin);
        let mut zones = vec![(0.0, 0.0)];
        for j in 1..starts.len() {
            let end = (starts[j - 1] + size - margin) as f64;
            let begin = (end - width as f64).max(starts[j] as f64).max(zones[j - 1].1);
            zones.push((begin, end.max(begin)));
        }
        Self {
            extent,
            size,
            starts,
            zones,
            raised_cosine,
        }
    }

    fn rise(&self, j: usize, x: f64) -> f64 {
        if j == 0 {
            return 1.0;
        }
        if j >= self.starts.len() {
            return 0.0;
        }
        let (a, b) = self.zones[j];
        if x < a {
            0.0
        } else if x >= b {
            1.0
        } else {
            let u = (x - a) / (b - a);
            if self.raised_cosine {
                0.5 - 0.5 * (std::f64::consts::PI * u).cos()
            } else {
                u
            }
        }
    }

    /// Blend weight of tile `j` at each of its `size·scale` output samples.
    pub fn weights(&self, j: usize, scale: usize) -> Vec<f64> {
        let s = scale as f64;
        (0..self.size * scale)
            .map(|i| {
                let x = self.starts[j] as f64 + (i as f64 + 0.5) / s;
                self.rise(j, x) * (1.0 - self.rise(j + 1, x))
            })
            .collect()
    }
}

/// Complete tiling of a `(N, H, W)` input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TilePlan {
    pub frames: AxisPlan,
    pub rows: AxisPlan,
    pub cols: AxisPlan,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.frames.starts.len() * self.rows.starts.len() * self.cols.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(t, y, x)` tile indices in accumulation order.
    pub fn tiles(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::with_capacity(self.len());
        for t in 0..self.frames.starts.len() {
            for y in 0..self.rows.starts.len() {
                for x in 0..self.cols.starts.len() {
                    v.push((t, y, x));
                }
            }
        }
        v
    }

    /// Sum of all tile weights at every output sample `[N, sH, sW]`; one everywhere
    /// up to rounding.
    pub fn weight_sum(&self, scale: usize) -> Vec<f64> {
        let (oh, ow) = (self.rows.extent * scale, self.cols.extent * scale);
        let mut acc = vec![0.0; self.frames.extent * oh * ow];
        for (ti, yi, xi) in self.tiles() {
            let wt = self.frames.weights(ti, 1);
            let wy = self.rows.weights(yi, scale);
            let wx = self.cols.weights(xi, scale);
            let (t0, y0, x0) = (self.frames.starts[ti], self.rows.starts[yi] * scale, self.cols.starts[xi] * scale);
            for (dt, a) in wt.iter().enumerate() {
                for (dy, b) in wy.iter().enumerate() {
                    for (dx, c) in wx.iter().enumerate() {
                        acc[((t0 + dt) * oh + y0 + dy) * ow + x0 + dx] += a * b * c;
                    }
                }
            }
        }
        acc
    }
}

fn round_down(v: usize, m: usize) -> usize {
    (v / m * m).max(m)
}

/// Plan tiles over an input of `frames × height × width` whose extents are
/// already multiples of `granularity`.
pub fn plan_tiles(frames: usize, height: usize, width: usize, cfg: &TileConfig, granularity: (usize, usize, usize)) -> Result<TilePlan> {
    cfg.validate()?;
    let (gn, gh, gw) = granularity;
    if frames % gn != 0 || height % gh != 0 || width % gw != 0 {
        return Err(shape_err!("extents ({frames}, {height}, {width}) are not multiples of {granularity:?}"));
    }
    Ok(TilePlan {
        frames: AxisPlan::new(frames, round_down(cfg.window, gn), cfg.window_overlap, false),
        rows: AxisPlan::new(height, round_down(cfg.tile, gh), cfg.overlap, true),
        cols: AxisPlan::new(width, round_down(cfg.tile, gw), cfg.overlap, true),
    })
}

fn dims5(t: &Tensor<f32>) -> Result<[usize; 5]> {
    t.shape()
        .try_into()
        .map_err(|_| shape_err!("expected [B, C, N, H, W], got {:?}", t.shape()))
}

fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let i = i % period;
    if i >= n {
        period - i
    } else {
        i
    }
}

/// Reflect-pad the trailing `(N, H, W)` axes up to `(n, h, w)`.
pub fn reflect_pad(t: &Tensor<f32>, n: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let [b, c, n0, h0, w0] = dims5(t)?;
    if (n, h, w) == (n0, h0, w0) {
        return Ok(t.clone());
    }
    let d = t.data();
    Tensor::from_fn(&[b, c, n, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        let f = (i / (w * h)) % n;
        let bc = i / (w * h * n);
        d[((bc * n0 + mirror(f, n0)) * h0 + mirror(y, h0)) * w0 + mirror(x, w0)]
    })
}

fn crop(t: &Tensor<f32>, t0: usize, nt: usize, y0: usize, ny: usize, x0: usize, nx: usize) -> Result<Tensor<f32>> {
    let [b, c, n, h, w] = dims5(t)?;
    let d = t.data();
    let mut out = Vec::with_capacity(b * c * nt * ny * nx);
    for bc in 0..b * c {
        for f in t0..t0 + nt {
            for y in y0..y0 + ny {
                let s = ((bc * n + f) * h + y) * w + x0;
                out.extend_from_slice(&d[s..s + nx]);
            }
        }
    }
    Tensor::new(vec![b, c, nt, ny, nx], out)
}

/// Upscale `clip` tile by tile and blend the results.
pub fn tiled_forward(clip: &Tensor<f32>, model: &dyn Upscaler, cfg: &TileConfig) -> Result<Tensor<f32>> {
    let [b, c, n, h, w] = dims5(clip)?;
    let s = model.scale();
    let (gn, gh, gw) = model.granularity();
    let up = |v: usize, g: usize| v.div_ceil(g) * g;
    let (np, hp, wp) = (up(n, gn), up(h, gh), up(w, gw));
    let padded = reflect_pad(clip, np, hp, wp)?;
    let plan = plan_tiles(np, hp, wp, cfg, (gn, gh, gw))?;
    let (oh, ow) = (hp * s, wp * s);
    let mut acc = vec![0.0f64; b * c * np * oh * ow];
    let mut wsum = vec![0.0f64; np * oh * ow];
    let tiles = plan.tiles();
    let chunk = rayon::current_num_threads().max(1);
    for group in tiles.chunks(chunk) {
        let outputs: Vec<Tensor<f32>> = group
            .par_iter()
            .map(|&(ti, yi, xi)| {
                let input = crop(
                    &padded,
                    plan.frames.starts[ti],
                    plan.frames.size,
                    plan.rows.starts[yi],
                    plan.rows.size,
                    plan.cols.starts[xi],
                    plan.cols.size,
                )?;
                let out = model.upscale(&input)?;
                let want = [b, c, plan.frames.size, plan.rows.size * s, plan.cols.size * s];
                if out.shape() != want {
                    return Err(shape_err!("upscaler returned {:?}, expected {want:?}", out.shape()));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (&(ti, yi, xi), out) in group.iter().zip(&outputs) {
            let wt = plan.frames.weights(ti, 1);
            let wy = plan.rows.weights(yi, s);
            let wx = plan.cols.weights(xi, s);
            let (t0, y0, x0) = (plan.frames.starts[ti], plan.rows.starts[yi] * s, plan.cols.starts[xi] * s);
            let (th, tw) = (wy.len(), wx.len());
            let od = out.data();
            for (dt, &a) in wt.iter().enumerate() {
                for (dy, &bw) in wy.iter().enumerate() {
                    let ab = a * bw;
                    if ab == 0.0 {
                        continue;
                    }
                    for (dx, &cw) in wx.iter().enumerate() {
                        let wgt = ab * cw;
                        wsum[((t0 + dt) * oh + y0 + dy) * ow + x0 + dx] += wgt;
                    }
                    for bc in 0..b * c {
                        let src = ((bc * wt.len() + dt) * th + dy) * tw;
                        let dst = ((bc * np + t0 + dt) * oh + y0 + dy) * ow + x0;
                        for (dx, &cw) in wx.iter().enumerate() {
                            acc[dst + dx] += ab * cw * od[src + dx] as f64;
                        }
                    }
                }
            }
        }
    }
    let (fh, fw) = (h * s, w * s);
    let mut out = Vec::with_capacity(b * c * n * fh * fw);
    for bc in 0..b * c {
        for f in 0..n {
            for y in 0..fh {
                for x in 0..fw {
                    let k = (f * oh + y) * ow + x;
                    out.push((acc[bc * np * oh * ow + k] / wsum[k]) as f32);
                }
            }
        }
    }
    Tensor::new(vec![b, c, n, fh, fw], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_clamped() {
        let p = AxisPlan::new(200, 112, 16, true);
        assert_eq!(p.starts, vec![0, 88]);
        let p = AxisPlan::new(112, 112, 16, true);
        assert_eq!(p.starts, vec![0]);
        let p = AxisPlan::new(64, 112, 16, true);
        assert_eq!((p.starts.clone(), p.size), (vec![0], 64));
        let p = AxisPlan::new(300, 112, 16, true);
        assert_eq!(p.starts, vec![0, 96, 188]);
    }

    #[test]
    fn single_tile_weight_is_one() {
        let p = AxisPlan::new(112, 112, 16, true);
        assert!(p.weights(0, 4).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn zero_overlap_is_a_hard_cut() {
        let p = AxisPlan::new(8, 4, 0, true);
        assert_eq!(p.starts, vec![0, 4]);
        assert!(p.weights(0, 2).iter().all(|&w| w == 1.0));
        assert!(p.weights(1, 2).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weights_vanish_near_tile_edges() {
        let p = AxisPlan::new(200, 112, 16, true);
        let w0 = p.weights(0, 4);
        // Tile 0 ends at 112; its last 4 input pixels belong to tile 1 only.
        assert!(w0[(112 - 4) * 4..].iter().all(|&w| w == 0.0));
        let w1 = p.weights(1, 4);
        assert!(w1[..4 * 4].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(TileConfig { tile: 16, overlap: 9, ..Default::default() }.validate().is_err());
        assert!(TileConfig { window: 4, window_overlap: 4, ..Default::default() }.validate().is_err());
        TileConfig::default().validate().unwrap();
    }

    #[test]
    fn reflect_padding() {
        let t = Tensor::from_fn(&[1, 1, 1, 1, 3], |i| i as f32).unwrap();
        let p = reflect_pad(&t, 1, 1, 6).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0]);
    }
}
