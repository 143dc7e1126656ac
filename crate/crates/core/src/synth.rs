//! Procedural test clips: smooth textured scenes translating at constant velocity.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::VideoClip;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Pixels per frame, `(vertical, horizontal)`.
    pub velocity: (f64, f64),
    pub waves: usize,
    pub discs: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            velocity: (0.0, 1.0),
            waves: 4,
            discs: 3,
            seed: 0,
        }
    }
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

/// Render the scene; frame `t` samples the static pattern at `(y, x) − t·velocity`.
pub fn scene<T: Real>(cfg: &SceneConfig) -> Result<VideoClip<T>> {
    let mut rng = Rng::new(cfg.seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform(0.3, 0.7));
    let waves: Vec<Wave> = (0..cfg.waves)
        .map(|_| {
            let period = rng.uniform(3.0, 16.0);
            let angle = rng.uniform(0.0, std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            Wave {
                ky: k * angle.sin(),
                kx: k * angle.cos(),
                phase: rng.uniform(0.0, std::f64::consts::TAU),
                amp: std::array::from_fn(|_| rng.uniform(-0.12, 0.12)),
            }
        })
        .collect();
    let extent = cfg.height.max(cfg.width) as f64;
    let discs: Vec<Disc> = (0..cfg.discs)
        .map(|_| Disc {
            cy: rng.uniform(0.0, cfg.height as f64),
            cx: rng.uniform(0.0, cfg.width as f64),
            radius: rng.uniform(0.08, 0.25) * extent,
            color: std::array::from_fn(|_| rng.uniform(-0.25, 0.25)),
        })
        .collect();
    let (n, h, w) = (cfg.frames, cfg.height, cfg.width);
    let mut data = vec![T::zero(); 3 * n * h * w];
    for t in 0..n {
        for y in 0..h {
            for x in 0..w {
                let py = y as f64 - t as f64 * cfg.velocity.0;
                let px = x as f64 - t as f64 * cfg.velocity.1;
                let mut rgb = base;
                for wv in &waves {
                    let s = (wv.ky * py + wv.kx * px + wv.phase).sin();
                    for c in 0..3 {
                        rgb[c] += wv.amp[c] * s;
                    }
                }
                for d in &discs {
                    let r = ((py - d.cy).powi(2) + (px - d.cx).powi(2)).sqrt();
                    // one-pixel soft edge
                    let inside = (d.radius - r + 0.5).clamp(0.0, 1.0);
                    for c in 0..3 {
                        rgb[c] += inside * d.color[c];
                    }
                }
                for c in 0..3 {
                    data[((c * n + t) * h + y) * w + x] = T::of(rgb[c].clamp(0.0, 1.0));
                }
            }
        }
    }
    VideoClip::new(Tensor::new(vec![1, 3, n, h, w], data)?)
}
