use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// An RGB clip `[B, 3, N, H, W]` with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<T = f32> {
    tensor: Tensor<T>,
    pub fps: Option<f64>,
}

impl<T: Real> VideoClip<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        match tensor.shape() {
            [_, 3, _, _, _] => Ok(Self { tensor, fps: None }),
            s => Err(shape_err!("a clip is [B, 3, N, H, W], got {s:?}")),
        }
    }

    /// Stack `[3, H, W]` frames into a single-batch clip.
    pub fn from_frames(frames: &[Tensor<T>]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| shape_err!("a clip needs at least one frame"))?;
        let [3, h, w] = *first.shape() else {
            return Err(shape_err!("frames are [3, H, W], got {:?}", first.shape()));
        };
        let n = frames.len();
        let mut data = vec![T::zero(); 3 * n * h * w];
        for (t, f) in frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(shape_err!("frame {t} has shape {:?}, expected {:?}", f.shape(), first.shape()));
            }
            for c in 0..3 {
                let dst = (c * n + t) * h * w;
                data[dst..dst + h * w].copy_from_slice(&f.data()[c * h * w..(c + 1) * h * w]);
            }
        }
        Self::new(Tensor::new(vec![1, 3, n, h, w], data)?)
    }

    /// `[3, H, W]` frames of batch item `b`.
    pub fn frames(&self, b: usize) -> Vec<Tensor<T>> {
        let (n, h, w) = (self.frames_len(), self.height(), self.width());
        let plane = h * w;
        let base = b * 3 * n * plane;
        (0..n)
            .map(|t| {
                let mut data = Vec::with_capacity(3 * plane);
                for c in 0..3 {
                    let s = base + (c * n + t) * plane;
                    data.extend_from_slice(&self.tensor.data()[s..s + plane]);
                }
                Tensor::from_raw(vec![3, h, w], data)
            })
            .collect()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn batch(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn frames_len(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[4]
    }

    /// Values clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            tensor: self.tensor.map(|v| v.max(T::zero()).min(T::one())),
            fps: self.fps,
        }
    }

    pub fn cast<U: Real>(&self) -> VideoClip<U> {
        VideoClip {
            tensor: self.tensor.cast(),
            fps: self.fps,
        }
    }
}
