//! Central finite-difference verification of tape gradients in `f64`.

use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Differentiable function of several tensor inputs.
pub type Function<'a> = dyn Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Coordinates probed per input; `None` probes all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: None,
            seed: 0,
        }
    }
}

/// Outcome for one input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub probed: usize,
    pub analytic_norm: f64,
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` over the probed coordinates.
    pub rel_err: f64,
}

fn project(out: &Tensor<f64>, dir: &Tensor<f64>) -> f64 {
    out.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum()
}

impl GradCheck {
    /// Compare the gradient of `⟨f(inputs), R⟩` for a fixed random `R` with
    /// central differences.
    pub fn run(&self, f: &Function<'_>, inputs: &[Tensor<f64>]) -> Result<Vec<InputReport>> {
        let mut rng = Rng::new(self.seed);
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let dir = Tensor::from_fn(out.shape(), |_| rng.normal(0.0, 1.0))?;
        let prod = tape.mul(&out, &tape.constant(dir.clone()))?;
        let loss = tape.sum(&prod);
        let grads = tape.backward(&loss)?;

        let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
            let t = Tape::inference();
            let vs: Vec<Var<f64>> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let o = f(&t, &vs)?;
            if o.shape() != dir.shape() {
                return Err(shape_err!("function output shape changed under perturbation"));
            }
            Ok(project(o.value(), &dir))
        };

        let mut reports = Vec::with_capacity(inputs.len());
        let mut probe = inputs.to_vec();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(v);
            let n = inputs[i].numel();
            let coords: Vec<usize> = match self.samples {
                Some(k) if k < n => (0..k).map(|_| rng.index(n)).collect(),
                _ => (0..n).collect(),
            };
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for &c in &coords {
                let x0 = inputs[i].data()[c];
                probe[i].data_mut()[c] = x0 + self.step;
                let up = eval(&probe)?;
                probe[i].data_mut()[c] = x0 - self.step;
                let down = eval(&probe)?;
                probe[i].data_mut()[c] = x0;
                let numeric = (up - down) / (2.0 * self.step);
                let a = analytic.data()[c];
                diff += (a - numeric).powi(2);
                na += a * a;
                nn += numeric * numeric;
            }
            let scale = na.sqrt().max(nn.sqrt());
            reports.push(InputReport {
                probed: coords.len(),
                analytic_norm: na.sqrt(),
                rel_err: if scale == 0.0 { 0.0 } else { diff.sqrt() / scale },
            });
        }
        Ok(reports)
    }

    /// Largest relative error over all inputs.
    pub fn max_rel_err(&self, f: &Function<'_>, inputs: &[Tensor<f64>]) -> Result<f64> {
        Ok(self.run(f, inputs)?.iter().map(|r| r.rel_err).fold(0.0, f64::max))
    }
}
