//! Neural SDE generator.
//!
//! ```text
//! Y_0 = xi([a; C]),  Y_{k+1} = Y_k + mu(t_k, Y_k, C) dt_k + sigma(t_k, Y_k, C) dW_k
//! X_k = A [Y_k; C] + b
//! ```
//!
//! integrated with Euler–Maruyama (Itô). `C` is an optional conditioning
//! vector of length `d_c`; `d_c = 0` gives the unconditional model. Output
//! paths carry a time channel at index 0 followed by the `d_x` readout
//! channels.

mod checkpoint;
mod condition;
mod mlp;
mod train;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use condition::{encode_condition, encoding_len, ConditionTransform};
pub use mlp::{lipswish, lipswish_grad, FinalActivation, MlpCache, MlpParams};
pub use train::{
    conditional_objective, train, unconditional_objective, ConditionalData, Objective, StepReport, TrainConfig,
    TrainData, TrainObserver,
};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{Path, PathBatch, TimeGrid};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeDims {
    /// Initial noise dimension.
    pub d_a: usize,
    /// Hidden state dimension.
    pub d_y: usize,
    /// Brownian dimension.
    pub d_w: usize,
    /// Output dimension.
    pub d_x: usize,
    /// Conditioning vector length, zero when unconditional.
    #[serde(default)]
    pub d_c: usize,
}

impl SdeDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_a", self.d_a), ("d_y", self.d_y), ("d_w", self.d_w), ("d_x", self.d_x)] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    fn field_input(&self) -> usize {
        1 + self.d_y + self.d_c
    }
}

/// Layer widths and output activations of the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Hidden widths of the drift and diffusion networks.
    pub hidden: Vec<usize>,
    /// Hidden widths of the initial-condition network.
    #[serde(default)]
    pub xi_hidden: Vec<usize>,
    #[serde(default = "tanh")]
    pub drift_final: FinalActivation,
    #[serde(default = "tanh")]
    pub diffusion_final: FinalActivation,
    /// When false, `a` is fixed at zero so `Y_0` is a learned constant.
    #[serde(default)]
    pub learn_initial: bool,
}

fn tanh() -> FinalActivation {
    FinalActivation::Tanh
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            xi_hidden: Vec::new(),
            drift_final: FinalActivation::Tanh,
            diffusion_final: FinalActivation::Tanh,
            learn_initial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSdeParams {
    pub dims: SdeDims,
    pub learn_initial: bool,
    pub xi: MlpParams,
    pub mu: MlpParams,
    pub sigma: MlpParams,
    /// Row-major `d_x x (d_y + d_c)`.
    pub readout_w: Vec<f64>,
    pub readout_b: Vec<f64>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// Weights uniform in `±init_scale / sqrt(fan_in)`, biases zero. The
/// readout matrix follows the same scheme.
pub fn init_params(dims: SdeDims, arch: &Architecture, init_scale: f64, seed: u64) -> Result<NeuralSdeParams> {
    dims.validate()?;
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init_scale must be >= 0, got {init_scale}")));
    }
    let mut r = rng::stream(seed, "init", 0);
    let fi = dims.field_input();
    let xi = MlpParams::init(
        &layer_sizes(dims.d_a + dims.d_c, &arch.xi_hidden, dims.d_y),
        FinalActivation::Identity,
        init_scale,
        &mut r,
    )?;
    let mu = MlpParams::init(&layer_sizes(fi, &arch.hidden, dims.d_y), arch.drift_final, init_scale, &mut r)?;
    let sigma = MlpParams::init(
        &layer_sizes(fi, &arch.hidden, dims.d_y * dims.d_w),
        arch.diffusion_final,
        init_scale,
        &mut r,
    )?;
    let cols = dims.d_y + dims.d_c;
    let s = init_scale / (cols as f64).sqrt();
    let readout_w = (0..dims.d_x * cols)
        .map(|_| if s > 0.0 { r.gen_range(-s..=s) } else { 0.0 })
        .collect();
    Ok(NeuralSdeParams {
        dims,
        learn_initial: arch.learn_initial,
        xi,
        mu,
        sigma,
        readout_w,
        readout_b: vec![0.0; dims.d_x],
    })
}

impl NeuralSdeParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            learn_initial: self.learn_initial,
            xi: self.xi.zeros_like(),
            mu: self.mu.zeros_like(),
            sigma: self.sigma.zeros_like(),
            readout_w: vec![0.0; self.readout_w.len()],
            readout_b: vec![0.0; self.readout_b.len()],
        }
    }

    /// All parameter tensors in a fixed order: xi, mu, sigma, A, b.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut t: Vec<&Vec<f64>> = Vec::new();
        t.extend(self.xi.tensors());
        t.extend(self.mu.tensors());
        t.extend(self.sigma.tensors());
        t.push(&self.readout_w);
        t.push(&self.readout_b);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut t: Vec<&mut Vec<f64>> = Vec::new();
        t.extend(self.xi.tensors_mut());
        t.extend(self.mu.tensors_mut());
        t.extend(self.sigma.tensors_mut());
        t.push(&mut self.readout_w);
        t.push(&mut self.readout_b);
        t
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        d.validate()?;
        for m in [&self.xi, &self.mu, &self.sigma] {
            m.validate()?;
        }
        let fi = d.field_input();
        let ok = self.xi.input_dim() == d.d_a + d.d_c
            && self.xi.output_dim() == d.d_y
            && self.mu.input_dim() == fi
            && self.mu.output_dim() == d.d_y
            && self.sigma.input_dim() == fi
            && self.sigma.output_dim() == d.d_y * d.d_w
            && self.readout_w.len() == d.d_x * (d.d_y + d.d_c)
            && self.readout_b.len() == d.d_x;
        if !ok {
            return Err(Error::InvalidState("parameter shapes do not match dims".into()));
        }
        if self.readout_w.iter().chain(&self.readout_b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("readout has non-finite parameters".into()));
        }
        Ok(())
    }

    fn readout(&self, y: &[f64], c: &[f64], out: &mut [f64]) {
        let cols = self.dims.d_y + self.dims.d_c;
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.readout_w[o * cols..(o + 1) * cols];
            *slot = self.readout_b[o]
                + row[..self.dims.d_y].iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
                + row[self.dims.d_y..].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Initial draws and Brownian increments for one rollout of `n` paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub n: usize,
    pub steps: usize,
    pub d_a: usize,
    pub d_w: usize,
    /// `n x d_a`; all zero when the initial condition is not learned.
    pub a: Vec<f64>,
    /// `n x steps x d_w`, already scaled by `sqrt(dt_k)`.
    pub dw: Vec<f64>,
    pub seed: u64,
}

impl NoiseBundle {
    /// Path `i` draws from stream `i` of `(seed, purpose)`.
    pub fn draw(params: &NeuralSdeParams, n: usize, grid: &TimeGrid, seed: u64, purpose: &str) -> Self {
        let d = params.dims;
        let steps = grid.len() - 1;
        let dts: Vec<f64> = grid.times().windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
        let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, purpose, i as u64);
                let a: Vec<f64> = (0..d.d_a).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
                let a = if params.learn_initial { a } else { vec![0.0; d.d_a] };
                let mut dw = Vec::with_capacity(steps * d.d_w);
                for sq in &dts {
                    for _ in 0..d.d_w {
                        dw.push(sq * r.sample::<f64, _>(StandardNormal));
                    }
                }
                (a, dw)
            })
            .collect();
        let (a, dw): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_path.into_iter().unzip();
        Self {
            n,
            steps,
            d_a: d.d_a,
            d_w: d.d_w,
            a: a.concat(),
            dw: dw.concat(),
            seed,
        }
    }

    pub fn a(&self, i: usize) -> &[f64] {
        &self.a[i * self.d_a..(i + 1) * self.d_a]
    }

    pub fn dw(&self, i: usize, k: usize) -> &[f64] {
        let off = (i * self.steps + k) * self.d_w;
        &self.dw[off..off + self.d_w]
    }
}

/// Everything the backward pass needs: the grid, noise, condition and every
/// hidden state of every path.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub grid: TimeGrid,
    pub noise: NoiseBundle,
    pub condition: Vec<f64>,
    /// Per path, row-major `L x d_y`.
    pub states: Vec<Vec<f64>>,
}

pub(crate) fn field_input(t: f64, y: &[f64], c: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(1 + y.len() + c.len());
    u.push(t);
    u.extend_from_slice(y);
    u.extend_from_slice(c);
    u
}

pub(crate) fn xi_input(a: &[f64], c: &[f64]) -> Vec<f64> {
    [a, c].concat()
}

fn rollout_one(params: &NeuralSdeParams, grid: &TimeGrid, noise: &NoiseBundle, c: &[f64], i: usize) -> Result<Vec<f64>> {
    let d = params.dims;
    let times = grid.times();
    let mut states = Vec::with_capacity(times.len() * d.d_y);
    states.extend(params.xi.forward(&xi_input(noise.a(i), c)));
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::RolloutDivergence { step: 0 });
    }
    for k in 0..times.len() - 1 {
        let y = &states[k * d.d_y..(k + 1) * d.d_y];
        let u = field_input(times[k], y, c);
        let drift = params.mu.forward(&u);
        let diff = params.sigma.forward(&u);
        let dt = times[k + 1] - times[k];
        let dw = noise.dw(i, k);
        let next: Vec<f64> = (0..d.d_y)
            .map(|r| {
                let s: f64 = (0..d.d_w).map(|j| diff[r * d.d_w + j] * dw[j]).sum();
                y[r] + drift[r] * dt + s
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDivergence { step: k + 1 });
        }
        states.extend(next);
    }
    Ok(states)
}

/// Euler–Maruyama rollout of `noise.n` paths on `grid`.
pub fn sample(
    params: &NeuralSdeParams,
    grid: &TimeGrid,
    noise: &NoiseBundle,
    condition: Option<&[f64]>,
) -> Result<(PathBatch, RolloutRecord)> {
    params.validate()?;
    let d = params.dims;
    let c = condition.unwrap_or(&[]);
    if c.len() != d.d_c {
        return Err(Error::DimensionMismatch {
            expected: d.d_c,
            got: c.len(),
        });
    }
    if noise.steps + 1 != grid.len() || noise.d_a != d.d_a || noise.d_w != d.d_w || noise.n == 0 {
        return Err(Error::InvalidArgument(format!(
            "noise bundle ({} paths, {} steps) does not match grid of {} nodes and dims {:?}",
            noise.n,
            noise.steps,
            grid.len(),
            d
        )));
    }
    let results: Vec<Result<Vec<f64>>> = (0..noise.n)
        .into_par_iter()
        .map(|i| rollout_one(params, grid, noise, c, i))
        .collect();
    let states = results.into_iter().collect::<Result<Vec<_>>>()?;

    let out_dim = d.d_x + 1;
    let times = grid.times();
    let paths = states
        .iter()
        .map(|s| {
            let mut values = vec![0.0; times.len() * out_dim];
            for (k, t) in times.iter().enumerate() {
                let row = &mut values[k * out_dim..(k + 1) * out_dim];
                row[0] = *t;
                params.readout(&s[k * d.d_y..(k + 1) * d.d_y], c, &mut row[1..]);
            }
            Path::new(grid.clone(), values, out_dim)?.with_time_channel(0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        PathBatch::new(paths)?,
        RolloutRecord {
            grid: grid.clone(),
            noise: noise.clone(),
            condition: c.to_vec(),
            states,
        },
    ))
}
