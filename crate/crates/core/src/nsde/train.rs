use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sample, NeuralSdeParams, NoiseBundle, RolloutRecord};
use crate::diffengine::{self, adam_step, AdamConfig, AdamState, GradientBundle};
use crate::error::{Error, Result};
use crate::paths::{translate_to_zero_vjp, Path, PathBatch, TimeGrid};
use crate::rng;
use crate::scores::{self, ConditionalSampler, KernelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub kernel: KernelSpec,
    /// Checkpoint cadence in steps; the final step is always checkpointed.
    /// Zero checkpoints only the final step.
    #[serde(default)]
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Also report the unbiased MMD² of each unconditional step, which costs
    /// one extra real-real Gram per step.
    #[serde(default)]
    pub report_mmd: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        self.adam.validate()?;
        self.kernel.validate()
    }
}

/// Conditioning/target pairs with precomputed condition encodings.
#[derive(Debug, Clone)]
pub struct ConditionalData {
    pub pairs: Vec<(Path, Path)>,
    pub encodings: Vec<Vec<f64>>,
    /// Generated samples per conditioning path.
    pub fan_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Unconditional(&'a PathBatch),
    Conditional(&'a ConditionalData),
}

impl TrainData<'_> {
    fn len(&self) -> usize {
        match self {
            TrainData::Unconditional(b) => b.len(),
            TrainData::Conditional(c) => c.pairs.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd2: Option<f64>,
}

pub trait TrainObserver {
    fn on_step(&mut self, _report: &StepReport) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: usize, _params: &NeuralSdeParams) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub grads: Option<GradientBundle>,
}

/// Generated paths are translated to start at zero and time-normalized
/// before scoring, matching the real-data pipeline.
fn output_transform(batch: &PathBatch) -> Result<PathBatch> {
    batch.try_map(|p| p.translate_to_zero().time_normalize())
}

fn pull_back(grads: Vec<Vec<f64>>, dim: usize, time_channel: Option<usize>) -> Vec<Vec<f64>> {
    grads
        .into_iter()
        .map(|mut g| {
            // time_normalize only touches the time channel
            translate_to_zero_vjp(&mut g, dim, time_channel);
            g
        })
        .collect()
}

/// Unconditional training loss and its parameter gradient for a fixed real
/// batch and noise draw.
pub fn unconditional_objective(
    params: &NeuralSdeParams,
    real: &PathBatch,
    grid: &TimeGrid,
    noise: &NoiseBundle,
    spec: &KernelSpec,
    want_grad: bool,
) -> Result<Objective> {
    let (raw, record) = sample(params, grid, noise, None)?;
    let generated = output_transform(&raw)?;
    let score = scores::loss_unconditional(&generated, real, spec, want_grad)?;
    let grads = match score.gradient {
        Some(g) => {
            let up = pull_back(g, raw.dim(), Some(0));
            Some(diffengine::backward(params, &record, &up)?)
        }
        None => None,
    };
    Ok(Objective { loss: score.value, grads })
}

struct RecordingSampler<'a> {
    params: &'a NeuralSdeParams,
    grid: &'a TimeGrid,
    noises: &'a [NoiseBundle],
    encodings: Vec<&'a [f64]>,
    records: Vec<RolloutRecord>,
}

impl ConditionalSampler for RecordingSampler<'_> {
    fn sample(&mut self, pair: usize, _condition: &Path, m: usize) -> Result<PathBatch> {
        let noise = &self.noises[pair];
        if noise.n != m {
            return Err(Error::DimensionMismatch { expected: m, got: noise.n });
        }
        let (raw, record) = sample(self.params, self.grid, noise, Some(self.encodings[pair]))?;
        self.records.push(record);
        output_transform(&raw)
    }
}

/// Conditional training loss over the selected pairs; `noises[j]` drives the
/// samples for `indices[j]`.
pub fn conditional_objective(
    params: &NeuralSdeParams,
    data: &ConditionalData,
    indices: &[usize],
    grid: &TimeGrid,
    noises: &[NoiseBundle],
    spec: &KernelSpec,
    want_grad: bool,
) -> Result<Objective> {
    if noises.len() != indices.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            got: noises.len(),
        });
    }
    let pairs: Vec<(Path, Path)> = indices.iter().map(|&i| data.pairs[i].clone()).collect();
    let mut sampler = RecordingSampler {
        params,
        grid,
        noises,
        encodings: indices.iter().map(|&i| data.encodings[i].as_slice()).collect(),
        records: Vec::with_capacity(indices.len()),
    };
    let score = scores::loss_conditional(&pairs, &mut sampler, data.fan_out, spec, want_grad)?;
    let grads = match score.gradient {
        Some(g) => {
            let dim = params.dims.d_x + 1;
            let mut total = GradientBundle::zeros(params);
            let mut chunks = g.into_iter();
            for record in &sampler.records {
                let up = pull_back(chunks.by_ref().take(data.fan_out).collect(), dim, Some(0));
                total.add_assign(&diffengine::backward(params, record, &up)?);
            }
            Some(total)
        }
        None => None,
    };
    Ok(Objective { loss: score.value, grads })
}

fn draw_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if batch >= n {
        return idx;
    }
    let mut r = rng::stream(seed, "real-batch", step as u64);
    idx.shuffle(&mut r);
    idx.truncate(batch);
    idx
}

/// Adam training of `params` against `data`. Step `s` (1-based) draws its
/// real batch and noise from streams keyed by `s`, so a run is reproducible
/// from `(params, data, config)` alone.
pub fn train<O: TrainObserver + ?Sized>(
    params: &mut NeuralSdeParams,
    data: TrainData<'_>,
    grid: &TimeGrid,
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<Vec<StepReport>> {
    cfg.validate()?;
    params.validate()?;
    if data.len() == 0 {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    let mut adam = AdamState::new(cfg.adam, params)?;
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let idx = draw_indices(data.len(), cfg.batch_size, cfg.seed, step);
        let purpose = format!("train-noise/{step}");
        let (obj, mmd2) = match data {
            TrainData::Unconditional(real) => {
                let batch = real.select(&idx)?;
                let noise = NoiseBundle::draw(params, cfg.batch_size, grid, cfg.seed, &purpose);
                let obj = unconditional_objective(params, &batch, grid, &noise, &cfg.kernel, true)?;
                let mmd2 = if cfg.report_mmd {
                    Some(obj.loss + scores::self_u_statistic(&batch, &cfg.kernel)?)
                } else {
                    None
                };
                (obj, mmd2)
            }
            TrainData::Conditional(c) => {
                let noises: Vec<NoiseBundle> = idx
                    .iter()
                    .map(|&i| NoiseBundle::draw(params, c.fan_out, grid, cfg.seed, &format!("{purpose}/{i}")))
                    .collect();
                let obj = conditional_objective(params, c, &idx, grid, &noises, &cfg.kernel, true)?;
                (obj, None)
            }
        };
        let grads = obj.grads.expect("gradient requested");
        if !obj.loss.is_finite() || !grads.is_finite() {
            return Err(Error::LossDivergence { step });
        }
        adam_step(params, &grads, &mut adam)?;
        let report = StepReport {
            step,
            loss: obj.loss,
            mmd2,
        };
        observer.on_step(&report)?;
        reports.push(report);
        let due = cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
        if due || step == cfg.steps {
            observer.on_checkpoint(step, params)?;
        }
    }
    Ok(reports)
}
