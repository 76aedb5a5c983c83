//! Signature kernel scores, MMD estimators and training losses.
//!
//! For generated paths `x_1..x_m` and an observation `y` the unbiased score is
//!
//! ```text
//! φ̂(x, y) = 1/(m(m-1)) Σ_{i≠j} k(x_i, x_j) - 2/m Σ_i k(x_i, y)
//! ```
//!
//! and the unconditional loss averages it over a batch of observations.
//! Gradients are taken w.r.t. the generated node values only; the time
//! channel is always masked to zero.
//!
//! A [`KernelSpec`] may hold several `(scale, static kernel)` terms. Each
//! term scores the paths with their value channels multiplied by `scale`,
//! and the term scores are summed with equal weight.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{Path, PathBatch};
use crate::sigkernel::{self, GramMatrix, Lift, Prepared, SolverConfig, StaticKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    #[serde(default = "one")]
    pub scale: f64,
    pub kernel: StaticKernel,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub terms: Vec<KernelTerm>,
    pub solver: SolverConfig,
}

impl KernelSpec {
    pub fn single(kernel: StaticKernel, solver: SolverConfig) -> Self {
        Self {
            terms: vec![KernelTerm { scale: 1.0, kernel }],
            solver,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("kernel spec needs at least one term".into()));
        }
        for t in &self.terms {
            if !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(Error::InvalidArgument(format!("term scale must be positive, got {}", t.scale)));
            }
            t.kernel.validate()?;
        }
        self.solver.validate()
    }
}

/// A score value and, when requested, its gradient w.r.t. each generated
/// path (row-major `L x d` per path).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreValue {
    pub value: f64,
    pub gradient: Option<Vec<Vec<f64>>>,
}

fn check_min(name: &str, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "{name} needs at least 2 samples for a U-statistic, got {n}"
        )));
    }
    Ok(())
}

fn scaled(batch: &PathBatch, scale: f64) -> Result<PathBatch> {
    if scale == 1.0 {
        Ok(batch.clone())
    } else {
        batch.try_map(|p| p.scale(scale))
    }
}

/// Weighted sums of pairwise kernel values, with gradients w.r.t. the first
/// batch. `self_pairs` weights each unordered pair `i < j` of `x`;
/// `cross` weights every `(i, j)` pair of `x` and `y`.
struct PairSums {
    value: f64,
    grads: Option<Vec<Vec<f64>>>,
}

fn pair_sums(
    x: &PathBatch,
    y: Option<&PathBatch>,
    self_weight: f64,
    cross_weight: f64,
    spec: &KernelSpec,
    want_grad: bool,
) -> Result<PairSums> {
    spec.validate()?;
    if let Some(y) = y {
        if y.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                got: y.dim(),
            });
        }
    }
    let m = x.len();
    let dim = x.dim();
    let mut value = 0.0;
    let mut grads = want_grad.then(|| vec![vec![0.0; x.path_len() * dim]; m]);

    for term in &spec.terms {
        let lift = term.kernel.lift(dim)?;
        let xs = scaled(x, term.scale)?;
        let ys = y.map(|y| scaled(y, term.scale)).transpose()?;
        let px: Vec<Prepared> = xs.iter().map(|p| Prepared::new(p, &lift)).collect();
        let py: Vec<Prepared> = ys
            .as_ref()
            .map(|ys| ys.iter().map(|p| Prepared::new(p, &lift)).collect())
            .unwrap_or_default();

        let mut jobs: Vec<(bool, usize, usize)> = Vec::new();
        if self_weight != 0.0 {
            for i in 0..m {
                for j in i + 1..m {
                    jobs.push((true, i, j));
                }
            }
        }
        if cross_weight != 0.0 {
            for i in 0..m {
                for j in 0..py.len() {
                    jobs.push((false, i, j));
                }
            }
        }
        let results = evaluate(&lift, &px, &py, &jobs, &spec.solver, want_grad)?;

        // fixed-order reduction
        for (&(is_self, i, j), (v, gx, gy)) in jobs.iter().zip(results) {
            let w = if is_self { self_weight } else { cross_weight };
            value += w * v;
            if let Some(g) = grads.as_mut() {
                let s = w * term.scale;
                for (acc, d) in g[i].iter_mut().zip(&gx) {
                    *acc += s * d;
                }
                if is_self {
                    for (acc, d) in g[j].iter_mut().zip(&gy) {
                        *acc += s * d;
                    }
                }
            }
        }
    }
    if let (Some(g), Some(tc)) = (grads.as_mut(), x.get(0).time_channel()) {
        for gp in g.iter_mut() {
            for k in 0..gp.len() / dim {
                gp[k * dim + tc] = 0.0;
            }
        }
    }
    Ok(PairSums { value, grads })
}

type PairResult = (f64, Vec<f64>, Vec<f64>);

fn evaluate(
    lift: &Lift,
    px: &[Prepared],
    py: &[Prepared],
    jobs: &[(bool, usize, usize)],
    cfg: &SolverConfig,
    want_grad: bool,
) -> Result<Vec<PairResult>> {
    jobs.par_iter()
        .map(|&(is_self, i, j)| {
            let b = if is_self { &px[j] } else { &py[j] };
            let r = if want_grad {
                let g = sigkernel::grad_prepared(lift, &px[i], b, cfg)?;
                (g.value, g.grad_x, g.grad_y)
            } else {
                (sigkernel::eval_prepared(lift, &px[i], b, cfg)?, Vec::new(), Vec::new())
            };
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()
}

/// Unbiased estimator of the signature kernel score of the law of `x` at `y`.
pub fn score_unbiased(x: &PathBatch, y: &Path, spec: &KernelSpec, want_grad: bool) -> Result<ScoreValue> {
    let yb = PathBatch::new(vec![y.clone()])?;
    loss_unconditional(x, &yb, spec, want_grad)
}

/// Mean of [`score_unbiased`] over every observation in `real`.
///
/// Equals the unbiased MMD² estimate minus the real-real U-statistic, which
/// does not depend on the generator.
pub fn loss_unconditional(generated: &PathBatch, real: &PathBatch, spec: &KernelSpec, want_grad: bool) -> Result<ScoreValue> {
    let m = generated.len();
    check_min("generated batch", m)?;
    let n = real.len() as f64;
    let mf = m as f64;
    let sums = pair_sums(
        generated,
        Some(real),
        2.0 / (mf * (mf - 1.0)),
        -2.0 / (mf * n),
        spec,
        want_grad,
    )?;
    Ok(ScoreValue {
        value: sums.value,
        gradient: sums.grads,
    })
}

/// `1/(n(n-1)) Σ_{i≠j} k(y_i, y_j)`, the generator-independent MMD² term.
pub fn self_u_statistic(batch: &PathBatch, spec: &KernelSpec) -> Result<f64> {
    let n = batch.len();
    check_min("batch", n)?;
    let nf = n as f64;
    Ok(pair_sums(batch, None, 2.0 / (nf * (nf - 1.0)), 0.0, spec, false)?.value)
}

/// Unbiased (U-statistic) squared MMD; may be negative.
pub fn mmd_sq_unbiased(x: &PathBatch, y: &PathBatch, spec: &KernelSpec) -> Result<f64> {
    check_min("first batch", x.len())?;
    check_min("second batch", y.len())?;
    let loss = loss_unconditional(x, y, spec, false)?.value;
    Ok(loss + self_u_statistic(y, spec)?)
}

/// Biased (V-statistic) squared MMD; zero for identical batches.
pub fn mmd_sq_biased(x: &PathBatch, y: &PathBatch, spec: &KernelSpec) -> Result<f64> {
    let pooled = PathBatch::new(x.iter().chain(y.iter()).cloned().collect())?;
    let g = pooled_gram(&pooled, spec)?;
    let labels: Vec<bool> = (0..pooled.len()).map(|i| i < x.len()).collect();
    Ok(v_statistic(&g, &labels))
}

/// Sum over kernel terms of the pooled self-Gram.
pub fn pooled_gram(pooled: &PathBatch, spec: &KernelSpec) -> Result<GramMatrix> {
    spec.validate()?;
    let n = pooled.len();
    let mut entries = vec![0.0; n * n];
    for term in &spec.terms {
        let g = sigkernel::gram_self(&scaled(pooled, term.scale)?, &term.kernel, &spec.solver)?;
        for (e, v) in entries.iter_mut().zip(g.entries()) {
            *e += v;
        }
    }
    GramMatrix::from_entries(n, n, entries, true)
}

/// V-statistic MMD² of a labelled pooled Gram (`true` = first sample).
pub fn v_statistic(g: &GramMatrix, labels: &[bool]) -> f64 {
    let n = labels.len();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = g.get(i, j);
            match (labels[i], labels[j]) {
                (true, true) => sxx += v,
                (false, false) => syy += v,
                _ => sxy += v,
            }
        }
    }
    let m = labels.iter().filter(|l| **l).count() as f64;
    let k = n as f64 - m;
    sxx / (m * m) + syy / (k * k) - sxy / (m * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sample permutation test on the biased MMD² statistic.
/// `p = (1 + #{permuted >= observed}) / (1 + permutations)`.
pub fn mmd_permutation_test<R: Rng>(
    x: &PathBatch,
    y: &PathBatch,
    spec: &KernelSpec,
    permutations: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<PermutationTest> {
    let pooled = PathBatch::new(x.iter().chain(y.iter()).cloned().collect())?;
    let g = pooled_gram(&pooled, spec)?;
    Ok(permutation_test_from_gram(&g, x.len(), permutations, alpha, rng))
}

pub fn permutation_test_from_gram<R: Rng>(
    g: &GramMatrix,
    m: usize,
    permutations: usize,
    alpha: f64,
    rng: &mut R,
) -> PermutationTest {
    let n = g.rows();
    let mut labels: Vec<bool> = (0..n).map(|i| i < m).collect();
    let observed = v_statistic(g, &labels);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(rng);
        if v_statistic(g, &labels) >= observed {
            exceed += 1;
        }
    }
    let p_value = (1 + exceed) as f64 / (1 + permutations) as f64;
    PermutationTest {
        statistic: observed,
        p_value,
        reject: p_value <= alpha,
    }
}

/// Draws `m` generated paths for a conditioning path.
pub trait ConditionalSampler {
    fn sample(&mut self, pair: usize, condition: &Path, m: usize) -> Result<PathBatch>;
}

/// `1/n Σ_i φ̂(P(·|x_i), y_i)` with `m` conditional samples per pair. The
/// gradient lists the `m` samples of pair 0, then pair 1, and so on.
pub fn loss_conditional<S: ConditionalSampler + ?Sized>(
    pairs: &[(Path, Path)],
    sampler: &mut S,
    m: usize,
    spec: &KernelSpec,
    want_grad: bool,
) -> Result<ScoreValue> {
    check_min("conditional fan-out", m)?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no conditioning pairs".into()));
    }
    let n = pairs.len() as f64;
    let mut value = 0.0;
    let mut grads = want_grad.then(Vec::new);
    for (i, (x, y)) in pairs.iter().enumerate() {
        let samples = sampler.sample(i, x, m)?;
        let s = score_unbiased(&samples, y, spec, want_grad)?;
        value += s.value / n;
        if let (Some(all), Some(g)) = (grads.as_mut(), s.gradient) {
            all.extend(g.into_iter().map(|gp| gp.into_iter().map(|v| v / n).collect::<Vec<_>>()));
        }
    }
    Ok(ScoreValue { value, gradient: grads })
}
