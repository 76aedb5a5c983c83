//! Central finite-difference checks for every differentiable stage.
//!
//! Errors are norm-wise: `|g_analytic - g_fd| / max(|g_fd|, tiny)` over the
//! whole gradient vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nsde::{unconditional_objective, FinalActivation, MlpParams, NeuralSdeParams, NoiseBundle};
use crate::paths::{Path, PathBatch, TimeGrid};
use crate::scores::KernelSpec;
use crate::sigkernel::{kernel_eval, kernel_value_and_grads, SolverConfig, StaticKernel};

/// Tolerance for pure functions (MLP, kernel PDE).
pub const PURE_TOL: f64 = 1e-4;
/// Tolerance for the composed generator-to-loss pipeline.
pub const PIPELINE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    pub coordinates: usize,
}

impl GradcheckReport {
    fn new(name: impl Into<String>, analytic: &[f64], numeric: &[f64], tol: f64) -> Self {
        let rel_err = relative_error(analytic, numeric);
        Self {
            name: name.into(),
            rel_err,
            tol,
            passed: rel_err <= tol,
            coordinates: analytic.len(),
        }
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient<F: FnMut(&[f64]) -> Result<f64>>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>> {
    let mut buf = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        buf[k] = x[k] + h;
        let up = f(&buf)?;
        buf[k] = x[k] - h;
        let down = f(&buf)?;
        buf[k] = x[k];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn random_path(rng: &mut ChaCha8Rng, len: usize, dim: usize, step: f64) -> Result<Path> {
    let mut values = vec![0.0; len * dim];
    for k in 1..len {
        for c in 0..dim {
            values[k * dim + c] = values[(k - 1) * dim + c] + rng.gen_range(-step..step);
        }
    }
    Path::new(TimeGrid::uniform(0.0, 1.0, len)?, values, dim)
}

/// Input and parameter gradients of a random MLP under a random linear
/// functional.
pub fn check_mlp(sizes: &[usize], activation: FinalActivation, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MlpParams::init(sizes, activation, 1.5, &mut rng)?;
    for b in m.biases.iter_mut().flatten() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x: Vec<f64> = (0..m.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..m.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot = |v: Vec<f64>| v.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();

    let mut grads = m.zeros_like();
    let gx = m.backward(&m.forward_cached(&x), &up, &mut grads);
    let mut analytic = gx;
    analytic.extend(grads.tensors().flatten());

    let mut numeric = numeric_gradient(&x, 1e-6, |xx| Ok(dot(m.forward(xx))))?;
    let theta: Vec<f64> = m.tensors().flatten().copied().collect();
    let mut probe = m.clone();
    numeric.extend(numeric_gradient(&theta, 1e-6, |t| {
        let mut off = 0;
        for tensor in probe.tensors_mut() {
            let n = tensor.len();
            tensor.copy_from_slice(&t[off..off + n]);
            off += n;
        }
        Ok(dot(probe.forward(&x)))
    })?);
    Ok(GradcheckReport::new(format!("mlp {sizes:?} {activation:?}"), &analytic, &numeric, PURE_TOL))
}

/// `d k(x, y) / d x` for random paths against central differences.
pub fn check_kernel(sk: &StaticKernel, cfg: &SolverConfig, len: usize, dim: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_path(&mut rng, len, dim, 0.4)?;
    let y = random_path(&mut rng, len + 1, dim, 0.4)?;
    let analytic = kernel_value_and_grads(&x, &y, sk, cfg)?.grad_x;
    let numeric = numeric_gradient(x.values(), 1e-5, |v| kernel_eval(&x.with_values(v.to_vec())?, &y, sk, cfg))?;
    Ok(GradcheckReport::new(
        format!("kernel {sk:?} {:?} order {}", cfg.scheme, cfg.dyadic_order),
        &analytic,
        &numeric,
        PURE_TOL,
    ))
}

/// Parameter gradient of the unconditional training loss (rollout, output
/// transforms, kernel score) against central differences.
pub fn check_pipeline(
    params: &NeuralSdeParams,
    grid: &TimeGrid,
    batch: usize,
    spec: &KernelSpec,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_x = params.dims.d_x;
    let real = PathBatch::new(
        (0..batch)
            .map(|_| {
                let p = random_path(&mut rng, grid.len(), d_x, 0.3)?;
                Path::new(grid.clone(), p.values().to_vec(), d_x)?.time_augment()?.time_normalize()
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let noise = NoiseBundle::draw(params, batch, grid, seed, "gradcheck-noise");
    let obj = unconditional_objective(params, &real, grid, &noise, spec, true)?;
    let analytic = obj.grads.expect("gradient requested").flatten();
    let mut probe = params.clone();
    let numeric = numeric_gradient(&params.flatten(), 1e-5, |t| {
        probe.set_flat(t)?;
        Ok(unconditional_objective(&probe, &real, grid, &noise, spec, false)?.loss)
    })?;
    Ok(GradcheckReport::new("pipeline", &analytic, &numeric, PIPELINE_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsde::{init_params, Architecture, SdeDims};
    use crate::sigkernel::Scheme;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[0.0, 0.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn mlp_and_kernel_checks_pass() {
        let r = check_mlp(&[4, 7, 3], FinalActivation::Tanh, 1).unwrap();
        assert!(r.passed, "{r:?}");
        let cfg = SolverConfig::new(1, Scheme::Order2).unwrap();
        let r = check_kernel(&StaticKernel::Rbf { sigma: 0.7 }, &cfg, 6, 2, 2).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn micro_pipeline_check_passes() {
        let dims = SdeDims { d_a: 2, d_y: 3, d_w: 2, d_x: 1, d_c: 0 };
        let p = init_params(dims, &Architecture { hidden: vec![8], learn_initial: true, ..Architecture::default() }, 1.0, 4).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let spec = KernelSpec::single(StaticKernel::Rbf { sigma: 1.0 }, SolverConfig::new(1, Scheme::Order2).unwrap());
        let r = check_pipeline(&p, &grid, 3, &spec, 5).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.coordinates, p.num_params());
    }
}
