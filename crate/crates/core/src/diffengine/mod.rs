//! Reverse-mode derivatives of the generator pipeline and the Adam update.
//!
//! `backward` differentiates the discrete rollout exactly: readout, Euler
//! steps in reverse order with an MLP vector-Jacobian product per step, then
//! the initial-condition network. The conditioning vector is a constant.

mod adam;
pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nsde::{field_input, xi_input, NeuralSdeParams, RolloutRecord};

/// Gradients shaped exactly like a [`NeuralSdeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grads: NeuralSdeParams,
}

impl GradientBundle {
    pub fn zeros(params: &NeuralSdeParams) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.grads.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &GradientBundle) {
        for (a, b) in self.grads.tensors_mut().into_iter().zip(other.grads.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.grads.tensors_mut() {
            for v in t.iter_mut() {
                *v *= c;
            }
        }
    }
}

fn backward_one(params: &NeuralSdeParams, record: &RolloutRecord, i: usize, upstream: &[f64]) -> GradientBundle {
    let d = params.dims;
    let mut g = GradientBundle::zeros(params);
    let times = record.grid.times();
    let len = times.len();
    let out_dim = d.d_x + 1;
    let cols = d.d_y + d.d_c;
    let c = &record.condition;
    let states = &record.states[i];
    let y_at = |k: usize| &states[k * d.d_y..(k + 1) * d.d_y];

    // readout: X_k = A [Y_k; C] + b, channel 0 of the output is time
    let mut lam_readout = vec![0.0; len * d.d_y];
    for k in 0..len {
        let gx = &upstream[k * out_dim + 1..(k + 1) * out_dim];
        let y = y_at(k);
        for (o, &go) in gx.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            g.grads.readout_b[o] += go;
            let row = &mut g.grads.readout_w[o * cols..(o + 1) * cols];
            for (r, v) in row.iter_mut().zip(y.iter().chain(c)) {
                *r += go * v;
            }
            let a_row = &params.readout_w[o * cols..o * cols + d.d_y];
            for (l, a) in lam_readout[k * d.d_y..(k + 1) * d.d_y].iter_mut().zip(a_row) {
                *l += go * a;
            }
        }
    }

    // reverse Euler sweep
    let mut lam = lam_readout[(len - 1) * d.d_y..].to_vec();
    for k in (0..len - 1).rev() {
        let dt = times[k + 1] - times[k];
        let dw = record.noise.dw(i, k);
        let u = field_input(times[k], y_at(k), c);
        let mu_cache = params.mu.forward_cached(&u);
        let sig_cache = params.sigma.forward_cached(&u);
        let up_mu: Vec<f64> = lam.iter().map(|l| l * dt).collect();
        let up_sig: Vec<f64> = (0..d.d_y * d.d_w).map(|idx| lam[idx / d.d_w] * dw[idx % d.d_w]).collect();
        let gu_mu = params.mu.backward(&mu_cache, &up_mu, &mut g.grads.mu);
        let gu_sig = params.sigma.backward(&sig_cache, &up_sig, &mut g.grads.sigma);
        for r in 0..d.d_y {
            lam[r] += gu_mu[1 + r] + gu_sig[1 + r] + lam_readout[k * d.d_y + r];
        }
    }

    let xi_cache = params.xi.forward_cached(&xi_input(record.noise.a(i), c));
    params.xi.backward(&xi_cache, &lam, &mut g.grads.xi);
    g
}

/// Parameter gradient of `Σ_i <upstream_i, X_i>` where `X_i` are the
/// generated output paths (time channel included, its gradient ignored).
pub fn backward(params: &NeuralSdeParams, record: &RolloutRecord, upstream: &[Vec<f64>]) -> Result<GradientBundle> {
    let n = record.states.len();
    let expected = record.grid.len() * (params.dims.d_x + 1);
    if upstream.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: upstream.len() });
    }
    if let Some(bad) = upstream.iter().find(|u| u.len() != expected) {
        return Err(Error::DimensionMismatch { expected, got: bad.len() });
    }
    let parts: Vec<GradientBundle> = (0..n)
        .into_par_iter()
        .map(|i| backward_one(params, record, i, &upstream[i]))
        .collect();
    let mut total = GradientBundle::zeros(params);
    for p in &parts {
        total.add_assign(p);
    }
    Ok(total)
}
