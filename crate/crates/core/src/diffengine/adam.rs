use serde::{Deserialize, Serialize};

use super::GradientBundle;
use crate::error::{Error, Result};
use crate::nsde::NeuralSdeParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &NeuralSdeParams) -> Result<Self> {
        config.validate()?;
        let n = params.num_params();
        Ok(Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }
}

/// One bias-corrected Adam update. A non-finite gradient leaves both the
/// parameters and the state untouched and returns an error.
pub fn adam_step(params: &mut NeuralSdeParams, grads: &GradientBundle, state: &mut AdamState) -> Result<()> {
    let g = grads.flatten();
    if g.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gradient; Adam update refused".into()));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let mut k = 0;
    for tensor in params.tensors_mut() {
        for p in tensor.iter_mut() {
            state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g[k];
            state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = state.m[k] / c1;
            let v_hat = state.v[k] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsde::{init_params, Architecture, SdeDims};

    fn params() -> NeuralSdeParams {
        let dims = SdeDims { d_a: 1, d_y: 2, d_w: 1, d_x: 1, d_c: 0 };
        init_params(dims, &Architecture { hidden: vec![3], ..Architecture::default() }, 1.0, 1).unwrap()
    }

    fn filled(p: &NeuralSdeParams, v: f64) -> GradientBundle {
        let mut g = GradientBundle::zeros(p);
        for t in g.grads.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p).unwrap();
        adam_step(&mut p, &GradientBundle::zeros(&before), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &p).unwrap();
        adam_step(&mut p, &filled(&before, 3.0), &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = params();
        let start = p.flatten();
        let lr = 1e-3;
        let mut s = AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, &p).unwrap();
        let g = filled(&p, 0.37);
        let mut prev = start.clone();
        for _ in 0..200 {
            adam_step(&mut p, &g, &mut s).unwrap();
            let now = p.flatten();
            for (a, b) in prev.iter().zip(&now) {
                assert!(((a - b) - lr).abs() < 1e-6 * lr);
            }
            prev = now;
        }
        let moved = start[0] - prev[0];
        assert!((moved - 200.0 * lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p).unwrap();
        let mut g = GradientBundle::zeros(&p);
        g.grads.readout_b[0] = f64::NAN;
        assert!(adam_step(&mut p, &g, &mut s).is_err());
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
