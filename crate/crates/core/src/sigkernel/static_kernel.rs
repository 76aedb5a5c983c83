//! Static kernels on the state space, lifted along the path by the solver.
//!
//! The SE-T family reads a `d`-dimensional state as samples of a function
//! on a uniform mesh of `[0, 1]`; L2 inner products use trapezoidal weights
//! (a single-point mesh has weight 1, so SE-T ID then coincides with RBF).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticKernel {
    /// Euclidean inner product.
    Linear,
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    Rbf { sigma: f64 },
    /// SE-T kernel with `T(f) = f`.
    SetId { sigma: f64 },
    /// SE-T kernel with `T(f) = (f, f^2)`.
    SetSqr { sigma: f64 },
    /// SE-T kernel with `T` the covariance operator of `k_{F,l}`.
    SetCexp { sigma: f64, l: f64, f: usize },
}

impl StaticKernel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            StaticKernel::Linear => Ok(()),
            StaticKernel::Rbf { sigma }
            | StaticKernel::SetId { sigma }
            | StaticKernel::SetSqr { sigma } => positive("sigma", sigma),
            StaticKernel::SetCexp { sigma, l, f } => {
                positive("sigma", sigma)?;
                positive("l", l)?;
                if f == 0 {
                    return Err(Error::InvalidArgument("F must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Resolves mesh weights and transforms for states of dimension `dim`.
    pub(crate) fn lift(&self, dim: usize) -> Result<Lift> {
        self.validate()?;
        let mesh_weights = trapezoid_weights(dim);
        let lift = match *self {
            StaticKernel::Linear => Lift {
                dim,
                transform: Transform::Identity,
                weights: vec![1.0; dim],
                inv_sigma2: 0.0,
                linear: true,
            },
            StaticKernel::Rbf { sigma } => Lift {
                dim,
                transform: Transform::Identity,
                weights: vec![1.0; dim],
                inv_sigma2: 1.0 / (sigma * sigma),
                linear: false,
            },
            StaticKernel::SetId { sigma } => Lift {
                dim,
                transform: Transform::Identity,
                weights: mesh_weights,
                inv_sigma2: 1.0 / (sigma * sigma),
                linear: false,
            },
            StaticKernel::SetSqr { sigma } => Lift {
                dim,
                transform: Transform::Square,
                weights: [mesh_weights.clone(), mesh_weights].concat(),
                inv_sigma2: 1.0 / (sigma * sigma),
                linear: false,
            },
            StaticKernel::SetCexp { sigma, l, f } => Lift {
                dim,
                transform: Transform::Covariance(covariance_operator(dim, l, f)),
                weights: mesh_weights,
                inv_sigma2: 1.0 / (sigma * sigma),
                linear: false,
            },
        };
        Ok(lift)
    }
}

/// Trapezoidal quadrature weights on `n` uniform nodes of `[0, 1]`.
pub fn trapezoid_weights(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let h = 1.0 / (n - 1) as f64;
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// `M[k][j] = k_{F,l}(x_k, x_j) w_j`, so `(M f)_k` approximates
/// `int k_{F,l}(x_k, x') f(x') dx'` on the mesh.
pub fn covariance_operator(n: usize, l: f64, f: usize) -> Vec<f64> {
    let mesh: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    };
    let w = trapezoid_weights(n);
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        for j in 0..n {
            let r = mesh[k] - mesh[j];
            let series: f64 = (0..f)
                .map(|q| (2.0 * std::f64::consts::PI * q as f64 * r).cos())
                .sum();
            m[k * n + j] = (-(r * r) / (2.0 * l * l)).exp() * series * w[j];
        }
    }
    m
}

#[derive(Debug, Clone)]
pub(crate) enum Transform {
    Identity,
    Square,
    /// Row-major `dim x dim` matrix.
    Covariance(Vec<f64>),
}

/// A static kernel resolved for a fixed state dimension.
#[derive(Debug, Clone)]
pub(crate) struct Lift {
    pub dim: usize,
    pub transform: Transform,
    /// Feature-space inner-product weights.
    pub weights: Vec<f64>,
    pub inv_sigma2: f64,
    pub linear: bool,
}

impl Lift {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    /// Feature map applied to every node of a row-major `(n, dim)` array.
    pub fn features(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match &self.transform {
            Transform::Identity => values.to_vec(),
            Transform::Square => values
                .chunks_exact(d)
                .flat_map(|row| row.iter().copied().chain(row.iter().map(|v| v * v)))
                .collect(),
            Transform::Covariance(m) => values
                .chunks_exact(d)
                .flat_map(|row| {
                    (0..d).map(move |k| (0..d).map(|j| m[k * d + j] * row[j]).sum::<f64>())
                })
                .collect(),
        }
    }

    /// Pulls a feature-space gradient back to state space for one node.
    pub fn pullback(&self, state: &[f64], feature_grad: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.transform {
            Transform::Identity => out.copy_from_slice(feature_grad),
            Transform::Square => {
                for c in 0..d {
                    out[c] = feature_grad[c] + 2.0 * state[c] * feature_grad[d + c];
                }
            }
            Transform::Covariance(m) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..d).map(|k| m[k * d + j] * feature_grad[k]).sum();
                }
            }
        }
    }

    /// Static kernel between two feature vectors.
    #[inline]
    pub fn eval_features(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.linear {
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        } else {
            let d2: f64 = a
                .iter()
                .zip(b)
                .zip(&self.weights)
                .map(|((x, y), w)| w * (x - y) * (x - y))
                .sum();
            (-0.5 * d2 * self.inv_sigma2).exp()
        }
    }
}
