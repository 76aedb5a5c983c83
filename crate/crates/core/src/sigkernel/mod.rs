//! Signature kernels as solutions of a Goursat problem.
//!
//! For paths `x` (`L1` nodes) and `y` (`L2` nodes) and a static kernel `k`,
//! the solver sweeps the `(L1 - 1) x (L2 - 1)` cell grid, each cell split into
//! `2^λ x 2^λ` subcells, with driving term
//!
//! ```text
//! A_ij = k(x_{i+1}, y_{j+1}) - k(x_{i+1}, y_j) - k(x_i, y_{j+1}) + k(x_i, y_j)
//! ```
//!
//! shared equally (`A_ij / 4^λ`) by the subcells. The boundary is `f = 1`
//! and the kernel is the value at the terminal corner.
//!
//! Gradients are the exact reverse-mode derivative of the discrete sweep.

mod gram;
mod static_kernel;

pub use gram::{gram, gram_self, GramMatrix};
pub use static_kernel::{covariance_operator, trapezoid_weights, StaticKernel};

pub(crate) use static_kernel::Lift;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::Path;

const DIVERGENCE_BOUND: f64 = 1e300;
const MAX_DYADIC_ORDER: u32 = 10;

/// Finite-difference stencil for one subcell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `f11 = f10 + f01 - f00 + a f00`
    Order1,
    /// `f11 = (f10 + f01)(1 + a/2 + a^2/12) - f00 (1 - a^2/12)`
    #[default]
    Order2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dyadic_order: u32,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dyadic_order: 2,
            scheme: Scheme::Order2,
        }
    }
}

impl SolverConfig {
    pub fn new(dyadic_order: u32, scheme: Scheme) -> Result<Self> {
        let cfg = Self {
            dyadic_order,
            scheme,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dyadic_order > MAX_DYADIC_ORDER {
            return Err(Error::InvalidArgument(format!(
                "dyadic order {} exceeds {MAX_DYADIC_ORDER}",
                self.dyadic_order
            )));
        }
        Ok(())
    }

    /// Stencil coefficients `(c1, c2)` and their derivatives in `a`.
    #[inline]
    fn coefficients(&self, a: f64) -> (f64, f64, f64, f64) {
        match self.scheme {
            Scheme::Order1 => (1.0, 1.0 - a, 0.0, -1.0),
            Scheme::Order2 => {
                let a2 = a * a / 12.0;
                (1.0 + 0.5 * a + a2, 1.0 - a2, 0.5 + a / 6.0, -a / 6.0)
            }
        }
    }
}

/// Signature kernel value together with gradients w.r.t. both paths'
/// node values (row-major, same shape as the paths).
#[derive(Debug, Clone)]
pub struct KernelGrad {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// A path with its static-kernel features precomputed.
pub(crate) struct Prepared<'a> {
    pub path: &'a Path,
    feats: Vec<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(path: &'a Path, lift: &Lift) -> Self {
        Self {
            feats: lift.features(path.values()),
            path,
        }
    }
}

fn check_dims(x: &Path, y: &Path) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Increments of a row-major `(n, d)` array.
fn increments(values: &[f64], d: usize) -> Vec<f64> {
    values
        .windows(2 * d)
        .step_by(d)
        .flat_map(|w| (0..d).map(move |c| w[d + c] - w[c]))
        .collect()
}

/// Node Gram `K[i][j] = k(x_i, y_j)` in feature space.
fn node_gram(lift: &Lift, px: &Prepared, py: &Prepared) -> Result<Vec<f64>> {
    let fd = lift.feature_dim();
    let (l1, l2) = (px.path.len(), py.path.len());
    let mut k = vec![0.0; l1 * l2];
    for i in 0..l1 {
        let a = &px.feats[i * fd..(i + 1) * fd];
        for j in 0..l2 {
            let v = lift.eval_features(a, &py.feats[j * fd..(j + 1) * fd]);
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "static kernel is not finite at nodes ({i}, {j})"
                )));
            }
            k[i * l2 + j] = v;
        }
    }
    Ok(k)
}

/// Driving terms `A` (row-major `(L1-1) x (L2-1)`) and, for non-linear
/// static kernels, the node Gram they came from.
fn driving_terms(lift: &Lift, px: &Prepared, py: &Prepared) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let (l1, l2) = (px.path.len(), py.path.len());
    let (n1, n2) = (l1 - 1, l2 - 1);
    let mut a = vec![0.0; n1 * n2];
    if lift.linear {
        let d = lift.dim;
        let dx = increments(px.path.values(), d);
        let dy = increments(py.path.values(), d);
        for i in 0..n1 {
            let u = &dx[i * d..(i + 1) * d];
            for j in 0..n2 {
                let v = &dy[j * d..(j + 1) * d];
                a[i * n2 + j] = u.iter().zip(v).map(|(p, q)| p * q).sum();
            }
        }
        if let Some(p) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite driving term in cell {p}")));
        }
        return Ok((a, None));
    }
    let k = node_gram(lift, px, py)?;
    for i in 0..n1 {
        for j in 0..n2 {
            a[i * n2 + j] = k[(i + 1) * l2 + j + 1] - k[(i + 1) * l2 + j] - k[i * l2 + j + 1]
                + k[i * l2 + j];
        }
    }
    Ok((a, Some(k)))
}

/// Forward sweep. Returns the terminal value and, if requested, the full
/// refined solution grid (row-major `(R1+1) x (R2+1)`).
fn solve(a: &[f64], n1: usize, n2: usize, cfg: &SolverConfig, keep: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let lam = cfg.dyadic_order;
    let (r1, r2) = (n1 << lam, n2 << lam);
    let inv = 1.0 / (1u64 << (2 * lam)) as f64;
    let coeffs: Vec<(f64, f64)> = a
        .iter()
        .map(|v| {
            let (c1, c2, _, _) = cfg.coefficients(v * inv);
            (c1, c2)
        })
        .collect();
    let w = r2 + 1;
    if keep {
        let mut f = vec![1.0; (r1 + 1) * w];
        for p in 0..r1 {
            let crow = &coeffs[(p >> lam) * n2..(p >> lam) * n2 + n2];
            let (prev, next) = f.split_at_mut((p + 1) * w);
            let prev = &prev[p * w..];
            for q in 0..r2 {
                let (c1, c2) = crow[q >> lam];
                next[q + 1] = (next[q] + prev[q + 1]) * c1 - prev[q] * c2;
            }
            check_row(&next[..w])?;
        }
        Ok((f[(r1 + 1) * w - 1], Some(f)))
    } else {
        let mut prev = vec![1.0; w];
        let mut next = vec![1.0; w];
        for p in 0..r1 {
            let crow = &coeffs[(p >> lam) * n2..(p >> lam) * n2 + n2];
            for q in 0..r2 {
                let (c1, c2) = crow[q >> lam];
                next[q + 1] = (next[q] + prev[q + 1]) * c1 - prev[q] * c2;
            }
            check_row(&next)?;
            std::mem::swap(&mut prev, &mut next);
        }
        Ok((prev[r2], None))
    }
}

#[inline]
fn check_row(row: &[f64]) -> Result<()> {
    if row.iter().any(|v| v.is_nan() || v.abs() > DIVERGENCE_BOUND) {
        return Err(Error::Divergence);
    }
    Ok(())
}

/// Reverse sweep: derivative of the terminal value w.r.t. each driving term.
fn solve_adjoint(a: &[f64], f: &[f64], n1: usize, n2: usize, cfg: &SolverConfig) -> Vec<f64> {
    let lam = cfg.dyadic_order;
    let (r1, r2) = (n1 << lam, n2 << lam);
    let inv = 1.0 / (1u64 << (2 * lam)) as f64;
    let w = r2 + 1;
    let coeffs: Vec<(f64, f64, f64, f64)> = a.iter().map(|v| cfg.coefficients(v * inv)).collect();
    let mut g = vec![0.0; (r1 + 1) * w];
    g[(r1 + 1) * w - 1] = 1.0;
    let mut da = vec![0.0; n1 * n2];
    for p in (0..r1).rev() {
        let cell_row = (p >> lam) * n2;
        for q in (0..r2).rev() {
            let cell = cell_row + (q >> lam);
            let (c1, c2, dc1, dc2) = coeffs[cell];
            let gout = g[(p + 1) * w + q + 1];
            if gout == 0.0 {
                continue;
            }
            let f10 = f[(p + 1) * w + q];
            let f01 = f[p * w + q + 1];
            let f00 = f[p * w + q];
            da[cell] += gout * ((f10 + f01) * dc1 - f00 * dc2);
            g[(p + 1) * w + q] += gout * c1;
            g[p * w + q + 1] += gout * c1;
            g[p * w + q] -= gout * c2;
        }
    }
    da.iter_mut().for_each(|v| *v *= inv);
    da
}

pub(crate) fn eval_prepared(lift: &Lift, px: &Prepared, py: &Prepared, cfg: &SolverConfig) -> Result<f64> {
    let (a, _) = driving_terms(lift, px, py)?;
    let (n1, n2) = (px.path.len() - 1, py.path.len() - 1);
    Ok(solve(&a, n1, n2, cfg, false)?.0)
}

pub(crate) fn grad_prepared(lift: &Lift, px: &Prepared, py: &Prepared, cfg: &SolverConfig) -> Result<KernelGrad> {
    let (a, k) = driving_terms(lift, px, py)?;
    let (l1, l2) = (px.path.len(), py.path.len());
    let (n1, n2) = (l1 - 1, l2 - 1);
    let (value, f) = solve(&a, n1, n2, cfg, true)?;
    let da = solve_adjoint(&a, &f.expect("grid kept"), n1, n2, cfg);
    let d = lift.dim;
    let mut grad_x = vec![0.0; l1 * d];
    let mut grad_y = vec![0.0; l2 * d];

    match k {
        None => {
            let dx = increments(px.path.values(), d);
            let dy = increments(py.path.values(), d);
            for i in 0..n1 {
                for j in 0..n2 {
                    let g = da[i * n2 + j];
                    for c in 0..d {
                        let gx = g * dy[j * d + c];
                        grad_x[(i + 1) * d + c] += gx;
                        grad_x[i * d + c] -= gx;
                        let gy = g * dx[i * d + c];
                        grad_y[(j + 1) * d + c] += gy;
                        grad_y[j * d + c] -= gy;
                    }
                }
            }
        }
        Some(k) => {
            // adjoint of the second mixed difference
            let mut dk = vec![0.0; l1 * l2];
            for i in 0..n1 {
                for j in 0..n2 {
                    let g = da[i * n2 + j];
                    dk[(i + 1) * l2 + j + 1] += g;
                    dk[(i + 1) * l2 + j] -= g;
                    dk[i * l2 + j + 1] -= g;
                    dk[i * l2 + j] += g;
                }
            }
            let fd = lift.feature_dim();
            let mut fgx = vec![0.0; l1 * fd];
            let mut fgy = vec![0.0; l2 * fd];
            for i in 0..l1 {
                let fxi = &px.feats[i * fd..(i + 1) * fd];
                for j in 0..l2 {
                    let s = dk[i * l2 + j] * k[i * l2 + j] * lift.inv_sigma2;
                    if s == 0.0 {
                        continue;
                    }
                    let fyj = &py.feats[j * fd..(j + 1) * fd];
                    for c in 0..fd {
                        let diff = lift.weights[c] * (fxi[c] - fyj[c]);
                        fgx[i * fd + c] -= s * diff;
                        fgy[j * fd + c] += s * diff;
                    }
                }
            }
            for i in 0..l1 {
                lift.pullback(px.path.row(i), &fgx[i * fd..(i + 1) * fd], &mut grad_x[i * d..(i + 1) * d]);
            }
            for j in 0..l2 {
                lift.pullback(py.path.row(j), &fgy[j * fd..(j + 1) * fd], &mut grad_y[j * d..(j + 1) * d]);
            }
        }
    }
    Ok(KernelGrad {
        value,
        grad_x,
        grad_y,
    })
}

/// Signature kernel `k_sig(x, y)` under static kernel `sk`.
pub fn kernel_eval(x: &Path, y: &Path, sk: &StaticKernel, cfg: &SolverConfig) -> Result<f64> {
    check_dims(x, y)?;
    cfg.validate()?;
    let lift = sk.lift(x.dim())?;
    eval_prepared(&lift, &Prepared::new(x, &lift), &Prepared::new(y, &lift), cfg)
}

/// Kernel value and exact gradients of the discrete solver output w.r.t.
/// the node values of both paths.
pub fn kernel_value_and_grads(x: &Path, y: &Path, sk: &StaticKernel, cfg: &SolverConfig) -> Result<KernelGrad> {
    check_dims(x, y)?;
    cfg.validate()?;
    let lift = sk.lift(x.dim())?;
    grad_prepared(&lift, &Prepared::new(x, &lift), &Prepared::new(y, &lift), cfg)
}

/// Gradient w.r.t. the node values of `x`, row-major `L x d`. The time
/// channel receives a gradient too; callers mask it where appropriate.
pub fn kernel_grad_x(x: &Path, y: &Path, sk: &StaticKernel, cfg: &SolverConfig) -> Result<Vec<f64>> {
    Ok(kernel_value_and_grads(x, y, sk, cfg)?.grad_x)
}
