//! Reference simulators and data loading.
//!
//! Rough Bergomi is simulated exactly on the grid: the driving Brownian motion
//! `B` and the Volterra process `X_t = ∫_0^t (t - u)^α dB_u` are jointly
//! Gaussian, so `(B_{t_1}, .., B_{t_n}, X_{t_1}, .., X_{t_n})` is drawn from
//! the Cholesky factor of its covariance.

use std::path::Path as FsPath;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{read_series_csv, Path, PathBatch, TimeGrid};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmConfig {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub y0: f64,
    /// Final time of the uniform grid starting at 0.
    pub horizon: f64,
    /// Number of grid nodes.
    pub len: usize,
    pub n: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("gbm needs finite mu and sigma >= 0, got {}, {}", self.mu, self.sigma)));
        }
        if !(self.y0 > 0.0 && self.y0.is_finite()) {
            return Err(Error::InvalidArgument(format!("gbm y0 must be positive, got {}", self.y0)));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("gbm needs n >= 1".into()));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(0.0, self.horizon, self.len)
    }
}

/// Exact lognormal stepping; output paths are time-augmented, `(t, y)`.
pub fn gbm(cfg: &GbmConfig) -> Result<PathBatch> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let times = grid.times();
    let paths = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, "gbm", i as u64);
            let mut values = Vec::with_capacity(times.len());
            let mut y = cfg.y0;
            values.push(y);
            for w in times.windows(2) {
                let dt = w[1] - w[0];
                let z: f64 = r.sample(StandardNormal);
                y *= ((cfg.mu - 0.5 * cfg.sigma * cfg.sigma) * dt + cfg.sigma * dt.sqrt() * z).exp();
                values.push(y);
            }
            Path::new(grid.clone(), values, 1)?.time_augment()
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::new(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RBergomiConfig {
    pub xi0: f64,
    pub eta: f64,
    pub rho: f64,
    /// Hurst exponent; `α = H - 1/2`.
    pub h: f64,
    pub horizon: f64,
    pub len: usize,
    pub n: usize,
    pub seed: u64,
    /// Append the variance process as a third channel.
    #[serde(default)]
    pub include_variance: bool,
}

impl RBergomiConfig {
    pub fn alpha(&self) -> f64 {
        self.h - 0.5
    }

    pub fn validate(&self) -> Result<()> {
        // H = 1/2 is accepted as a degenerate boundary case (X = B)
        if !(self.h > 0.0 && self.h <= 0.5) {
            return Err(Error::InvalidArgument(format!("rbergomi needs 0 < H <= 1/2, got {}", self.h)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rbergomi needs -1 <= rho <= 1, got {}", self.rho)));
        }
        if !(self.xi0 > 0.0 && self.xi0.is_finite()) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument("rbergomi needs xi0 > 0 and finite eta".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("rbergomi needs n >= 1".into()));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(0.0, self.horizon, self.len)
    }
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `Cov(X_s, X_t) = ∫_0^{min(s,t)} (t - u)^α (s - u)^α du`.
///
/// For `s < t` the substitution `z = (s - u)^{α+1}` removes the endpoint
/// singularity, leaving the smooth integrand
/// `(t - s + z^{1/(α+1)})^α / (α + 1)` on `[0, s^{α+1}]`.
pub fn volterra_cov(s: f64, t: f64, alpha: f64) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    if s <= 0.0 {
        return 0.0;
    }
    let p = alpha + 1.0;
    if t == s {
        return s.powf(2.0 * alpha + 1.0) / (2.0 * alpha + 1.0);
    }
    let gap = t - s;
    let f = |z: f64| (gap + z.powf(1.0 / p)).powf(alpha) / p;
    adaptive_simpson(&f, 0.0, s.powf(p), 1e-12)
}

/// `Cov(X_t, B_s) = ∫_0^{min(s,t)} (t - u)^α du`.
pub fn volterra_brownian_cov(t: f64, s: f64, alpha: f64) -> f64 {
    let m = s.min(t);
    let p = alpha + 1.0;
    (t.powf(p) - (t - m).powf(p)) / p
}

/// Joint covariance of `(B_{t_1..t_n}, X_{t_1..t_n})` over the positive grid
/// times.
pub fn joint_covariance(times: &[f64], alpha: f64) -> DMatrix<f64> {
    let n = times.len();
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let (ti, tj) = (times[i], times[j]);
            c[(i, j)] = ti.min(tj);
            c[(n + i, j)] = volterra_brownian_cov(ti, tj, alpha);
            c[(j, n + i)] = c[(n + i, j)];
            if j >= i {
                let v = volterra_cov(ti, tj, alpha);
                c[(n + i, n + j)] = v;
                c[(n + j, n + i)] = v;
            }
        }
    }
    c
}

/// Lower Cholesky factor; retries once with `1e-12` relative diagonal jitter.
pub fn cholesky_with_jitter(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let mut jittered = c.clone();
    for i in 0..c.nrows() {
        jittered[(i, i)] *= 1.0 + 1e-12;
    }
    jittered
        .cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::Numeric("covariance is not positive definite after jitter".into()))
}

/// Rough Bergomi paths `(t, y[, V])` with `y_0 = 1`.
pub fn rbergomi(cfg: &RBergomiConfig) -> Result<PathBatch> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let times = grid.times();
    let alpha = cfg.alpha();
    let pos = &times[1..];
    let n = pos.len();
    let l = cholesky_with_jitter(&joint_covariance(pos, alpha))?;
    let scale = cfg.eta * (2.0 * alpha + 1.0).sqrt();
    let comp = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();
    let out_dim = if cfg.include_variance { 2 } else { 1 };

    let paths = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, "rbergomi", i as u64);
            let z = DMatrix::from_fn(2 * n, 1, |_, _| r.sample::<f64, _>(StandardNormal));
            let g = &l * z;
            let variance = |k: usize| -> f64 {
                if k == 0 {
                    cfg.xi0
                } else {
                    let t = times[k];
                    cfg.xi0 * (scale * g[n + k - 1] - 0.5 * cfg.eta * cfg.eta * t.powf(2.0 * alpha + 1.0)).exp()
                }
            };
            let mut values = Vec::with_capacity(times.len() * out_dim);
            let mut log_y = 0.0f64;
            let mut b_prev = 0.0;
            for k in 0..times.len() {
                let v = variance(k);
                values.push(log_y.exp());
                if cfg.include_variance {
                    values.push(v);
                }
                if k + 1 < times.len() {
                    let dt = times[k + 1] - times[k];
                    let b_next = g[k];
                    let d_b = b_next - b_prev;
                    b_prev = b_next;
                    let perp: f64 = r.sample(StandardNormal);
                    let driver = cfg.rho * d_b + comp * dt.sqrt() * perp;
                    log_y += -0.5 * v * dt + v.sqrt() * driver;
                }
            }
            Path::new(grid.clone(), values, out_dim)?.time_augment()
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::new(paths)
}

/// Loads a file holding exactly one series in the CSV path format.
pub fn load_series(file: &FsPath) -> Result<Path> {
    let f = std::fs::File::open(file)?;
    let mut series = read_series_csv(std::io::BufReader::new(f))?;
    if series.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} series; expected exactly one",
            file.display(),
            series.len()
        )));
    }
    Ok(series.pop().unwrap().1)
}

/// Re-basing applied to both halves of a conditional pair, in this order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTransforms {
    #[serde(default)]
    pub normalize_initial: bool,
    /// Multiplier for the value channels, applied after normalisation.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub translate_to_zero: bool,
}

impl Default for PairTransforms {
    fn default() -> Self {
        Self {
            normalize_initial: false,
            scale: 1.0,
            translate_to_zero: false,
        }
    }
}

impl PairTransforms {
    fn apply(&self, p: Path) -> Result<Path> {
        let mut p = p;
        if self.normalize_initial {
            p = p.normalize_initial()?;
        }
        if self.scale != 1.0 {
            p = p.scale(self.scale)?;
        }
        if self.translate_to_zero {
            p = p.translate_to_zero();
        }
        Ok(p)
    }
}

/// Splits every window into `(first past_len nodes, next future_len nodes)`;
/// each half is re-based to start at time zero.
pub fn make_conditional_pairs(
    batch: &PathBatch,
    past_len: usize,
    future_len: usize,
    transforms: &PairTransforms,
) -> Result<Vec<(Path, Path)>> {
    if past_len < 2 || future_len < 2 {
        return Err(Error::InvalidArgument("past_len and future_len must both be >= 2".into()));
    }
    if past_len + future_len > batch.path_len() {
        return Err(Error::InvalidArgument(format!(
            "past_len + future_len = {} exceeds window length {}",
            past_len + future_len,
            batch.path_len()
        )));
    }
    batch
        .iter()
        .map(|w| {
            let x = transforms.apply(w.slice(0, past_len)?)?;
            let y = transforms.apply(w.slice(past_len, past_len + future_len)?)?;
            Ok((x, y))
        })
        .collect()
}
