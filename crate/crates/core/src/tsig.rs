//! Truncated signatures and log-signatures of piecewise-linear paths.
//!
//! Tensors are stored densely: level `k` is a row-major array of `d^k`
//! entries indexed by words `(i_1, ..., i_k)`. Signatures are assembled with
//! Chen's identity, one tensor exponential per segment, accumulated left to
//! right in path order.

use crate::error::{Error, Result};
use crate::paths::Path;

/// Elements of the truncated tensor algebra `T^N(R^d)`.
#[derive(Debug, Clone, PartialEq)]
struct Tensor {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl Tensor {
    fn zero(dim: usize, depth: usize) -> Self {
        let levels = (0..=depth).map(|k| vec![0.0; dim.pow(k as u32)]).collect();
        Self { dim, levels }
    }

    fn one(dim: usize, depth: usize) -> Self {
        let mut t = Self::zero(dim, depth);
        t.levels[0][0] = 1.0;
        t
    }

    fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// `exp(v) = sum_k v^{(x)k} / k!` for a vector `v`.
    fn exp_vector(v: &[f64], depth: usize) -> Self {
        let d = v.len();
        let mut t = Self::one(d, depth);
        for k in 1..=depth {
            let (lower, upper) = t.levels.split_at_mut(k);
            let prev = &lower[k - 1];
            let cur = &mut upper[0];
            let inv_k = 1.0 / k as f64;
            for (a, pa) in prev.iter().enumerate() {
                for (b, vb) in v.iter().enumerate() {
                    cur[a * d + b] = pa * vb * inv_k;
                }
            }
        }
        t
    }

    /// Truncated product `self (x) other`.
    fn mul(&self, other: &Tensor) -> Tensor {
        let d = self.dim;
        let n = self.depth();
        let mut out = Tensor::zero(d, n);
        for k in 0..=n {
            let dst = &mut out.levels[k];
            for j in 0..=k {
                let a = &self.levels[j];
                let b = &other.levels[k - j];
                let stride = b.len();
                for (ia, va) in a.iter().enumerate() {
                    if *va == 0.0 {
                        continue;
                    }
                    let row = &mut dst[ia * stride..(ia + 1) * stride];
                    for (r, vb) in row.iter_mut().zip(b) {
                        *r += va * vb;
                    }
                }
            }
        }
        out
    }

    fn axpy(&mut self, alpha: f64, other: &Tensor) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    /// `log(1 + x) = sum_n (-1)^{n+1} x^n / n` where `x = self - 1`.
    fn log(&self) -> Tensor {
        let n = self.depth();
        let mut x = self.clone();
        x.levels[0][0] = 0.0;
        let mut out = Tensor::zero(self.dim, n);
        let mut power = x.clone();
        for m in 1..=n {
            let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
            out.axpy(sign / m as f64, &power);
            if m < n {
                power = power.mul(&x);
            }
        }
        out
    }

    /// `exp(x) = sum_n x^n / n!` for `x` with zero scalar part.
    fn exp(&self) -> Tensor {
        let n = self.depth();
        let mut out = Tensor::one(self.dim, n);
        let mut power = Tensor::one(self.dim, n);
        for m in 1..=n {
            power = power.mul(self);
            let mut scaled = power.clone();
            let inv = 1.0 / (1..=m).map(|k| k as f64).product::<f64>();
            for lvl in &mut scaled.levels {
                lvl.iter_mut().for_each(|v| *v *= inv);
            }
            out.axpy(1.0, &scaled);
        }
        out
    }
}

/// Levels `0..=N` of the signature of a path; level 0 is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSignature {
    inner: Tensor,
}

impl TruncatedSignature {
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn depth(&self) -> usize {
        self.inner.depth()
    }

    /// Level `k` as a flat array of `d^k` entries.
    pub fn level(&self, k: usize) -> &[f64] {
        &self.inner.levels[k]
    }

    /// Truncated tensor product (Chen's identity for concatenated paths).
    pub fn chen(&self, other: &TruncatedSignature) -> Result<TruncatedSignature> {
        if self.dim() != other.dim() || self.depth() != other.depth() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Self {
            inner: self.inner.mul(&other.inner),
        })
    }

    /// Canonical Hilbert-Schmidt inner product, summed over levels `0..=N`.
    pub fn inner(&self, other: &TruncatedSignature) -> f64 {
        self.inner
            .levels
            .iter()
            .zip(&other.inner.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn log(&self) -> LogSignature {
        LogSignature {
            inner: self.inner.log(),
        }
    }
}

/// Truncated tensor logarithm of a signature, kept in the full tensor
/// algebra (no Lyndon compression). Level 0 is identically zero and is
/// omitted from [`LogSignature::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogSignature {
    inner: Tensor,
}

impl LogSignature {
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn depth(&self) -> usize {
        self.inner.depth()
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.inner.levels[k]
    }

    /// Levels `1..=M` concatenated; length `sum_{k=1}^{M} d^k`.
    pub fn flatten(&self) -> Vec<f64> {
        self.inner.levels[1..].concat()
    }

    /// Truncated tensor exponential, which recovers the signature.
    pub fn exp(&self) -> TruncatedSignature {
        TruncatedSignature {
            inner: self.inner.exp(),
        }
    }
}

/// Length of [`LogSignature::flatten`] for dimension `d` and depth `m`.
pub fn logsig_len(d: usize, m: usize) -> usize {
    (1..=m).map(|k| d.pow(k as u32)).sum()
}

/// Exact signature of the piecewise-linear interpolant up to level `depth`.
pub fn signature(path: &Path, depth: usize) -> Result<TruncatedSignature> {
    if depth == 0 {
        return Err(Error::InvalidArgument("signature depth must be >= 1".into()));
    }
    let d = path.dim();
    let mut sig = Tensor::one(d, depth);
    let mut delta = vec![0.0; d];
    for k in 1..path.len() {
        let (a, b) = (path.row(k - 1), path.row(k));
        for c in 0..d {
            delta[c] = b[c] - a[c];
        }
        if delta.iter().all(|v| *v == 0.0) {
            continue;
        }
        sig = sig.mul(&Tensor::exp_vector(&delta, depth));
    }
    Ok(TruncatedSignature { inner: sig })
}

pub fn log_signature(path: &Path, depth: usize) -> Result<LogSignature> {
    Ok(signature(path, depth)?.log())
}

/// `sum_{k=0}^{N} <S^k(x), S^k(y)>`, the signature kernel truncated at level `N`.
pub fn truncated_kernel(x: &Path, y: &Path, depth: usize) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(signature(x, depth)?.inner(&signature(y, depth)?))
}
