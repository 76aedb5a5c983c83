use std::io::Write;

use rayon::prelude::*;

use super::{eval_prepared, Lift, Prepared, SolverConfig, StaticKernel};
use crate::error::{Error, Result};
use crate::paths::PathBatch;

/// Pairwise signature-kernel values between two batches.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    symmetric: bool,
}

impl GramMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, symmetric: bool) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
            symmetric,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn prepare<'a>(batch: &'a PathBatch, lift: &Lift) -> Vec<Prepared<'a>> {
    batch.iter().map(|p| Prepared::new(p, lift)).collect()
}

fn check(x: &PathBatch, y: &PathBatch, sk: &StaticKernel, cfg: &SolverConfig) -> Result<Lift> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    cfg.validate()?;
    sk.lift(x.dim())
}

/// `G[i][j] = k_sig(X_i, Y_j)`. Rows are evaluated in parallel; every entry
/// is computed independently, so the result does not depend on scheduling.
pub fn gram(x: &PathBatch, y: &PathBatch, sk: &StaticKernel, cfg: &SolverConfig) -> Result<GramMatrix> {
    let lift = check(x, y, sk, cfg)?;
    let (px, py) = (prepare(x, &lift), prepare(y, &lift));
    let rows: Vec<Vec<f64>> = (0..px.len())
        .into_par_iter()
        .map(|i| {
            (0..py.len())
                .map(|j| eval_prepared(&lift, &px[i], &py[j], cfg).map_err(|e| e.at_pair(i, j)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    GramMatrix::from_entries(x.len(), y.len(), rows.concat(), false)
}

/// Self-Gram of one batch; only the upper triangle is solved.
pub fn gram_self(x: &PathBatch, sk: &StaticKernel, cfg: &SolverConfig) -> Result<GramMatrix> {
    let lift = check(x, x, sk, cfg)?;
    let px = prepare(x, &lift);
    let n = px.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| eval_prepared(&lift, &px[i], &px[j], cfg).map_err(|e| e.at_pair(i, j)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut entries = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let j = i + off;
            entries[i * n + j] = *v;
            entries[j * n + i] = *v;
        }
    }
    GramMatrix::from_entries(n, n, entries, true)
}
