//! Evaluation statistics: two-sample KS on marginals, autocorrelation,
//! return/squared-return cross-correlations and correlation histograms.
//!
//! The KS protocol's rejection rate equals the Type I error only when both
//! batches share a law; reports call it `rejection_rate`.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::{Path, PathBatch};
use crate::rng;

/// Times (node indices) used by the marginal KS tables.
pub const DEFAULT_KS_TIMES: [usize; 5] = [6, 19, 32, 44, 57];

/// Asymptotic two-sample critical value `c(α) = sqrt(-ln(α/2) / 2)`;
/// `c(0.05) ≈ 1.358`.
pub fn ks_critical_value(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub reject: bool,
}

/// Exact `sup |F_a - F_b|` by a merge scan over both sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("KS test needs non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("KS samples contain NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Rejects when `D > c(α) sqrt((n + m) / (n m))`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult> {
    let statistic = ks_statistic(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let threshold = ks_critical_value(alpha) * ((n + m) / (n * m)).sqrt();
    Ok(KsResult {
        statistic,
        reject: statistic > threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsTimeReport {
    pub time_index: usize,
    pub mean_ks: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub per_time: Vec<KsTimeReport>,
    pub repeats: usize,
    pub batch: usize,
    pub alpha: f64,
    pub channel: usize,
}

impl KsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_index,mean_ks,rejection_rate\n");
        for r in &self.per_time {
            s.push_str(&format!("{},{},{}\n", r.time_index, r.mean_ks, r.rejection_rate));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsProtocol {
    pub times: Vec<usize>,
    pub repeats: usize,
    pub batch: usize,
    pub alpha: f64,
    pub channel: usize,
    pub seed: u64,
}

fn aggregate(times: &[usize], per_repeat: &[Vec<KsResult>], cfg: &KsProtocol) -> KsReport {
    let r = per_repeat.len() as f64;
    let per_time = times
        .iter()
        .enumerate()
        .map(|(ti, &time_index)| KsTimeReport {
            time_index,
            mean_ks: per_repeat.iter().map(|v| v[ti].statistic).sum::<f64>() / r,
            rejection_rate: per_repeat.iter().filter(|v| v[ti].reject).count() as f64 / r,
        })
        .collect();
    KsReport {
        per_time,
        repeats: cfg.repeats,
        batch: cfg.batch,
        alpha: cfg.alpha,
        channel: cfg.channel,
    }
}

fn check_protocol(cfg: &KsProtocol, batches: &[&PathBatch]) -> Result<()> {
    if cfg.repeats == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArgument("KS protocol needs repeats >= 1 and batch >= 1".into()));
    }
    for b in batches {
        if let Some(&t) = cfg.times.iter().find(|&&t| t >= b.path_len()) {
            return Err(Error::InvalidArgument(format!("time index {t} beyond path length {}", b.path_len())));
        }
        if cfg.channel >= b.dim() {
            return Err(Error::InvalidArgument(format!("channel {} beyond dimension {}", cfg.channel, b.dim())));
        }
    }
    Ok(())
}

fn marginal_of(batch: &PathBatch, idx: &[usize], time: usize, channel: usize) -> Vec<f64> {
    idx.iter().map(|&i| batch.get(i).value(time, channel)).collect()
}

/// Repeated KS tests on marginals: each repeat subsamples `batch` paths
/// without replacement from each side. Repeat `r` uses stream `r`.
pub fn ks_marginal_protocol(generated: &PathBatch, real: &PathBatch, cfg: &KsProtocol) -> Result<KsReport> {
    check_protocol(cfg, &[generated, real])?;
    for (name, b) in [("generated", generated), ("real", real)] {
        if b.len() < cfg.batch {
            return Err(Error::InvalidArgument(format!(
                "KS batch {} exceeds {name} batch size {}",
                cfg.batch,
                b.len()
            )));
        }
    }
    let per_repeat: Vec<Vec<KsResult>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rg = rng::stream(cfg.seed, "ks-protocol", r as u64);
            let gi = sample_indices(&mut rg, generated.len(), cfg.batch).into_vec();
            let ri = sample_indices(&mut rg, real.len(), cfg.batch).into_vec();
            cfg.times
                .iter()
                .map(|&t| {
                    ks_two_sample(
                        &marginal_of(generated, &gi, t, cfg.channel),
                        &marginal_of(real, &ri, t, cfg.channel),
                        cfg.alpha,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&cfg.times, &per_repeat, cfg))
}

/// Null calibration: both sides are disjoint subsamples of one batch.
pub fn ks_null_protocol(batch: &PathBatch, cfg: &KsProtocol) -> Result<KsReport> {
    check_protocol(cfg, &[batch])?;
    if batch.len() < 2 * cfg.batch {
        return Err(Error::InvalidArgument(format!(
            "null protocol needs {} paths, batch has {}",
            2 * cfg.batch,
            batch.len()
        )));
    }
    let per_repeat: Vec<Vec<KsResult>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rg = rng::stream(cfg.seed, "ks-null", r as u64);
            let idx = sample_indices(&mut rg, batch.len(), 2 * cfg.batch).into_vec();
            let (a, b) = idx.split_at(cfg.batch);
            cfg.times
                .iter()
                .map(|&t| {
                    ks_two_sample(
                        &marginal_of(batch, a, t, cfg.channel),
                        &marginal_of(batch, b, t, cfg.channel),
                        cfg.alpha,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&cfg.times, &per_repeat, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfReport {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Paths skipped for zero variance.
    pub skipped: usize,
}

/// Autocorrelation of one series for lags `0..=max_lag`, using the series'
/// own mean and variance: `ACF_l = Σ_t (x_t - μ)(x_{t-l} - μ) / (N σ²)`.
/// `None` for a zero-variance series.
pub fn acf_series(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let c0: f64 = x.iter().map(|v| (v - mu) * (v - mu)).sum();
    if c0 <= 0.0 {
        return None;
    }
    Some(
        (0..=max_lag)
            .map(|l| (l..x.len()).map(|t| (x[t] - mu) * (x[t - l] - mu)).sum::<f64>() / c0)
            .collect(),
    )
}

/// Per-lag mean and standard deviation of [`acf_series`] across the batch
/// for one channel.
pub fn acf(batch: &PathBatch, channel: usize, max_lag: usize) -> Result<AcfReport> {
    if batch.path_len() <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "path length {} must exceed max_lag {max_lag}",
            batch.path_len()
        )));
    }
    let rows: Vec<Vec<f64>> = batch.iter().filter_map(|p| acf_series(&p.channel(channel), max_lag)).collect();
    let skipped = batch.len() - rows.len();
    let k = rows.len() as f64;
    let mut mean = vec![f64::NAN; max_lag + 1];
    let mut std = vec![f64::NAN; max_lag + 1];
    if !rows.is_empty() {
        for l in 0..=max_lag {
            let m = rows.iter().map(|r| r[l]).sum::<f64>() / k;
            mean[l] = m;
            std[l] = (rows.iter().map(|r| (r[l] - m).powi(2)).sum::<f64>() / k).sqrt();
        }
    }
    Ok(AcfReport { mean, std, skipped })
}

fn returns(p: &Path, channel: usize) -> Vec<f64> {
    p.channel(channel).windows(2).map(|w| w[1] - w[0]).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        f64::NAN
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Row-major matrix; NaN marks a missing (degenerate) entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl CorrMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// `corr(r^i_t, (r^j_{t-l})^2)` pooled over the batch, where `r` are the
/// consecutive differences of each listed channel. Rows are lags; columns
/// are ordered channel pairs `(i, j)` in row-major order over `channels`.
pub fn cross_corr_matrix(batch: &PathBatch, channels: &[usize], lags: &[usize]) -> Result<CorrMatrix> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if batch.path_len() < max_lag + 3 {
        return Err(Error::InvalidArgument(format!(
            "path length {} too short for lag {max_lag}",
            batch.path_len()
        )));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= batch.dim()) {
        return Err(Error::InvalidArgument(format!("channel {c} beyond dimension {}", batch.dim())));
    }
    let rets: Vec<Vec<Vec<f64>>> = batch.iter().map(|p| channels.iter().map(|&c| returns(p, c)).collect()).collect();
    let nc = channels.len();
    let mut entries = Vec::with_capacity(lags.len() * nc * nc);
    for &l in lags {
        for i in 0..nc {
            for j in 0..nc {
                let (mut x, mut y) = (Vec::new(), Vec::new());
                for r in &rets {
                    let n = r[i].len();
                    for t in l..n {
                        x.push(r[i][t]);
                        y.push(r[j][t - l] * r[j][t - l]);
                    }
                }
                entries.push(pearson(&x, &y));
            }
        }
    }
    Ok(CorrMatrix {
        rows: lags.len(),
        cols: nc * nc,
        entries,
    })
}

/// Mean squared entrywise difference, skipping entries missing in either.
pub fn matrix_mse(a: &CorrMatrix, b: &CorrMatrix) -> Result<f64> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::DimensionMismatch {
            expected: a.rows * a.cols,
            got: b.rows * b.cols,
        });
    }
    let diffs: Vec<f64> = a
        .entries
        .iter()
        .zip(&b.entries)
        .filter(|(x, y)| !x.is_nan() && !y.is_nan())
        .map(|(x, y)| (x - y).powi(2))
        .collect();
    if diffs.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Paths with a degenerate channel.
    pub skipped: usize,
}

/// Histogram of per-path Pearson correlations between the returns of two
/// channels. A correlation of exactly `+1` lands in the last bin.
pub fn terminal_corr_hist(batch: &PathBatch, ch_i: usize, ch_j: usize, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs bins >= 1".into()));
    }
    if ch_i >= batch.dim() || ch_j >= batch.dim() {
        return Err(Error::InvalidArgument("histogram channel beyond dimension".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|k| -1.0 + 2.0 * k as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    let mut skipped = 0;
    for p in batch {
        let c = pearson(&returns(p, ch_i), &returns(p, ch_j));
        if c.is_nan() {
            skipped += 1;
            continue;
        }
        let k = (((c.clamp(-1.0, 1.0) + 1.0) / 2.0) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts, skipped })
}
