//! Piecewise-linear paths on strictly increasing time grids.
//!
//! A [`Path`] stores `L` nodes of a `d`-channel path in row-major order. One
//! channel may be tagged as the time channel (see [`Path::time_augment`]);
//! transformations that act on "values" leave that channel alone.

mod io;

pub use io::{read_batch_csv, read_series_csv, write_batch_csv};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 nodes, got {}",
                times.len()
            )));
        }
        for (k, w) in times.windows(2).enumerate() {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite time at node {k}"
                )));
            }
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "times not strictly increasing at node {}",
                    k + 1
                )));
            }
        }
        Ok(Self { times })
    }

    /// `n` evenly spaced nodes from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("uniform grid needs n >= 2".into()));
        }
        let h = (end - start) / (n - 1) as f64;
        let mut times: Vec<f64> = (0..n).map(|k| start + h * k as f64).collect();
        times[n - 1] = end;
        Self::new(times)
    }

    /// The grid `{0, 1, ..., n-1}`.
    pub fn index(n: usize) -> Result<Self> {
        Self::new((0..n).map(|k| k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }

    fn shifted(&self, by: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t - by).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    values: Vec<f64>,
    dim: usize,
    time_channel: Option<usize>,
}

impl Path {
    /// Builds a path from row-major `values` (`grid.len() * dim` entries).
    pub fn new(grid: TimeGrid, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("path needs at least one channel".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * dim,
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at node {}, channel {}",
                k / dim,
                k % dim
            )));
        }
        Ok(Self {
            grid,
            values,
            dim,
            time_channel: None,
        })
    }

    /// Builds a one-channel path from `(t, x)` pairs.
    pub fn from_pairs(points: &[(f64, f64)]) -> Result<Self> {
        let grid = TimeGrid::new(points.iter().map(|p| p.0).collect())?;
        Self::new(grid, points.iter().map(|p| p.1).collect(), 1)
    }

    /// Tags `channel` as the time channel; it must be strictly increasing.
    pub fn with_time_channel(mut self, channel: usize) -> Result<Self> {
        if channel >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "time channel {channel} out of range for {} channels",
                self.dim
            )));
        }
        for k in 1..self.len() {
            if self.value(k, channel) <= self.value(k - 1, channel) {
                return Err(Error::InvalidArgument(format!(
                    "time channel not strictly increasing at node {k}"
                )));
            }
        }
        self.time_channel = Some(channel);
        Ok(self)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time_channel(&self) -> Option<usize> {
        self.time_channel
    }

    #[inline]
    pub fn value(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.dim + channel]
    }

    #[inline]
    pub fn row(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    /// Channel indices that carry data (everything but the time channel).
    pub fn value_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).filter(move |c| Some(*c) != self.time_channel)
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.value(k, channel)).collect()
    }

    /// Same grid and tags, new values. Values are checked for finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::new(self.grid.clone(), values, self.dim)?;
        p.time_channel = self.time_channel;
        Ok(p)
    }

    /// Value of the piecewise-linear interpolant at `t`.
    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let times = self.grid.times();
        let (start, end) = (self.grid.first(), self.grid.last());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { time: t, start, end });
        }
        // index of the last node with time <= t
        let k = times.partition_point(|&s| s <= t).saturating_sub(1);
        if times[k] == t || k + 1 == times.len() {
            out.copy_from_slice(self.row(k));
            return Ok(());
        }
        let w = (t - times[k]) / (times[k + 1] - times[k]);
        let (a, b) = (self.row(k), self.row(k + 1));
        for c in 0..self.dim {
            out[c] = a[c] + w * (b[c] - a[c]);
        }
        Ok(())
    }

    /// Resamples the interpolant onto `target`. Nodes shared with the source
    /// grid reproduce the source values exactly.
    pub fn interpolate(&self, target: &TimeGrid) -> Result<Self> {
        let mut values = vec![0.0; target.len() * self.dim];
        for (k, &t) in target.times().iter().enumerate() {
            self.eval(t, &mut values[k * self.dim..(k + 1) * self.dim])?;
        }
        let mut p = Self::new(target.clone(), values, self.dim)?;
        if let Some(tc) = self.time_channel {
            // the interpolated time channel is the target grid up to rounding
            for (k, &t) in target.times().iter().enumerate() {
                p.values[k * self.dim + tc] = t;
            }
            p.time_channel = Some(tc);
        }
        Ok(p)
    }

    /// Prepends the grid times as channel 0 and tags it.
    pub fn time_augment(&self) -> Result<Self> {
        if self.time_channel.is_some() {
            return Err(Error::InvalidState("path is already time-augmented".into()));
        }
        let d = self.dim + 1;
        let mut values = Vec::with_capacity(self.len() * d);
        for (k, &t) in self.grid.times().iter().enumerate() {
            values.push(t);
            values.extend_from_slice(self.row(k));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values,
            dim: d,
            time_channel: Some(0),
        })
    }

    /// Drops the time channel, if any.
    pub fn strip_time(&self) -> Self {
        let Some(tc) = self.time_channel else {
            return self.clone();
        };
        let d = self.dim - 1;
        let mut values = Vec::with_capacity(self.len() * d);
        for k in 0..self.len() {
            for (c, v) in self.row(k).iter().enumerate() {
                if c != tc {
                    values.push(*v);
                }
            }
        }
        Self {
            grid: self.grid.clone(),
            values,
            dim: d,
            time_channel: None,
        }
    }

    /// Shifts the value channels so that node 0 is zero.
    pub fn translate_to_zero(&self) -> Self {
        let mut p = self.clone();
        let origin = self.row(0).to_vec();
        for k in 0..p.len() {
            for c in self.value_channels() {
                p.values[k * p.dim + c] -= origin[c];
            }
        }
        p
    }

    /// Maps the time channel (and the grid) affinely onto `[0, 1]`.
    pub fn time_normalize(&self) -> Result<Self> {
        let tc = self
            .time_channel
            .ok_or_else(|| Error::InvalidState("time_normalize needs a time channel".into()))?;
        let (t0, t1) = (self.value(0, tc), self.value(self.len() - 1, tc));
        let span = t1 - t0;
        let mut p = self.clone();
        for k in 0..p.len() {
            let v = &mut p.values[k * p.dim + tc];
            *v = (*v - t0) / span;
        }
        p.values[tc] = 0.0;
        let last = (p.len() - 1) * p.dim + tc;
        p.values[last] = 1.0;
        let (g0, g1) = (self.grid.first(), self.grid.last());
        let mut times: Vec<f64> = self
            .grid
            .times()
            .iter()
            .map(|t| (t - g0) / (g1 - g0))
            .collect();
        times[0] = 0.0;
        *times.last_mut().unwrap() = 1.0;
        p.grid = TimeGrid::new(times)?;
        Ok(p)
    }

    /// Lead-lag embedding: `2L - 1` nodes, `2d` channels `(lead, lag)`.
    ///
    /// Node `2k` is `(x_k, x_k)` and node `2k + 1` is `(x_{k+1}, x_k)`. The
    /// interleaved nodes sit at segment midpoints of the source grid. The time
    /// tag is dropped since neither copy of a time channel is strictly
    /// increasing.
    pub fn lead_lag(&self) -> Result<Self> {
        let (l, d) = (self.len(), self.dim);
        let n = 2 * l - 1;
        let mut values = Vec::with_capacity(n * 2 * d);
        let mut times = Vec::with_capacity(n);
        let src = self.grid.times();
        for k in 0..l {
            values.extend_from_slice(self.row(k));
            values.extend_from_slice(self.row(k));
            times.push(src[k]);
            if k + 1 < l {
                values.extend_from_slice(self.row(k + 1));
                values.extend_from_slice(self.row(k));
                times.push(0.5 * (src[k] + src[k + 1]));
            }
        }
        Self::new(TimeGrid::new(times)?, values, 2 * d)
    }

    /// Multiplies the value channels by `c > 0`.
    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {c}")));
        }
        let mut p = self.clone();
        for k in 0..p.len() {
            for ch in self.value_channels() {
                p.values[k * p.dim + ch] *= c;
            }
        }
        Ok(p)
    }

    /// Divides every value channel by its value at node 0.
    pub fn normalize_initial(&self) -> Result<Self> {
        let mut p = self.clone();
        let origin = self.row(0).to_vec();
        for c in self.value_channels() {
            if origin[c] == 0.0 {
                return Err(Error::DegenerateData(format!(
                    "channel {c} starts at zero; cannot normalise by initial value"
                )));
            }
        }
        for k in 0..p.len() {
            for c in self.value_channels() {
                p.values[k * p.dim + c] /= origin[c];
            }
        }
        Ok(p)
    }

    /// Sub-path over nodes `start..end`, re-based so its grid starts at 0.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || end < start + 2 {
            return Err(Error::InvalidArgument(format!(
                "invalid node range {start}..{end} for a path of length {}",
                self.len()
            )));
        }
        let t0 = self.grid.times()[start];
        let grid = TimeGrid::new(self.grid.times()[start..end].to_vec())?.shifted(t0);
        let mut values = self.values[start * self.dim..end * self.dim].to_vec();
        if let Some(tc) = self.time_channel {
            let base = values[tc];
            for k in 0..end - start {
                values[k * self.dim + tc] -= base;
            }
        }
        Ok(Self {
            grid,
            values,
            dim: self.dim,
            time_channel: self.time_channel,
        })
    }

    /// Concatenation of `self` and `other` where `other` starts where `self` ends.
    pub fn concat(&self, other: &Path) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let shift = self.grid.last() - other.grid.first();
        let mut times = self.grid.times().to_vec();
        let mut values = self.values.clone();
        let offset: Vec<f64> = (0..self.dim)
            .map(|c| self.value(self.len() - 1, c) - other.value(0, c))
            .collect();
        for k in 1..other.len() {
            times.push(other.grid.times()[k] + shift);
            for (c, off) in offset.iter().enumerate() {
                values.push(other.value(k, c) + off);
            }
        }
        Self::new(TimeGrid::new(times)?, values, self.dim)
    }
}

/// Gradient of [`Path::translate_to_zero`]: maps a gradient w.r.t. the output
/// values (row-major, `len * dim`) to a gradient w.r.t. the input values.
pub fn translate_to_zero_vjp(grad: &mut [f64], dim: usize, time_channel: Option<usize>) {
    let len = grad.len() / dim;
    for c in (0..dim).filter(|c| Some(*c) != time_channel) {
        let total: f64 = (0..len).map(|k| grad[k * dim + c]).sum();
        grad[c] -= total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    paths: Vec<Path>,
}

impl PathBatch {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        let Some(first) = paths.first() else {
            return Err(Error::InvalidArgument("path batch must be non-empty".into()));
        };
        let (l, d) = (first.len(), first.dim());
        for p in &paths {
            if p.len() != l {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    got: p.len(),
                });
            }
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn into_paths(self) -> Vec<Path> {
        self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path_len(&self) -> usize {
        self.paths[0].len()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Path> {
        self.paths.iter()
    }

    pub fn get(&self, i: usize) -> &Path {
        &self.paths[i]
    }

    /// Sub-batch of the given indices (in order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.paths[i].clone()).collect())
    }

    /// Applies a fallible per-path transformation.
    pub fn try_map(&self, f: impl Fn(&Path) -> Result<Path>) -> Result<Self> {
        Self::new(self.paths.iter().map(f).collect::<Result<Vec<_>>>()?)
    }

    /// Marginal of `channel` at node `node` across the batch.
    pub fn marginal(&self, node: usize, channel: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.value(node, channel)).collect()
    }
}

impl<'a> IntoIterator for &'a PathBatch {
    type Item = &'a Path;
    type IntoIter = std::slice::Iter<'a, Path>;

    fn into_iter(self) -> Self::IntoIter {
        self.paths.iter()
    }
}

/// Terminal-value mean and (population) standard deviation per channel.
/// The time channel, if any, carries `(0, 1)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StandardizationStats {
    pub mu_t: Vec<f64>,
    pub sigma_t: Vec<f64>,
}

pub fn fit_standardization(batch: &PathBatch) -> Result<StandardizationStats> {
    let d = batch.dim();
    let last = batch.path_len() - 1;
    let n = batch.len() as f64;
    let tc = batch.get(0).time_channel();
    let mut mu_t = vec![0.0; d];
    let mut sigma_t = vec![1.0; d];
    for c in (0..d).filter(|c| Some(*c) != tc) {
        let xs = batch.marginal(last, c);
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if var.is_nan() || var <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "terminal values of channel {c} have zero variance"
            )));
        }
        mu_t[c] = mean;
        sigma_t[c] = var.sqrt();
    }
    Ok(StandardizationStats { mu_t, sigma_t })
}

/// Maps each value channel `x -> (x - mu_T) / sigma_T`.
pub fn standardize(batch: &PathBatch, stats: &StandardizationStats) -> Result<PathBatch> {
    let d = batch.dim();
    if stats.mu_t.len() != d || stats.sigma_t.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: stats.mu_t.len(),
        });
    }
    if let Some(c) = stats.sigma_t.iter().position(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::DegenerateData(format!(
            "sigma_T of channel {c} is not positive"
        )));
    }
    batch.try_map(|p| {
        let mut v = p.values().to_vec();
        for k in 0..p.len() {
            for c in p.value_channels() {
                v[k * d + c] = (v[k * d + c] - stats.mu_t[c]) / stats.sigma_t[c];
            }
        }
        p.with_values(v)
    })
}

/// Windows of `window` nodes every `step` nodes, each re-based to start at time 0.
pub fn stride_split(series: &Path, window: usize, step: usize) -> Result<PathBatch> {
    if window > series.len() {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds series length {}",
            series.len()
        )));
    }
    if window < 2 || step == 0 {
        return Err(Error::InvalidArgument(
            "window must be >= 2 and step >= 1".into(),
        ));
    }
    let paths = (0..=series.len() - window)
        .step_by(step)
        .map(|start| series.slice(start, start + window))
        .collect::<Result<Vec<_>>>()?;
    PathBatch::new(paths)
}

/// Lower-middle median (an observed element for even counts).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Keeps windows whose time span is at most the median span and resamples
/// the survivors onto a common evenly spaced grid over `[0, median]` with the
/// original number of nodes. Survivors shorter than the median hold their
/// terminal value over the remainder of the grid.
pub fn median_terminal_filter(windows: &[Path]) -> Result<PathBatch> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to filter".into()));
    }
    let spans: Vec<f64> = windows.iter().map(|w| w.grid().span()).collect();
    let median = lower_median(&spans);
    let n = windows[0].len();
    let grid = TimeGrid::uniform(0.0, median, n)?;
    let kept = windows
        .iter()
        .zip(&spans)
        .filter(|(_, s)| **s <= median)
        .map(|(w, _)| {
            let rebased = w.slice(0, w.len())?;
            let mut values = vec![0.0; n * w.dim()];
            for (k, &t) in grid.times().iter().enumerate() {
                let t = t.min(rebased.grid().last());
                rebased.eval(t, &mut values[k * w.dim()..(k + 1) * w.dim()])?;
            }
            let p = Path::new(grid.clone(), values, w.dim())?;
            match w.time_channel() {
                Some(tc) => {
                    let mut v = p.values().to_vec();
                    for (k, &t) in grid.times().iter().enumerate() {
                        v[k * w.dim() + tc] = t;
                    }
                    Path::new(grid.clone(), v, w.dim())?.with_time_channel(tc)
                }
                None => Ok(p),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::new(kept)
}
