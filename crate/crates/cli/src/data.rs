//! Dataset construction and the real-data transform pipeline.

use sigsde::nsde::{encode_condition, ConditionalData};
use sigsde::paths::{fit_standardization, median_terminal_filter, standardize, stride_split};
use sigsde::synthdata::{self, make_conditional_pairs, GbmConfig, RBergomiConfig};
use sigsde::{rng, Error, Path, PathBatch, Result, StandardizationStats, TimeGrid};

use crate::config::{ConditionalSpec, DataSpec, GeneratorGrid, RunConfig};

/// Raw train/test splits. Paths are time-augmented with time in channel 0.
pub struct Splits {
    pub train: PathBatch,
    pub test: PathBatch,
}

pub fn splits(cfg: &RunConfig) -> Result<Splits> {
    let data = cfg.data.as_ref().expect("validated: data present");
    let seed = |purpose: &str| rng::derive_seed(cfg.seed, purpose);
    match data {
        DataSpec::Gbm {
            mu,
            sigma,
            y0,
            horizon,
            len,
            train_size,
            test_size,
        } => {
            let make = |n: usize, purpose: &str| {
                synthdata::gbm(&GbmConfig {
                    mu: *mu,
                    sigma: *sigma,
                    y0: *y0,
                    horizon: *horizon,
                    len: *len,
                    n,
                    seed: seed(purpose),
                })
            };
            Ok(Splits {
                train: make(*train_size, "data/train")?,
                test: make(*test_size, "data/test")?,
            })
        }
        DataSpec::Rbergomi {
            xi0,
            eta,
            rho,
            h,
            horizon,
            len,
            train_size,
            test_size,
            include_variance,
        } => {
            let make = |n: usize, purpose: &str| {
                synthdata::rbergomi(&RBergomiConfig {
                    xi0: *xi0,
                    eta: *eta,
                    rho: *rho,
                    h: *h,
                    horizon: *horizon,
                    len: *len,
                    n,
                    seed: seed(purpose),
                    include_variance: *include_variance,
                })
            };
            Ok(Splits {
                train: make(*train_size, "data/train")?,
                test: make(*test_size, "data/test")?,
            })
        }
        DataSpec::File {
            path,
            window,
            stride,
            median_filter,
            test_fraction,
        } => {
            let series = synthdata::load_series(path)?.time_augment()?;
            let windows = stride_split(&series, *window, *stride)?.into_paths();
            let batch = if *median_filter {
                median_terminal_filter(&windows)?
            } else {
                PathBatch::new(windows)?
            };
            let n = batch.len();
            let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
            if n < n_test + 2 {
                return Err(Error::InvalidArgument(format!(
                    "{n} windows leave fewer than 2 for training after holding out {n_test}"
                )));
            }
            let cut = n - n_test;
            let idx: Vec<usize> = (0..n).collect();
            Ok(Splits {
                train: batch.select(&idx[..cut])?,
                test: batch.select(&idx[cut..])?,
            })
        }
    }
}

/// Unconditional training and evaluation batches in model space.
pub struct Unconditional {
    pub train: PathBatch,
    pub test: PathBatch,
    pub stats: Option<StandardizationStats>,
}

/// Applied after the configured real-data transforms, and by the trainer to
/// every generated path.
pub fn model_space(batch: &PathBatch) -> Result<PathBatch> {
    batch.try_map(|p| p.translate_to_zero().time_normalize())
}

pub fn unconditional(cfg: &RunConfig, s: &Splits) -> Result<Unconditional> {
    let stats = if cfg.transforms.standardize {
        Some(fit_standardization(&s.train)?)
    } else {
        None
    };
    let prep = |b: &PathBatch| -> Result<PathBatch> {
        let b = match &stats {
            Some(st) => standardize(b, st)?,
            None => b.clone(),
        };
        model_space(&b)
    };
    Ok(Unconditional {
        train: prep(&s.train)?,
        test: prep(&s.test)?,
        stats,
    })
}

/// Pairs whose future half is time-normalised for scoring, with the
/// condition encodings precomputed.
pub fn conditional(spec: &ConditionalSpec, batch: &PathBatch) -> Result<ConditionalData> {
    let raw = make_conditional_pairs(batch, spec.past_len, spec.future_len, &spec.pair_transforms)?;
    let mut pairs = Vec::with_capacity(raw.len());
    let mut encodings = Vec::with_capacity(raw.len());
    for (x, y) in raw {
        encodings.push(encode_condition(&x, spec.depth, &spec.condition_transforms)?);
        pairs.push((x, y.time_normalize()?));
    }
    Ok(ConditionalData {
        pairs,
        encodings,
        fan_out: spec.fan_out,
    })
}

/// Time grid the generator is rolled out on.
pub fn generator_grid(cfg: &RunConfig, data_grid: &TimeGrid) -> Result<TimeGrid> {
    let len = match &cfg.conditional {
        Some(c) => c.future_len,
        None => data_grid.len(),
    };
    match cfg.generator.grid {
        GeneratorGrid::Index => TimeGrid::index(len),
        GeneratorGrid::Data => {
            let times = &data_grid.times()[..len];
            TimeGrid::new(times.iter().map(|t| t - times[0]).collect())
        }
    }
}

/// Value channels of the model-space paths.
pub fn output_channels(sample: &Path) -> usize {
    sample.dim() - 1
}
