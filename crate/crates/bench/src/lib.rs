//! Fixtures shared by the benchmarks.

use sigsde::synthdata::{gbm, GbmConfig};
use sigsde::PathBatch;

/// Time-augmented gBm paths rebased to start at zero on [0, 1].
pub fn gbm_paths(n: usize, len: usize, seed: u64) -> PathBatch {
    gbm(&GbmConfig { mu: 0.0, sigma: 0.2, y0: 1.0, horizon: 0.63, len, n, seed })
        .and_then(|b| b.try_map(|p| p.translate_to_zero().time_normalize()))
        .expect("valid gBm config")
}
