use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::paths::Path;
use crate::tsig;

/// Pre-processing applied to a conditioning path before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTransform {
    TranslateToZero,
    TimeNormalize,
    LeadLag,
}

fn apply(path: &Path, t: ConditionTransform) -> Result<Path> {
    match t {
        ConditionTransform::TranslateToZero => Ok(path.translate_to_zero()),
        ConditionTransform::TimeNormalize => path.time_normalize(),
        ConditionTransform::LeadLag => path.lead_lag(),
    }
}

/// Flattened truncated log-signature (levels `1..=depth`) of the transformed
/// conditioning path. The level-0 term of a log-signature is always zero and
/// is not included.
pub fn encode_condition(x: &Path, depth: usize, transforms: &[ConditionTransform]) -> Result<Vec<f64>> {
    let mut p = x.clone();
    for &t in transforms {
        p = apply(&p, t)?;
    }
    Ok(tsig::log_signature(&p, depth)?.flatten())
}

/// Encoding length for a `dim`-channel conditioning path.
pub fn encoding_len(dim: usize, depth: usize, transforms: &[ConditionTransform]) -> usize {
    let d = transforms
        .iter()
        .fold(dim, |d, t| if *t == ConditionTransform::LeadLag { 2 * d } else { d });
    tsig::logsig_len(d, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::TimeGrid;

    fn path() -> Path {
        Path::new(TimeGrid::uniform(0.0, 2.0, 4).unwrap(), vec![1.0, 1.5, 0.5, 2.0], 1)
            .unwrap()
            .time_augment()
            .unwrap()
    }

    #[test]
    fn depth_one_is_increment() {
        let e = encode_condition(&path(), 1, &[]).unwrap();
        assert_eq!(e, vec![2.0, 1.0]);
        let e = encode_condition(&path(), 1, &[ConditionTransform::TimeNormalize]).unwrap();
        assert_eq!(e, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_condition_encodes_to_zero() {
        let c = Path::new(TimeGrid::index(5).unwrap(), vec![3.0; 10], 2).unwrap();
        let e = encode_condition(&c, 3, &[ConditionTransform::LeadLag]).unwrap();
        assert!(e.iter().all(|v| *v == 0.0));
        assert_eq!(e.len(), 4 + 16 + 64);
    }

    #[test]
    fn lead_lag_encoding_length() {
        let t = [ConditionTransform::TimeNormalize, ConditionTransform::LeadLag];
        for depth in 1..=4 {
            let e = encode_condition(&path(), depth, &t).unwrap();
            let expected: usize = (1..=depth as u32).map(|k| 4usize.pow(k)).sum();
            assert_eq!(e.len(), expected);
            assert_eq!(encoding_len(2, depth, &t), expected);
        }
    }
}
