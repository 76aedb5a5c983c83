use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    Tanh,
    #[default]
    Identity,
}

impl FinalActivation {
    fn code(self) -> u8 {
        match self {
            FinalActivation::Identity => 0,
            FinalActivation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FinalActivation::Identity),
            1 => Ok(FinalActivation::Tanh),
            _ => Err(Error::InvalidArgument(format!("unknown activation code {c}"))),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(x) / 1.1`.
#[inline]
pub fn lipswish(x: f64) -> f64 {
    x * sigmoid(x) / 1.1
}

#[inline]
pub fn lipswish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    (s + x * s * (1.0 - s)) / 1.1
}

/// Fully connected network with LipSwish hidden activations.
///
/// `weights[l]` is row-major `sizes[l + 1] x sizes[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub final_activation: FinalActivation,
}

/// Pre-activations of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(sizes: &[usize], final_activation: FinalActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP needs at least input and output sizes, all positive; got {sizes:?}"
            )));
        }
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            final_activation,
        })
    }

    /// Weights uniform in `±scale / sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(sizes: &[usize], final_activation: FinalActivation, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(sizes, final_activation)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let s = scale / (sizes[l] as f64).sqrt();
            if s > 0.0 {
                for v in w.iter_mut() {
                    *v = rng.gen_range(-s..=s);
                }
            }
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes, self.final_activation).unwrap()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Vec::len).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output().to_vec()
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let n = self.layers();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n);
        for l in 0..n {
            let input = if l == 0 { x } else { &post[l - 1] };
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    self.biases[l][o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let a = if l + 1 < n {
                z.iter().map(|&v| lipswish(v)).collect()
            } else {
                match self.final_activation {
                    FinalActivation::Identity => z.clone(),
                    FinalActivation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                }
            };
            pre.push(z);
            post.push(a);
        }
        MlpCache {
            input: x.to_vec(),
            pre,
            post,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        let n = self.layers();
        let mut delta: Vec<f64> = match self.final_activation {
            FinalActivation::Identity => upstream.to_vec(),
            FinalActivation::Tanh => upstream
                .iter()
                .zip(&cache.post[n - 1])
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };
        for l in (0..n).rev() {
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            for o in 0..fan_out {
                grads.biases[l][o] += delta[o];
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
            }
            let mut back = vec![0.0; fan_in];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (b, wv) in back.iter_mut().zip(row) {
                    *b += delta[o] * wv;
                }
            }
            if l > 0 {
                for (b, z) in back.iter_mut().zip(&cache.pre[l - 1]) {
                    *b *= lipswish_grad(*z);
                }
            }
            delta = back;
        }
        delta
    }

    pub(crate) fn activation_code(&self) -> u8 {
        self.final_activation.code()
    }

    pub(crate) fn activation_from_code(c: u8) -> Result<FinalActivation> {
        FinalActivation::from_code(c)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sizes.len();
        let shapes_ok = n >= 2
            && self.weights.len() == n - 1
            && self.biases.len() == n - 1
            && (0..n - 1).all(|l| {
                self.weights[l].len() == self.sizes[l] * self.sizes[l + 1]
                    && self.biases[l].len() == self.sizes[l + 1]
            });
        if !shapes_ok {
            return Err(Error::InvalidState("MLP layer shapes do not chain".into()));
        }
        if self.tensors().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("MLP has non-finite parameters".into()));
        }
        Ok(())
    }
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lipswish_is_nonexpansive() {
        let mut max = 0.0f64;
        for k in -20000..=20000 {
            let x = k as f64 * 1e-3;
            max = max.max(lipswish_grad(x).abs());
        }
        assert!(max <= 1.0, "max slope {max}");
        assert_eq!(lipswish(0.0), 0.0);
    }

    #[test]
    fn lipswish_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (lipswish(x + h) - lipswish(x - h)) / (2.0 * h);
            assert!((fd - lipswish_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_init_is_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = MlpParams::init(&[3, 4, 2], FinalActivation::Identity, 0.0, &mut rng).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(m.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpParams::init(&[16, 8], FinalActivation::Tanh, 2.0, &mut rng).unwrap();
        assert!(m.weights[0].iter().all(|w| w.abs() <= 0.5));
        assert!(m.weights[0].iter().any(|w| w.abs() > 0.3));
        assert!(MlpParams::zeros(&[3], FinalActivation::Tanh).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for fa in [FinalActivation::Identity, FinalActivation::Tanh] {
            let m = MlpParams::init(&[3, 5, 4, 2], fa, 1.5, &mut rng).unwrap();
            let mut m = m;
            for b in m.biases.iter_mut().flatten() {
                *b = rng.gen_range(-0.5..0.5);
            }
            let x = [0.3, -0.8, 1.1];
            let up = [0.7, -1.3];
            let f = |m: &MlpParams, x: &[f64]| m.forward(x).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
            let mut g = m.zeros_like();
            let gx = m.backward(&m.forward_cached(&x), &up, &mut g);
            let h = 1e-6;
            for i in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (f(&m, &xp) - f(&m, &xm)) / (2.0 * h);
                assert!((fd - gx[i]).abs() < 1e-7);
            }
            for l in 0..m.layers() {
                for k in 0..m.weights[l].len() {
                    let mut mp = m.clone();
                    let mut mm = m.clone();
                    mp.weights[l][k] += h;
                    mm.weights[l][k] -= h;
                    let fd = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
                    assert!((fd - g.weights[l][k]).abs() < 1e-7);
                }
                for k in 0..m.biases[l].len() {
                    let mut mp = m.clone();
                    let mut mm = m.clone();
                    mp.biases[l][k] += h;
                    mm.biases[l][k] -= h;
                    let fd = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
                    assert!((fd - g.biases[l][k]).abs() < 1e-7);
                }
            }
        }
    }
}
