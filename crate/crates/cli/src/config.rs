//! Run configuration: one TOML document per experiment.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sigsde::nsde::{ConditionTransform, FinalActivation};
use sigsde::scores::KernelSpec;
use sigsde::synthdata::PairTransforms;
use sigsde::{AdamConfig, Architecture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Master seed; every random stream is derived from it by purpose.
    pub seed: u64,
    #[serde(default)]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub transforms: TransformSpec,
    pub generator: GeneratorSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub conditional: Option<ConditionalSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub gradcheck: GradcheckSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Gbm {
        mu: f64,
        sigma: f64,
        #[serde(default = "one")]
        y0: f64,
        horizon: f64,
        len: usize,
        train_size: usize,
        test_size: usize,
    },
    Rbergomi {
        xi0: f64,
        eta: f64,
        rho: f64,
        h: f64,
        horizon: f64,
        len: usize,
        train_size: usize,
        test_size: usize,
        #[serde(default)]
        include_variance: bool,
    },
    /// A single series in the paths CSV format, cut into windows.
    File {
        path: PathBuf,
        window: usize,
        stride: usize,
        #[serde(default)]
        median_filter: bool,
        /// Fraction of windows, taken from the end, held out for evaluation.
        test_fraction: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Real-data transforms for unconditional runs. Translation to zero and
/// time normalisation are always applied after these, to real and
/// generated paths alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self { standardize: true }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorGrid {
    /// Integer times `0, 1, ..., L - 1`.
    #[default]
    Index,
    /// The time grid of the data.
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub d_a: usize,
    pub d_y: usize,
    pub d_w: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub xi_hidden: Vec<usize>,
    #[serde(default = "tanh")]
    pub drift_final: FinalActivation,
    #[serde(default = "tanh")]
    pub diffusion_final: FinalActivation,
    #[serde(default)]
    pub learn_initial: bool,
    #[serde(default = "one")]
    pub init_scale: f64,
    #[serde(default)]
    pub grid: GeneratorGrid,
}

fn tanh() -> FinalActivation {
    FinalActivation::Tanh
}

impl GeneratorSpec {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden.clone(),
            xi_hidden: self.xi_hidden.clone(),
            drift_final: self.drift_final,
            diffusion_final: self.diffusion_final,
            learn_initial: self.learn_initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub report_mmd: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            checkpoint_every: 0,
            report_mmd: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalSpec {
    pub past_len: usize,
    pub future_len: usize,
    /// Generated samples per conditioning path.
    pub fan_out: usize,
    /// Log-signature depth of the condition encoding.
    pub depth: usize,
    #[serde(default)]
    pub condition_transforms: Vec<ConditionTransform>,
    #[serde(default)]
    pub pair_transforms: PairTransforms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub times: Vec<usize>,
    pub repeats: usize,
    /// Paths per side in each KS repeat.
    pub batch: usize,
    pub alpha: f64,
    /// Number of generated paths (unconditional runs).
    pub generated: usize,
    pub acf_lags: usize,
    pub corr_lags: Vec<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            times: sigsde::evalstats::DEFAULT_KS_TIMES.to_vec(),
            repeats: 500,
            batch: 64,
            alpha: 0.05,
            generated: 4096,
            acf_lags: 5,
            corr_lags: vec![0, 1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    /// Nodes of the pipeline check's time grid.
    pub len: usize,
    pub batch: usize,
    /// Output channels of the pipeline check's generator.
    pub d_x: usize,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self { len: 5, batch: 3, d_x: 1 }
    }
}

/// What a subcommand needs from the config beyond the always-required parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Data,
    Nothing,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        toml::from_str(text).map_err(|e| vec![e.to_string().trim_end().to_string()])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated field, as `field: problem`.
    pub fn validate(&self, needs: Needs) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                v.push(format!("{field}: {msg}"));
            }
        };
        check(!self.name.trim().is_empty(), "name", "must not be empty");

        let g = &self.generator;
        check(g.d_a >= 1, "generator.d_a", "must be >= 1");
        check(g.d_y >= 1, "generator.d_y", "must be >= 1");
        check(g.d_w >= 1, "generator.d_w", "must be >= 1");
        check(!g.hidden.contains(&0), "generator.hidden", "widths must be >= 1");
        check(!g.xi_hidden.contains(&0), "generator.xi_hidden", "widths must be >= 1");
        check(
            g.init_scale >= 0.0 && g.init_scale.is_finite(),
            "generator.init_scale",
            "must be finite and >= 0",
        );

        check(!self.kernel.terms.is_empty(), "kernel.terms", "needs at least one term");
        for (i, t) in self.kernel.terms.iter().enumerate() {
            check(
                t.scale > 0.0 && t.scale.is_finite(),
                &format!("kernel.terms[{i}].scale"),
                "must be positive",
            );
            if let Err(e) = t.kernel.validate() {
                check(false, &format!("kernel.terms[{i}].kernel"), &e.to_string());
            }
        }
        if let Err(e) = self.kernel.solver.validate() {
            check(false, "kernel.solver.dyadic_order", &e.to_string());
        }

        let o = &self.optimizer;
        check(o.lr > 0.0 && o.lr.is_finite(), "optimizer.lr", "must be positive");
        check((0.0..1.0).contains(&o.beta1), "optimizer.beta1", "must be in [0, 1)");
        check((0.0..1.0).contains(&o.beta2), "optimizer.beta2", "must be in [0, 1)");
        check(o.eps > 0.0, "optimizer.eps", "must be positive");

        let s = &self.schedule;
        check(s.steps >= 1, "schedule.steps", "must be >= 1");
        check(s.batch_size >= 2, "schedule.batch_size", "must be >= 2");

        let e = &self.eval;
        check(!e.times.is_empty(), "eval.times", "must not be empty");
        check(e.repeats >= 1, "eval.repeats", "must be >= 1");
        check(e.batch >= 1, "eval.batch", "must be >= 1");
        check(e.alpha > 0.0 && e.alpha < 1.0, "eval.alpha", "must be in (0, 1)");
        check(e.generated >= e.batch, "eval.generated", "must be >= eval.batch");

        let gc = &self.gradcheck;
        check(gc.len >= 2, "gradcheck.len", "must be >= 2");
        check(gc.batch >= 2, "gradcheck.batch", "must be >= 2");
        check(gc.d_x >= 1, "gradcheck.d_x", "must be >= 1");

        if let Some(c) = &self.conditional {
            check(c.past_len >= 2, "conditional.past_len", "must be >= 2");
            check(c.future_len >= 2, "conditional.future_len", "must be >= 2");
            check(c.fan_out >= 2, "conditional.fan_out", "must be >= 2");
            check(c.depth >= 1, "conditional.depth", "must be >= 1");
            let p = &c.pair_transforms;
            check(
                p.scale > 0.0 && p.scale.is_finite(),
                "conditional.pair_transforms.scale",
                "must be positive",
            );
            // generated futures are always translated to start at zero
            check(
                p.translate_to_zero,
                "conditional.pair_transforms.translate_to_zero",
                "must be true",
            );
            if let Some(&t) = e.times.iter().find(|&&t| t >= c.future_len) {
                check(false, "eval.times", &format!("time index {t} beyond future_len {}", c.future_len));
            }
        }

        match &self.data {
            None => check(needs != Needs::Data, "data", "this command needs a [data] section"),
            Some(d) => validate_data(d, self, &mut check),
        }
        v
    }
}

fn validate_data(d: &DataSpec, cfg: &RunConfig, check: &mut impl FnMut(bool, &str, &str)) {
    let window = match d {
        DataSpec::Gbm {
            mu,
            sigma,
            y0,
            horizon,
            len,
            train_size,
            test_size,
        } => {
            check(mu.is_finite(), "data.mu", "must be finite");
            check(*sigma >= 0.0 && sigma.is_finite(), "data.sigma", "must be finite and >= 0");
            check(*y0 > 0.0 && y0.is_finite(), "data.y0", "must be positive");
            check(*horizon > 0.0 && horizon.is_finite(), "data.horizon", "must be positive");
            check(*len >= 2, "data.len", "must be >= 2");
            check(*train_size >= 2, "data.train_size", "must be >= 2");
            check(*test_size >= 1, "data.test_size", "must be >= 1");
            *len
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
            ..
        } => {
            check(*xi0 > 0.0 && xi0.is_finite(), "data.xi0", "must be positive");
            check(eta.is_finite(), "data.eta", "must be finite");
            check((-1.0..=1.0).contains(rho), "data.rho", "must be in [-1, 1]");
            check(*h > 0.0 && *h <= 0.5, "data.h", "must be in (0, 0.5]");
            check(*horizon > 0.0 && horizon.is_finite(), "data.horizon", "must be positive");
            check(*len >= 2, "data.len", "must be >= 2");
            check(*train_size >= 2, "data.train_size", "must be >= 2");
            check(*test_size >= 1, "data.test_size", "must be >= 1");
            *len
        }
        DataSpec::File {
            path,
            window,
            stride,
            test_fraction,
            ..
        } => {
            check(path.is_file(), "data.path", &format!("file {} does not exist", path.display()));
            check(*window >= 2, "data.window", "must be >= 2");
            check(*stride >= 1, "data.stride", "must be >= 1");
            check(
                *test_fraction > 0.0 && *test_fraction < 1.0,
                "data.test_fraction",
                "must be in (0, 1)",
            );
            *window
        }
    };
    match &cfg.conditional {
        Some(c) => check(
            c.past_len + c.future_len <= window,
            "conditional",
            &format!("past_len + future_len exceeds window length {window}"),
        ),
        None => {
            if let Some(&t) = cfg.eval.times.iter().find(|&&t| t >= window) {
                check(false, "eval.times", &format!("time index {t} beyond path length {window}"));
            }
            check(cfg.eval.acf_lags < window, "eval.acf_lags", "must be below the path length");
            let max_lag = cfg.eval.corr_lags.iter().copied().max().unwrap_or(0);
            check(max_lag + 3 <= window, "eval.corr_lags", "largest lag too long for the path length");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRESETS: [&str; 4] = [
        include_str!("../presets/gbm.cfg"),
        include_str!("../presets/rbergomi.cfg"),
        include_str!("../presets/conditional.cfg"),
        include_str!("../presets/micro.cfg"),
    ];

    #[test]
    fn presets_parse_and_validate() {
        for text in PRESETS {
            let cfg = RunConfig::parse(text).unwrap();
            let needs = if cfg.data.is_some() { Needs::Data } else { Needs::Nothing };
            assert_eq!(cfg.validate(needs), Vec::<String>::new(), "{}", cfg.name);
        }
    }

    #[test]
    fn snapshot_round_trips() {
        for text in PRESETS {
            let cfg = RunConfig::parse(text).unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn lists_every_violation() {
        let mut cfg = RunConfig::parse(PRESETS[0]).unwrap();
        cfg.schedule.steps = 0;
        cfg.optimizer.lr = -1.0;
        cfg.generator.d_y = 0;
        cfg.eval.alpha = 2.0;
        let errs = cfg.validate(Needs::Data);
        for field in ["schedule.steps", "optimizer.lr", "generator.d_y", "eval.alpha"] {
            assert!(errs.iter().any(|e| e.starts_with(field)), "{field} missing from {errs:?}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{}\nbogus = 1\n", PRESETS[3]);
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn missing_data_file_is_reported() {
        let mut cfg = RunConfig::parse(PRESETS[0]).unwrap();
        cfg.data = Some(DataSpec::File {
            path: "/nonexistent/series.csv".into(),
            window: 64,
            stride: 1,
            median_filter: false,
            test_fraction: 0.5,
        });
        let errs = cfg.validate(Needs::Data);
        assert!(errs.iter().any(|e| e.starts_with("data.path")), "{errs:?}");
    }
}
