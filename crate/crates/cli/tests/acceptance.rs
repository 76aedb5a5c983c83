//! Acceptance suite. Criteria run one after another in a single test so the
//! timed ones are not competing for cores; each prints one PASS/FAIL line.

use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigsde::diffengine::gradcheck::{check_kernel, check_pipeline, PIPELINE_TOL, PURE_TOL};
use sigsde::evalstats::{ks_null_protocol, ks_statistic, ks_two_sample, KsProtocol};
use sigsde::nsde::init_params;
use sigsde::paths::{fit_standardization, standardize};
use sigsde::scores::{loss_unconditional, mmd_permutation_test, score_unbiased};
use sigsde::sigkernel::{gram, gram_self, kernel_eval};
use sigsde::synthdata::{gbm, rbergomi, GbmConfig, RBergomiConfig};
use sigsde::tsig::truncated_kernel;
use sigsde::{Architecture, KernelSpec, Path, PathBatch, Scheme, SdeDims, SolverConfig, StaticKernel, TimeGrid};

const BIN: &str = env!("CARGO_BIN_EXE_sigsde");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Written straight to the process's stderr so the lines show up without
/// `--nocapture`.
fn report(n: usize, title: &str, o: &Outcome, took: Duration) {
    let line = format!(
        "criterion {n:>2} [{}] {title}: {} ({:.1}s)\n",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

fn preset(name: &str) -> PathBuf {
    FsPath::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &FsPath) -> &str {
    p.to_str().unwrap()
}

fn uniform_path(values: Vec<f64>, dim: usize) -> Path {
    let len = values.len() / dim;
    Path::new(TimeGrid::uniform(0.0, 1.0, len).unwrap(), values, dim).unwrap()
}

/// Random piecewise-linear path in R^2 with total variation exactly `tv`.
fn bounded_variation_path(rng: &mut ChaCha8Rng, len: usize, tv: f64) -> Path {
    let incs: Vec<[f64; 2]> = (1..len).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let total: f64 = incs.iter().map(|d| d[0].hypot(d[1])).sum();
    let mut values = vec![0.0, 0.0];
    for d in &incs {
        let (x, y) = (values[values.len() - 2], values[values.len() - 1]);
        values.push(x + d[0] * tv / total);
        values.push(y + d[1] * tv / total);
    }
    uniform_path(values, 2)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = SolverConfig::new(3, Scheme::Order2).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let len = rng.gen_range(2..=16);
        let tv_x = rng.gen_range(0.05..=1.0);
        let tv_y = rng.gen_range(0.05..=1.0);
        let x = bounded_variation_path(&mut rng, len, tv_x);
        let len_y = rng.gen_range(2..=16);
        let y = bounded_variation_path(&mut rng, len_y, tv_y);
        let pde = kernel_eval(&x, &y, &StaticKernel::Linear, &cfg).unwrap();
        let series = truncated_kernel(&x, &y, 10).unwrap();
        worst = worst.max((pde - series).abs());
    }
    let x = bounded_variation_path(&mut rng, 64, 1.0);
    let y = bounded_variation_path(&mut rng, 64, 1.0);
    let start = Instant::now();
    kernel_eval(&x, &y, &StaticKernel::Linear, &cfg).unwrap();
    let per_pair = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && per_pair <= 1.0,
        format!("max |pde - truncated| = {worst:.2e} (tol 1e-3), L=64 pair in {per_pair:.3}s (limit 1s)"),
    )
}

fn criterion_2() -> Outcome {
    let expected: f64 = (0..20).map(|k| 1.0 / (1..=k).map(|i| i as f64).product::<f64>().powi(2)).sum();
    let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
    let x = Path::new(grid.clone(), grid.times().to_vec(), 1).unwrap();
    let cfg = SolverConfig::new(4, Scheme::Order2).unwrap();
    let k = kernel_eval(&x, &x, &StaticKernel::Linear, &cfg).unwrap();
    let err = (k - 2.2795853).abs();
    outcome(
        err <= 1e-4 && (expected - 2.2795853).abs() < 1e-7,
        format!("k = {k:.7}, series = {expected:.7}, |k - 2.2795853| = {err:.2e} (tol 1e-4)"),
    )
}

fn criterion_3() -> Outcome {
    let cfg = SolverConfig::new(2, Scheme::Order2).unwrap();
    let kernels = [
        StaticKernel::Linear,
        StaticKernel::Rbf { sigma: 0.8 },
        StaticKernel::SetSqr { sigma: 1.0 },
    ];
    let kernel_err = kernels
        .iter()
        .enumerate()
        .map(|(i, sk)| check_kernel(sk, &cfg, 8, 2, 30 + i as u64).unwrap().rel_err)
        .fold(0.0, f64::max);

    let dims = SdeDims { d_a: 2, d_y: 3, d_w: 2, d_x: 1, d_c: 0 };
    let arch = Architecture { hidden: vec![8], learn_initial: true, ..Architecture::default() };
    let params = init_params(dims, &arch, 1.0, 3).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
    let spec = KernelSpec::single(StaticKernel::Rbf { sigma: 1.0 }, SolverConfig::new(1, Scheme::Order2).unwrap());
    let pipeline_err = check_pipeline(&params, &grid, 3, &spec, 9).unwrap().rel_err;

    let start = Instant::now();
    let out = run_cli(&["gradcheck", "--config", s(&preset("micro.cfg"))]);
    let cli_time = start.elapsed().as_secs_f64();
    let cli_ok = out.status.success();
    outcome(
        kernel_err <= PURE_TOL && pipeline_err <= PIPELINE_TOL && cli_ok && cli_time <= 60.0,
        format!(
            "kernel rel err {kernel_err:.2e} (tol 1e-4), pipeline rel err {pipeline_err:.2e} (tol 1e-3), \
             gradcheck exit {:?} in {cli_time:.1}s (limit 60s)",
            out.status.code()
        ),
    )
}

fn time_augmented(rng: &mut ChaCha8Rng, n: usize, len: usize, step: f64) -> PathBatch {
    PathBatch::new(
        (0..n)
            .map(|_| {
                let mut v = vec![0.0; len];
                for k in 1..len {
                    v[k] = v[k - 1] + rng.gen_range(-step..step);
                }
                uniform_path(v, 1).time_augment().unwrap()
            })
            .collect(),
    )
    .unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let population = time_augmented(&mut rng, 64, 10, 0.5);
    let y = time_augmented(&mut rng, 1, 10, 0.5).get(0).clone();
    let sk = StaticKernel::Rbf { sigma: 1.0 };
    let solver = SolverConfig::new(1, Scheme::Order2).unwrap();
    let spec = KernelSpec::single(sk, solver);

    // plug-in value over all distinct pairs of the population
    let g = gram_self(&population, &sk, &solver).unwrap();
    let cross = gram(&population, &PathBatch::new(vec![y.clone()]).unwrap(), &sk, &solver).unwrap();
    let n = population.len();
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += g.get(i, j);
            }
        }
    }
    let plug_in = off / (n * (n - 1)) as f64 - 2.0 * (0..n).map(|i| cross.get(i, 0)).sum::<f64>() / n as f64;

    let draws: Vec<f64> = (0..200)
        .map(|_| {
            let idx = sample_indices(&mut rng, n, 8).into_vec();
            score_unbiased(&population.select(&idx).unwrap(), &y, &spec, false).unwrap().value
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / 200.0;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    let se = sd / 200f64.sqrt();
    let z = (mean - plug_in).abs() / se;
    outcome(
        z <= 3.0,
        format!("MC mean {mean:.6} vs plug-in {plug_in:.6}, |diff| = {z:.2} SE (limit 3)"),
    )
}

fn gbm_batch(sigma: f64, n: usize, len: usize, seed: u64) -> PathBatch {
    gbm(&GbmConfig { mu: 0.0, sigma, y0: 1.0, horizon: 0.63, len, n, seed }).unwrap()
}

fn model_space(b: &PathBatch) -> PathBatch {
    b.try_map(|p| p.translate_to_zero().time_normalize()).unwrap()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let len = 16;
    let data = gbm_batch(0.2, 1024, len, 5000);
    let stats = fit_standardization(&data).unwrap();
    let prep = |b: &PathBatch| model_space(&standardize(b, &stats).unwrap());
    let real = prep(&data);
    let spec = KernelSpec::single(StaticKernel::Rbf { sigma: 1.0 }, SolverConfig::new(0, Scheme::Order2).unwrap());
    let sigmas = [0.10, 0.15, 0.20, 0.25, 0.30, 0.40];
    // common random numbers: every sigma shares the generator seed
    let scores: Vec<f64> = sigmas
        .iter()
        .map(|&sig| loss_unconditional(&prep(&gbm_batch(sig, 1024, len, 6000)), &real, &spec, false).unwrap().value)
        .collect();
    let argmin = (0..sigmas.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    let took = start.elapsed().as_secs_f64();
    let table: Vec<String> = sigmas.iter().zip(&scores).map(|(s, v)| format!("{s:.2}:{v:.5}")).collect();
    outcome(
        sigmas[argmin] == 0.20 && took <= 600.0,
        format!("scores [{}], minimiser sigma = {:.2}, {took:.0}s (limit 600s)", table.join(" "), sigmas[argmin]),
    )
}

fn criterion_6() -> Outcome {
    let len = 32;
    let reference = gbm_batch(0.2, 4096, len, 7000);
    let stats = fit_standardization(&reference).unwrap();
    let prep = |b: &PathBatch| model_space(&standardize(b, &stats).unwrap());
    // a narrow bandwidth resolves the volatility gap at this sample size
    let spec = KernelSpec::single(StaticKernel::Rbf { sigma: 0.1 }, SolverConfig::new(0, Scheme::Order2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let trial = |sig_y: f64, t: u64, rng: &mut ChaCha8Rng| {
        let x = prep(&gbm_batch(0.2, 64, len, 8000 + 2 * t));
        let y = prep(&gbm_batch(sig_y, 64, len, 8001 + 2 * t));
        mmd_permutation_test(&x, &y, &spec, 200, 0.05, rng).unwrap().reject
    };
    let power = (0..20).filter(|&t| trial(0.3, t, &mut rng)).count();
    let null = (0..100).filter(|&t| trial(0.2, 100 + t, &mut rng)).count();
    let sd = (100.0f64 * 0.05 * 0.95).sqrt();
    let null_ok = (null as f64 - 5.0).abs() <= 3.0 * sd;
    outcome(
        power >= 18 && null_ok,
        format!("power {power}/20 (need >= 18), null rejections {null}/100 (need within 5 +- {:.1})", 3.0 * sd),
    )
}

fn criterion_7(work: &FsPath) -> Outcome {
    // the preset as shipped; only the checkpoint cadence is dropped
    let mut cfg: toml::Table = std::fs::read_to_string(preset("gbm.cfg")).unwrap().parse().unwrap();
    let schedule = cfg.get_mut("schedule").and_then(|v| v.as_table_mut()).unwrap();
    schedule.insert("checkpoint_every".into(), 0.into());
    let steps = schedule["steps"].as_integer().unwrap();
    let batch = schedule["batch_size"].as_integer().unwrap();
    let d_y = cfg["generator"]["d_y"].as_integer().unwrap();
    let eval = &cfg["eval"];
    let protocol_ok = steps >= 800
        && batch == 64
        && d_y == 8
        && eval["batch"].as_integer() == Some(64)
        && eval["repeats"].as_integer() == Some(500);
    let cfg_path = work.join("gbm-acceptance.cfg");
    std::fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();

    let run = work.join("gbm-run");
    let start = Instant::now();
    let out = run_cli(&["train", "--config", s(&cfg_path), "--out", s(&run)]);
    let train_time = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let eval_dir = work.join("gbm-eval");
    let out = run_cli(&[
        "eval",
        "--config",
        s(&cfg_path),
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--out",
        s(&eval_dir),
    ]);
    if !out.status.success() {
        return outcome(false, format!("eval failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let ks: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("ks.json")).unwrap()).unwrap();
    let per_time = ks["ks"][0]["per_time"].as_array().unwrap();
    let mut pass = protocol_ok && train_time <= 45.0 * 60.0;
    let mut cells = Vec::new();
    for r in per_time {
        let (t, m, rej) = (
            r["time_index"].as_u64().unwrap(),
            r["mean_ks"].as_f64().unwrap(),
            r["rejection_rate"].as_f64().unwrap(),
        );
        pass &= rej <= 0.20 && m <= 0.16;
        cells.push(format!("t{t}: ks {m:.4} rej {:.1}%", 100.0 * rej));
    }
    outcome(
        pass,
        format!("{} (limits ks <= 0.16, rej <= 20%), trained {steps} steps at batch {batch} in {train_time:.0}s (limit 2700s)", cells.join(", ")),
    )
}

fn criterion_8() -> Outcome {
    let cfg = RBergomiConfig {
        xi0: 0.04,
        eta: 1.5,
        rho: -0.7,
        h: 0.2,
        horizon: 2.0,
        len: 65,
        n: 100_000,
        seed: 808,
        include_variance: true,
    };
    let batch = rbergomi(&cfg).unwrap();
    let alpha = cfg.alpha();
    let mut pass = true;
    let mut cells = Vec::new();
    for (t, node) in [(0.5, 16), (1.0, 32), (2.0, 64)] {
        let v = batch.marginal(node, 2);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let lm = logs.iter().sum::<f64>() / n;
        let lvar = logs.iter().map(|x| (x - lm).powi(2)).sum::<f64>() / (n - 1.0);
        let target = cfg.eta * cfg.eta * f64::powf(t, 2.0 * alpha + 1.0);
        let z = (mean - cfg.xi0).abs() / se;
        let rel = (lvar - target).abs() / target;
        pass &= z <= 3.0 && rel <= 0.05;
        cells.push(format!("t={t}: E[V] off by {z:.2} SE, Var[log V] rel err {:.2}%", 100.0 * rel));
    }
    outcome(pass, cells.join("; "))
}

fn criterion_9() -> Outcome {
    let cases: [(&[f64], &[f64], f64); 5] = [
        (&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 1.0),
        (&[1.0, 2.0, 3.0, 4.0], &[2.5], 0.5),
        (&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0], 1.0 / 3.0),
        (&[0.0, 1.0], &[0.0, 1.0], 0.0),
        (&[1.0, 3.0, 5.0, 7.0], &[2.0, 4.0, 6.0, 8.0], 0.25),
    ];
    let mut exact = true;
    for (a, b, d) in cases {
        exact &= (ks_statistic(a, b).unwrap() - d).abs() < 1e-15;
    }
    // 6 vs 6 fully separated: D = 1 > c(0.05) sqrt(12/36) = 0.784
    exact &= ks_two_sample(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0], 0.05)
        .unwrap()
        .reject;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
    let batch = PathBatch::new(
        (0..4096)
            .map(|_| {
                let v: Vec<f64> = (0..8).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                Path::new(grid.clone(), v, 1).unwrap()
            })
            .collect(),
    )
    .unwrap();
    let repeats = 1000;
    let report = ks_null_protocol(
        &batch,
        &KsProtocol { times: (0..8).collect(), repeats, batch: 64, alpha: 0.05, channel: 0, seed: 9 },
    )
    .unwrap();
    let rate = report.per_time.iter().map(|r| r.rejection_rate).sum::<f64>() / 8.0;
    // pooled over 8 time points; the repeats share subsamples, so use the
    // per-time standard error as a conservative bound
    let sd = (0.05 * 0.95 / repeats as f64).sqrt();
    let calibrated = (rate - 0.05).abs() <= 3.0 * sd;
    outcome(
        exact && calibrated,
        format!("exact cases {}, null rejection {:.2}% (need 5% +- {:.2}%)", if exact { "ok" } else { "wrong" }, 100.0 * rate, 300.0 * sd),
    )
}

const TINY: &str = r#"
name = "determinism"
seed = 10

[data]
kind = "gbm"
mu = 0.0
sigma = 0.2
horizon = 0.63
len = 16
train_size = 256
test_size = 128

[generator]
d_a = 1
d_y = 4
d_w = 2
hidden = [8]
init_scale = 0.5

[kernel.solver]
dyadic_order = 1

[[kernel.terms]]
kernel = { kind = "rbf", sigma = 1.0 }

[[kernel.terms]]
scale = 0.5
kernel = { kind = "set_sqr", sigma = 1.0 }

[optimizer]
lr = 1e-3

[schedule]
steps = 6
batch_size = 16
checkpoint_every = 3
report_mmd = true

[eval]
times = [3, 8, 15]
repeats = 50
batch = 32
alpha = 0.05
generated = 128
acf_lags = 3
corr_lags = [0, 1, 2]
"#;

fn read_tree(dir: &FsPath, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap_or_default()).collect()
}

fn criterion_10(work: &FsPath) -> Outcome {
    let cfg = work.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let produced = [
        "metrics.jsonl",
        "config.toml",
        "standardization.json",
        "checkpoints/step-000003.ckpt",
        "checkpoints/step-000006.ckpt",
        "final.ckpt",
    ];
    let evals = ["ks.json", "ks.csv", "acf.json", "crosscorr_generated.csv", "crosscorr_real.csv"];
    let mut runs = Vec::new();
    for (i, workers) in ["1", "3", "1"].iter().enumerate() {
        let run = work.join(format!("det-{i}"));
        let ev = work.join(format!("det-eval-{i}"));
        let sim = work.join(format!("det-{i}.csv"));
        let ok = run_cli(&["--workers", workers, "train", "--config", s(&cfg), "--out", s(&run)]).status.success()
            && run_cli(&[
                "--workers",
                workers,
                "eval",
                "--config",
                s(&cfg),
                "--checkpoint",
                s(&run.join("final.ckpt")),
                "--out",
                s(&ev),
            ])
            .status
            .success()
            && run_cli(&["--workers", workers, "simulate", "--config", s(&cfg), "--out", s(&sim)]).status.success();
        if !ok {
            return outcome(false, format!("a CLI run with {workers} workers failed"));
        }
        runs.push((read_tree(&run, &produced), read_tree(&ev, &evals), std::fs::read(&sim).unwrap()));
    }
    let nonempty = runs[0].0.iter().all(|b| !b.is_empty());
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        nonempty && same,
        format!(
            "train/eval/simulate outputs {} across worker counts 1, 3, 1",
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

#[test]
fn acceptance_criteria() {
    let work = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("kernel vs truncated-signature oracle", Box::new(criterion_1)),
        ("analytic linear-path value", Box::new(criterion_2)),
        ("gradient fidelity", Box::new(criterion_3)),
        ("estimator unbiasedness", Box::new(criterion_4)),
        ("strict properness on gBm", Box::new(criterion_5)),
        ("MMD permutation test power and size", Box::new(criterion_6)),
        ("gBm training, KS marginals", Box::new(|| criterion_7(work.path()))),
        ("rough Bergomi simulator moments", Box::new(criterion_8)),
        ("KS statistic and null calibration", Box::new(criterion_9)),
        ("CLI determinism across worker counts", Box::new(|| criterion_10(work.path()))),
    ];
    // ACCEPTANCE_ONLY=1,5 runs a subset while iterating; the default is all
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (title, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        report(i + 1, title, &o, start.elapsed());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
