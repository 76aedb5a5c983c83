use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_sigsde");

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn sigsde(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const TINY_GBM: &str = r#"
name = "tiny"
seed = 5

[data]
kind = "gbm"
mu = 0.0
sigma = 0.2
horizon = 0.63
len = 12
train_size = 64
test_size = 64

[generator]
d_a = 1
d_y = 3
d_w = 2
hidden = [8]
init_scale = 0.5

[kernel.solver]
dyadic_order = 0

[[kernel.terms]]
kernel = { kind = "rbf", sigma = 1.0 }

[optimizer]
lr = 1e-3

[schedule]
steps = 4
batch_size = 8
checkpoint_every = 2
report_mmd = true

[eval]
times = [2, 6, 11]
repeats = 20
batch = 16
alpha = 0.05
generated = 64
acf_lags = 3
corr_lags = [0, 1, 2]
"#;

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY_GBM);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(code(&sigsde(&["simulate", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&sigsde(&["--workers", "2", "simulate", "--config", s(&cfg), "--out", s(&b)])), 0);
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn gradcheck_on_micro_preset_passes() {
    let start = Instant::now();
    let out = sigsde(&["gradcheck", "--config", s(&preset("micro.cfg"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(60));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() >= 3);
    assert!(stdout.lines().all(|l| l.contains("\"passed\":true")));
}

#[test]
fn invalid_config_lists_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY_GBM
        .replace("d_y = 3", "d_y = 0")
        .replace("lr = 1e-3", "lr = -1.0")
        .replace("alpha = 0.05", "alpha = 1.5");
    let cfg = write_cfg(dir.path(), "bad.cfg", &text);
    let out = sigsde(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    for field in ["generator.d_y", "optimizer.lr", "eval.alpha"] {
        assert!(err.contains(field), "{field} missing from {err}");
    }
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", &TINY_GBM.replace("seed = 5", "seed = 5\nsed = 6"));
    assert_eq!(code(&sigsde(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))])), 1);
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY_GBM);
    let out = sigsde(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&dir.path().join("nope.ckpt")),
        "--out",
        s(&dir.path().join("eval")),
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&sigsde(&["simulate", "--config", "/nonexistent.cfg", "--out", "x.csv"])), 3);
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY_GBM.replace(
        "kernel = { kind = \"rbf\", sigma = 1.0 }",
        "scale = 1e8\nkernel = { kind = \"linear\" }",
    );
    let cfg = write_cfg(dir.path(), "div.cfg", &text);
    let out = sigsde(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_eval_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY_GBM);
    let run = dir.path().join("run");
    let out = sigsde(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "config.toml",
        "metrics.jsonl",
        "timings.jsonl",
        "standardization.json",
        "final.ckpt",
        "checkpoints/step-000002.ckpt",
        "checkpoints/step-000004.ckpt",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.lines().all(|l| l.contains("\"loss\"") && l.contains("\"mmd2\"")));

    // the snapshot alone reproduces the run
    let rerun = dir.path().join("rerun");
    let out = sigsde(&["train", "--config", s(&run.join("config.toml")), "--out", s(&rerun)]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(run.join("final.ckpt")).unwrap(),
        std::fs::read(rerun.join("final.ckpt")).unwrap()
    );

    let eval = dir.path().join("eval");
    let out = sigsde(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--out",
        s(&eval),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["ks.json", "ks.csv", "acf.json", "crosscorr_generated.csv", "crosscorr_real.csv"] {
        assert!(eval.join(f).is_file(), "{f} missing");
    }
    let ks: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("ks.json")).unwrap()).unwrap();
    assert_eq!(ks["ks"][0]["per_time"].as_array().unwrap().len(), 3);
}

#[test]
fn gram_dumps_square_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY_GBM);
    let data = dir.path().join("data.csv");
    assert_eq!(code(&sigsde(&["simulate", "--config", s(&cfg), "--split", "test", "--out", s(&data)])), 0);
    let gram = dir.path().join("gram.csv");
    let out = sigsde(&["gram", "--config", s(&cfg), "--data", s(&data), "--out", s(&gram)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(gram).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().all(|r| r.split(',').count() == 64));
}
