//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sigsde::diffengine::gradcheck::{check_kernel, check_mlp, check_pipeline, GradcheckReport};
use sigsde::evalstats::{self, AcfReport, KsProtocol, KsReport};
use sigsde::nsde::{
    self, encoding_len, init_params, read_checkpoint_file, write_checkpoint_file, NoiseBundle, StepReport,
    TrainConfig, TrainData, TrainObserver,
};
use sigsde::paths::{read_batch_csv, write_batch_csv};
use sigsde::scores::pooled_gram;
use sigsde::{rng, NeuralSdeParams, PathBatch, SdeDims, TimeGrid};

use crate::config::{Needs, RunConfig};
use crate::data;
use crate::error::{CliError, CliResult};

pub fn load_config(path: &FsPath, needs: Needs) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg = RunConfig::parse(&text).map_err(CliError::Validation)?;
    let errs = cfg.validate(needs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Validation(errs))
    }
}

fn create(path: &FsPath) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &FsPath, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &FsPath, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_text(path, &text)
}

fn mkdir(path: &FsPath) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

pub fn simulate(cfg: &RunConfig, split: Split, out: &FsPath) -> CliResult<()> {
    let s = data::splits(cfg)?;
    let batch = match split {
        Split::Train => &s.train,
        Split::Test => &s.test,
    };
    let mut w = create(out)?;
    write_batch_csv(batch, &mut w)?;
    w.flush().map_err(|e| CliError::io(out, e))
}

/// Dimensions implied by the data and the generator section.
fn model_dims(cfg: &RunConfig, sample: &sigsde::Path) -> SdeDims {
    let g = &cfg.generator;
    let (d_x, d_c) = match &cfg.conditional {
        Some(c) => {
            let d = sample.dim();
            (d - 1, encoding_len(d, c.depth, &c.condition_transforms))
        }
        None => (data::output_channels(sample), 0),
    };
    SdeDims {
        d_a: g.d_a,
        d_y: g.d_y,
        d_w: g.d_w,
        d_x,
        d_c,
    }
}

struct RunObserver {
    metrics: BufWriter<File>,
    timings: BufWriter<File>,
    ckpt_dir: PathBuf,
    start: Instant,
    verbose: bool,
}

#[derive(Serialize)]
struct Timing {
    step: usize,
    wall_time: f64,
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, r: &StepReport) -> sigsde::Result<()> {
        serde_json::to_writer(&mut self.metrics, r).map_err(std::io::Error::other)?;
        self.metrics.write_all(b"\n")?;
        let t = Timing {
            step: r.step,
            wall_time: self.start.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut self.timings, &t).map_err(std::io::Error::other)?;
        self.timings.write_all(b"\n")?;
        if self.verbose {
            eprintln!("step {:>6}  loss {:+.6}  {:.1}s", r.step, r.loss, t.wall_time);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: usize, params: &NeuralSdeParams) -> sigsde::Result<()> {
        self.metrics.flush()?;
        self.timings.flush()?;
        write_checkpoint_file(params, &self.ckpt_dir.join(format!("step-{step:06}.ckpt")))
    }
}

pub fn train(cfg: &RunConfig, out: &FsPath, verbose: bool) -> CliResult<()> {
    mkdir(out)?;
    let ckpt_dir = out.join("checkpoints");
    mkdir(&ckpt_dir)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let splits = data::splits(cfg)?;
    let train_cfg = TrainConfig {
        steps: cfg.schedule.steps,
        batch_size: cfg.schedule.batch_size,
        adam: cfg.optimizer,
        kernel: cfg.kernel.clone(),
        checkpoint_every: cfg.schedule.checkpoint_every,
        seed: rng::derive_seed(cfg.seed, "train"),
        report_mmd: cfg.schedule.report_mmd,
    };
    let init = |sample: &sigsde::Path| {
        init_params(
            model_dims(cfg, sample),
            &cfg.generator.architecture(),
            cfg.generator.init_scale,
            rng::derive_seed(cfg.seed, "init"),
        )
    };
    let mut observer = RunObserver {
        metrics: create(&out.join("metrics.jsonl"))?,
        timings: create(&out.join("timings.jsonl"))?,
        ckpt_dir,
        start: Instant::now(),
        verbose,
    };
    let grid = data::generator_grid(cfg, splits.train.get(0).grid())?;
    let mut params;
    let result = match &cfg.conditional {
        Some(c) => {
            let cd = data::conditional(c, &splits.train)?;
            params = init(&cd.pairs[0].0)?;
            nsde::train(&mut params, TrainData::Conditional(&cd), &grid, &train_cfg, &mut observer)
        }
        None => {
            let u = data::unconditional(cfg, &splits)?;
            if let Some(st) = &u.stats {
                write_json(&out.join("standardization.json"), st)?;
            }
            params = init(u.train.get(0))?;
            nsde::train(&mut params, TrainData::Unconditional(&u.train), &grid, &train_cfg, &mut observer)
        }
    };
    // keep the log of a diverged run
    observer.metrics.flush().map_err(|e| CliError::io(out, e))?;
    observer.timings.flush().map_err(|e| CliError::io(out, e))?;
    result?;
    write_checkpoint_file(&params, &out.join("final.ckpt"))?;
    Ok(())
}

#[derive(Serialize)]
struct ChannelAcf {
    channel: usize,
    generated: AcfReport,
    real: AcfReport,
}

#[derive(Serialize)]
struct EvalSummary {
    generated: usize,
    real: usize,
    ks: Vec<KsReport>,
    ks_null: Option<Vec<KsReport>>,
    crosscorr_mse: f64,
}

pub fn eval(cfg: &RunConfig, checkpoint: &FsPath, out: &FsPath) -> CliResult<()> {
    if !checkpoint.is_file() {
        return Err(CliError::io(
            checkpoint,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    let params = read_checkpoint_file(checkpoint)?;
    let splits = data::splits(cfg)?;
    let grid = data::generator_grid(cfg, splits.train.get(0).grid())?;
    let seed = rng::derive_seed(cfg.seed, "eval");
    let (generated, real) = match &cfg.conditional {
        Some(c) => {
            let cd = data::conditional(c, &splits.test)?;
            let paths = cd
                .encodings
                .iter()
                .enumerate()
                .map(|(i, enc)| {
                    let noise = NoiseBundle::draw(&params, 1, &grid, seed, &format!("eval-noise/{i}"));
                    let (b, _) = nsde::sample(&params, &grid, &noise, Some(enc))?;
                    Ok(b.into_paths().pop().expect("one path"))
                })
                .collect::<sigsde::Result<Vec<_>>>()?;
            let real = PathBatch::new(cd.pairs.into_iter().map(|(_, y)| y).collect())?;
            (data::model_space(&PathBatch::new(paths)?)?, real)
        }
        None => {
            let u = data::unconditional(cfg, &splits)?;
            let noise = NoiseBundle::draw(&params, cfg.eval.generated, &grid, seed, "eval-noise");
            let (b, _) = nsde::sample(&params, &grid, &noise, None)?;
            (data::model_space(&b)?, u.test)
        }
    };
    if generated.dim() != real.dim() || generated.path_len() != real.path_len() {
        return Err(CliError::Validation(vec![format!(
            "checkpoint produces {}-node paths of dimension {}, data has {}-node paths of dimension {}",
            generated.path_len(),
            generated.dim(),
            real.path_len(),
            real.dim()
        )]));
    }
    mkdir(out)?;
    let e = &cfg.eval;
    let channels: Vec<usize> = (1..real.dim()).collect();
    let protocol = |channel: usize| KsProtocol {
        times: e.times.clone(),
        repeats: e.repeats,
        batch: e.batch,
        alpha: e.alpha,
        channel,
        seed,
    };
    let mut ks = Vec::new();
    let mut ks_csv = String::new();
    for &c in &channels {
        let r = evalstats::ks_marginal_protocol(&generated, &real, &protocol(c))?;
        ks_csv.push_str(&format!("# channel {c}\n{}", r.to_csv()));
        ks.push(r);
    }
    let ks_null = if real.len() >= 2 * e.batch {
        Some(
            channels
                .iter()
                .map(|&c| evalstats::ks_null_protocol(&real, &protocol(c)))
                .collect::<sigsde::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    write_text(&out.join("ks.csv"), &ks_csv)?;

    let acf = channels
        .iter()
        .map(|&c| {
            Ok(ChannelAcf {
                channel: c,
                generated: evalstats::acf(&generated, c, e.acf_lags)?,
                real: evalstats::acf(&real, c, e.acf_lags)?,
            })
        })
        .collect::<sigsde::Result<Vec<_>>>()?;
    write_json(&out.join("acf.json"), &acf)?;

    let cg = evalstats::cross_corr_matrix(&generated, &channels, &e.corr_lags)?;
    let cr = evalstats::cross_corr_matrix(&real, &channels, &e.corr_lags)?;
    write_text(&out.join("crosscorr_generated.csv"), &cg.to_csv())?;
    write_text(&out.join("crosscorr_real.csv"), &cr.to_csv())?;

    let summary = EvalSummary {
        generated: generated.len(),
        real: real.len(),
        crosscorr_mse: evalstats::matrix_mse(&cg, &cr)?,
        ks,
        ks_null,
    };
    write_json(&out.join("ks.json"), &summary)?;
    Ok(())
}

pub fn gram(cfg: &RunConfig, data_file: &FsPath, out: &FsPath) -> CliResult<()> {
    let f = File::open(data_file).map_err(|e| CliError::io(data_file, e))?;
    let batch = read_batch_csv(std::io::BufReader::new(f))?.try_map(|p| p.time_augment())?;
    let g = pooled_gram(&data::model_space(&batch)?, &cfg.kernel)?;
    let mut w = create(out)?;
    g.to_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(out, e))
}

pub fn gradcheck(cfg: &RunConfig) -> CliResult<Vec<GradcheckReport>> {
    let g = &cfg.generator;
    let gc = &cfg.gradcheck;
    let seed = rng::derive_seed(cfg.seed, "gradcheck");
    let mut reports = Vec::new();

    let mut sizes = vec![1 + g.d_y];
    sizes.extend(&g.hidden);
    sizes.push(g.d_y);
    reports.push(check_mlp(&sizes, g.drift_final, seed)?);

    for (i, t) in cfg.kernel.terms.iter().enumerate() {
        let mut r = check_kernel(&t.kernel, &cfg.kernel.solver, gc.len, gc.d_x + 1, seed.wrapping_add(i as u64))?;
        r.name = format!("kernel[{i}]");
        reports.push(r);
    }

    let dims = SdeDims {
        d_a: g.d_a,
        d_y: g.d_y,
        d_w: g.d_w,
        d_x: gc.d_x,
        d_c: 0,
    };
    let params = init_params(dims, &g.architecture(), g.init_scale, seed)?;
    let grid = TimeGrid::uniform(0.0, 1.0, gc.len)?;
    reports.push(check_pipeline(&params, &grid, gc.batch, &cfg.kernel, seed)?);
    Ok(reports)
}
