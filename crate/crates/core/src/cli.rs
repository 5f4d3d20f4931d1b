//! Subcommand implementations behind the `driftwatch` binary. Each command
//! reads a [`PipelineConfig`], writes its artifacts under an output
//! directory and returns a short JSON summary for stdout.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::classifier::Checkpoint;
use crate::error::{Error, Result, StageExt};
use crate::eval::evaluate_samples;
use crate::io::{manifest_for, save_ndjson, write_manifest};
use crate::pipeline::{load_samples, prepare, run_prepared, verify_report, AdaptationMode, PipelineConfig, RunOverrides};
use crate::split::chronological_split;
use crate::stream::make_windows;
use crate::synth::generate;
use crate::tune::{grid_search, save_grid_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Ingest,
    TrainBaseline,
    Tune,
    Scan,
    Run,
    Evaluate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::TrainBaseline => "train-baseline",
            Command::Tune => "tune",
            Command::Scan => "scan",
            Command::Run => "run",
            Command::Evaluate => "evaluate",
        }
    }
}

/// Loads the config (defaults when `path` is `None`) and applies `seed`.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p).stage("config")?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cmd: Command, cfg: &PipelineConfig, out: &Path) -> Result<Value> {
    std::fs::create_dir_all(out).stage("output")?;
    let written = match cmd {
        Command::Synth => synth(cfg, out)?,
        Command::Ingest => ingest_cmd(cfg, out)?,
        Command::TrainBaseline => train_baseline(cfg, out)?,
        Command::Tune => tune(cfg, out)?,
        Command::Scan => run_mode(cfg, out, Some(AdaptationMode::None), "scan.ndjson")?,
        Command::Run => run_mode(cfg, out, None, "report.ndjson")?,
        Command::Evaluate => evaluate(cfg, out)?,
    };
    Ok(json!({ "command": cmd.name(), "seed": cfg.seed, "outputs": written }))
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn synth(cfg: &PipelineConfig, out: &Path) -> Result<Vec<String>> {
    let samples = generate(&cfg.synth()).stage("synth")?;
    let emb = out.join("embeddings.ndjson");
    let man = out.join("manifest.csv");
    save_ndjson(&emb, &samples).stage("synth")?;
    write_manifest(std::fs::File::create(&man)?, &manifest_for(&samples, "embeddings.ndjson")).stage("synth")?;
    Ok(display(&[man, emb]))
}

fn ingest_cmd(cfg: &PipelineConfig, out: &Path) -> Result<Vec<String>> {
    if cfg.data.manifest.is_none() {
        return Err(Error::InvalidConfig("data.manifest is required for ingest".into())).stage("ingest");
    }
    let samples = load_samples(cfg).stage("ingest")?;
    let path = out.join("samples.ndjson");
    save_ndjson(&path, &samples).stage("ingest")?;
    Ok(display(&[path]))
}

fn train_baseline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<String>> {
    let samples = load_samples(cfg).stage("ingest")?;
    let prepared = prepare(cfg, &samples)?;
    let b = &prepared.baseline;
    let model = out.join("model.json");
    Checkpoint::from_model(&b.model, &cfg.trainer()).save(&model).stage("train")?;
    let summary = out.join("baseline.json");
    write_json(
        &summary,
        &json!({
            "benchmark": b.benchmark(),
            "test_metrics": b.test_metrics,
            "history": b.history,
            "n_train": b.splits.train.len(),
            "n_val": b.splits.val.len(),
            "n_test": b.splits.test.len(),
            "n_post": prepared.post.len(),
        }),
    )?;
    Ok(display(&[model, summary]))
}

fn tune(cfg: &PipelineConfig, out: &Path) -> Result<Vec<String>> {
    let samples = load_samples(cfg).stage("ingest")?;
    let (dev, _) = chronological_split(&samples, cfg.split.dev_ratio).stage("split")?;
    let grid = cfg.tune.grid.points();
    let report = grid_search(&dev, &grid, &cfg.tune_config()).stage("tune")?;
    let csv = out.join("grid.csv");
    save_grid_csv(&csv, &report.scores).stage("tune")?;
    let summary = out.join("tune.json");
    write_json(
        &summary,
        &json!({
            "benchmark": report.benchmark,
            "n_tuning_train": report.n_tuning_train,
            "n_tuning_stream": report.n_tuning_stream,
            "n_points": report.scores.len(),
            "best": report.scores.first(),
        }),
    )?;
    Ok(display(&[csv, summary]))
}

fn run_mode(cfg: &PipelineConfig, out: &Path, mode: Option<AdaptationMode>, file: &str) -> Result<Vec<String>> {
    let mut cfg = cfg.clone();
    if let Some(m) = mode {
        cfg.adaptation.mode = m;
    }
    cfg.validate().stage("config")?;
    let samples = load_samples(&cfg).stage("ingest")?;
    let prepared = prepare(&cfg, &samples)?;
    let report = run_prepared(&cfg, &prepared, &RunOverrides::default())?;
    verify_report(&report, &cfg.cusum).stage("report")?;
    let path = out.join(file);
    report.save(&path).stage("report")?;
    Ok(display(&[path]))
}

fn evaluate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<String>> {
    let ckpt = match &cfg.data.model {
        Some(p) => cfg.resolve(p),
        None => out.join("model.json"),
    };
    let model = Checkpoint::load(&ckpt).and_then(Checkpoint::into_model).stage("evaluate")?;
    let samples = load_samples(cfg).stage("ingest")?;
    let prepared = prepare(cfg, &samples)?;
    let post = &prepared.post;
    let windows = make_windows(post, &cfg.stream).stage("window")?;
    let mut per_window = Vec::with_capacity(windows.len());
    for w in &windows {
        let m = evaluate_samples(&model, w.samples(post)).stage("evaluate")?;
        per_window.push(json!({
            "window_index": w.index,
            "t_start": crate::sample::format_timestamp(&w.t_start),
            "t_end": crate::sample::format_timestamp(&w.t_end),
            "n": w.len(),
            "metrics": m,
        }));
    }
    let path = out.join("evaluation.json");
    write_json(
        &path,
        &json!({
            "model": ckpt.display().to_string(),
            "model_version": model.version(),
            "dev_test": evaluate_samples(&model, &prepared.baseline.splits.test).stage("evaluate")?,
            "post": evaluate_samples(&model, post).stage("evaluate")?,
            "windows": per_window,
        }),
    )?;
    Ok(display(&[path]))
}

/// Machine-readable form of an error, as printed on stderr.
pub fn error_json(err: &Error) -> Value {
    let (stage, inner) = match err {
        Error::Stage { stage, source } => (Some(*stage), source.as_ref()),
        e => (None, e),
    };
    let kind = format!("{inner:?}");
    let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Error").to_owned();
    json!({ "error": err.to_string(), "kind": kind, "stage": stage })
}
