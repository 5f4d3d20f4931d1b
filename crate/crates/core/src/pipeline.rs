//! End-to-end orchestration: load data, split it, train the baseline, monitor
//! the post-development stream and adapt the model whenever the detector
//! alerts.
//!
//! Every step is a pure function of the configuration, the data and the
//! seed, so repeated runs produce byte-identical reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapt::{
    al_retrain, al_select, random_select, uda_retrain, AlConfig, DatasetOracle, FileQueueOracle,
    LabelOracle, UdaConfig,
};
use crate::classifier::{ClassifierModel, Example, TrainerConfig};
use crate::error::{Error, Result, StageExt};
use crate::eval::{evaluate_samples, MetricsRecord};
use crate::io::{ingest, EmbedderConfig};
use crate::mmd::KernelSpec;
use crate::sample::{pooled_batch, Sample};
use crate::split::{audit_subjects, chronological_split, dev_split};
use crate::stream::{make_windows, reference_batch, CusumParams, DriftMonitor, StreamConfig};
use crate::synth::{generate, SynthConfig};
use crate::tune::{train_on_splits, Baseline, GridSpec, TuneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    #[default]
    None,
    Uda,
    Al,
    Random,
}

impl AdaptationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AdaptationMode::None => "none",
            AdaptationMode::Uda => "uda",
            AdaptationMode::Al => "al",
            AdaptationMode::Random => "random",
        }
    }
}

/// File pair for an external labeling loop; see [`FileQueueOracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQueueConfig {
    pub queue: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub mode: AdaptationMode,
    pub uda: UdaConfig,
    pub al: AlConfig,
    /// When unset, AL and random queries are answered from manifest labels.
    pub label_queue: Option<LabelQueueConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub dev_ratio: f64,
    pub dev_ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            dev_ratio: 0.7,
            dev_ratios: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Manifest CSV; when unset the `synth` section is generated in memory.
    pub manifest: Option<PathBuf>,
    /// Checkpoint read by `evaluate`.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneSection {
    #[serde(flatten)]
    pub config: TuneConfig,
    pub grid: GridSpec,
}

/// Declarative run description, read from JSON. Relative paths in `data`
/// resolve against the directory of the config file.
///
/// `seed` drives the trainer, the synthetic generator and random sampling;
/// the `seed` fields nested in `trainer` and `synth` are overwritten by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub stream: StreamConfig,
    pub cusum: CusumParams,
    pub kernel: KernelSpec,
    pub trainer: TrainerConfig,
    pub adaptation: AdaptationConfig,
    pub synth: SynthConfig,
    pub embedder: EmbedderConfig,
    pub tune: TuneSection,
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            split: SplitConfig::default(),
            stream: StreamConfig::default(),
            cusum: CusumParams::default(),
            kernel: KernelSpec::gaussian_median(),
            trainer: TrainerConfig::default(),
            adaptation: AdaptationConfig::default(),
            synth: SynthConfig::default(),
            embedder: EmbedderConfig::default(),
            tune: TuneSection::default(),
            seed: 0,
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.cusum.validate()?;
        self.kernel.validate()?;
        self.trainer.validate()?;
        self.adaptation.uda.validate()?;
        let r = &self.split;
        if !(r.dev_ratio > 0.0 && r.dev_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!("dev_ratio must lie in (0, 1), got {}", r.dev_ratio)));
        }
        if (r.dev_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("dev_ratios {:?} must sum to 1", r.dev_ratios)));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Trainer settings with the run seed applied.
    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            seed: self.seed,
            ..self.trainer.clone()
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            trainer: self.trainer(),
            ..self.tune.config.clone()
        }
    }
}

/// Loads the configured data: the manifest when one is given, otherwise the
/// synthetic generator.
pub fn load_samples(cfg: &PipelineConfig) -> Result<Vec<Sample>> {
    match &cfg.data.manifest {
        Some(m) => ingest(&cfg.resolve(m), &cfg.embedder),
        None => generate(&cfg.synth()),
    }
}

/// Data split and trained baseline shared by every run over the same data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dev: Vec<Sample>,
    pub post: Vec<Sample>,
    pub baseline: Baseline,
}

pub fn prepare(cfg: &PipelineConfig, samples: &[Sample]) -> Result<Prepared> {
    let (dev, post) = chronological_split(samples, cfg.split.dev_ratio).stage("split")?;
    let splits = dev_split(&dev, cfg.split.dev_ratios).stage("split")?;
    audit_subjects(&[("train", &splits.train), ("validation", &splits.val), ("test", &splits.test), ("post", &post)])
        .stage("split")?;
    let baseline = train_on_splits(splits, &cfg.trainer()).stage("train")?;
    Ok(Prepared { dev, post, baseline })
}

/// One monitored window as written to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_index: usize,
    #[serde(with = "crate::sample::iso_millis")]
    pub t_start: DateTime<Utc>,
    #[serde(with = "crate::sample::iso_millis")]
    pub t_end: DateTime<Utc>,
    pub n: usize,
    pub mmd: f64,
    pub cusum_g: f64,
    pub alert: bool,
    /// Version of the model that scored this window.
    pub model_version: u64,
    pub metrics: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationEvent {
    pub window_index: usize,
    pub mode: AdaptationMode,
    pub samples_used: usize,
    /// Version of the model produced by this event.
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub record: String,
    pub mode: AdaptationMode,
    pub benchmark: f64,
    pub dev_test: MetricsRecord,
    pub n_dev: usize,
    pub n_post: usize,
    pub n_windows: usize,
    pub n_alerts: usize,
    pub first_alert: Option<usize>,
    pub events: Vec<AdaptationEvent>,
    pub labels_queried: usize,
    pub mean_balanced_accuracy: Option<f64>,
    /// Mean over windows after the first alert.
    pub mean_post_alert_balanced_accuracy: Option<f64>,
    pub final_model_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub windows: Vec<WindowReport>,
    pub summary: RunSummary,
}

impl RunReport {
    /// One JSON object per window, then the summary object.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for w in &self.windows {
            serde_json::to_writer(&mut out, w)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &self.summary)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_ndjson(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Balanced accuracy per window, `None` where metrics are absent.
    pub fn balanced_accuracies(&self) -> Vec<Option<f64>> {
        self.windows
            .iter()
            .map(|w| w.metrics.as_ref().map(|m| m.balanced_accuracy))
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Seed for the random control arm at one window.
fn window_seed(seed: u64, window_index: usize) -> u64 {
    seed ^ (window_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Selection sizes imposed on the random arm, one per alert in order.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub random_counts: Option<Vec<usize>>,
}

pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let samples = load_samples(cfg).stage("ingest")?;
    let prepared = prepare(cfg, &samples)?;
    run_prepared(cfg, &prepared, &RunOverrides::default())
}

/// Monitors `prepared.post` and adapts on alerts according to
/// `cfg.adaptation.mode`.
pub fn run_prepared(cfg: &PipelineConfig, prepared: &Prepared, overrides: &RunOverrides) -> Result<RunReport> {
    let mode = cfg.adaptation.mode;
    let trainer = cfg.trainer();
    let post = &prepared.post;
    let baseline = &prepared.baseline;

    let windows = make_windows(post, &cfg.stream).stage("window")?;
    let reference = reference_batch(&prepared.dev, cfg.stream.reference).stage("monitor")?;
    let pooled = pooled_batch(&post.iter().collect::<Vec<_>>()).stage("monitor")?;
    let mut monitor = DriftMonitor::new(reference, cfg.kernel, cfg.cusum).stage("monitor")?;

    let mut model: ClassifierModel = baseline.model.clone();
    let dev_pool = Example::from_samples(&baseline.splits.train);
    let mut al_pool = dev_pool.clone();
    let mut oracle: Box<dyn LabelOracle> = match &cfg.adaptation.label_queue {
        Some(q) => Box::new(FileQueueOracle::new(cfg.resolve(&q.queue), cfg.resolve(&q.labels))),
        None => Box::new(DatasetOracle::from_samples(post)),
    };

    let mut rows = Vec::with_capacity(windows.len());
    let mut events = Vec::new();
    let mut labels_queried = 0;
    let mut alert_no = 0;
    for w in &windows {
        let batch: Vec<&Sample> = w.samples(post);
        let metrics = evaluate_samples(&model, batch.iter().copied()).stage("evaluate")?;
        let rec = monitor.observe(w, &pooled).stage("monitor")?;
        rows.push(WindowReport {
            window_index: rec.window_index,
            t_start: rec.t_start,
            t_end: rec.t_end,
            n: rec.n,
            mmd: rec.mmd,
            cusum_g: rec.cusum_g,
            alert: rec.alert,
            model_version: model.version(),
            metrics,
        });
        if !rec.alert || mode == AdaptationMode::None {
            continue;
        }
        let (next, used) = match mode {
            AdaptationMode::None => unreachable!(),
            AdaptationMode::Uda => {
                let feats: Vec<Vec<f64>> = batch.iter().map(|s| s.pooled()).collect();
                let (m, _) =
                    uda_retrain(&model, &dev_pool, &feats, &cfg.adaptation.uda, &trainer).stage("adapt")?;
                (m, feats.len())
            }
            AdaptationMode::Al | AdaptationMode::Random => {
                let ids = if mode == AdaptationMode::Al {
                    al_select(&model, &batch, cfg.adaptation.al.z_band).stage("adapt")?
                } else {
                    let n = match &overrides.random_counts {
                        Some(c) => c.get(alert_no).copied().unwrap_or(0).min(batch.len()),
                        None => al_select(&model, &batch, cfg.adaptation.al.z_band).stage("adapt")?.len(),
                    };
                    random_select(&batch, n, window_seed(cfg.seed, w.index)).stage("adapt")?
                };
                let chosen: Vec<&Sample> = batch.iter().copied().filter(|s| ids.contains(&s.sample_id)).collect();
                labels_queried += chosen.len();
                let mut m = al_retrain(&model, &mut al_pool, &chosen, oracle.as_mut(), &cfg.adaptation.al, &trainer)
                    .stage("adapt")?;
                if chosen.is_empty() {
                    m.bump_version();
                }
                (m, chosen.len())
            }
        };
        model = next;
        events.push(AdaptationEvent {
            window_index: w.index,
            mode,
            samples_used: used,
            model_version: model.version(),
        });
        alert_no += 1;
    }

    let first_alert = rows.iter().find(|r| r.alert).map(|r| r.window_index);
    let ba = |r: &WindowReport| r.metrics.as_ref().map(|m| m.balanced_accuracy);
    let summary = RunSummary {
        record: "summary".into(),
        mode,
        benchmark: baseline.benchmark(),
        dev_test: baseline.test_metrics.clone(),
        n_dev: prepared.dev.len(),
        n_post: post.len(),
        n_windows: rows.len(),
        n_alerts: rows.iter().filter(|r| r.alert).count(),
        first_alert,
        events,
        labels_queried,
        mean_balanced_accuracy: mean(rows.iter().filter_map(ba)),
        mean_post_alert_balanced_accuracy: first_alert
            .and_then(|a| mean(rows.iter().filter(|r| r.window_index > a).filter_map(ba))),
        final_model_version: model.version(),
    };
    Ok(RunReport { windows: rows, summary })
}

/// Active learning and the random control on the same data, with the random
/// arm forced to query exactly as many labels as active learning did at each
/// alert.
pub fn run_al_vs_random(cfg: &PipelineConfig, prepared: &Prepared) -> Result<(RunReport, RunReport)> {
    let al_cfg = PipelineConfig {
        adaptation: AdaptationConfig {
            mode: AdaptationMode::Al,
            ..cfg.adaptation.clone()
        },
        ..cfg.clone()
    };
    let al = run_prepared(&al_cfg, prepared, &RunOverrides::default())?;
    let rnd_cfg = PipelineConfig {
        adaptation: AdaptationConfig {
            mode: AdaptationMode::Random,
            ..cfg.adaptation.clone()
        },
        ..cfg.clone()
    };
    let counts = al.summary.events.iter().map(|e| e.samples_used).collect();
    let rnd = run_prepared(&rnd_cfg, prepared, &RunOverrides { random_counts: Some(counts) })?;
    Ok((al, rnd))
}

/// Checks the report against its own contracts: one row per window, alerts
/// reproducible from the MMD column, one adaptation event per alert (unless
/// adaptation is off) and strictly increasing model versions.
pub fn verify_report(report: &RunReport, cusum: &CusumParams) -> Result<()> {
    let fail = |m: String| Err(Error::InvalidConfig(m));
    if report.summary.n_windows != report.windows.len() {
        return fail("window count differs from summary".into());
    }
    let mut state = crate::stream::CusumState::default();
    for w in &report.windows {
        let (next, alert) = crate::stream::cusum_step(state, cusum, w.mmd)?;
        state = next;
        if alert != w.alert {
            return fail(format!("alert at window {} does not replay", w.window_index));
        }
    }
    let alerts: Vec<usize> = report.windows.iter().filter(|w| w.alert).map(|w| w.window_index).collect();
    let events = &report.summary.events;
    if report.summary.mode != AdaptationMode::None {
        let at: Vec<usize> = events.iter().map(|e| e.window_index).collect();
        if at != alerts {
            return fail("adaptation events do not match alerts".into());
        }
    } else if !events.is_empty() {
        return fail("adaptation events recorded with adaptation disabled".into());
    }
    let mut version = report.windows.first().map_or(0, |w| w.model_version);
    for e in events {
        if e.model_version != version + 1 {
            return fail(format!("model version jumped to {} at window {}", e.model_version, e.window_index));
        }
        version = e.model_version;
    }
    Ok(())
}
