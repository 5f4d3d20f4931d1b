//! Offline nested grid search over windowing and detector settings.
//!
//! The development set is cut chronologically into a tuning-train part
//! (itself split train/validation/test) and a held-out tuning stream. A
//! baseline trained on the first part sets a benchmark (test balanced
//! accuracy); every held-out window scoring below it is labeled as drifted,
//! and each grid point is scored on how well its alerts reproduce those
//! labels.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{train, ClassifierModel, Example, TrainHistory, TrainerConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_samples, label_drift_batches, score_detection, MetricsRecord};
use crate::mmd::{KernelSpec, VectorBatch};
use crate::sample::{pooled_batch, Sample};
use crate::split::{audit_subjects, chronological_split, dev_split, DevSplits};
use crate::stream::{
    cusum_step, make_windows, reference_batch, CusumParams, CusumState, DriftMonitor,
    ReferenceMode, StreamConfig, WindowBatch,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub window_len_days: f64,
    pub overlap: f64,
    pub min_batch: usize,
    pub cusum_drift: f64,
    pub cusum_threshold: f64,
    pub reference: ReferenceMode,
    pub kernel: KernelSpec,
}

impl GridPoint {
    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            window_len_days: self.window_len_days,
            overlap: self.overlap,
            min_batch: self.min_batch,
            reference: self.reference,
        }
    }

    pub fn cusum(&self) -> CusumParams {
        CusumParams {
            drift: self.cusum_drift,
            threshold: self.cusum_threshold,
        }
    }

    fn windowing_key(&self) -> (u64, u64, usize) {
        (self.window_len_days.to_bits(), self.overlap.to_bits(), self.min_batch)
    }
}

/// Axis values; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub window_len_days: Vec<f64>,
    pub overlap: Vec<f64>,
    pub min_batch: Vec<usize>,
    pub cusum_drift: Vec<f64>,
    pub cusum_threshold: Vec<f64>,
    pub reference: Vec<ReferenceMode>,
    pub kernel: Vec<KernelSpec>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            window_len_days: vec![7.0, 10.0, 14.0],
            overlap: vec![0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0],
            min_batch: vec![0, 10, 20, 30],
            cusum_drift: vec![0.2, 0.3, 0.4, 0.5],
            cusum_threshold: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            reference: vec![ReferenceMode::Positive, ReferenceMode::Negative, ReferenceMode::All],
            kernel: vec![KernelSpec::Linear, KernelSpec::polynomial(), KernelSpec::gaussian_median()],
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &window_len_days in &self.window_len_days {
            for &overlap in &self.overlap {
                for &min_batch in &self.min_batch {
                    for &cusum_drift in &self.cusum_drift {
                        for &cusum_threshold in &self.cusum_threshold {
                            for &reference in &self.reference {
                                for &kernel in &self.kernel {
                                    out.push(GridPoint {
                                        window_len_days,
                                        overlap,
                                        min_batch,
                                        cusum_drift,
                                        cusum_threshold,
                                        reference,
                                        kernel,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Fraction of the development set used to build the tuning baseline.
    pub holdout_ratio: f64,
    pub inner_ratios: [f64; 3],
    pub trainer: TrainerConfig,
    /// Alert-to-batch matching slack, in batches.
    pub tolerance: usize,
    /// Worker threads for MMD sequences; `None` uses available parallelism.
    pub threads: Option<usize>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            holdout_ratio: 0.7,
            inner_ratios: [0.6, 0.2, 0.2],
            trainer: TrainerConfig::default(),
            tolerance: 0,
            threads: None,
        }
    }
}

/// A trained baseline with the development splits it came from.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub model: ClassifierModel,
    pub history: TrainHistory,
    pub splits: DevSplits,
    pub test_metrics: MetricsRecord,
}

impl Baseline {
    pub fn benchmark(&self) -> f64 {
        self.test_metrics.balanced_accuracy
    }
}

/// Splits `dev` 3-way, trains from an identity-adapter, zero-head model and
/// evaluates on the test part.
pub fn train_baseline(dev: &[Sample], ratios: [f64; 3], trainer: &TrainerConfig) -> Result<Baseline> {
    let splits = dev_split(dev, ratios)?;
    audit_subjects(&[("train", &splits.train), ("validation", &splits.val), ("test", &splits.test)])?;
    train_on_splits(splits, trainer)
}

/// [`train_baseline`] on splits made elsewhere.
pub fn train_on_splits(splits: DevSplits, trainer: &TrainerConfig) -> Result<Baseline> {
    let dim = splits.train.first().map(Sample::dim).ok_or(Error::EmptySplit("train"))?;
    let tr = Example::from_samples(&splits.train);
    let va = Example::from_samples(&splits.val);
    if tr.is_empty() || va.is_empty() {
        return Err(Error::InsufficientData("train and validation splits need labeled samples".into()));
    }
    let (model, history) = train(&ClassifierModel::new(dim), &tr, &va, trainer)?;
    let test_metrics = evaluate_samples(&model, &splits.test)?
        .ok_or_else(|| Error::InsufficientData("test split has unlabeled samples".into()))?;
    Ok(Baseline {
        model,
        history,
        splits,
        test_metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub point: GridPoint,
    /// Position of the point in the input grid.
    pub grid_index: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub n_batches: usize,
    pub n_drift: usize,
    pub n_alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub benchmark: f64,
    pub n_tuning_train: usize,
    pub n_tuning_stream: usize,
    /// Best first.
    pub scores: Vec<DetectionScore>,
}

struct Windowing {
    windows: Vec<WindowBatch>,
    labels: Vec<bool>,
}

/// Runs the nested protocol over `grid` and returns scores best-first:
/// detection accuracy, then sensitivity (undefined counts as 0), then lower
/// drift, then lower threshold, then grid order.
pub fn grid_search(dev: &[Sample], grid: &[GridPoint], cfg: &TuneConfig) -> Result<TuneReport> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let (dh, fth) = chronological_split(dev, cfg.holdout_ratio).map_err(|e| match e {
        Error::TooFewSubjects(m) => Error::InsufficientData(m),
        other => other,
    })?;
    let baseline = train_baseline(&dh, cfg.inner_ratios, &cfg.trainer).map_err(|e| match e {
        Error::TooFewSubjects(m) => Error::InsufficientData(m),
        other => other,
    })?;
    let benchmark = baseline.benchmark();
    let pooled = pooled_batch(&fth.iter().collect::<Vec<_>>())?;

    let mut windowings: HashMap<(u64, u64, usize), Windowing> = HashMap::new();
    for p in grid {
        if windowings.contains_key(&p.windowing_key()) {
            continue;
        }
        let windows = make_windows(&fth, &p.stream_config())?;
        let mut per_batch = Vec::with_capacity(windows.len());
        for w in &windows {
            let m = evaluate_samples(&baseline.model, w.samples(&fth))?
                .ok_or_else(|| Error::InsufficientData("tuning stream has unlabeled samples".into()))?;
            per_batch.push(m);
        }
        let labels = label_drift_batches(benchmark, &per_batch);
        windowings.insert(p.windowing_key(), Windowing { windows, labels });
    }

    let mut references: HashMap<&'static str, VectorBatch> = HashMap::new();
    for p in grid {
        if !references.contains_key(p.reference.name()) {
            references.insert(p.reference.name(), reference_batch(&dh, p.reference)?);
        }
    }

    // One MMD sequence per (windowing, reference, kernel).
    type SeqKey = ((u64, u64, usize), &'static str, String);
    let seq_key = |p: &GridPoint| -> SeqKey { (p.windowing_key(), p.reference.name(), format!("{:?}", p.kernel)) };
    let mut jobs: Vec<(SeqKey, GridPoint)> = Vec::new();
    for p in grid {
        let k = seq_key(p);
        if !jobs.iter().any(|(j, _)| *j == k) {
            jobs.push((k, *p));
        }
    }
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let compute = |p: &GridPoint| -> Result<Vec<f64>> {
        let w = &windowings[&p.windowing_key()];
        let monitor = DriftMonitor::new(references[p.reference.name()].clone(), p.kernel, p.cusum())?;
        w.windows
            .iter()
            .map(|win| {
                let mut batch = VectorBatch::with_dim(pooled.dim());
                for &i in &win.members {
                    batch.push(pooled.row(i))?;
                }
                monitor.divergence(&batch)
            })
            .collect()
    };
    let chunk = jobs.len().div_ceil(threads);
    let sequences: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(|(_, p)| compute(p)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("grid worker panicked"))
            .collect()
    });
    let mut mmd_by_key: HashMap<SeqKey, Vec<f64>> = HashMap::new();
    for ((k, _), seq) in jobs.into_iter().zip(sequences) {
        mmd_by_key.insert(k, seq?);
    }

    let mut scores = Vec::with_capacity(grid.len());
    for (grid_index, p) in grid.iter().enumerate() {
        let w = &windowings[&p.windowing_key()];
        let seq = &mmd_by_key[&seq_key(p)];
        let params = p.cusum();
        params.validate()?;
        let mut state = CusumState::default();
        let mut alerts = Vec::with_capacity(seq.len());
        for &v in seq {
            let (next, alert) = cusum_step(state, &params, v)?;
            state = next;
            alerts.push(alert);
        }
        let d = score_detection(&alerts, &w.labels, cfg.tolerance)?;
        scores.push(DetectionScore {
            point: *p,
            grid_index,
            accuracy: d.accuracy,
            sensitivity: d.sensitivity,
            specificity: d.specificity,
            n_batches: alerts.len(),
            n_drift: w.labels.iter().filter(|&&b| b).count(),
            n_alerts: alerts.iter().filter(|&&b| b).count(),
        });
    }
    scores.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(b.sensitivity.unwrap_or(0.0).total_cmp(&a.sensitivity.unwrap_or(0.0)))
            .then(a.point.cusum_drift.total_cmp(&b.point.cusum_drift))
            .then(a.point.cusum_threshold.total_cmp(&b.point.cusum_threshold))
            .then(a.grid_index.cmp(&b.grid_index))
    });
    Ok(TuneReport {
        benchmark,
        n_tuning_train: dh.len(),
        n_tuning_stream: fth.len(),
        scores,
    })
}

pub const GRID_CSV_HEADER: [&str; 10] = [
    "window_len_days",
    "overlap",
    "min_batch",
    "cusum_drift",
    "cusum_threshold",
    "reference",
    "kernel",
    "det_accuracy",
    "det_sensitivity",
    "det_specificity",
];

/// Ranked scores as CSV; undefined sensitivity/specificity are left empty.
pub fn write_grid_csv<W: Write>(out: W, scores: &[DetectionScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRID_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in scores {
        let p = &s.point;
        w.write_record([
            p.window_len_days.to_string(),
            p.overlap.to_string(),
            p.min_batch.to_string(),
            p.cusum_drift.to_string(),
            p.cusum_threshold.to_string(),
            p.reference.name().to_owned(),
            p.kernel.family_name().to_owned(),
            s.accuracy.to_string(),
            opt(s.sensitivity),
            opt(s.specificity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_grid_csv(path: &Path, scores: &[DetectionScore]) -> Result<()> {
    write_grid_csv(std::fs::File::create(path)?, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn default_grid_size() {
        assert_eq!(GridSpec::default().points().len(), 3 * 8 * 4 * 4 * 6 * 3 * 3);
    }

    fn small_dev() -> Vec<Sample> {
        let cfg = SynthConfig {
            n_samples: 500,
            span_days: 100.0,
            dim: 4,
            separation: 3.0,
            seed: 5,
            ..SynthConfig::default()
        };
        generate(&cfg).unwrap()
    }

    fn small_grid() -> Vec<GridPoint> {
        GridSpec {
            window_len_days: vec![7.0, 10.0],
            overlap: vec![0.0],
            min_batch: vec![0],
            cusum_drift: vec![0.3, 0.2],
            cusum_threshold: vec![0.5],
            reference: vec![ReferenceMode::All],
            kernel: vec![KernelSpec::Linear, KernelSpec::gaussian_median()],
        }
        .points()
    }

    fn trainer() -> TrainerConfig {
        TrainerConfig { lr: 1e-2, max_epochs: 20, ..TrainerConfig::default() }
    }

    #[test]
    fn grid_search_is_deterministic_and_order_free() {
        let dev = small_dev();
        let grid = small_grid();
        let cfg = TuneConfig { trainer: trainer(), ..TuneConfig::default() };
        let a = grid_search(&dev, &grid, &cfg).unwrap();
        let b = grid_search(&dev, &grid, &TuneConfig { threads: Some(1), ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_tuning_train + a.n_tuning_stream, dev.len());
        let mut rev = grid.clone();
        rev.reverse();
        let c = grid_search(&dev, &rev, &cfg).unwrap();
        let key = |r: &TuneReport| {
            r.scores
                .iter()
                .map(|s| (s.accuracy.to_bits(), s.sensitivity.map(f64::to_bits)))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&c));
        for w in a.scores.windows(2) {
            assert!(w[0].accuracy >= w[1].accuracy);
        }
    }

    #[test]
    fn csv_layout() {
        let dev = small_dev();
        let cfg = TuneConfig { trainer: trainer(), ..TuneConfig::default() };
        let r = grid_search(&dev, &small_grid(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &r.scores).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), GRID_CSV_HEADER.join(","));
        assert_eq!(lines.count(), 8);
    }

    #[test]
    fn insufficient_data() {
        let dev: Vec<Sample> = small_dev().into_iter().take(3).collect();
        let err = grid_search(&dev, &small_grid(), &TuneConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)), "{err:?}");
    }
}
