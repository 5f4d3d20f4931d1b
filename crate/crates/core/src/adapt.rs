//! Model updates triggered by a drift alert: unsupervised domain adaptation
//! (focal loss on labeled development data plus a Gaussian-MMD penalty
//! between pooled adapter outputs) and active learning with a z-score
//! uncertainty band, plus the random-sampling control arm.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    adam_update, fine_tune, loss_and_grad, AdamState, ClassifierModel, Example, GradLayout,
    TrainerConfig,
};
use crate::error::{Error, Result};
use crate::mmd::{median_heuristic, mmd_gaussian_with_grad, VectorBatch};
use crate::sample::{Label, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdaConfig {
    /// Weight of the MMD term.
    pub lambda: f64,
    /// Gaussian bandwidth; `None` re-resolves the median heuristic each epoch.
    pub sigma: Option<f64>,
    pub epochs: usize,
    /// Development batch size; `None` matches the post-drift batch size.
    pub dev_batch_size: Option<usize>,
    /// Learning-rate override for adaptation; `None` uses the trainer's.
    pub lr: Option<f64>,
}

impl Default for UdaConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: None,
            epochs: 20,
            dev_batch_size: None,
            lr: None,
        }
    }
}

impl UdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.epochs == 0 || matches!(self.sigma, Some(s) if !(s > 0.0)) {
            return Err(Error::InvalidConfig(format!("invalid UDA config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    /// Half-width of the selection band in standard deviations.
    pub z_band: f64,
    pub epochs: usize,
    pub lr: Option<f64>,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            z_band: 1.0,
            epochs: 20,
            lr: None,
        }
    }
}

fn with_lr(trainer: &TrainerConfig, lr: Option<f64>) -> TrainerConfig {
    TrainerConfig {
        lr: lr.unwrap_or(trainer.lr),
        ..trainer.clone()
    }
}

/// Terms of the joint objective at one parameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UdaLoss {
    pub focal: f64,
    pub mmd: f64,
    pub total: f64,
    pub sigma: f64,
}

/// `focal(dev) + λ · MMD²_gauss(adapter(dev), adapter(post))` and its
/// gradient. `post` holds mean segment embeddings of the unlabeled batch;
/// `sigma` stays fixed for the derivative.
pub fn uda_loss_and_grad(
    model: &ClassifierModel,
    dev: &[Example],
    post: &[Vec<f64>],
    lambda: f64,
    sigma: f64,
    trainer: &TrainerConfig,
) -> Result<(UdaLoss, Vec<f64>)> {
    if post.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (focal, mut grad) = loss_and_grad(model, dev, &trainer.focal())?;
    if lambda == 0.0 {
        return Ok((
            UdaLoss {
                focal,
                mmd: 0.0,
                total: focal,
                sigma,
            },
            grad,
        ));
    }
    let hx = adapted_batch(model, dev.iter().map(|e| &e.features[..]))?;
    let hy = adapted_batch(model, post.iter().map(|v| &v[..]))?;
    let (value, gx, gy) = mmd_gaussian_with_grad(&hx, &hy, sigma)?;
    let d = model.dim();
    let lay = GradLayout { dim: d };
    let (aw, ab) = (lay.adapter_w(), lay.adapter_b());
    let inputs = dev.iter().map(|e| &e.features[..]).chain(post.iter().map(|v| &v[..]));
    let outer = gx.chunks_exact(d).chain(gy.chunks_exact(d));
    for (x, gh) in inputs.zip(outer) {
        for i in 0..d {
            let gi = lambda * gh[i];
            if gi == 0.0 {
                continue;
            }
            let row = &mut grad[aw.start + i * d..aw.start + (i + 1) * d];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += gi * xj;
            }
            grad[ab.start + i] += gi;
        }
    }
    Ok((
        UdaLoss {
            focal,
            mmd: value,
            total: focal + lambda * value,
            sigma,
        },
        grad,
    ))
}

fn adapted_batch<'a>(
    model: &ClassifierModel,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<VectorBatch> {
    let mut out = VectorBatch::with_dim(model.dim());
    for r in rows {
        out.push(&model.adapt(r)?)?;
    }
    Ok(out)
}

/// Per-epoch trace of an adaptation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UdaLog {
    pub epochs: Vec<UdaLoss>,
}

/// Seeded dev-batch draw used by [`uda_retrain`]: a fresh shuffle of the pool
/// each epoch, truncated to `size`.
pub fn draw_dev_batch(pool: &[Example], size: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    idx.truncate(size.min(pool.len()));
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// One Adam step per epoch on the joint objective. Returns a new model.
pub fn uda_retrain(
    model: &ClassifierModel,
    dev_pool: &[Example],
    post: &[Vec<f64>],
    cfg: &UdaConfig,
    trainer: &TrainerConfig,
) -> Result<(ClassifierModel, UdaLog)> {
    cfg.validate()?;
    if dev_pool.is_empty() || post.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let trainer = with_lr(trainer, cfg.lr);
    trainer.validate()?;
    let adam = trainer.adam();
    let size = cfg.dev_batch_size.unwrap_or(post.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed);
    let mut current = model.clone();
    let mut state = AdamState::new(current.params().len());
    let mut log = UdaLog::default();
    for _ in 0..cfg.epochs {
        let batch = draw_dev_batch(dev_pool, size, &mut rng);
        let sigma = match (cfg.sigma, cfg.lambda == 0.0) {
            (Some(s), _) => s,
            (None, true) => 1.0,
            (None, false) => {
                let hx = adapted_batch(&current, batch.iter().map(|e| &e.features[..]))?;
                let hy = adapted_batch(&current, post.iter().map(|v| &v[..]))?;
                median_heuristic(&hx, &hy)?
            }
        };
        let (loss, grad) = uda_loss_and_grad(&current, &batch, post, cfg.lambda, sigma, &trainer)?;
        adam_update(&mut state, current.params_mut(), &grad, &adam)?;
        log.epochs.push(loss);
    }
    current.bump_version();
    Ok((current, log))
}

/// Indices whose score lies within `z_band` population standard deviations
/// of the mean; every index when the scores are (numerically) constant.
pub fn select_by_zband(scores: &[f64], z_band: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return (0..scores.len()).collect();
    }
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| ((*s - mean) / sd).abs() <= z_band)
        .map(|(i, _)| i)
        .collect()
}

/// Ids of the uncertain samples in `batch` under `model`.
pub fn al_select(model: &ClassifierModel, batch: &[&Sample], z_band: f64) -> Result<Vec<String>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(z_band > 0.0) {
        return Err(Error::InvalidConfig(format!("z_band must be > 0, got {z_band}")));
    }
    let scores = batch
        .iter()
        .map(|s| model.predict_sample(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_by_zband(&scores, z_band)
        .into_iter()
        .map(|i| batch[i].sample_id.clone())
        .collect())
}

/// Uniform draw of `n` ids without replacement, returned in batch order.
pub fn random_select(batch: &[&Sample], n: usize, seed: u64) -> Result<Vec<String>> {
    if n > batch.len() {
        return Err(Error::NTooLarge {
            requested: n,
            available: batch.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, batch.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| batch[i].sample_id.clone()).collect())
}

/// Supplies labels for queried sample ids.
pub trait LabelOracle {
    fn labels(&mut self, ids: &[String]) -> Result<Vec<Label>>;
}

/// Answers from labels already present in the data.
#[derive(Debug, Clone, Default)]
pub struct DatasetOracle {
    labels: HashMap<String, Label>,
}

impl DatasetOracle {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        Self {
            labels: samples
                .into_iter()
                .filter_map(|s| s.label.map(|l| (s.sample_id.clone(), l)))
                .collect(),
        }
    }
}

impl LabelOracle for DatasetOracle {
    fn labels(&mut self, ids: &[String]) -> Result<Vec<Label>> {
        ids.iter()
            .map(|id| {
                self.labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::OracleFailure(id.clone()))
            })
            .collect()
    }
}

/// File-backed labeling queue: writes the pending ids to `queue_path`
/// (`sample_id` column) and reads answers from `labels_path`
/// (`sample_id,label` columns).
#[derive(Debug, Clone)]
pub struct FileQueueOracle {
    pub queue_path: PathBuf,
    pub labels_path: PathBuf,
}

impl FileQueueOracle {
    pub fn new(queue_path: impl Into<PathBuf>, labels_path: impl Into<PathBuf>) -> Self {
        Self {
            queue_path: queue_path.into(),
            labels_path: labels_path.into(),
        }
    }

    pub fn write_queue(path: &Path, ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id"])?;
        for id in ids {
            w.write_record([id])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut out = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let id = rec.get(0).ok_or_else(|| Error::parse(row, Some("sample_id"), "missing"))?;
            let label = match rec.get(1).map(str::trim) {
                Some("0") => 0,
                Some("1") => 1,
                other => {
                    return Err(Error::parse(
                        row,
                        Some("label"),
                        format!("expected 0 or 1, got {other:?}"),
                    ))
                }
            };
            out.insert(id.to_owned(), label);
        }
        Ok(out)
    }
}

impl LabelOracle for FileQueueOracle {
    fn labels(&mut self, ids: &[String]) -> Result<Vec<Label>> {
        Self::write_queue(&self.queue_path, ids)?;
        let answers = Self::read_labels(&self.labels_path)?;
        ids.iter()
            .map(|id| answers.get(id).copied().ok_or_else(|| Error::OracleFailure(id.clone())))
            .collect()
    }
}

/// Labels `selected` through the oracle, appends them to `pool`, and
/// fine-tunes on the augmented pool. An empty selection is a no-op.
pub fn al_retrain(
    model: &ClassifierModel,
    pool: &mut Vec<Example>,
    selected: &[&Sample],
    oracle: &mut dyn LabelOracle,
    cfg: &AlConfig,
    trainer: &TrainerConfig,
) -> Result<ClassifierModel> {
    if selected.is_empty() {
        return Ok(model.clone());
    }
    let ids: Vec<String> = selected.iter().map(|s| s.sample_id.clone()).collect();
    let labels = oracle.labels(&ids)?;
    for (s, label) in selected.iter().zip(labels) {
        pool.push(Example {
            features: s.pooled(),
            label,
        });
    }
    let trainer = with_lr(trainer, cfg.lr);
    let (updated, _) = fine_tune(model, pool, cfg.epochs, &trainer)?;
    Ok(updated)
}
