//! Trainable classifier: per-segment affine adapter, temporal mean pooling
//! and a single-logit sigmoid head, trained with binary focal loss and Adam.
//!
//! Because the adapter is affine, pooling commutes with it:
//! `mean_t(W e_t + b) = W mean_t(e_t) + b`. Training therefore works on the
//! per-sample mean embedding ([`Example::features`]).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{mean_of, Label, Sample};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;
pub const ADAM_EPS: f64 = 1e-8;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Mean segment embedding of one sample plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Label,
}

impl Example {
    pub fn from_sample(sample: &Sample) -> Option<Self> {
        sample.label.map(|label| Example {
            features: sample.pooled(),
            label,
        })
    }

    /// Labeled examples for every sample that carries a label.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Vec<Example> {
        samples.into_iter().filter_map(Example::from_sample).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    dim: usize,
    /// `[adapter W (dim×dim, row-major) | adapter b (dim) | head w (dim) | head b]`
    params: Vec<f64>,
    version: u64,
}

impl ClassifierModel {
    /// Identity adapter, zero head: predicts 0.5 everywhere.
    pub fn new(dim: usize) -> Self {
        let mut params = vec![0.0; Self::param_count(dim)];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Self {
            dim,
            params,
            version: 0,
        }
    }

    pub const fn param_count(dim: usize) -> usize {
        dim * dim + 2 * dim + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adapter_weights(&self) -> &[f64] {
        &self.params[..self.dim * self.dim]
    }

    pub fn adapter_bias(&self) -> &[f64] {
        let d = self.dim;
        &self.params[d * d..d * d + d]
    }

    pub fn head_weights(&self) -> &[f64] {
        let d = self.dim;
        &self.params[d * d + d..d * d + 2 * d]
    }

    pub fn head_bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn set_head(&mut self, weights: &[f64], bias: f64) -> Result<()> {
        self.check_dim(weights.len())?;
        let d = self.dim;
        self.params[d * d + d..d * d + 2 * d].copy_from_slice(weights);
        let last = self.params.len() - 1;
        self.params[last] = bias;
        Ok(())
    }

    pub fn set_adapter(&mut self, weights: &[f64], bias: &[f64]) -> Result<()> {
        let d = self.dim;
        if weights.len() != d * d {
            return Err(Error::ShapeMismatch {
                expected: d * d,
                got: weights.len(),
            });
        }
        self.check_dim(bias.len())?;
        self.params[..d * d].copy_from_slice(weights);
        self.params[d * d..d * d + d].copy_from_slice(bias);
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Adapter output for a mean embedding.
    pub fn adapt(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features.len())?;
        let d = self.dim;
        let w = self.adapter_weights();
        let b = self.adapter_bias();
        Ok((0..d)
            .map(|i| {
                let row = &w[i * d..(i + 1) * d];
                row.iter().zip(features).map(|(a, x)| a * x).sum::<f64>() + b[i]
            })
            .collect())
    }

    fn logit_from_pooled(&self, pooled: &[f64]) -> f64 {
        self.head_weights()
            .iter()
            .zip(pooled)
            .map(|(a, x)| a * x)
            .sum::<f64>()
            + self.head_bias()
    }

    pub fn logit_features(&self, features: &[f64]) -> Result<f64> {
        Ok(self.logit_from_pooled(&self.adapt(features)?))
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit_features(features)?))
    }

    /// Pooled adapter output `mean_t(adapter(e_t))` for an embedding sequence.
    pub fn pooled(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(bad) = seq.iter().find(|e| e.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: bad.len(),
            });
        }
        self.adapt(&mean_of(seq))
    }

    /// Probability of the positive class for an embedding sequence.
    pub fn predict(&self, seq: &[Vec<f64>]) -> Result<f64> {
        Ok(sigmoid(self.logit_from_pooled(&self.pooled(seq)?)))
    }

    pub fn predict_sample(&self, sample: &Sample) -> Result<f64> {
        self.predict(&sample.segments)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

/// Binary focal loss `−α_t (1 − p_t)^γ ln p_t`.
pub fn focal_loss(p: f64, y: Label, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (pt, at) = if y == 1 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Focal loss of `sigmoid(z)` and its derivative with respect to `z`.
///
/// With `q = p_t` and `s = ±1` for `y = 1 / 0`:
/// `dL/dz = s · α_t (1 − q)^γ (γ q ln q − (1 − q))`. The clamp has zero
/// derivative, so a saturated probability contributes no gradient.
pub fn focal_loss_logit(z: f64, y: Label, focal: &FocalParams) -> (f64, f64) {
    let raw = sigmoid(z);
    let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = focal_loss(p, y, focal.gamma, focal.alpha);
    if p != raw {
        return (loss, 0.0);
    }
    let (q, at, s) = if y == 1 {
        (p, focal.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - focal.alpha, -1.0)
    };
    let one_m = 1.0 - q;
    let grad = s * at * one_m.powf(focal.gamma) * (focal.gamma * q * q.ln() - one_m);
    (loss, grad)
}

/// Gradient buffer helpers sharing the model's parameter layout.
pub(crate) struct GradLayout {
    pub dim: usize,
}

impl GradLayout {
    pub fn adapter_w(&self) -> std::ops::Range<usize> {
        0..self.dim * self.dim
    }
    pub fn adapter_b(&self) -> std::ops::Range<usize> {
        let d = self.dim;
        d * d..d * d + d
    }
    pub fn head_w(&self) -> std::ops::Range<usize> {
        let d = self.dim;
        d * d + d..d * d + 2 * d
    }
    pub fn head_b(&self) -> usize {
        self.dim * self.dim + 2 * self.dim
    }
}

/// Mean focal loss over `batch` and its exact gradient for every parameter.
pub fn loss_and_grad(
    model: &ClassifierModel,
    batch: &[Example],
    focal: &FocalParams,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = model.dim();
    let lay = GradLayout { dim: d };
    let mut grad = vec![0.0; model.params().len()];
    // Σ_n g_n ē_n; the adapter-weight gradient is the outer product w ⊗ this.
    let mut weighted_features = vec![0.0; d];
    let mut g_sum = 0.0;
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for ex in batch {
        let h = model.adapt(&ex.features)?;
        let z = model.logit_from_pooled(&h);
        let (l, g) = focal_loss_logit(z, ex.label, focal);
        loss += l;
        g_sum += g;
        for (acc, hv) in grad[lay.head_w()].iter_mut().zip(&h) {
            *acc += g * hv;
        }
        for (acc, x) in weighted_features.iter_mut().zip(&ex.features) {
            *acc += g * x;
        }
    }
    let head_w = model.head_weights();
    let aw = lay.adapter_w();
    for i in 0..d {
        for j in 0..d {
            grad[aw.start + i * d + j] = head_w[i] * weighted_features[j];
        }
    }
    for (acc, w) in grad[lay.adapter_b()].iter_mut().zip(head_w) {
        *acc = g_sum * w;
    }
    grad[lay.head_b()] = g_sum;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean focal loss without gradients.
pub fn mean_loss(model: &ClassifierModel, batch: &[Example], focal: &FocalParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        let p = model.predict_features(&ex.features)?;
        total += focal_loss(p, ex.label, focal.gamma, focal.alpha);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            got: if grads.len() != params.len() {
                grads.len()
            } else {
                state.m.len()
            },
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            gamma: self.focal_gamma,
            alpha: self.focal_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.batch_size >= 1
            && self.focal_gamma >= 0.0
            && (0.0..=1.0).contains(&self.focal_alpha);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid trainer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (validated runs only).
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Runs shuffled mini-batch epochs. With a validation set, stops once the
/// validation loss has failed to improve for more than `patience` epochs and
/// restores the best parameters.
fn fit(
    model: &ClassifierModel,
    train: &[Example],
    val: Option<&[Example]>,
    epochs: usize,
    cfg: &TrainerConfig,
) -> Result<(ClassifierModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if matches!(val, Some(v) if v.is_empty()) {
        return Err(Error::EmptySplit("validation"));
    }
    let focal = cfg.focal();
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model.clone();
    let mut state = AdamState::new(current.params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (loss, grad) = loss_and_grad(&current, &batch, &focal)?;
            total += loss * chunk.len() as f64;
            adam_update(&mut state, &mut current.params, &grad, &adam)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = val.map(|v| mean_loss(&current, v, &focal)).transpose()?;
        history.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(vl) = val_loss {
            match &best {
                Some((b, _)) if vl >= *b => stale += 1,
                _ => {
                    best = Some((vl, current.params.clone()));
                    history.best_epoch = Some(epoch);
                    history.best_val_loss = Some(vl);
                    stale = 0;
                }
            }
            if stale > cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        current.params = params;
    }
    current.bump_version();
    Ok((current, history))
}

/// Supervised training with early stopping on validation loss.
pub fn train(
    model: &ClassifierModel,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainerConfig,
) -> Result<(ClassifierModel, TrainHistory)> {
    if val_set.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    fit(model, train_set, Some(val_set), cfg.max_epochs, cfg)
}

/// Fixed-length training run without a validation monitor.
pub fn fine_tune(
    model: &ClassifierModel,
    pool: &[Example],
    epochs: usize,
    cfg: &TrainerConfig,
) -> Result<(ClassifierModel, TrainHistory)> {
    fit(model, pool, None, epochs, cfg)
}

/// On-disk model container. Layout (JSON object, keys in this order):
///
/// `format` (`"driftwatch-model"`), `format_version` (1), `dim`, `version`,
/// `adapter_weights` (dim rows of dim values), `adapter_bias`,
/// `head_weights`, `head_bias`, `trainer` (a [`TrainerConfig`]), `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub dim: usize,
    pub version: u64,
    pub adapter_weights: Vec<Vec<f64>>,
    pub adapter_bias: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub trainer: TrainerConfig,
    pub seed: u64,
}

pub const CHECKPOINT_FORMAT: &str = "driftwatch-model";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_model(model: &ClassifierModel, trainer: &TrainerConfig) -> Self {
        let d = model.dim();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            dim: d,
            version: model.version(),
            adapter_weights: model.adapter_weights().chunks(d.max(1)).map(<[f64]>::to_vec).collect(),
            adapter_bias: model.adapter_bias().to_vec(),
            head_weights: model.head_weights().to_vec(),
            head_bias: model.head_bias(),
            trainer: trainer.clone(),
            seed: trainer.seed,
        }
    }

    pub fn into_model(self) -> Result<ClassifierModel> {
        if self.format != CHECKPOINT_FORMAT || self.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.format_version
            )));
        }
        let d = self.dim;
        let weights: Vec<f64> = self.adapter_weights.concat();
        let mut model = ClassifierModel::new(d);
        model.set_adapter(&weights, &self.adapter_bias)?;
        model.set_head(&self.head_weights, self.head_bias)?;
        if model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("checkpoint has non-finite parameters".into()));
        }
        model.version = self.version;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
