//! Time-window batching of the post-development stream and the
//! relative-change CUSUM drift alarm.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{mmd, KernelSpec, VectorBatch};
use crate::sample::{chronological_cmp, Sample};

const MS_PER_DAY: f64 = 86_400_000.0;

/// Guard for the relative change when the previous MMD is ~0.
pub const RELATIVE_EPS: f64 = 1e-12;

/// Slack on the alert comparison so 0.1 + 0.1 + … accumulations that are
/// mathematically equal to the threshold still fire.
pub const ALERT_TOLERANCE: f64 = 1e-9;

/// Which development samples form the reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    #[serde(alias = "all_dev")]
    All,
    #[serde(alias = "positive_dev")]
    Positive,
    #[serde(alias = "negative_dev")]
    Negative,
}

impl ReferenceMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceMode::All => "all",
            ReferenceMode::Positive => "positive",
            ReferenceMode::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub window_len_days: f64,
    pub overlap: f64,
    pub min_batch: usize,
    pub reference: ReferenceMode,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window_len_days: 7.0,
            overlap: 0.0,
            min_batch: 0,
            reference: ReferenceMode::All,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_days > 0.0 && self.window_len_days.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "window length must be positive, got {}",
                self.window_len_days
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumParams {
    /// Tolerated relative increase per step.
    pub drift: f64,
    /// Accumulated excess relative increase that raises an alert.
    pub threshold: f64,
}

impl Default for CusumParams {
    fn default() -> Self {
        Self {
            drift: 0.2,
            threshold: 0.5,
        }
    }
}

impl CusumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.drift >= 0.0) || !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cusum needs drift >= 0 and threshold > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CusumState {
    pub g: f64,
    pub prev: Option<f64>,
}

/// One update of the one-sided relative-change CUSUM.
///
/// Returns the new state, the accumulated statistic before any reset, and
/// whether an alert fired. After an alert the statistic restarts from zero.
pub fn cusum_update(
    state: CusumState,
    params: &CusumParams,
    value: f64,
) -> Result<(CusumState, f64, bool)> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::NonFiniteValue(value));
    }
    let Some(prev) = state.prev else {
        return Ok((
            CusumState {
                g: 0.0,
                prev: Some(value),
            },
            0.0,
            false,
        ));
    };
    let rel = (value - prev) / prev.max(RELATIVE_EPS);
    let g = (state.g + rel - params.drift).max(0.0);
    let alert = g >= params.threshold - ALERT_TOLERANCE;
    let next = CusumState {
        g: if alert { 0.0 } else { g },
        prev: Some(value),
    };
    Ok((next, g, alert))
}

/// As [`cusum_update`] without the pre-reset statistic.
pub fn cusum_step(state: CusumState, params: &CusumParams, value: f64) -> Result<(CusumState, bool)> {
    cusum_update(state, params, value).map(|(s, _, a)| (s, a))
}

/// One time window of the stream. `members` index into the sample slice the
/// window was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub index: usize,
    pub t_start: DateTime<Utc>,
    pub t_end: DateTime<Utc>,
    pub members: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn samples<'a>(&self, stream: &'a [Sample]) -> Vec<&'a Sample> {
        self.members.iter().map(|&i| &stream[i]).collect()
    }
}

/// Splits a chronologically sorted stream into (possibly overlapping) windows.
///
/// Windows start at the first timestamp and advance by
/// `window_len · (1 − overlap)`. A window holding fewer than `min_batch`
/// samples absorbs the following samples until it is large enough, and the
/// next window then starts right after the absorbed span. Windows with no
/// samples are skipped.
pub fn make_windows(samples: &[Sample], cfg: &StreamConfig) -> Result<Vec<WindowBatch>> {
    cfg.validate()?;
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyStream),
    };
    if samples
        .windows(2)
        .any(|w| chronological_cmp(&w[0], &w[1]).is_gt())
    {
        return Err(Error::InvalidConfig("stream is not sorted by timestamp".into()));
    }
    let ts: Vec<i64> = samples.iter().map(|s| s.timestamp.timestamp_millis()).collect();
    let len_ms = ((cfg.window_len_days * MS_PER_DAY).round() as i64).max(1);
    let advance_ms = ((len_ms as f64 * (1.0 - cfg.overlap)).round() as i64).max(1);
    let t_last = last.timestamp.timestamp_millis();
    let origin = first.timestamp;
    let origin_ms = origin.timestamp_millis();

    let mut windows = Vec::new();
    let mut start = origin_ms;
    let mut lo = 0usize;
    while start <= t_last {
        while lo < ts.len() && ts[lo] < start {
            lo += 1;
        }
        let mut end = start + len_ms;
        let mut hi = lo + ts[lo..].partition_point(|&t| t < end);
        let mut extended = false;
        if hi - lo < cfg.min_batch && hi < ts.len() {
            hi = (lo + cfg.min_batch).min(ts.len());
            // keep [t_start, t_end) closed over equal timestamps
            let t_tail = ts[hi - 1];
            hi += ts[hi..].partition_point(|&t| t <= t_tail);
            end = end.max(t_tail + 1);
            extended = true;
        }
        if hi > lo {
            windows.push(WindowBatch {
                index: windows.len(),
                t_start: origin + Duration::milliseconds(start - origin_ms),
                t_end: origin + Duration::milliseconds(end - origin_ms),
                members: (lo..hi).collect(),
            });
        }
        if extended {
            if hi == ts.len() {
                break;
            }
            start = end;
        } else {
            start += advance_ms;
        }
    }
    Ok(windows)
}

/// Output of monitoring one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window_index: usize,
    #[serde(with = "crate::sample::iso_millis")]
    pub t_start: DateTime<Utc>,
    #[serde(with = "crate::sample::iso_millis")]
    pub t_end: DateTime<Utc>,
    pub n: usize,
    pub mmd: f64,
    /// Accumulated statistic at this window, before any post-alert reset.
    pub cusum_g: f64,
    pub alert: bool,
}

/// Stateful MMD + CUSUM monitor against a fixed reference batch.
#[derive(Debug, Clone)]
pub struct DriftMonitor {
    reference: VectorBatch,
    kernel: KernelSpec,
    params: CusumParams,
    state: CusumState,
}

impl DriftMonitor {
    pub fn new(reference: VectorBatch, kernel: KernelSpec, params: CusumParams) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::EmptyBatch);
        }
        kernel.validate()?;
        params.validate()?;
        Ok(Self {
            reference,
            kernel,
            params,
            state: CusumState::default(),
        })
    }

    pub fn reference(&self) -> &VectorBatch {
        &self.reference
    }

    pub fn state(&self) -> CusumState {
        self.state
    }

    /// Divergence of `batch` from the reference, without touching CUSUM state.
    pub fn divergence(&self, batch: &VectorBatch) -> Result<f64> {
        // PSD kernels can dip a hair below zero through rounding.
        Ok(mmd(batch, &self.reference, &self.kernel)?.max(0.0))
    }

    /// Feeds an already computed MMD value into the CUSUM.
    pub fn observe_value(&mut self, value: f64) -> Result<(f64, bool)> {
        let (state, g, alert) = cusum_update(self.state, &self.params, value)?;
        self.state = state;
        Ok((g, alert))
    }

    /// Computes the window's MMD and advances the CUSUM.
    pub fn observe(&mut self, window: &WindowBatch, pooled: &VectorBatch) -> Result<WindowRecord> {
        if window.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut batch = VectorBatch::with_dim(pooled.dim());
        for &i in &window.members {
            batch.push(pooled.row(i))?;
        }
        let value = self.divergence(&batch)?;
        let (g, alert) = self.observe_value(value)?;
        Ok(WindowRecord {
            window_index: window.index,
            t_start: window.t_start,
            t_end: window.t_end,
            n: window.len(),
            mmd: value,
            cusum_g: g,
            alert,
        })
    }
}

/// Runs the monitor over every window. `pooled` holds one row per stream
/// sample, aligned with the indices in each window.
pub fn monitor(
    reference: &VectorBatch,
    windows: &[WindowBatch],
    pooled: &VectorBatch,
    kernel: &KernelSpec,
    params: &CusumParams,
) -> Result<Vec<WindowRecord>> {
    let mut m = DriftMonitor::new(reference.clone(), *kernel, *params)?;
    windows.iter().map(|w| m.observe(w, pooled)).collect()
}

/// Pooled development representations selected by `mode`.
pub fn reference_batch(samples: &[Sample], mode: ReferenceMode) -> Result<VectorBatch> {
    let picked: Vec<&Sample> = samples
        .iter()
        .filter(|s| match mode {
            ReferenceMode::All => true,
            ReferenceMode::Positive => s.label == Some(1),
            ReferenceMode::Negative => s.label == Some(0),
        })
        .collect();
    if picked.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no development samples for reference mode {}",
            mode.name()
        )));
    }
    crate::sample::pooled_batch(&picked)
}
