//! The recording-level data model shared by every stage.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::VectorBatch;

/// Binary ground-truth label, stored as 0/1.
pub type Label = u8;

/// One recording with its per-segment embedding sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub subject_id: String,
    #[serde(with = "iso_millis")]
    pub timestamp: DateTime<Utc>,
    pub label: Option<Label>,
    pub segments: Vec<Vec<f64>>,
}

impl Sample {
    pub fn dim(&self) -> usize {
        self.segments.first().map_or(0, Vec::len)
    }

    /// Mean over the segment embeddings.
    pub fn pooled(&self) -> Vec<f64> {
        mean_of(&self.segments)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.segments.is_empty() || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "sample {} has no segment embeddings",
                self.sample_id
            )));
        }
        if let Some(seg) = self.segments.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: seg.len(),
            });
        }
        if self.segments.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sample {} has non-finite embedding values",
                self.sample_id
            )));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::InvalidConfig(format!(
                    "sample {} has label {l}, expected 0 or 1",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Pooled representations of `samples`, one row per sample.
pub fn pooled_batch(samples: &[&Sample]) -> Result<VectorBatch> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let mut batch = VectorBatch::with_dim(first.dim());
    for s in samples {
        batch.push(&s.pooled())?;
    }
    Ok(batch)
}

/// Ordering used for every chronological operation: timestamp, then id.
pub fn chronological_cmp(a: &Sample, b: &Sample) -> std::cmp::Ordering {
    a.timestamp
        .cmp(&b.timestamp)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

pub fn sort_chronologically(samples: &mut [Sample]) {
    samples.sort_by(chronological_cmp);
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s.trim()).map(|t| t.with_timezone(&Utc))
}

pub(crate) mod iso_millis {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}
