//! Manifest CSV and embeddings NDJSON.
//!
//! A manifest has the header `sample_id,subject_id,timestamp,label,source`.
//! `label` is `0`, `1`, or empty; `source` is either a `.wav` file or an
//! embeddings NDJSON file holding a record with the same `sample_id`.
//! Relative sources resolve against the manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{embed_clips, AudioClip, RandomProjectionEmbedder, DEFAULT_EMBED_DIM, DEFAULT_TRIM_DB};
use crate::error::{Error, Result};
use crate::sample::{format_timestamp, parse_timestamp, sort_chronologically, Label, Sample};

pub const MANIFEST_HEADER: [&str; 5] = ["sample_id", "subject_id", "timestamp", "label", "source"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub seed: u64,
    pub trim_db: f64,
    pub length_quantile: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
            seed: 0,
            trim_db: DEFAULT_TRIM_DB,
            length_quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub subject_id: String,
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub label: Option<Label>,
    pub source: String,
}

fn require<'a>(rec: &'a csv::StringRecord, idx: usize, row: usize) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| Error::parse(row, Some(MANIFEST_HEADER[idx]), "missing field"))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers.get(0) == Some("")) {
        return Err(Error::parse(1, None, "no data rows"));
    }
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols != MANIFEST_HEADER {
        return Err(Error::parse(1, None, format!("expected header {}", MANIFEST_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        let sample_id = require(&rec, 0, row)?.trim();
        if sample_id.is_empty() {
            return Err(Error::parse(row, Some("sample_id"), "empty sample id"));
        }
        let subject_id = require(&rec, 1, row)?.trim();
        if subject_id.is_empty() {
            return Err(Error::parse(row, Some("subject_id"), "empty subject id"));
        }
        let ts = require(&rec, 2, row)?.trim();
        let timestamp = parse_timestamp(ts)
            .map_err(|e| Error::parse(row, Some("timestamp"), format!("{ts:?}: {e}")))?;
        let label = match require(&rec, 3, row)?.trim() {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(Error::parse(row, Some("label"), format!("expected 0, 1 or empty, got {other:?}"))),
        };
        let source = require(&rec, 4, row)?.trim();
        if source.is_empty() {
            return Err(Error::parse(row, Some("source"), "empty source"));
        }
        rows.push(ManifestRow {
            sample_id: sample_id.to_owned(),
            subject_id: subject_id.to_owned(),
            timestamp,
            label,
            source: source.to_owned(),
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(1, None, "no data rows"));
    }
    Ok(rows)
}

pub fn write_manifest<W: Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([&r.sample_id, &r.subject_id, &format_timestamp(&r.timestamp), &label, &r.source])?;
    }
    w.flush()?;
    Ok(())
}

/// Manifest rows pointing every sample at one embeddings file.
pub fn manifest_for(samples: &[Sample], source: &str) -> Vec<ManifestRow> {
    samples
        .iter()
        .map(|s| ManifestRow {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id.clone(),
            timestamp: s.timestamp,
            label: s.label,
            source: source.to_owned(),
        })
        .collect()
}

pub fn write_ndjson<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(out);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_ndjson(path: &Path, samples: &[Sample]) -> Result<()> {
    write_ndjson(File::create(path)?, samples)
}

/// Reads one sample per non-blank line; `row` in errors is the line number.
pub fn read_ndjson(path: &Path) -> Result<Vec<Sample>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, None, e.to_string()))?;
        s.validate().map_err(|e| Error::parse(i + 1, Some("segments"), e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

enum SourceKind {
    Wav,
    Embeddings,
}

fn source_kind(source: &str) -> Option<SourceKind> {
    let ext = Path::new(source).extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "wav" => Some(SourceKind::Wav),
        "ndjson" | "jsonl" => Some(SourceKind::Embeddings),
        _ => None,
    }
}

/// Loads every manifest row into a [`Sample`], embedding WAV rows with the
/// configured random-projection embedder, and returns them sorted.
pub fn ingest(manifest: &Path, embedder: &EmbedderConfig) -> Result<Vec<Sample>> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(Error::DuplicateId(r.sample_id.clone()));
        }
    }

    let mut files: HashMap<PathBuf, HashMap<String, Sample>> = HashMap::new();
    let mut wav_rows = Vec::new();
    let mut clips = Vec::new();
    let mut segments: Vec<Option<Vec<Vec<f64>>>> = vec![None; rows.len()];
    for (i, r) in rows.iter().enumerate() {
        let path = base.join(&r.source);
        match source_kind(&r.source) {
            Some(SourceKind::Wav) => {
                if !path.exists() {
                    return Err(Error::MissingFile(path));
                }
                clips.push(AudioClip::read_wav(&path)?);
                wav_rows.push(i);
            }
            Some(SourceKind::Embeddings) => {
                if !files.contains_key(&path) {
                    let by_id = read_ndjson(&path)?
                        .into_iter()
                        .map(|s| (s.sample_id.clone(), s))
                        .collect();
                    files.insert(path.clone(), by_id);
                }
                let found = files[&path].get(&r.sample_id).ok_or_else(|| {
                    Error::parse(i + 2, Some("source"), format!("{} has no record for {}", r.source, r.sample_id))
                })?;
                segments[i] = Some(found.segments.clone());
            }
            None => {
                return Err(Error::parse(i + 2, Some("source"), format!("unrecognised source {:?}", r.source)));
            }
        }
    }
    if !clips.is_empty() {
        let emb = RandomProjectionEmbedder::new(embedder.dim, embedder.seed);
        let embedded = embed_clips(&clips, &emb, embedder.trim_db, embedder.length_quantile)?;
        for (i, e) in wav_rows.into_iter().zip(embedded) {
            segments[i] = Some(e);
        }
    }

    let mut samples: Vec<Sample> = rows
        .into_iter()
        .zip(segments)
        .map(|(r, seg)| Sample {
            sample_id: r.sample_id,
            subject_id: r.subject_id,
            timestamp: r.timestamp,
            label: r.label,
            segments: seg.unwrap_or_default(),
        })
        .collect();
    if let Some(dim) = samples.first().map(Sample::dim) {
        if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
    }
    sort_chronologically(&mut samples);
    Ok(samples)
}
