//! Audio front-end: WAV ingest, resampling, peak normalisation, silence
//! trimming, log-mel spectrograms, fixed-size segmentation and embedding.
//!
//! Every clip is brought to 16 kHz; frames use a 400-sample periodic Hann
//! window with a 160-sample hop (25 ms / 10 ms), a 512-point FFT and 64 HTK
//! mel filters spanning 125–7500 Hz on the power spectrum, then
//! `ln(power + 1e-6)`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const FFT_LEN: usize = 512;
pub const N_MELS: usize = 64;
pub const MEL_LO_HZ: f64 = 125.0;
pub const MEL_HI_HZ: f64 = 7500.0;
pub const LOG_EPS: f64 = 1e-6;
/// Frames per segment (0.96 s) and the stride between segment starts.
pub const SEGMENT_FRAMES: usize = 96;
pub const SEGMENT_HOP: usize = 48;
pub const SEGMENT_LEN: usize = N_MELS * SEGMENT_FRAMES;
pub const DEFAULT_TRIM_DB: f64 = -40.0;
pub const DEFAULT_EMBED_DIM: usize = 128;

const RESAMPLE_HALF_TAPS: f64 = 16.0;

/// Mono PCM clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    /// Reads 8/16/24/32-bit integer or 32-bit float WAV, averaging channels.
    pub fn read_wav(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| f64::from(v) / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        let samples = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
            .collect();
        Ok(Self::new(samples, spec.sample_rate))
    }
}

/// Log-mel energies stored frame-major: `n_frames` rows of [`N_MELS`] values.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyList);
        }
        let mut data = Vec::with_capacity(frames.len() * N_MELS);
        for f in frames {
            if f.len() != N_MELS {
                return Err(Error::DimensionMismatch {
                    expected: N_MELS,
                    got: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Ok(Self { data })
    }

    pub fn n_mels(&self) -> usize {
        N_MELS
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / N_MELS
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Entry at mel bin `mel`, frame `t`.
    pub fn get(&self, mel: usize, t: usize) -> f64 {
        self.data[t * N_MELS + mel]
    }

    pub fn frame_hop_secs(&self) -> f64 {
        HOP_LEN as f64 / f64::from(SAMPLE_RATE)
    }

    pub fn frame_len_secs(&self) -> f64 {
        WINDOW_LEN as f64 / f64::from(SAMPLE_RATE)
    }
}

/// A 64 × 96 block of log-mel energies, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramSegment {
    data: Vec<f64>,
}

impl SpectrogramSegment {
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (N_MELS, self.data.len() / N_MELS)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK mel filters sampled on the FFT bin frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `N_MELS + 2` band edges in Hz.
    edges: Vec<f64>,
    /// `N_MELS` rows of `FFT_LEN / 2 + 1` weights.
    weights: Vec<Vec<f64>>,
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFilterbank {
    pub fn new() -> Self {
        let (lo, hi) = (hz_to_mel(MEL_LO_HZ), hz_to_mel(MEL_HI_HZ));
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let n_bins = FFT_LEN / 2 + 1;
        let bin_hz = f64::from(SAMPLE_RATE) / FFT_LEN as f64;
        let mut bank = Self {
            edges,
            weights: Vec::new(),
        };
        bank.weights = (0..N_MELS)
            .map(|m| (0..n_bins).map(|k| bank.weight(m, k as f64 * bin_hz)).collect())
            .collect();
        bank
    }

    /// Continuous triangular response of filter `m` at `hz`.
    pub fn weight(&self, m: usize, hz: f64) -> f64 {
        let (l, c, u) = (self.edges[m], self.edges[m + 1], self.edges[m + 2]);
        if hz <= l || hz >= u {
            0.0
        } else if hz <= c {
            (hz - l) / (c - l)
        } else {
            (u - hz) / (u - c)
        }
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges[m + 1]
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.weights) {
            *o = row.iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(samples: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::UnsupportedRate(from_rate));
    }
    if from_rate == to_rate {
        return Ok(samples.to_vec());
    }
    let ratio = f64::from(to_rate) / f64::from(from_rate);
    let cutoff = ratio.min(1.0);
    let half = RESAMPLE_HALF_TAPS / cutoff;
    let out_len = (samples.len() as f64 * ratio).floor() as usize;
    let n = samples.len() as isize;
    Ok((0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = ((t - half).ceil() as isize).max(0);
            let hi = ((t + half).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let x = t - k as f64;
                let arg = cutoff * x;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                let window = 0.5 + 0.5 * (PI * x / half).cos();
                acc += samples[k as usize] * cutoff * sinc * window;
            }
            acc
        })
        .collect())
}

/// Scales so the largest magnitude is 1; all-zero input is returned as is.
pub fn peak_normalize(samples: &[f64]) -> Vec<f64> {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return samples.to_vec();
    }
    samples.iter().map(|v| v / peak).collect()
}

/// Drops leading and trailing 10 ms frames whose mean power is more than
/// `trim_db` below the squared peak.
pub fn trim_silence(samples: &[f64], trim_db: f64) -> &[f64] {
    let peak_sq = samples.iter().fold(0.0f64, |m, v| m.max(v * v));
    if peak_sq == 0.0 {
        return &samples[..0];
    }
    let gate = peak_sq * 10f64.powf(trim_db / 10.0);
    let voiced = |frame: &[f64]| {
        let power = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
        power >= gate
    };
    let frames: Vec<&[f64]> = samples.chunks(HOP_LEN).collect();
    let Some(first) = frames.iter().position(|f| voiced(f)) else {
        return &samples[..0];
    };
    let last = frames.iter().rposition(|f| voiced(f)).unwrap_or(first);
    let start = first * HOP_LEN;
    let end = ((last + 1) * HOP_LEN).min(samples.len());
    &samples[start..end]
}

/// Frames produced by an unpadded STFT over `n` samples.
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW_LEN {
        1
    } else {
        (n - WINDOW_LEN) / HOP_LEN + 1
    }
}

/// Reusable STFT + mel machinery.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").finish_non_exhaustive()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        let window = (0..WINDOW_LEN)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / WINDOW_LEN as f64).cos())
            .collect();
        Self {
            fft,
            window,
            bank: MelFilterbank::new(),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// Log-mel spectrogram of 16 kHz samples. Inputs shorter than one window
    /// are zero-padded to a single frame.
    pub fn log_mel(&self, samples: &[f64]) -> MelSpectrogram {
        let mut padded;
        let samples = if samples.len() < WINDOW_LEN {
            padded = samples.to_vec();
            padded.resize(WINDOW_LEN, 0.0);
            &padded[..]
        } else {
            samples
        };
        let n_frames = frame_count(samples.len());
        let n_bins = FFT_LEN / 2 + 1;
        let mut data = vec![0.0; n_frames * N_MELS];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let frame = &samples[t * HOP_LEN..t * HOP_LEN + WINDOW_LEN];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < WINDOW_LEN {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let out = &mut data[t * N_MELS..(t + 1) * N_MELS];
            self.bank.apply(&power, out);
            out.iter_mut().for_each(|v| *v = (*v + LOG_EPS).ln());
        }
        MelSpectrogram { data }
    }

    /// Resample, peak-normalise, trim silence and compute the spectrogram.
    pub fn preprocess(&self, clip: &AudioClip, trim_db: f64) -> Result<MelSpectrogram> {
        if clip.sample_rate == 0 || clip.sample_rate > 768_000 {
            return Err(Error::UnsupportedRate(clip.sample_rate));
        }
        if clip.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("clip has non-finite samples".into()));
        }
        let resampled = resample(&clip.samples, clip.sample_rate, SAMPLE_RATE)?;
        let normalized = peak_normalize(&resampled);
        let trimmed = trim_silence(&normalized, trim_db);
        if trimmed.is_empty() {
            return Err(Error::EmptyClip);
        }
        Ok(self.log_mel(trimmed))
    }
}

/// See [`MelExtractor::preprocess`].
pub fn preprocess_clip(clip: &AudioClip, trim_db: f64) -> Result<MelSpectrogram> {
    MelExtractor::new().preprocess(clip, trim_db)
}

/// Nearest-rank `q`-quantile of the spectrogram lengths.
pub fn target_frames_quantile(specs: &[MelSpectrogram], q: f64) -> Result<usize> {
    if specs.is_empty() {
        return Err(Error::EmptyList);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig(format!("quantile must lie in (0, 1], got {q}")));
    }
    let mut lengths: Vec<usize> = specs.iter().map(MelSpectrogram::n_frames).collect();
    lengths.sort_unstable();
    Ok(nearest_rank(&lengths, q))
}

pub(crate) fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Crops to the first `target` frames, or pads by repeating the spectrogram
/// from its start.
pub fn fit_to_target_frames(spec: &MelSpectrogram, target: usize) -> MelSpectrogram {
    let t = spec.n_frames();
    let target = target.max(1);
    let mut data = Vec::with_capacity(target * N_MELS);
    for i in 0..target {
        data.extend_from_slice(spec.frame(i % t));
    }
    MelSpectrogram { data }
}

/// Count of 96-frame windows at stride 48.
pub fn segment_count(n_frames: usize) -> usize {
    if n_frames < SEGMENT_FRAMES {
        0
    } else {
        (n_frames - SEGMENT_FRAMES) / SEGMENT_HOP + 1
    }
}

/// Sliding 64 × 96 windows with a 48-frame stride.
pub fn segment(spec: &MelSpectrogram) -> Result<Vec<SpectrogramSegment>> {
    let t = spec.n_frames();
    if t < SEGMENT_FRAMES {
        return Err(Error::TooShort {
            frames: t,
            needed: SEGMENT_FRAMES,
        });
    }
    Ok((0..segment_count(t))
        .map(|k| {
            let start = k * SEGMENT_HOP * N_MELS;
            SpectrogramSegment {
                data: spec.data[start..start + SEGMENT_LEN].to_vec(),
            }
        })
        .collect())
}

/// Maps a spectrogram segment to a fixed-length feature vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed_segment(&self, segment: &SpectrogramSegment) -> Vec<f64>;
}

/// Seeded Gaussian projection of the flattened segment, scaled by
/// `1/√6144`, followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjectionEmbedder {
    dim: usize,
    seed: u64,
    projection: Vec<f64>,
}

impl RandomProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (SEGMENT_LEN as f64).sqrt();
        let projection = (0..dim * SEGMENT_LEN)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self {
            dim,
            seed,
            projection,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Embedder for RandomProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_segment(&self, segment: &SpectrogramSegment) -> Vec<f64> {
        self.projection
            .chunks_exact(SEGMENT_LEN)
            .map(|row| {
                row.iter()
                    .zip(segment.as_flat())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .tanh()
            })
            .collect()
    }
}

/// One embedding per segment, order preserved.
pub fn embed(segments: &[SpectrogramSegment], embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    if segments.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(segments.iter().map(|s| embedder.embed_segment(s)).collect())
}

/// Turns a set of clips into embedding sequences: preprocess each, fit all to
/// the 0.9 nearest-rank length (never below one segment), segment, embed.
pub fn embed_clips(
    clips: &[AudioClip],
    embedder: &dyn Embedder,
    trim_db: f64,
    quantile: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let extractor = MelExtractor::new();
    let specs = clips
        .iter()
        .map(|c| extractor.preprocess(c, trim_db))
        .collect::<Result<Vec<_>>>()?;
    let target = target_frames_quantile(&specs, quantile)?.max(SEGMENT_FRAMES);
    specs
        .iter()
        .map(|s| embed(&segment(&fit_to_target_frames(s, target))?, embedder))
        .collect()
}
