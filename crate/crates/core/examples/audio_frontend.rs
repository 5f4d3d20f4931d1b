//! WAV → log-mel spectrogram → 64×96 segments → embedding sequence.
//!
//! cargo run --example audio_frontend [-- path/to/clip.wav]

use std::path::PathBuf;

use driftwatch::audio::{
    embed, fit_to_target_frames, frame_count, preprocess_clip, segment, segment_count, AudioClip,
    RandomProjectionEmbedder, DEFAULT_TRIM_DB, SEGMENT_FRAMES,
};

fn main() -> driftwatch::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cough_44k_stereo.wav")
    });
    let clip = AudioClip::read_wav(&path)?;
    println!(
        "{}: {} samples @ {} Hz ({:.2} s)",
        path.display(),
        clip.samples.len(),
        clip.sample_rate,
        clip.samples.len() as f64 / clip.sample_rate as f64
    );

    let spec = preprocess_clip(&clip, DEFAULT_TRIM_DB)?;
    println!("log-mel: {} mels × {} frames", spec.n_mels(), spec.n_frames());

    // A clip shorter than one segment is cyclically padded up to 96 frames.
    let fitted = fit_to_target_frames(&spec, spec.n_frames().max(SEGMENT_FRAMES));
    let segs = segment(&fitted)?;
    println!(
        "{} segments of {:?} (formula: {})",
        segs.len(),
        segs[0].shape(),
        segment_count(fitted.n_frames())
    );

    let embedder = RandomProjectionEmbedder::new(16, 7);
    let seq = embed(&segs, &embedder)?;
    println!("embedding sequence: {} × {}", seq.len(), seq[0].len());
    println!("first segment: {:.3?}", &seq[0][..6]);
    println!("frames for one second at 16 kHz: {}", frame_count(16_000));
    Ok(())
}
