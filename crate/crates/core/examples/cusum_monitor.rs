//! Windowing a synthetic stream and watching it with MMD + CUSUM.
//!
//! cargo run --example cusum_monitor

use driftwatch::mmd::KernelSpec;
use driftwatch::sample::pooled_batch;
use driftwatch::stream::{make_windows, monitor, reference_batch, CusumParams, ReferenceMode, StreamConfig};
use driftwatch::synth::{generate, DriftKind, SynthConfig};

fn main() -> driftwatch::Result<()> {
    // 400 development samples, then 40 weekly windows; the shift starts halfway.
    let cfg = SynthConfig {
        n_samples: 1400,
        span_days: 392.0,
        dim: 64,
        drift_onset: 0.857,
        drift: DriftKind::CovariateShift { delta: vec![4.0] },
        seed: 3,
        ..SynthConfig::default()
    };
    let samples = generate(&cfg)?;
    let (dev, stream) = samples.split_at(400);

    let reference = reference_batch(dev, ReferenceMode::All)?;
    let windows = make_windows(stream, &StreamConfig::default())?;
    let pooled = pooled_batch(&stream.iter().collect::<Vec<_>>())?;
    let records = monitor(&reference, &windows, &pooled, &KernelSpec::gaussian_median(), &CusumParams::default())?;

    println!("onset at {}", cfg.onset_time().format("%Y-%m-%d"));
    println!("{:>4} {:>10} {:>4} {:>9} {:>8}", "win", "start", "n", "mmd", "cusum");
    for r in &records {
        println!(
            "{:>4} {:>10} {:>4} {:>9.5} {:>8.3}{}",
            r.window_index,
            r.t_start.format("%Y-%m-%d"),
            r.n,
            r.mmd,
            r.cusum_g,
            if r.alert { "  ALERT" } else { "" }
        );
    }
    Ok(())
}
