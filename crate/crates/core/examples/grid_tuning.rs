//! Nested grid search on a development set with a planted 10-day shift.
//!
//! cargo run --release --example grid_tuning

use driftwatch::classifier::TrainerConfig;
use driftwatch::mmd::KernelSpec;
use driftwatch::split::chronological_split;
use driftwatch::stream::ReferenceMode;
use driftwatch::synth::{generate, SynthConfig};
use driftwatch::tune::{grid_search, write_grid_csv, GridSpec, TuneConfig};

fn main() -> driftwatch::Result<()> {
    let mut dev = generate(&SynthConfig {
        n_samples: 2000,
        span_days: 200.0,
        dim: 64,
        separation: 5.0,
        ..SynthConfig::default()
    })?;
    // Shift days 20..30 of the held-out tuning stream.
    let (_, held_out) = chronological_split(&dev, 0.7)?;
    let t0 = held_out[0].timestamp;
    for s in &mut dev {
        let day = (s.timestamp - t0).num_milliseconds() as f64 / 86_400_000.0;
        if (20.0..30.0).contains(&day) {
            for seg in &mut s.segments {
                seg[0] -= 6.0;
            }
        }
    }

    let grid = GridSpec {
        window_len_days: vec![7.0, 10.0, 14.0],
        overlap: vec![0.0, 0.5],
        min_batch: vec![0],
        cusum_drift: vec![0.2, 0.3, 0.4, 0.5],
        cusum_threshold: vec![0.5, 0.7],
        reference: vec![ReferenceMode::All],
        kernel: vec![KernelSpec::Linear, KernelSpec::polynomial(), KernelSpec::gaussian_median()],
    }
    .points();
    let cfg = TuneConfig {
        trainer: TrainerConfig { lr: 1e-2, max_epochs: 30, ..TrainerConfig::default() },
        ..TuneConfig::default()
    };
    let report = grid_search(&dev, &grid, &cfg)?;
    eprintln!(
        "benchmark {:.3}; {} tuning-train / {} tuning-stream samples; {} grid points",
        report.benchmark,
        report.n_tuning_train,
        report.n_tuning_stream,
        report.scores.len()
    );
    write_grid_csv(std::io::stdout().lock(), &report.scores[..10])
}
