//! Drift-triggered active learning versus random sampling with the same
//! labeling budget, on one synthetic stream.
//!
//! cargo run --release --example active_learning

use driftwatch::adapt::AlConfig;
use driftwatch::pipeline::{load_samples, prepare, run_al_vs_random, run_prepared, PipelineConfig, RunOverrides};
use driftwatch::synth::{DriftKind, SynthConfig};

fn main() -> driftwatch::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.synth = SynthConfig {
        n_samples: 2400,
        drift_onset: 0.75,
        drift: DriftKind::CovariateShift { delta: vec![2.0, 4.0] },
        ..SynthConfig::default()
    };
    cfg.trainer.lr = 1e-2;
    cfg.trainer.max_epochs = 50;
    cfg.adaptation.al = AlConfig { z_band: 1.0, epochs: 20, lr: Some(1e-2) };

    let samples = load_samples(&cfg)?;
    let prepared = prepare(&cfg, &samples)?;
    let none = run_prepared(&cfg, &prepared, &RunOverrides::default())?;
    let (al, random) = run_al_vs_random(&cfg, &prepared)?;

    println!("benchmark {:.3}", none.summary.benchmark);
    println!("{:>4} {:>6} {:>7} {:>7} {:>7}", "win", "alert", "none", "al", "random");
    let ba = |r: &driftwatch::pipeline::RunReport| r.balanced_accuracies();
    for (i, ((n, a), r)) in ba(&none).into_iter().zip(ba(&al)).zip(ba(&random)).enumerate() {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        let alert = if none.windows[i].alert { "*" } else { "" };
        println!("{i:>4} {alert:>6} {:>7} {:>7} {:>7}", f(n), f(a), f(r));
    }
    for e in &al.summary.events {
        println!("AL queried {} labels at window {} (model v{})", e.samples_used, e.window_index, e.model_version);
    }
    let f = |v: Option<f64>| v.unwrap_or(f64::NAN);
    println!(
        "mean post-alert BA: none {:.3}  al {:.3}  random {:.3}",
        f(none.summary.mean_post_alert_balanced_accuracy),
        f(al.summary.mean_post_alert_balanced_accuracy),
        f(random.summary.mean_post_alert_balanced_accuracy)
    );
    Ok(())
}
