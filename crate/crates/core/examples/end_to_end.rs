//! Full pipeline from a JSON config: synthetic data with a covariate shift,
//! baseline, monitoring and UDA on alert. Prints the report as NDJSON.
//!
//! cargo run --release --example end_to_end

use driftwatch::pipeline::{run, verify_report, PipelineConfig};

const CONFIG: &str = r#"{
  "seed": 4,
  "synth": {
    "n_samples": 1500,
    "dim": 16,
    "drift_onset": 0.8,
    "drift": { "kind": "covariate_shift", "delta": [2.0, 4.0] }
  },
  "stream": { "window_len_days": 7, "overlap": 0.0, "min_batch": 10, "reference": "all" },
  "cusum": { "drift": 0.2, "threshold": 0.5 },
  "kernel": { "family": "gaussian" },
  "trainer": { "lr": 0.01, "max_epochs": 40 },
  "adaptation": { "mode": "uda", "uda": { "lambda": 5.0, "epochs": 100, "lr": 0.02 } }
}"#;

fn main() -> driftwatch::Result<()> {
    let cfg: PipelineConfig = serde_json::from_str(CONFIG)?;
    let report = run(&cfg)?;
    verify_report(&report, &cfg.cusum)?;
    print!("{}", report.to_ndjson()?);
    let s = &report.summary;
    eprintln!(
        "{} windows, {} alerts, benchmark {:.3}, mean BA {:.3}, after first alert {:.3}",
        s.n_windows,
        s.n_alerts,
        s.benchmark,
        s.mean_balanced_accuracy.unwrap_or(f64::NAN),
        s.mean_post_alert_balanced_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}
