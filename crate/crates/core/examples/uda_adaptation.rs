//! Unsupervised domain adaptation after a covariate shift: focal loss on
//! development data plus a Gaussian-MMD penalty pulling the adapter outputs
//! of both domains together.
//!
//! cargo run --example uda_adaptation

use driftwatch::adapt::{uda_retrain, UdaConfig};
use driftwatch::classifier::{train, ClassifierModel, Example, TrainerConfig};
use driftwatch::eval::evaluate_samples;
use driftwatch::sample::Sample;
use driftwatch::synth::{generate, DriftKind, SynthConfig};

fn main() -> driftwatch::Result<()> {
    let samples = generate(&SynthConfig {
        n_samples: 1200,
        dim: 8,
        drift_onset: 0.5,
        drift: DriftKind::CovariateShift { delta: vec![2.0, 4.0] },
        seed: 8,
        ..SynthConfig::default()
    })?;
    let (before, after) = samples.split_at(600);
    let pool = Example::from_samples(before);
    let trainer = TrainerConfig { lr: 1e-2, max_epochs: 40, ..TrainerConfig::default() };
    let (baseline, _) = train(&ClassifierModel::new(8), &pool[..450], &pool[450..], &trainer)?;

    let target: Vec<Vec<f64>> = after.iter().map(Sample::pooled).collect();
    let cfg = UdaConfig { lambda: 5.0, epochs: 300, lr: Some(2e-2), ..UdaConfig::default() };
    let (adapted, log) = uda_retrain(&baseline, &pool, &target, &cfg, &trainer)?;

    for (i, e) in log.epochs.iter().enumerate().step_by(50) {
        println!("epoch {i:>3}  focal {:.4}  mmd {:.4}  sigma {:.3}", e.focal, e.mmd, e.sigma);
    }
    let ba = |m: &ClassifierModel| -> driftwatch::Result<f64> {
        Ok(evaluate_samples(m, after)?.map_or(f64::NAN, |r| r.balanced_accuracy))
    };
    println!("shifted-domain balanced accuracy: baseline {:.3} → adapted {:.3}", ba(&baseline)?, ba(&adapted)?);
    println!("model version {} → {}", baseline.version(), adapted.version());
    Ok(())
}
