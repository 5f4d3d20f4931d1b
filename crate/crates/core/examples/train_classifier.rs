//! Baseline training with focal loss + Adam, evaluation and checkpointing.
//!
//! cargo run --example train_classifier

use driftwatch::classifier::{train, Checkpoint, ClassifierModel, Example, TrainerConfig};
use driftwatch::eval::evaluate_samples;
use driftwatch::split::dev_split;
use driftwatch::synth::{generate, SynthConfig};

fn main() -> driftwatch::Result<()> {
    let samples = generate(&SynthConfig { n_samples: 1200, class_balance: 0.3, seed: 11, ..SynthConfig::default() })?;
    let splits = dev_split(&samples, [0.6, 0.2, 0.2])?;
    println!("train {} / val {} / test {}", splits.train.len(), splits.val.len(), splits.test.len());

    let trainer = TrainerConfig { lr: 1e-2, max_epochs: 60, patience: 5, seed: 11, ..TrainerConfig::default() };
    let dim = samples[0].dim();
    let (model, history) = train(
        &ClassifierModel::new(dim),
        &Example::from_samples(&splits.train),
        &Example::from_samples(&splits.val),
        &trainer,
    )?;
    for e in history.epochs.iter().step_by(5) {
        println!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss.unwrap_or(f64::NAN));
    }
    println!(
        "best epoch {:?} (val {:.5}), stopped early: {}",
        history.best_epoch,
        history.best_val_loss.unwrap_or(f64::NAN),
        history.stopped_early
    );

    let m = evaluate_samples(&model, &splits.test)?.expect("synthetic samples are labeled");
    println!(
        "test: AUC {:.3}  BA {:.3}  sens {:.3}  spec {:.3}  F1 {:.3}",
        m.auc.unwrap_or(f64::NAN),
        m.balanced_accuracy,
        m.sensitivity.unwrap_or(f64::NAN),
        m.specificity.unwrap_or(f64::NAN),
        m.f1
    );

    let dir = std::env::temp_dir().join("driftwatch-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.json");
    Checkpoint::from_model(&model, &trainer).save(&path)?;
    let restored = Checkpoint::load(&path)?.into_model()?;
    assert_eq!(restored, model);
    println!("checkpoint round-trips through {}", path.display());
    Ok(())
}
