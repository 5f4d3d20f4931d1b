use std::fs::File;
use std::path::PathBuf;

use chrono::{Duration, TimeZone, Utc};
use driftwatch::io::{ingest, write_manifest, EmbedderConfig, ManifestRow};
use driftwatch::pipeline::{
    load_samples, prepare, run, run_prepared, verify_report, AdaptationMode, PipelineConfig, RunOverrides,
};
use driftwatch::split::audit_subjects;
use driftwatch::synth::{DriftKind, SynthConfig};
use driftwatch::Error;

fn config(mode: AdaptationMode, drift: DriftKind) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth = SynthConfig { n_samples: 1200, dim: 8, drift_onset: 0.8, drift, ..SynthConfig::default() };
    cfg.trainer.lr = 1e-2;
    cfg.trainer.max_epochs = 30;
    cfg.adaptation.mode = mode;
    cfg.adaptation.uda.lr = Some(1e-2);
    cfg.adaptation.al.lr = Some(1e-2);
    cfg
}

#[test]
fn stationary_stream_tracks_benchmark() {
    let cfg = config(AdaptationMode::None, DriftKind::None);
    let report = run(&cfg).unwrap();
    verify_report(&report, &cfg.cusum).unwrap();
    let bench = report.summary.benchmark;
    let bas: Vec<f64> = report.balanced_accuracies().into_iter().flatten().collect();
    assert_eq!(bas.len(), report.windows.len());
    let close = bas.iter().filter(|b| (*b - bench).abs() <= 0.1).count();
    assert!(close as f64 >= 0.9 * bas.len() as f64, "{close}/{} near {bench}: {bas:?}", bas.len());
}

#[test]
fn reports_hold_their_contracts_for_every_mode() {
    let shift = DriftKind::CovariateShift { delta: vec![2.0, 4.0] };
    let base = config(AdaptationMode::None, shift.clone());
    let samples = load_samples(&base).unwrap();
    let prepared = prepare(&base, &samples).unwrap();
    let s = &prepared.baseline.splits;
    audit_subjects(&[("train", &s.train), ("val", &s.val), ("test", &s.test), ("post", &prepared.post)]).unwrap();
    let mut alerts = None;
    for mode in [AdaptationMode::None, AdaptationMode::Uda, AdaptationMode::Al, AdaptationMode::Random] {
        let cfg = config(mode, shift.clone());
        let report = run_prepared(&cfg, &prepared, &RunOverrides::default()).unwrap();
        verify_report(&report, &cfg.cusum).unwrap();
        let a: Vec<bool> = report.windows.iter().map(|w| w.alert).collect();
        // the monitor sees raw embeddings, so alerts do not depend on the arm
        assert_eq!(alerts.get_or_insert_with(|| a.clone()), &a, "{mode:?}");
        if mode != AdaptationMode::None {
            assert_eq!(report.summary.events.len(), report.summary.n_alerts);
            assert_eq!(report.summary.final_model_version, 1 + report.summary.n_alerts as u64);
        }
    }
    assert!(alerts.unwrap().iter().any(|&a| a));
}

#[test]
fn deployment_mode_reports_null_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(AdaptationMode::Uda, DriftKind::None);
    let mut samples = load_samples(&cfg).unwrap();
    let cut = samples.len() * 7 / 10 + 5;
    for s in &mut samples[cut..] {
        s.label = None;
    }
    driftwatch::io::save_ndjson(&dir.path().join("e.ndjson"), &samples).unwrap();
    let rows = driftwatch::io::manifest_for(&samples, "e.ndjson");
    write_manifest(File::create(dir.path().join("m.csv")).unwrap(), &rows).unwrap();
    cfg.data.manifest = Some(PathBuf::from("m.csv"));
    cfg.base_dir = dir.path().to_path_buf();
    let report = run(&cfg).unwrap();
    assert!(report.windows.iter().skip(1).all(|w| w.metrics.is_none()));
    let line = report.to_ndjson().unwrap();
    assert!(line.lines().nth(1).unwrap().ends_with("\"metrics\":null}"));
}

#[test]
fn stage_is_named_on_failure() {
    let mut cfg = config(AdaptationMode::None, DriftKind::None);
    cfg.synth.n_samples = 3;
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("split"), "{err}");
}

#[test]
fn wav_manifest_ingests_through_audio_frontend() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let names = ["tone_16k_mono.wav", "cough_44k_stereo.wav", "burst_22k_float.wav"];
    let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap();
    let rows: Vec<ManifestRow> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ManifestRow {
            sample_id: format!("w{i}"),
            subject_id: format!("p{i}"),
            timestamp: t0 - Duration::hours(i as i64),
            label: (i != 1).then_some(1),
            source: fixtures.join(n).display().to_string(),
        })
        .collect();
    let man = dir.path().join("m.csv");
    write_manifest(File::create(&man).unwrap(), &rows).unwrap();
    let emb = EmbedderConfig { dim: 24, ..EmbedderConfig::default() };
    let samples = ingest(&man, &emb).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids, ["w2", "w1", "w0"]);
    assert!(samples.iter().all(|s| s.dim() == 24 && !s.segments.is_empty()));
    assert_eq!(samples[1].label, None);
}

#[test]
fn manifest_referencing_unknown_id_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.ndjson"), "").unwrap();
    std::fs::write(
        dir.path().join("m.csv"),
        "sample_id,subject_id,timestamp,label,source\na,p,2021-01-01T00:00:00.000Z,1,e.ndjson\n",
    )
    .unwrap();
    let err = ingest(&dir.path().join("m.csv"), &EmbedderConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Parse { row: 2, .. }), "{err:?}");
}
