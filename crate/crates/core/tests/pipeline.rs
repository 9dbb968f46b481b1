mod common;

use std::fs;
use std::path::Path;

use xai_triage::manifest::{ingest_manifest, Split};
use xai_triage::model_io::load_model_file;
use xai_triage::pipeline::{labeled_samples, run_pipeline, write_outputs, RunOptions};
use xai_triage::rebalance::per_class_accuracy;
use xai_triage::synth::{write_corpus, CorpusPaths, CorpusSpec};
use xai_triage::{Network, PipelineConfig};

fn small_corpus(dir: &Path) -> CorpusPaths {
    let spec = CorpusSpec {
        train: [20, 40, 200],
        test: [7, 7, 6],
        ..CorpusSpec::default()
    };
    write_corpus(dir, &spec).unwrap()
}

fn load(paths: &CorpusPaths) -> (PipelineConfig, Network) {
    let cfg = PipelineConfig::load(&paths.config).unwrap();
    let net = load_model_file(cfg.model_path().unwrap()).unwrap();
    (cfg, net)
}

fn test_only() -> RunOptions {
    RunOptions {
        split: Some(Split::Test),
        ..RunOptions::default()
    }
}

#[test]
fn open_gate_matches_bare_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let paths = small_corpus(dir.path());
    let (cfg, net) = load(&paths);
    assert_eq!(cfg.sharpness.threshold, 0.0);
    let manifest = ingest_manifest(&paths.manifest, &cfg.classes).unwrap();
    let out = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    let samples = labeled_samples(&manifest, Split::Test, &net).unwrap();
    let bare = per_class_accuracy(&net, &samples).unwrap().accuracy;
    assert_eq!(out.report.aggregates.accuracy, bare);
    assert_eq!(out.report.aggregates.kept, 20);
}

#[test]
fn aggregates_close_over_rows() {
    let dir = tempfile::tempdir().unwrap();
    let paths = small_corpus(dir.path());
    let (mut cfg, net) = load(&paths);
    let manifest = ingest_manifest(&paths.manifest, &cfg.classes).unwrap();
    // a threshold inside the score range so both sides of the gate are populated
    let probe = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    let mut scores: Vec<f64> = probe.report.shells.iter().filter_map(|r| r.score).collect();
    scores.sort_by(f64::total_cmp);
    cfg.sharpness.threshold = scores[scores.len() / 3];

    let out = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    let rows = &out.report.shells;
    let agg = &out.report.aggregates;
    assert_eq!(agg.shells, 20);
    assert_eq!(rows.len(), 20);

    let kept: Vec<_> = rows.iter().filter(|r| r.kept == Some(true)).collect();
    assert_eq!(agg.kept, kept.len());
    assert_eq!(
        agg.discarded,
        rows.iter().filter(|r| r.kept == Some(false)).count()
    );
    assert_eq!(
        agg.failed,
        rows.iter().filter(|r| r.error.is_some()).count()
    );
    assert!(agg.kept > 0 && agg.discarded > 0);

    let names = cfg.classes.names();
    let idx = |s: &Option<String>| names.iter().position(|n| Some(n) == s.as_ref()).unwrap();
    let labels: Vec<usize> = kept.iter().map(|r| idx(&r.label)).collect();
    let preds: Vec<usize> = kept.iter().map(|r| idx(&r.prediction)).collect();
    assert_eq!(
        agg.accuracy.per_class,
        common::count_accuracy(&labels, &preds, names.len())
    );
    let hits = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
    assert_eq!(
        agg.accuracy.overall,
        Some(hits as f64 / labels.len() as f64)
    );

    let tkis: Vec<f64> = rows.iter().filter_map(|r| r.tki).collect();
    assert_eq!(agg.tki_count, tkis.len());
    if let Some(m) = agg.mean_tki {
        assert!((m - tkis.iter().sum::<f64>() / tkis.len() as f64).abs() < 1e-15);
    }
    let with_maps: Vec<_> = rows.iter().filter(|r| r.heatmap.is_some()).collect();
    assert_eq!(agg.heatmaps, with_maps.len());
    assert_eq!(out.heatmaps.len(), with_maps.len());
    for r in &with_maps {
        assert_eq!(r.kept, Some(true));
        assert_ne!(r.prediction.as_deref(), Some("healthy"));
    }

    for p in &agg.sweep {
        let surviving = rows
            .iter()
            .filter(|r| r.score.is_some_and(|s| s >= p.threshold))
            .count();
        assert_eq!(p.kept, surviving);
    }

    let out_dir = dir.path().join("out");
    write_outputs(&out, &out_dir).unwrap();
    for r in &with_maps {
        assert!(out_dir.join(r.heatmap.as_ref().unwrap()).is_file());
    }
    let written = fs::read_dir(out_dir.join("heatmaps")).unwrap().count();
    assert_eq!(written, with_maps.len());
}

#[test]
fn healthy_predictions_produce_no_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let paths = small_corpus(dir.path());
    let (cfg, net) = load(&paths);
    let manifest = ingest_manifest(&paths.manifest, &cfg.classes).unwrap();
    let all = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    let healthy: Vec<usize> = all
        .report
        .shells
        .iter()
        .filter(|r| r.prediction.as_deref() == Some("healthy"))
        .map(|r| r.line)
        .collect();
    assert!(!healthy.is_empty());

    let text = fs::read_to_string(&paths.manifest).unwrap();
    let subset: String = text
        .lines()
        .enumerate()
        .filter(|(i, _)| healthy.contains(&(i + 1)))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    let sub_path = dir.path().join("healthy.jsonl");
    fs::write(&sub_path, subset).unwrap();
    let sub = ingest_manifest(&sub_path, &cfg.classes).unwrap();
    let out = run_pipeline(&cfg, &net, &sub, &RunOptions::default()).unwrap();
    assert_eq!(out.report.shells.len(), healthy.len());
    assert_eq!(out.report.aggregates.heatmaps, 0);
    assert!(out.heatmaps.is_empty());
}

#[test]
fn a_corrupt_image_only_fails_its_own_record() {
    let dir = tempfile::tempdir().unwrap();
    let paths = small_corpus(dir.path());
    let (cfg, net) = load(&paths);
    let manifest = ingest_manifest(&paths.manifest, &cfg.classes).unwrap();
    let victim = manifest.split(Split::Test).next().unwrap().clone();
    let reference = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();

    // header intact, pixel data truncated
    let bytes = fs::read(&victim.image).unwrap();
    fs::write(&victim.image, &bytes[..bytes.len() / 2]).unwrap();
    let out = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    for (a, b) in reference.report.shells.iter().zip(&out.report.shells) {
        if a.sample == victim.id {
            assert!(b.error.is_some());
        } else {
            assert_eq!(a, b);
        }
    }
    assert_eq!(out.report.aggregates.failed, 1);

    // unreadable header: rejected at ingestion, everything else unchanged
    fs::write(&victim.image, b"garbage").unwrap();
    let manifest = ingest_manifest(&paths.manifest, &cfg.classes).unwrap();
    assert_eq!(manifest.errors.len(), 1);
    assert_eq!(manifest.errors[0].line, victim.line);
    let out = run_pipeline(&cfg, &net, &manifest, &test_only()).unwrap();
    assert_eq!(out.report.rejected.len(), 1);
    assert_eq!(out.report.shells.len(), 19);
}
