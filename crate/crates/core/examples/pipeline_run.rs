//! Writes a small synthetic corpus to a temporary directory, re-balances the
//! head on its train split and runs the full pipeline on the test split.

use xai_triage::manifest::ingest_manifest;
use xai_triage::model_io::load_model_file;
use xai_triage::pipeline::{labeled_samples, run_pipeline, write_outputs, RunOptions};
use xai_triage::rebalance::rebalance_head;
use xai_triage::synth::{write_corpus, CorpusSpec};
use xai_triage::{PipelineConfig, Split};

fn main() -> xai_triage::Result<()> {
    let dir = std::env::temp_dir().join("xai-triage-pipeline-example");
    let spec = CorpusSpec {
        test: [20, 20, 20],
        ..CorpusSpec::default()
    };
    let paths = write_corpus(&dir, &spec)?;
    let mut config = PipelineConfig::load(&paths.config)?;
    config.sharpness.threshold = 0.0002;

    let manifest = ingest_manifest(&paths.manifest, &config.classes)?;
    let base = load_model_file(&paths.model)?;
    let train = labeled_samples(&manifest, Split::Train, &base)?;
    let net = rebalance_head(&base, &train, &config.classes, &config.rebalance_config()?)?.network;

    let options = RunOptions {
        split: Some(Split::Test),
        ..RunOptions::default()
    };
    let output = run_pipeline(&config, &net, &manifest, &options)?;
    write_outputs(&output, &config.out)?;

    let a = &output.report.aggregates;
    println!(
        "{} shells, {} kept, {} heatmaps",
        a.shells, a.kept, a.heatmaps
    );
    println!("accuracy over kept shells: {:?}", a.accuracy.per_class);
    println!(
        "mean tki over {} explained damaged shells: {:?}",
        a.tki_count, a.mean_tki
    );
    println!("report in {}", config.out.join("report.json").display());
    Ok(())
}
