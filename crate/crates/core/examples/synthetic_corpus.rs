//! Writes a synthetic insulator corpus that the `xai-triage` binary can run on.
//!
//! ```text
//! cargo run --release --example synthetic_corpus -- /tmp/shells
//! cargo run --release --bin xai-triage -- run --config /tmp/shells/config.toml
//! ```

use std::path::PathBuf;

use xai_triage::synth::{write_corpus, CorpusSpec};

fn main() -> xai_triage::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "synthetic-corpus".into());
    let spec = CorpusSpec::default();
    let paths = write_corpus(&dir, &spec)?;
    let train: usize = spec.train.iter().sum();
    let test: usize = spec.test.iter().sum();
    println!(
        "{train} train and {test} test scenes in {}",
        paths.dir.display()
    );
    println!("manifest  {}", paths.manifest.display());
    println!("model     {}", paths.model.display());
    println!("config    {}", paths.config.display());
    Ok(())
}
