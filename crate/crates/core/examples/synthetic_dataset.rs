//! Generates a synthetic change dataset on disk and reports its contents.
//!
//! `cargo run --example synthetic_dataset -- [out_dir]`

use std::path::PathBuf;

use lrnet::data::{load_split, split_dataset, synth_generate, Split, SplitSpec, SynthConfig};

fn main() -> lrnet::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().join("synth"));
    let cfg = SynthConfig {
        pairs: 10,
        ..SynthConfig::default()
    };
    let manifest = split_dataset(&synth_generate(&cfg, &out)?, SplitSpec::Counts([8, 1, 1]), cfg.seed)?;
    let path = manifest.save(None)?;
    println!("{} pairs in {}", manifest.len(), path.display());
    for s in load_split(&manifest, Split::Train)? {
        let changed = s.label.count_ones() as f64 / (s.label.height() * s.label.width()) as f64;
        println!("  {}: {:.1}% changed", s.id, 100.0 * changed);
    }
    Ok(())
}
