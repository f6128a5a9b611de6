//! A short module ablation on synthetic pairs.
//!
//! `cargo run --example ablation -- [epochs]`

use lrnet::data::{synth_samples, SynthConfig};
use lrnet::train::{ablate, table4_csv, table4_variants};
use lrnet::TrainConfig;

fn main() -> lrnet::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let train = synth_samples(&SynthConfig::default())?;
    let eval = synth_samples(&SynthConfig {
        seed: 1,
        ..SynthConfig::default()
    })?;
    let base = TrainConfig {
        epochs,
        ..TrainConfig::desk()
    };
    let variants: Vec<_> = table4_variants(&base).into_iter().filter(|v| v.name == "base" || v.name.matches('+').count() == 4).collect();
    let report = ablate(&variants, &train, &eval)?;
    print!("{}", table4_csv(&report.rows));
    Ok(())
}
