//! Overfits the full model on a handful of synthetic pairs and prints the
//! training log.
//!
//! `cargo run --example train_overfit -- [epochs]`

use lrnet::data::{synth_samples, SynthConfig};
use lrnet::train::{evaluate_model, Trainer};
use lrnet::TrainConfig;

fn main() -> lrnet::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let samples = synth_samples(&SynthConfig::default())?;
    let mut cfg = TrainConfig::desk();
    cfg.epochs = epochs;
    let mut trainer = Trainer::new(cfg.clone())?;
    println!("{} with {} parameters", trainer.model.config.variant_name(), trainer.model.parameter_count());
    for _ in 0..epochs {
        let e = trainer.train_epoch(&samples)?;
        println!("epoch {:>3}  loss {:.5}  final {:.5}  {:.2}s", e.epoch, e.loss, e.final_loss, e.seconds);
    }
    let r = evaluate_model(&trainer.model, &samples, cfg.normalize, cfg.batch_size)?;
    println!("train F1 {:.2}  IOU {:.2}  F1_Edge {:.2}", r.f1, r.iou, r.f1_edge);
    Ok(())
}
