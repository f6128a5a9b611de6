//! Per-level feature shapes of the three encoder branches and the decoder
//! output, with and without the optional modules.
//!
//! `cargo run --example encoder_shapes -- [size]`

use lrnet::layers::Ctx;
use lrnet::{LrNet, ModelConfig};
use lrnet_tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lrnet::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = |rng: &mut ChaCha8Rng| lrnet_tensor::init::uniform([1, 3, size, size], 0.0, 1.0, rng);
    let (t1, t2) = (x(&mut rng), x(&mut rng));
    let diff = t1.zip_map(&t2, |a, b| (a - b).abs());
    for cfg in [ModelConfig::desk(), ModelConfig::desk().base()] {
        let model = LrNet::new(&cfg, &mut rng)?;
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &model.params);
        let f = model.forward(&cx, &t1, &t2, &diff)?;
        println!("{} ({} parameters)", cfg.variant_name(), model.parameter_count());
        for t in &f.trace {
            let alpha = t.alpha.as_ref().map(|a| {
                let (lo, hi) = a.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                format!("  alpha in [{lo:.3}, {hi:.3}]")
            });
            println!("  level {}: B1 {:?}  B2 {:?}  BD {:?}{}", t.level, t.b1, t.b2, t.bd, alpha.unwrap_or_default());
        }
        println!("  output {:?}", f.prob.dims());
        if let Some(d) = f.deep_prob {
            println!("  deep   {:?}", d.dims());
        }
    }
    Ok(())
}
