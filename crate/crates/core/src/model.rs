//! The assembled network.

use lrnet_tensor::{Params, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::{Encoder, LevelTrace};
use crate::error::Result;
use crate::layers::Ctx;
use crate::refinement::{Decoder, E2aHead};

/// Encoder, decoder, optional deep head, and the parameters they index.
#[derive(Clone, Debug)]
pub struct LrNet {
    pub config: ModelConfig,
    pub params: Params,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub e2a: Option<E2aHead>,
}

/// Result of one forward pass.
pub struct Forward<'t> {
    /// Final change probability, `[N, 1, H, W]`.
    pub prob: Var<'t>,
    /// Deep head probability at `H/16 × W/16`, when enabled.
    pub deep_prob: Option<Var<'t>>,
    /// Final attention maps of levels 1..=5 (empty without C2A).
    pub finals: Vec<Tensor>,
    pub trace: Vec<LevelTrace>,
    pub block_norms: Vec<f64>,
}

impl LrNet {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();
        let encoder = Encoder::new(&mut params, config, rng);
        let decoder = Decoder::new(&mut params, config, rng);
        let e2a = config
            .e2a
            .then(|| E2aHead::new(&mut params, config.widths[4], rng));
        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            decoder,
            e2a,
        })
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn forward<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        t1: &Tensor,
        t2: &Tensor,
        diff: &Tensor,
    ) -> Result<Forward<'t>> {
        let enc = self.encoder.encode(
            cx,
            cx.constant(t1.clone()),
            cx.constant(t2.clone()),
            cx.constant(diff.clone()),
        )?;
        let deep = enc.enhanced[4];
        let deep_prob = match &self.e2a {
            Some(head) => Some(head.forward(cx, deep)?),
            None => None,
        };
        let refined = self.decoder.refine(cx, deep, &enc.enhanced[..4])?;
        Ok(Forward {
            prob: refined.prob,
            deep_prob,
            finals: enc.finals.iter().map(|f| (*f.value()).clone()).collect(),
            trace: enc.trace,
            block_norms: refined.block_norms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e2a_toggle_removes_head_parameters() {
        let cfg = ModelConfig::vgg16().with_widths([2, 2, 4, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = LrNet::new(&cfg, &mut rng).unwrap();
        let no_deep = LrNet::new(&ModelConfig { e2a: false, ..cfg }, &mut rng).unwrap();
        assert!(full.params.id("e2a.conv.weight").is_some());
        assert!(no_deep.params.iter().all(|(_, e)| !e.name.starts_with("e2a")));
        assert_eq!(full.parameter_count() - no_deep.parameter_count(), 4 + 1);
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::desk();
        let a = LrNet::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = LrNet::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x.value, y.value);
        }
    }
}
