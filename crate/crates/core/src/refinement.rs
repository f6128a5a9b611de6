//! Refinement decoder and the deep supervision head.
//!
//! Four decoder blocks climb from the deepest enhanced features back to
//! input resolution. Each upsamples with a 2×2 transposed convolution,
//! concatenates the skip features of the matching encoder level, reweights
//! channels (CAM), fuses with two conv + BN + ReLU layers and reweights
//! positions (SAM). A 3×3 head convolution yields the change intensity map.

use lrnet_tensor::init::he_normal;
use lrnet_tensor::{ParamId, Params, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvBnRelu, Ctx};

/// Channel attention: a shared bottleneck over global average and max
/// descriptors, summed and squashed into per-channel weights.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
}

impl ChannelAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            fc1: Conv2d::new(params, &format!("{name}.fc1"), channels, hidden, 1, false, rng),
            fc2: Conv2d::new(params, &format!("{name}.fc2"), hidden, channels, 1, false, rng),
        }
    }

    /// Per-channel weights `[N, C, 1, 1]` in `(0, 1)`.
    pub fn weights<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let mlp = |v: Var<'t>| self.fc2.forward(cx, self.fc1.forward(cx, v).relu());
        mlp(x.global_avg_pool())
            .add(&mlp(x.global_max_pool()))
            .sigmoid()
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        x.mul_channel(&self.weights(cx, x))
    }
}

/// Spatial attention: channel max/mean maps, a `k×k` convolution and a
/// sigmoid give one weight per position.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new<R: Rng + ?Sized>(params: &mut Params, name: &str, kernel: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(params, &format!("{name}.conv"), 2, 1, kernel, true, rng),
        }
    }

    /// Position weights `[N, 1, H, W]` in `(0, 1)`.
    pub fn weights<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let pooled = x.channel_max().concat_channels(&x.channel_mean());
        self.conv.forward(cx, pooled).sigmoid()
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        x.mul_spatial(&self.weights(cx, x))
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UpConv {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: params.add(
                &format!("{name}.weight"),
                he_normal([in_channels, out_channels, 2, 2], in_channels, rng),
            ),
            bias: params.add(&format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1])),
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Var<'t> {
        x.conv_transpose2x2(&cx.var(self.weight), Some(&cx.var(self.bias)))
    }
}

/// One decoder stage.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub up: UpConv,
    pub cam: ChannelAttention,
    pub fuse1: ConvBnRelu,
    pub fuse2: ConvBnRelu,
    pub sam: SpatialAttention,
}

impl DecoderBlock {
    /// `deep_channels` in, `channels` (the skip width) out.
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        deep_channels: usize,
        channels: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            up: UpConv::new(params, &format!("{name}.up"), deep_channels, channels, rng),
            cam: ChannelAttention::new(
                params,
                &format!("{name}.cam"),
                2 * channels,
                config.cam_reduction,
                rng,
            ),
            fuse1: ConvBnRelu::new(params, name, "conv1", "bn1", 2 * channels, channels, rng),
            fuse2: ConvBnRelu::new(params, name, "conv2", "bn2", channels, channels, rng),
            sam: SpatialAttention::new(params, &format!("{name}.sam"), config.sam_kernel, rng),
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, deep: Var<'t>, skip: Var<'t>) -> Result<Var<'t>> {
        if deep.dims()[1] != self.up.in_channels {
            return Err(Error::Config(format!(
                "decoder block expects {} deep channels, got {}",
                self.up.in_channels,
                deep.dims()[1]
            )));
        }
        let up = self.up.forward(cx, deep);
        let (u, s) = (up.dims(), skip.dims());
        if u != s {
            return Err(Error::Config(format!(
                "upsampled features {u:?} do not match skip features {s:?}"
            )));
        }
        let x = self.cam.forward(cx, up.concat_channels(&skip));
        let x = self.fuse2.forward(cx, self.fuse1.forward(cx, x));
        Ok(self.sam.forward(cx, x))
    }
}

/// Decoder output.
pub struct Refined<'t> {
    /// Change intensity before the sigmoid, `[N, 1, H, W]`.
    pub intensity: Var<'t>,
    pub prob: Var<'t>,
    /// Per-block mean absolute activation, deepest first.
    pub block_norms: Vec<f64>,
}

/// Four decoder blocks (skip levels 4, 3, 2, 1) and the head convolution.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub blocks: Vec<DecoderBlock>,
    pub head: Conv2d,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(params: &mut Params, config: &ModelConfig, rng: &mut R) -> Self {
        let w = config.widths;
        let blocks = (1..=4)
            .rev()
            .map(|y| DecoderBlock::new(params, &format!("dec{y}"), w[y], w[y - 1], config, rng))
            .collect();
        Self {
            blocks,
            head: Conv2d::new(params, "head", w[0], 1, 3, true, rng),
        }
    }

    /// `skips[y − 1]` are the level-`y` enhanced features; `deep` is level 5.
    pub fn refine<'t>(&self, cx: &Ctx<'t, '_>, deep: Var<'t>, skips: &[Var<'t>]) -> Result<Refined<'t>> {
        if skips.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "refinement needs four skip levels, got {}",
                skips.len()
            )));
        }
        let mut x = deep;
        let mut block_norms = Vec::with_capacity(4);
        for (block, y) in self.blocks.iter().zip((1..=4).rev()) {
            x = block.forward(cx, x, skips[y - 1])?;
            let v = x.value();
            block_norms.push(v.data().iter().map(|a| a.abs()).sum::<f64>() / v.len() as f64);
        }
        let intensity = self.head.forward(cx, x);
        Ok(Refined {
            prob: intensity.sigmoid(),
            intensity,
            block_norms,
        })
    }
}

/// Deep supervision head: 1×1 convolution to one channel and a sigmoid.
#[derive(Clone, Debug)]
pub struct E2aHead {
    pub conv: Conv2d,
}

impl E2aHead {
    pub fn new<R: Rng + ?Sized>(params: &mut Params, channels: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(params, "e2a.conv", channels, 1, 1, true, rng),
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, deep: Var<'t>) -> Result<Var<'t>> {
        if deep.dims()[1] != self.conv.in_channels {
            return Err(Error::Config(format!(
                "deep head expects {} channels, got {}",
                self.conv.in_channels,
                deep.dims()[1]
            )));
        }
        Ok(self.conv.forward(cx, deep).sigmoid())
    }
}
