//! Three-branch localization encoder.
//!
//! `B1` and `B2` are VGG16-style branches over the two dates and share every
//! weight; each keeps its own batch-norm running statistics. `BD` runs the
//! same block layout over the difference image. Between levels, `BD` is
//! downsampled by learnable optimal pooling (LOP) applied to the C2A output,
//! while `B1`/`B2` use 2×2 max pooling.

use lrnet_tensor::{Dims, Params, Tensor, Var};
use rand::Rng;

use crate::alignment::{hca_propagate, C2a};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, ConvBnRelu, Ctx};

/// Number of convolutions in each of the five blocks.
pub const BLOCK_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];

/// Input side lengths must be a multiple of this.
pub const DOWNSAMPLE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    B1,
    B2,
    Bd,
}

/// One convolutional block: `depth` 3×3 conv + BN + ReLU layers.
#[derive(Clone, Debug)]
pub struct VggBlock {
    pub layers: Vec<ConvBnRelu>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl VggBlock {
    /// Conv parameters are `{prefix}.level{y}.conv{k}`, batch norms
    /// `{prefix}.level{y}.bn{k}` with `k` counted from 1.
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        prefix: &str,
        level: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..BLOCK_DEPTHS[level - 1])
            .map(|k| {
                let cin = if k == 0 { in_channels } else { out_channels };
                ConvBnRelu::new(
                    params,
                    &format!("{prefix}.level{level}"),
                    &format!("conv{}", k + 1),
                    &format!("bn{}", k + 1),
                    cin,
                    out_channels,
                    rng,
                )
            })
            .collect();
        Self {
            layers,
            in_channels,
            out_channels,
        }
    }

    /// Same convolutions and affine parameters as `other`, fresh running
    /// statistics under `{prefix}.level{y}.bn{k}`.
    pub fn sharing(other: &VggBlock, params: &mut Params, prefix: &str, level: usize) -> Self {
        let layers = other
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| ConvBnRelu {
                conv: l.conv.clone(),
                bn: BatchNorm::sharing(&l.bn, params, &format!("{prefix}.level{level}.bn{}", k + 1)),
            })
            .collect();
        Self {
            layers,
            in_channels: other.in_channels,
            out_channels: other.out_channels,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        if x.dims()[1] != self.in_channels {
            return Err(Error::Config(format!(
                "block expects {} input channels, got {}",
                self.in_channels,
                x.dims()[1]
            )));
        }
        Ok(self.layers.iter().fold(x, |h, l| l.forward(cx, h)))
    }
}

/// Learnable optimal pooling: a per-channel 2×2 convolution with stride 2.
#[derive(Clone, Debug)]
pub struct Lop {
    pub weight: lrnet_tensor::ParamId,
    pub bias: lrnet_tensor::ParamId,
    pub channels: usize,
}

/// Kernel `[1, C, 2, 2]` of 0.25 and zero bias `[1, C, 1, 1]`: untrained,
/// LOP is exactly 2×2 average pooling.
pub fn lop_init(channels: usize) -> (Tensor, Tensor) {
    assert!(channels > 0, "LOP needs at least one channel");
    (
        Tensor::full([1, channels, 2, 2], 0.25),
        Tensor::zeros([1, channels, 1, 1]),
    )
}

/// Applies LOP kernels to `x`; odd spatial sizes are rejected.
pub fn lop_forward<'t>(x: &Var<'t>, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
    let [_, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "pooling needs even spatial dims, got {h}×{w}"
        )));
    }
    if weight.dims() != [1, c, 2, 2] || bias.dims() != [1, c, 1, 1] {
        return Err(Error::Config(format!(
            "LOP parameters {:?}/{:?} do not fit {c} channels",
            weight.dims(),
            bias.dims()
        )));
    }
    Ok(x.depthwise2x2(weight, bias))
}

impl Lop {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        let (w, b) = lop_init(channels);
        Self {
            weight: params.add(&format!("{name}.weight"), w),
            bias: params.add(&format!("{name}.bias"), b),
            channels,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        lop_forward(&x, &cx.var(self.weight), &cx.var(self.bias))
    }
}

/// Shapes and attention statistics of one encoder level.
#[derive(Clone, Debug)]
pub struct LevelTrace {
    pub level: usize,
    pub b1: Dims,
    pub b2: Dims,
    pub bd: Dims,
    /// `α` map, when C2A is enabled.
    pub alpha: Option<Tensor>,
    pub similarity: Option<Tensor>,
    pub current: Option<Tensor>,
}

/// Enhanced features and attention maps of all five levels.
pub struct EncoderOutput<'t> {
    /// `F^C2A` for levels 1..=5 (the fused features when C2A is off).
    pub enhanced: Vec<Var<'t>>,
    /// Final attention maps for levels 1..=5; empty when C2A is off.
    pub finals: Vec<Var<'t>>,
    pub trace: Vec<LevelTrace>,
}

impl EncoderOutput<'_> {
    pub fn deep(&self) -> Var<'_> {
        self.enhanced[4]
    }
}

/// The encoder's blocks and modules.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: ModelConfig,
    pub siamese: Vec<VggBlock>,
    /// `B2` blocks: the `siamese` convolutions with separate statistics.
    pub b2: Vec<VggBlock>,
    pub diff: Vec<VggBlock>,
    /// Four LOP layers after levels 1..=4 when enabled.
    pub lops: Vec<Lop>,
    pub c2a: Vec<C2a>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(params: &mut Params, config: &ModelConfig, rng: &mut R) -> Self {
        let w = config.widths;
        let mut siamese = Vec::with_capacity(5);
        let mut diff = Vec::with_capacity(5);
        for y in 1..=5 {
            let cin = if y == 1 { config.in_channels } else { w[y - 2] };
            siamese.push(VggBlock::new(params, "siamese", y, cin, w[y - 1], rng));
        }
        let b2 = siamese
            .iter()
            .enumerate()
            .map(|(i, b)| VggBlock::sharing(b, params, "b2", i + 1))
            .collect();
        for y in 1..=5 {
            let cin = if y == 1 { config.in_channels } else { w[y - 2] };
            diff.push(VggBlock::new(params, "diff", y, cin, w[y - 1], rng));
        }
        let lops = if config.lop {
            (1..=4)
                .map(|y| Lop::new(params, &format!("lop{y}"), w[y - 1]))
                .collect()
        } else {
            Vec::new()
        };
        let c2a = if config.c2a {
            (1..=5)
                .map(|y| {
                    C2a::new(
                        params,
                        &format!("c2a{y}"),
                        w[y - 1],
                        config.sam_kernel,
                        config.similarity_threshold,
                        rng,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            config: config.clone(),
            siamese,
            b2,
            diff,
            lops,
            c2a,
        }
    }

    /// Runs one level of one branch, including the pooling in front of
    /// `B1`/`B2` blocks 2..=5.
    pub fn conv_block_forward<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        x: Var<'t>,
        level: usize,
        branch: Branch,
    ) -> Result<Var<'t>> {
        if !(1..=5).contains(&level) {
            return Err(Error::InvalidInput(format!("level {level} outside 1..=5")));
        }
        let i = level - 1;
        match branch {
            Branch::B1 | Branch::B2 => {
                let x = if level > 1 { x.max_pool(2) } else { x };
                let blocks = if branch == Branch::B1 { &self.siamese } else { &self.b2 };
                blocks[i].forward(cx, x)
            }
            Branch::Bd => self.diff[i].forward(cx, x),
        }
    }

    /// `t1`, `t2` are the (normalised) images, `diff` the difference image,
    /// all `[N, C, H, W]` with `H`, `W` multiples of 16.
    pub fn encode<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        t1: Var<'t>,
        t2: Var<'t>,
        diff: Var<'t>,
    ) -> Result<EncoderOutput<'t>> {
        let dims = t1.dims();
        if t2.dims() != dims || diff.dims() != dims {
            return Err(Error::Shape(format!(
                "input pair mismatch: {dims:?}, {:?}, {:?}",
                t2.dims(),
                diff.dims()
            )));
        }
        if dims[2] % DOWNSAMPLE != 0 || dims[3] % DOWNSAMPLE != 0 || dims[2] == 0 || dims[3] == 0 {
            return Err(Error::InvalidInput(format!(
                "input {}×{} is not a positive multiple of {DOWNSAMPLE}",
                dims[2], dims[3]
            )));
        }
        let (mut x1, mut x2, mut xd) = (t1, t2, diff);
        let mut out = EncoderOutput {
            enhanced: Vec::with_capacity(5),
            finals: Vec::with_capacity(5),
            trace: Vec::with_capacity(5),
        };
        for y in 1..=5 {
            let f1 = self.conv_block_forward(cx, x1, y, Branch::B1)?;
            let f2 = self.conv_block_forward(cx, x2, y, Branch::B2)?;
            let fd = self.conv_block_forward(cx, xd, y, Branch::Bd)?;
            let mut trace = LevelTrace {
                level: y,
                b1: f1.dims(),
                b2: f2.dims(),
                bd: fd.dims(),
                alpha: None,
                similarity: None,
                current: None,
            };
            let enhanced = if self.config.c2a {
                let pre = if self.config.hca && y > 1 {
                    Some(hca_propagate(&out.finals, y)?)
                } else {
                    None
                };
                let c = self.c2a[y - 1].forward(cx, f1, f2, fd, pre.as_ref())?;
                out.finals.push(c.final_map);
                trace.alpha = Some(c.alpha);
                trace.similarity = Some(c.similarity);
                trace.current = Some(c.current);
                c.enhanced
            } else {
                fd.add(&f1.abs_diff(&f2))
            };
            out.enhanced.push(enhanced);
            out.trace.push(trace);
            if y < 5 {
                xd = if self.config.lop {
                    self.lops[y - 1].forward(cx, enhanced)?
                } else {
                    enhanced.max_pool(2)
                };
                x1 = f1;
                x2 = f2;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use lrnet_tensor::init::uniform;
    use lrnet_tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig::vgg16().with_widths([2, 3, 4, 4, 4])
    }

    #[test]
    fn lop_identity_init() {
        let (w, b) = lop_init(64);
        assert_eq!(w.dims(), [1, 64, 2, 2]);
        assert!(w.data().iter().all(|&v| v == 0.25));
        assert!(b.data().iter().all(|&v| v == 0.0));
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let (w, b) = lop_init(1);
        let y = lop_forward(&x, &tape.constant(w), &tape.constant(b)).unwrap();
        assert_eq!(y.value().item(), 2.5);
    }

    #[test]
    fn lop_rejects_odd() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 3, 2]));
        let (w, b) = lop_init(1);
        assert!(lop_forward(&x, &tape.constant(w), &tape.constant(b)).is_err());
    }

    #[test]
    fn b1_b2_share_convolutions_not_statistics() {
        let mut params = Params::new();
        let enc = Encoder::new(&mut params, &tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in enc.siamese.iter().zip(&enc.b2) {
            for (la, lb) in a.layers.iter().zip(&b.layers) {
                assert_eq!(la.conv.weight, lb.conv.weight);
                assert_eq!(la.bn.gamma, lb.bn.gamma);
                assert_ne!(la.bn.running_mean, lb.bn.running_mean);
            }
        }
    }

    #[test]
    fn toggles_change_parameters_not_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let u = uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let mut shapes = Vec::new();
        for cfg in [tiny(), tiny().base()] {
            let mut params = Params::new();
            let enc = Encoder::new(&mut params, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
            if !cfg.lop {
                assert!(params.iter().all(|(_, e)| !e.name.starts_with("lop")));
            }
            let tape = Tape::new();
            let cx = Ctx::eval(&tape, &params);
            let d = t.zip_map(&u, |a, b| (a - b).abs());
            let out = enc
                .encode(&cx, tape.constant(t.clone()), tape.constant(u.clone()), tape.constant(d))
                .unwrap();
            assert_eq!(out.finals.len(), if cfg.c2a { 5 } else { 0 });
            shapes.push(out.enhanced.iter().map(|e| e.dims()).collect::<Vec<_>>());
        }
        assert_eq!(shapes[0], shapes[1]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut params = Params::new();
        let enc = Encoder::new(&mut params, &tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &params);
        let x = tape.constant(Tensor::zeros([1, 3, 24, 24]));
        assert!(matches!(enc.encode(&cx, x, x, x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let mut params = Params::new();
        let enc = Encoder::new(&mut params, &tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &params);
        let x = tape.constant(Tensor::zeros([1, 5, 8, 8]));
        assert!(matches!(
            enc.conv_block_forward(&cx, x, 1, Branch::B1),
            Err(Error::Config(_))
        ));
    }
}
