//! Change alignment attention (C2A) and hierarchical change alignment (HCA).
//!
//! At each encoder level two "original change features" are derived, one
//! from the absolute difference of the image-branch features (`D1`) and one
//! from the difference-branch features (`D2`). Each yields a preliminary
//! spatial attention map. Their per-pixel agreement, measured by cosine
//! similarity and by whether both maps flag the pixel as changed, sets an
//! alignment coefficient `α` that scales the averaged map. The result is
//! averaged with the map propagated from the shallower levels and multiplies
//! the difference-branch features.
//!
//! Attention maps are `[N, 1, H, W]` tensors throughout.

use lrnet_tensor::{Dims, Params, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvBnRelu, Ctx};

/// Threshold on preliminary attention that separates changed pixels.
pub const FLAG_THRESHOLD: f64 = 0.5;

/// Per-pixel changed/unchanged flags of a preliminary attention map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagMap {
    dims: Dims,
    changed: Vec<bool>,
}

impl FlagMap {
    pub fn new(dims: Dims, changed: Vec<bool>) -> Result<Self> {
        if dims[1] != 1 || dims.iter().product::<usize>() != changed.len() {
            return Err(Error::Shape(format!(
                "flag map of {} values for dims {dims:?}",
                changed.len()
            )));
        }
        Ok(Self { dims, changed })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn changed(&self) -> &[bool] {
        &self.changed
    }

    pub fn count_changed(&self) -> usize {
        self.changed.iter().filter(|&&c| c).count()
    }
}

fn check_map(name: &str, dims: Dims) -> Result<()> {
    if dims[1] != 1 {
        return Err(Error::Shape(format!(
            "{name} must be single-channel, got {dims:?}"
        )));
    }
    Ok(())
}

fn check_same(what: &str, a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `chg` iff the preliminary attention value is at least 0.5.
pub fn change_flags(m: &Tensor) -> Result<FlagMap> {
    check_map("preliminary attention", m.dims())?;
    FlagMap::new(
        m.dims(),
        m.data().iter().map(|&v| v >= FLAG_THRESHOLD).collect(),
    )
}

/// Cosine similarity of the channel vectors at every pixel. A pixel where
/// either vector is zero has similarity 0.
pub fn pixel_cosine_similarity(d1: &Tensor, d2: &Tensor) -> Result<Tensor> {
    check_same("change feature pair", d1.dims(), d2.dims())?;
    let [n, c, h, w] = d1.dims();
    let plane = h * w;
    let mut out = Tensor::zeros([n, 1, h, w]);
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let (mut dot, mut n1, mut n2) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let a = d1.data()[base + ch * plane + p];
                let b = d2.data()[base + ch * plane + p];
                dot += a * b;
                n1 += a * a;
                n2 += b * b;
            }
            let denom = n1.sqrt() * n2.sqrt();
            out.data_mut()[s * plane + p] = if denom > 0.0 {
                (dot / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Alignment coefficient for one pixel.
///
/// Low similarity and disagreeing flags get the neutral weight `t`; agreeing
/// changed pixels are amplified by `2·sim`, agreeing unchanged pixels are
/// suppressed to `1 − sim`.
pub fn alignment_coefficient(sim: f64, changed1: bool, changed2: bool, t: f64) -> f64 {
    if sim <= t {
        return t;
    }
    match (changed1, changed2) {
        (true, true) => 2.0 * sim,
        (false, false) => 1.0 - sim,
        _ => t,
    }
}

/// [`alignment_coefficient`] over whole maps.
pub fn alignment_coefficients(
    sim: &Tensor,
    flags1: &FlagMap,
    flags2: &FlagMap,
    t: f64,
) -> Result<Tensor> {
    check_map("similarity", sim.dims())?;
    check_same("flags", flags1.dims, sim.dims())?;
    check_same("flags", flags2.dims, sim.dims())?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {t} outside (0, 1)")));
    }
    let data = sim
        .data()
        .iter()
        .zip(flags1.changed.iter().zip(&flags2.changed))
        .map(|(&s, (&a, &b))| alignment_coefficient(s, a, b, t))
        .collect();
    Ok(Tensor::from_vec(sim.dims(), data))
}

/// `cur = α ⊙ (m1 + m2) / 2`; `final = (cur + pre) / 2`, or `cur` without
/// a propagated map. Returns `(cur, final)`.
pub fn fuse_attention<'t>(
    alpha: &Var<'t>,
    m1: &Var<'t>,
    m2: &Var<'t>,
    pre: Option<&Var<'t>>,
) -> Result<(Var<'t>, Var<'t>)> {
    check_map("alpha", alpha.dims())?;
    check_same("m1", m1.dims(), alpha.dims())?;
    check_same("m2", m2.dims(), alpha.dims())?;
    if let Some(p) = pre {
        check_same("propagated map", p.dims(), alpha.dims())?;
    }
    let cur = m1.add(m2).scale(0.5).mul(alpha);
    let fin = match pre {
        Some(p) => cur.add(p).scale(0.5),
        None => cur,
    };
    Ok((cur, fin))
}

/// Tensor-level [`fuse_attention`].
pub fn fuse_attention_maps(
    alpha: &Tensor,
    m1: &Tensor,
    m2: &Tensor,
    pre: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let tape = lrnet_tensor::Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let pre = pre.map(c);
    let (cur, fin) = fuse_attention(&c(alpha), &c(m1), &c(m2), pre.as_ref())?;
    Ok(((*cur.value()).clone(), (*fin.value()).clone()))
}

/// Channel-wise max and mean maps, concatenated in that order, convolved
/// to one channel and squashed by a sigmoid. Values lie in `(0, 1)`.
pub fn preliminary_attention<'t>(cx: &Ctx<'t, '_>, conv: &Conv2d, d: Var<'t>) -> Var<'t> {
    let pooled = d.channel_max().concat_channels(&d.channel_mean());
    conv.forward(cx, pooled).sigmoid()
}

/// Average-pools the final maps of levels `1..y` to the resolution of level
/// `y` (kernel `2^(y−j)` for level `j`) and averages them.
pub fn hca_propagate<'t>(finals: &[Var<'t>], target_level: usize) -> Result<Var<'t>> {
    if !(2..=5).contains(&target_level) || finals.len() < target_level - 1 {
        return Err(Error::InvalidInput(format!(
            "propagation to level {target_level} needs {} earlier maps, got {}",
            target_level.saturating_sub(1),
            finals.len()
        )));
    }
    let used = &finals[..target_level - 1];
    let pooled: Vec<Var<'t>> = used
        .iter()
        .enumerate()
        .map(|(j, m)| m.avg_pool(1 << (target_level - 1 - j)))
        .collect();
    let dims = pooled[0].dims();
    if let Some(bad) = pooled.iter().find(|p| p.dims() != dims) {
        return Err(Error::Internal(format!(
            "propagated maps disagree after pooling: {dims:?} vs {:?}",
            bad.dims()
        )));
    }
    let sum = pooled[1..].iter().fold(pooled[0], |acc, p| acc.add(p));
    Ok(sum.scale(1.0 / pooled.len() as f64))
}

/// Tensor-level [`hca_propagate`].
pub fn hca_propagate_maps(finals: &[Tensor], target_level: usize) -> Result<Tensor> {
    let tape = lrnet_tensor::Tape::new();
    let vars: Vec<_> = finals.iter().map(|f| tape.constant(f.clone())).collect();
    Ok((*hca_propagate(&vars, target_level)?.value()).clone())
}

/// Learnable parts of one C2A module.
#[derive(Clone, Debug)]
pub struct C2a {
    /// Convolution producing `D1` from `|F_B1 − F_B2|`.
    pub d1: ConvBnRelu,
    /// Convolution producing `D2` from `F_BD`.
    pub d2: ConvBnRelu,
    /// 7×7 maps from pooled `D1`/`D2` to preliminary attention.
    pub att1: Conv2d,
    pub att2: Conv2d,
    pub threshold: f64,
}

/// Everything one C2A pass produces. Tensors are detached copies for
/// inspection; `enhanced` and `final_map` stay on the tape.
pub struct C2aOutput<'t> {
    pub enhanced: Var<'t>,
    pub final_map: Var<'t>,
    pub current: Tensor,
    pub m1: Tensor,
    pub m2: Tensor,
    pub similarity: Tensor,
    pub alpha: Tensor,
}

impl C2a {
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        name: &str,
        channels: usize,
        kernel: usize,
        threshold: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            d1: ConvBnRelu::new(params, name, "d1.conv", "d1.bn", channels, channels, rng),
            d2: ConvBnRelu::new(params, name, "d2.conv", "d2.bn", channels, channels, rng),
            att1: Conv2d::new(params, &format!("{name}.att1"), 2, 1, kernel, true, rng),
            att2: Conv2d::new(params, &format!("{name}.att2"), 2, 1, kernel, true, rng),
            threshold,
        }
    }

    /// `D1 = Conv(|f1 − f2|)`, `D2 = Conv(fd)`.
    pub fn original_change_features<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        f1: Var<'t>,
        f2: Var<'t>,
        fd: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        check_same("image branch features", f1.dims(), f2.dims())?;
        check_same("difference branch features", fd.dims(), f1.dims())?;
        Ok((
            self.d1.forward(cx, f1.abs_diff(&f2)),
            self.d2.forward(cx, fd),
        ))
    }

    /// Full C2A pass. `α` is computed from values and carries no gradient.
    pub fn forward<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        f1: Var<'t>,
        f2: Var<'t>,
        fd: Var<'t>,
        pre: Option<&Var<'t>>,
    ) -> Result<C2aOutput<'t>> {
        let (d1, d2) = self.original_change_features(cx, f1, f2, fd)?;
        let m1 = preliminary_attention(cx, &self.att1, d1);
        let m2 = preliminary_attention(cx, &self.att2, d2);
        let similarity = pixel_cosine_similarity(&d1.value(), &d2.value())?;
        let alpha = alignment_coefficients(
            &similarity,
            &change_flags(&m1.value())?,
            &change_flags(&m2.value())?,
            self.threshold,
        )?;
        let alpha_var = cx.constant(alpha.clone());
        let (cur, final_map) = fuse_attention(&alpha_var, &m1, &m2, pre)?;
        Ok(C2aOutput {
            enhanced: fd.mul_spatial(&final_map),
            final_map,
            current: (*cur.value()).clone(),
            m1: (*m1.value()).clone(),
            m2: (*m2.value()).clone(),
            similarity,
            alpha,
        })
    }
}
