//! Area and edge losses.
//!
//! Predictions are probability maps `[N, 1, H, W]` on the tape; targets are
//! binary tensors of the same shape. BCE averages over every pixel of the
//! batch; the IoU loss is computed per sample and averaged over the batch.

use lrnet_tensor::{Tensor, Var};

use crate::config::LossMode;
use crate::error::{Error, Result};
use crate::raster::{boundary_extract, BinaryMask, DEFAULT_THRESHOLD};

/// Probability clamp for BCE and smoothing term for IoU.
pub const LOSS_EPS: f64 = 1e-7;

fn check(pred: &Var<'_>, target: &Tensor) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.dims()[1] != 1 {
        return Err(Error::Shape(format!(
            "losses take single-channel maps, got {:?}",
            pred.dims()
        )));
    }
    Ok(())
}

/// BCE value of plain slices, `ŷ` clamped to `[ε, 1 − ε]`.
pub fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    -pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}

/// Soft IoU loss of one map: `−ln((I + ε) / (U + ε))`.
pub fn iou_value(pred: &[f64], target: &[f64]) -> f64 {
    let (i, u) = soft_iou_sums(pred, target);
    -((i + LOSS_EPS) / (u + LOSS_EPS)).ln()
}

fn soft_iou_sums(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let (mut i, mut sy, mut sp) = (0.0, 0.0, 0.0);
    for (&p, &y) in pred.iter().zip(target) {
        i += p * y;
        sy += y;
        sp += p;
    }
    (i, sy + sp - i)
}

/// Binary cross-entropy, mean over all pixels. No gradient flows where the
/// prediction is clamped.
pub fn bce_loss<'t>(pred: &Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    check(pred, target)?;
    let p = pred.value();
    let value = bce_value(p.data(), target.data());
    let y = target.clone();
    let dims = pred.dims();
    Ok(pred.tape().op(&[*pred], Tensor::scalar(value), move |g| {
        let scale = g.item() / p.len() as f64;
        let data = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&pv, &yv)| {
                if pv < LOSS_EPS || pv > 1.0 - LOSS_EPS {
                    0.0
                } else {
                    scale * ((1.0 - yv) / (1.0 - pv) - yv / pv)
                }
            })
            .collect();
        vec![Some(Tensor::from_vec(dims, data))]
    }))
}

/// Soft IoU loss per sample, averaged over the batch. A sample with an
/// empty target and an all-zero prediction has loss 0.
pub fn iou_loss<'t>(pred: &Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    check(pred, target)?;
    let p = pred.value();
    let [n, _, h, w] = pred.dims();
    let plane = h * w;
    let mut sums = Vec::with_capacity(n);
    let mut value = 0.0;
    for s in 0..n {
        let r = s * plane..(s + 1) * plane;
        let (i, u) = soft_iou_sums(&p.data()[r.clone()], &target.data()[r]);
        value += -((i + LOSS_EPS) / (u + LOSS_EPS)).ln();
        sums.push((i, u));
    }
    value /= n as f64;
    let y = target.clone();
    let dims = pred.dims();
    Ok(pred.tape().op(&[*pred], Tensor::scalar(value), move |g| {
        let scale = g.item() / n as f64;
        let mut grad = Tensor::zeros(dims);
        for (s, &(i, u)) in sums.iter().enumerate() {
            let (a, b) = (1.0 / (u + LOSS_EPS), 1.0 / (i + LOSS_EPS));
            let r = s * plane..(s + 1) * plane;
            for (gv, &yv) in grad.data_mut()[r.clone()].iter_mut().zip(&y.data()[r]) {
                *gv = scale * ((1.0 - yv) * a - yv * b);
            }
        }
        vec![Some(grad)]
    }))
}

/// Per-sample 1-pixel boundaries of a batch of binary maps.
pub fn boundary_tensor(mask: &Tensor) -> Tensor {
    let [n, c, h, w] = mask.dims();
    assert_eq!(c, 1, "boundaries of single-channel masks only");
    let items: Vec<Tensor> = (0..n)
        .map(|s| boundary_extract(&BinaryMask::from_tensor(mask, s)).to_tensor())
        .collect();
    Tensor::stack(&items).reshape([n, 1, h, w])
}

/// Pixels where the edge loss looks at the prediction: boundaries of the
/// thresholded prediction united with the target edges.
pub fn edge_selection(pred: &Tensor, edge_target: &Tensor) -> Tensor {
    let hard = pred.map(|p| f64::from(u8::from(p >= DEFAULT_THRESHOLD)));
    boundary_tensor(&hard).zip_map(edge_target, |a, b| a.max(b))
}

/// IoU between the prediction restricted to the selected edge pixels and
/// the target edges. The selection itself carries no gradient.
pub fn edge_iou_loss<'t>(pred: &Var<'t>, area_target: &Tensor) -> Result<Var<'t>> {
    check(pred, area_target)?;
    let edge_target = boundary_tensor(area_target);
    let sel = edge_selection(&pred.value(), &edge_target);
    let masked = pred.mul(&pred.tape().constant(sel));
    iou_loss(&masked, &edge_target)
}

/// Loss terms at one supervision point.
pub struct LossTerms<'t> {
    pub area: Var<'t>,
    /// `None` when the mode has no edge term.
    pub edge: Option<Var<'t>>,
    pub total: Var<'t>,
}

impl LossTerms<'_> {
    pub fn values(&self) -> (f64, f64, f64) {
        (
            self.area.value().item(),
            self.edge.map_or(0.0, |e| e.value().item()),
            self.total.value().item(),
        )
    }
}

/// `L_area = BCE + IoU`, `L_edge = IoU(edges)`, `L_total = L_area + L_edge`
/// for [`LossMode::BceIou`]; BCE alone or the two IoU terms for the other
/// modes.
pub fn combined_loss<'t>(pred: &Var<'t>, target: &Tensor, mode: LossMode) -> Result<LossTerms<'t>> {
    check(pred, target)?;
    let (area, edge) = match mode {
        LossMode::Bce => (bce_loss(pred, target)?, None),
        LossMode::Iou => (iou_loss(pred, target)?, Some(edge_iou_loss(pred, target)?)),
        LossMode::BceIou => (
            bce_loss(pred, target)?.add(&iou_loss(pred, target)?),
            Some(edge_iou_loss(pred, target)?),
        ),
    };
    let total = match edge {
        Some(e) => area.add(&e),
        None => area,
    };
    Ok(LossTerms { area, edge, total })
}

/// Max-pools a full-resolution binary target by `factor`: a coarse cell is
/// changed when any covered pixel is.
pub fn downsample_target(target: &Tensor, factor: usize) -> Result<Tensor> {
    let [_, _, h, w] = target.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidInput(format!(
            "{h}×{w} target is not divisible by {factor}"
        )));
    }
    Ok(lrnet_tensor::kernels::max_pool(target, factor).0)
}

/// Deep supervision: the full-resolution target is max-pooled to the deep
/// prediction's resolution, then supervised like the final output.
pub fn e2a_supervise<'t>(deep_pred: &Var<'t>, gt_full: &Tensor, mode: LossMode) -> Result<LossTerms<'t>> {
    let [_, _, h, w] = gt_full.dims();
    let [_, _, dh, dw] = deep_pred.dims();
    if dh == 0 || h % dh != 0 || w % dw != 0 || h / dh != w / dw {
        return Err(Error::InvalidInput(format!(
            "target {h}×{w} does not reduce to deep map {dh}×{dw}"
        )));
    }
    let small = downsample_target(gt_full, h / dh)?;
    combined_loss(deep_pred, &small, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrnet_tensor::gradcheck::check_gradients;
    use lrnet_tensor::init::uniform;
    use lrnet_tensor::Tape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec([1, 1, h, w], v.to_vec())
    }

    fn eval(f: impl for<'a> Fn(&Var<'a>) -> Result<Var<'a>>, p: &Tensor) -> f64 {
        let tape = Tape::new();
        f(&tape.constant(p.clone())).unwrap().value().item()
    }

    #[test]
    fn reference_values() {
        let gt = t(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let half = t(2, 2, &[0.5; 4]);
        assert!((eval(|p| iou_loss(p, &gt), &half) - 3f64.ln()).abs() < 1e-6);
        assert!((eval(|p| bce_loss(p, &gt), &half) - 2f64.ln()).abs() < 1e-9);
        assert!(eval(|p| iou_loss(p, &gt), &gt).abs() < 1e-6);
        assert!(eval(|p| bce_loss(p, &gt), &gt) <= -(1.0 - LOSS_EPS).ln() + 1e-15);
    }

    #[test]
    fn empty_target_convention() {
        let z = t(2, 2, &[0.0; 4]);
        assert_eq!(eval(|p| iou_loss(p, &z), &z), 0.0);
        let small = t(2, 2, &[1e-3; 4]);
        assert!(eval(|p| iou_loss(p, &z), &small) > 0.0);
    }

    #[test]
    fn perfect_prediction_has_bce_floor_only() {
        let mut gt = Tensor::zeros([1, 1, 8, 8]);
        for y in 2..6 {
            for x in 2..6 {
                gt.set(0, 0, y, x, 1.0);
            }
        }
        let tape = Tape::new();
        let p = tape.constant(gt.clone());
        let terms = combined_loss(&p, &gt, LossMode::BceIou).unwrap();
        let (area, edge, total) = terms.values();
        assert!(edge.abs() < 1e-6);
        assert!((total - area).abs() < 1e-6);
        assert!(total < 1e-6);
        let bce_only = combined_loss(&p, &gt, LossMode::Bce).unwrap();
        assert!(bce_only.edge.is_none());
    }

    #[test]
    fn combined_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = Tensor::from_fn([2, 1, 8, 8], |_, _, _, _| f64::from(u8::from(rng.random_bool(0.4))));
        let p = uniform([2, 1, 8, 8], 0.01, 0.99, &mut rng);
        let tape = Tape::new();
        let v = tape.constant(p.clone());
        let (area, edge, total) = combined_loss(&v, &gt, LossMode::BceIou).unwrap().values();
        let bce = bce_value(p.data(), gt.data());
        let iou = (0..2)
            .map(|s| iou_value(p.item_at(s).data(), gt.item_at(s).data()))
            .sum::<f64>()
            / 2.0;
        let et = boundary_tensor(&gt);
        let sel = edge_selection(&p, &et);
        let masked = p.zip_map(&sel, |a, b| a * b);
        let eiou = (0..2)
            .map(|s| iou_value(masked.item_at(s).data(), et.item_at(s).data()))
            .sum::<f64>()
            / 2.0;
        assert!((area - (bce + iou)).abs() < 1e-12);
        assert!((edge - eiou).abs() < 1e-12);
        assert!((total - (bce + iou + eiou)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = Tensor::from_fn([2, 1, 4, 4], |_, _, _, _| f64::from(u8::from(rng.random_bool(0.5))));
        let p = uniform([2, 1, 4, 4], 0.05, 0.95, &mut rng);
        let g1 = gt.clone();
        for cmp in check_gradients(&[p.clone()], 1e-6, move |_, v| bce_loss(&v[0], &g1).unwrap()) {
            assert!(cmp.within(1e-5, 1e-9), "{}", cmp.max_rel_error(1e-9));
        }
        let g2 = gt.clone();
        for cmp in check_gradients(&[p], 1e-6, move |_, v| iou_loss(&v[0], &g2).unwrap()) {
            assert!(cmp.within(1e-5, 1e-9), "{}", cmp.max_rel_error(1e-9));
        }
    }

    #[test]
    fn clamped_pixels_have_no_gradient() {
        let gt = t(1, 2, &[1.0, 0.0]);
        let tape = Tape::new();
        let p = tape.leaf(t(1, 2, &[0.0, 0.5]));
        let g = tape.backward(bce_loss(&p, &gt).unwrap());
        assert_eq!(g.wrt(p).unwrap().data()[0], 0.0);
    }

    #[test]
    fn deep_target_is_any_changed() {
        let mut gt = Tensor::zeros([1, 1, 32, 32]);
        gt.set(0, 0, 17, 3, 1.0);
        let small = downsample_target(&gt, 16).unwrap();
        assert_eq!(small.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(downsample_target(&gt, 5).is_err());
        let tape = Tape::new();
        let deep = tape.constant(Tensor::full([1, 1, 3, 3], 0.5));
        assert!(e2a_supervise(&deep, &gt, LossMode::BceIou).is_err());
    }

    #[test]
    fn deep_supervision_perfect_limit() {
        let mut gt = Tensor::zeros([1, 1, 32, 32]);
        for y in 0..16 {
            for x in 0..10 {
                gt.set(0, 0, y, x, 1.0);
            }
        }
        let tape = Tape::new();
        let deep = tape.constant(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]));
        let (_, edge, total) = e2a_supervise(&deep, &gt, LossMode::BceIou).unwrap().values();
        assert!(edge.abs() < 1e-6 && total < 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(bce_loss(&p, &Tensor::zeros([1, 1, 2, 3])).is_err());
        assert!(iou_loss(&p, &Tensor::zeros([1, 1, 3, 2])).is_err());
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..16).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            let bce = bce_value(&p, &y);
            let iou = iou_value(&p, &y);
            prop_assert!(bce >= 0.0 && iou >= -1e-12);
            let mut idx: Vec<usize> = (0..16).collect();
            idx.reverse();
            idx.swap(3, 9);
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            prop_assert!((bce_value(&pp, &yp) - bce).abs() < 1e-12);
            prop_assert!((iou_value(&pp, &yp) - iou).abs() < 1e-12);
        }
    }
}
