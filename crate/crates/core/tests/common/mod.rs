//! Oracles and helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lrnet::alignment::{fuse_attention, preliminary_attention, C2a};
use lrnet::layers::Ctx;
use lrnet::raster::BinaryMask;
use lrnet::{ModelConfig, TrainConfig};
use lrnet_tensor::{Params, Tape, Tensor, Var};
use rand::Rng;

/// Narrow widths for fast model tests.
pub fn tiny_model() -> ModelConfig {
    ModelConfig::desk().with_widths([2, 2, 4, 4, 4])
}

pub fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        model: tiny_model(),
        ..TrainConfig::desk()
    }
}

pub fn random(dims: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    lrnet_tensor::init::uniform(dims, lo, hi, rng)
}

/// Scalar-loop binary cross-entropy with the same clamp.
pub fn bce_oracle(pred: &[f64], target: &[f64]) -> f64 {
    let eps = 1e-7;
    let mut s = 0.0;
    for i in 0..pred.len() {
        let p = pred[i].max(eps).min(1.0 - eps);
        s -= target[i] * p.ln() + (1.0 - target[i]) * (1.0 - p).ln();
    }
    s / pred.len() as f64
}

/// Soft IoU loss from set sums.
pub fn iou_oracle(pred: &[f64], target: &[f64]) -> f64 {
    let eps = 1e-7;
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_y = 0.0;
    for i in 0..pred.len() {
        inter += pred[i] * target[i];
        sum_p += pred[i];
        sum_y += target[i];
    }
    if sum_y == 0.0 && sum_p == 0.0 {
        return 0.0;
    }
    let union = sum_y + sum_p - inter;
    -((inter + eps) / (union + eps)).ln()
}

/// Alignment coefficient written as a lookup.
pub fn alpha_oracle(sim: f64, c1: bool, c2: bool) -> f64 {
    let t = 0.5;
    if sim > t && c1 && c2 {
        2.0 * sim
    } else if sim > t && !c1 && !c2 {
        1.0 - sim
    } else {
        t
    }
}

/// Mask minus its cross-shaped erosion, with the outside treated as set.
pub fn boundary_oracle(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let at = |y: isize, x: isize| y < 0 || x < 0 || y >= h || x >= w || mask.get(y as usize, x as usize);
    let mut eroded = BinaryMask::zeros(mask.height(), mask.width());
    for y in 0..h {
        for x in 0..w {
            let keep = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .all(|&(dy, dx)| at(y + dy, x + dx));
            eroded.set(y as usize, x as usize, keep);
        }
    }
    BinaryMask::from_fn(mask.height(), mask.width(), |y, x| mask.get(y, x) && !eroded.get(y, x))
}

/// Mean of a scalar-loop `k×k` average pool.
pub fn avg_pool_oracle(t: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = t.dims();
    Tensor::from_fn([n, c, h / k, w / k], |b, ch, y, x| {
        let mut s = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                s += t.at(b, ch, y * k + dy, x * k + dx);
            }
        }
        s / (k * k) as f64
    })
}

/// C2A with a fixed, externally supplied `α`, reduced to a scalar by a
/// weighted sum of the enhanced features.
pub fn c2a_detached<'t>(
    cx: &Ctx<'t, '_>,
    c2a: &C2a,
    inputs: &[Var<'t>],
    alpha: &Tensor,
    pre: Option<&Var<'t>>,
    probe: &Tensor,
) -> Var<'t> {
    let (d1, d2) = c2a
        .original_change_features(cx, inputs[0], inputs[1], inputs[2])
        .expect("shapes");
    let m1 = preliminary_attention(cx, &c2a.att1, d1);
    let m2 = preliminary_attention(cx, &c2a.att2, d2);
    let (_, fin) = fuse_attention(&cx.constant(alpha.clone()), &m1, &m2, pre).expect("shapes");
    inputs[2].mul_spatial(&fin).mul(&cx.constant(probe.clone())).sum()
}

/// Worst relative error between analytic parameter gradients (eval-mode
/// statistics) and central differences, over up to `per_param` elements of
/// every trainable parameter. Returns the error per parameter name.
pub fn param_grad_errors<F>(params: &Params, eps: f64, per_param: usize, f: F) -> BTreeMap<String, f64>
where
    F: for<'t, 'p> Fn(&Ctx<'t, 'p>) -> Var<'t>,
{
    let tape = Tape::new();
    let cx = Ctx::eval_with_grad(&tape, params);
    let out = f(&cx);
    let grads = tape.backward(out);
    let analytic: BTreeMap<_, _> = cx.binder().collect(&grads).into_iter().collect();
    drop(cx);
    let eval = |p: &Params| {
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, p);
        f(&cx).value().item()
    };
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (id, entry) in params.iter() {
        let Some(g) = analytic.get(&id) else { continue };
        let n = entry.value.len();
        let step = (n / per_param).max(1);
        let mut worst: f64 = 0.0;
        for k in (0..n).step_by(step).take(per_param) {
            let orig = entry.value.data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[k] = orig;
            let num = (plus - minus) / (2.0 * eps);
            let a = g.data()[k];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            worst = worst.max(err);
        }
        out.insert(entry.name.clone(), worst);
    }
    out
}
