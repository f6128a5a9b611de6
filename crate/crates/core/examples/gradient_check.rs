//! Compares analytic and finite-difference gradients of the losses and the
//! learnable pooling layer.

use lrnet::encoder::{lop_forward, lop_init};
use lrnet::loss::{bce_loss, iou_loss};
use lrnet_tensor::gradcheck::check_gradients;
use lrnet_tensor::init::uniform;
use lrnet_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = uniform([2, 1, 4, 4], 0.05, 0.95, &mut rng);
    let target = Tensor::from_fn([2, 1, 4, 4], |_, _, y, x| ((y + x) % 2) as f64);
    let bce = check_gradients(&[pred.clone()], 1e-6, |_, v| bce_loss(&v[0], &target).expect("shapes"));
    let iou = check_gradients(&[pred], 1e-6, |_, v| iou_loss(&v[0], &target).expect("shapes"));
    println!("BCE max relative error {:.2e}", bce[0].max_rel_error(1e-8));
    println!("IoU max relative error {:.2e}", iou[0].max_rel_error(1e-8));

    let x = uniform([1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let (w, b) = lop_init(3);
    let w = w.zip_map(&uniform([1, 3, 2, 2], -0.1, 0.1, &mut rng), |a, d| a + d);
    let lop = check_gradients(&[x, w, b], 1e-6, |_, v| {
        lop_forward(&v[0], &v[1], &v[2]).expect("shapes").mul(&v[0].avg_pool(2)).sum()
    });
    for (name, c) in ["input", "weight", "bias"].iter().zip(&lop) {
        println!("LOP {name:>6}: max relative error {:.2e}", c.max_rel_error(1e-8));
    }
}
