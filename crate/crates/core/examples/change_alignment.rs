//! The alignment coefficient table, map fusion, and hierarchical
//! propagation of final attention maps across levels.

use lrnet::alignment::{
    alignment_coefficient, alignment_coefficients, change_flags, fuse_attention_maps, hca_propagate_maps,
    pixel_cosine_similarity, FLAG_THRESHOLD,
};
use lrnet_tensor::Tensor;

fn main() -> lrnet::Result<()> {
    let t = 0.5;
    println!("alpha(sim, flag1, flag2), T = {t}");
    for sim in [-0.5, 0.3, 0.5, 0.8] {
        let row: Vec<String> = [(true, true), (false, false), (true, false)]
            .iter()
            .map(|&(a, b)| format!("{:.2}", alignment_coefficient(sim, a, b, t)))
            .collect();
        println!("  sim {sim:>5}: chg/chg {}  unchg/unchg {}  mixed {}", row[0], row[1], row[2]);
    }

    let d1 = Tensor::from_vec([1, 2, 2, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let d2 = Tensor::from_vec([1, 2, 2, 2], vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    let sim = pixel_cosine_similarity(&d1, &d2)?;
    let m1 = Tensor::from_vec([1, 1, 2, 2], vec![0.9, 0.2, 0.7, 0.1]);
    let m2 = Tensor::from_vec([1, 1, 2, 2], vec![0.8, 0.3, 0.2, 0.4]);
    let alpha = alignment_coefficients(&sim, &change_flags(&m1)?, &change_flags(&m2)?, t)?;
    let (cur, fin) = fuse_attention_maps(&alpha, &m1, &m2, None)?;
    println!("flag threshold {FLAG_THRESHOLD}");
    println!("similarity {:?}", sim.data());
    println!("alpha      {:?}", alpha.data());
    println!("current    {:?}", cur.data());
    println!("final      {:?}", fin.data());

    let finals: Vec<Tensor> = (0..4)
        .map(|j| Tensor::from_fn([1, 1, 16 >> j, 16 >> j], |_, _, y, x| ((y + x) % 3) as f64 * 0.5))
        .collect();
    for level in 2..=5 {
        let pre = hca_propagate_maps(&finals, level)?;
        println!("level {level}: propagated map {:?}, mean {:.4}", pre.dims(), pre.data().iter().sum::<f64>() / pre.len() as f64);
    }
    Ok(())
}
