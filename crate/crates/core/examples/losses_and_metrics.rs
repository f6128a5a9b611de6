//! Loss values on small hand-made maps and the metric report of a stubbed
//! prediction.

use lrnet::loss::{bce_value, combined_loss, iou_value};
use lrnet::metrics::MetricAccumulator;
use lrnet::raster::BinaryMask;
use lrnet::LossMode;
use lrnet_tensor::{Tape, Tensor};

fn main() -> lrnet::Result<()> {
    let target = [1.0, 0.0, 1.0, 0.0];
    let pred = [0.9, 0.2, 0.6, 0.1];
    println!("BCE {:.6}  IoU {:.6}", bce_value(&pred, &target), iou_value(&pred, &target));
    println!("BCE at 1/3 for a positive: {:.6} (ln 3 = {:.6})", bce_value(&[1.0 / 3.0], &[1.0]), 3f64.ln());

    let gt = BinaryMask::from_fn(32, 32, |y, x| (8..24).contains(&y) && (8..24).contains(&x));
    let tape = Tape::new();
    let p = tape.leaf(Tensor::from_fn([1, 1, 32, 32], |_, _, y, x| if gt.get(y, x) { 0.8 } else { 0.1 }));
    for mode in [LossMode::Bce, LossMode::Iou, LossMode::BceIou] {
        let (area, edge, total) = combined_loss(&p, &gt.to_tensor(), mode)?.values();
        println!("{mode:>8}: area {area:.5}  edge {edge:.5}  total {total:.5}");
    }

    let shifted = BinaryMask::from_fn(32, 32, |y, x| (10..26).contains(&y) && (8..24).contains(&x));
    let mut acc = MetricAccumulator::default();
    acc.add(&shifted, &gt)?;
    acc.add(&gt, &gt)?;
    let report = acc.report();
    println!("{}", report.to_csv());
    println!("{}", report.to_json()?);
    Ok(())
}
