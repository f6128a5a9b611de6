//! Difference image of a pair, thresholded change mask and its 1-pixel
//! boundary, printed as ASCII.

use lrnet::raster::{binarize, boundary_extract, difference_image, BinaryMask, ImageTile, ProbabilityMap};

fn show(mask: &BinaryMask) {
    for y in 0..mask.height() {
        let row: String = (0..mask.width()).map(|x| if mask.get(y, x) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn main() -> lrnet::Result<()> {
    let t1 = ImageTile::from_fn(12, 16, 3, |_, _, c| 0.2 + 0.1 * c as f64);
    let t2 = ImageTile::from_fn(12, 16, 3, |y, x, c| {
        if (3..9).contains(&y) && (4..12).contains(&x) {
            0.9
        } else {
            0.2 + 0.1 * c as f64
        }
    });
    let diff = difference_image(&t1, &t2)?;
    let d = diff.as_tile();
    let mean: Vec<f64> = (0..12 * 16)
        .map(|i| (0..3).map(|c| d.get(i / 16, i % 16, c)).sum::<f64>() / 3.0)
        .collect();
    let mask = binarize(&ProbabilityMap::new(12, 16, mean)?, 0.5)?;
    println!("changed area ({} pixels):", mask.count_ones());
    show(&mask);
    let edge = boundary_extract(&mask);
    println!("boundary ({} pixels):", edge.count_ones());
    show(&edge);
    Ok(())
}
