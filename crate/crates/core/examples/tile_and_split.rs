//! Tiles a small generated source scene and splits the tiles.

use image::{GrayImage, Luma, Rgb, RgbImage};
use lrnet::data::{split_dataset, tile_dataset, tile_grid, PadPolicy, SplitSpec};

fn main() -> lrnet::Result<()> {
    let src = tempfile::tempdir().expect("temp dir");
    let out = tempfile::tempdir().expect("temp dir");
    for d in ["A", "B", "label"] {
        std::fs::create_dir_all(src.path().join(d)).expect("create dir");
    }
    for (i, (w, h)) in [(700u32, 300u32), (512, 512)].into_iter().enumerate() {
        let name = format!("scene{i}.png");
        RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 90]))
            .save(src.path().join("A").join(&name))
            .expect("write");
        RgbImage::from_fn(w, h, |x, y| Rgb([(y % 256) as u8, (x % 256) as u8, 90]))
            .save(src.path().join("B").join(&name))
            .expect("write");
        GrayImage::from_fn(w, h, |x, _| Luma([if x > w / 2 { 255 } else { 0 }]))
            .save(src.path().join("label").join(&name))
            .expect("write");
    }
    println!("700x300 at 256: {:?} tiles (ceil), {:?} (floor)", tile_grid(300, 700, 256, PadPolicy::Ceil), tile_grid(300, 700, 256, PadPolicy::Floor));
    println!("LEVIR scenes: 637 x {} = {}", 16, 637 * 16);
    let (r, c) = tile_grid(32_507, 15_354, 256, PadPolicy::Ceil);
    println!("WHU scene: {r} x {c} = {}", r * c);

    let report = tile_dataset(src.path(), out.path(), 256, PadPolicy::Ceil)?;
    println!("tiled {} pairs, {} errors", report.manifest.len(), report.errors.len());
    let split = split_dataset(&report.manifest, SplitSpec::Ratios([0.8, 0.1, 0.1]), 42)?;
    println!("train/val/test: {:?}", split.split_counts());
    for r in split.records.iter().take(4) {
        println!("  {} -> {:?}", r.id, r.split);
    }
    Ok(())
}
