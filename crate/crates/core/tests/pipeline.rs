use std::path::Path;
use std::process::Command;

use image::{GrayImage, Luma, Rgb, RgbImage};
use lrnet::data::{
    load_sample, load_split, split_dataset, synth_generate, synth_samples, tile_dataset, DatasetManifest,
    PadPolicy, SampleRecord, Split, SplitSpec, SynthConfig,
};
use lrnet::raster::ImageTile;
use sha2::{Digest, Sha256};

fn write_source(root: &Path, name: &str, w: u32, h: u32) {
    for d in ["A", "B", "label"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    let file = format!("{name}.png");
    RgbImage::from_fn(w, h, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, ((x + y) % 7) as u8]))
        .save(root.join("A").join(&file))
        .unwrap();
    RgbImage::from_fn(w, h, |x, y| Rgb([(y % 251) as u8, (x % 241) as u8, 3]))
        .save(root.join("B").join(&file))
        .unwrap();
    GrayImage::from_fn(w, h, |x, y| Luma([if (x / 50 + y / 50) % 2 == 0 { 255 } else { 0 }]))
        .save(root.join("label").join(&file))
        .unwrap();
}

#[test]
fn ceil_padding_tiles_and_reassembles() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_source(src.path(), "scene", 700, 300);
    let report = tile_dataset(src.path(), out.path(), 256, PadPolicy::Ceil).unwrap();
    assert_eq!(report.manifest.len(), 6);
    assert!(report.errors.is_empty());
    let rec = report.manifest.records.iter().find(|r| r.id == "scene_r1_c2").unwrap();
    let s = load_sample(&report.manifest, rec).unwrap();
    // Bottom-right tile: 300 − 256 = 44 rows and 700 − 512 = 188 columns of data.
    assert_eq!(s.t1.get(43, 187, 2), ((512 + 187 + 256 + 43) % 7) as f64 / 255.0);
    assert_eq!(s.t1.get(44, 0, 0), 0.0);
    assert_eq!(s.t1.get(0, 188, 1), 0.0);

    let floor = tile_dataset(src.path(), tempfile::tempdir().unwrap().path(), 256, PadPolicy::Floor).unwrap();
    assert_eq!(floor.manifest.len(), 2);
}

#[test]
fn exact_tile_is_identical_to_source() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_source(src.path(), "one", 256, 256);
    let report = tile_dataset(src.path(), out.path(), 256, PadPolicy::Ceil).unwrap();
    assert_eq!(report.manifest.len(), 1);
    let tile = ImageTile::load_png(&out.path().join("A/one_r0_c0.png")).unwrap();
    assert_eq!(tile, ImageTile::load_png(&src.path().join("A/one.png")).unwrap());
}

#[test]
fn broken_sources_are_reported_and_skipped() {
    let src = tempfile::tempdir().unwrap();
    write_source(src.path(), "good", 256, 256);
    write_source(src.path(), "bad", 256, 256);
    RgbImage::new(128, 128).save(src.path().join("B/bad.png")).unwrap();
    RgbImage::new(64, 64).save(src.path().join("A/orphan.png")).unwrap();
    let report = tile_dataset(src.path(), tempfile::tempdir().unwrap().path(), 256, PadPolicy::Ceil).unwrap();
    assert_eq!(report.manifest.len(), 1);
    let names: Vec<&str> = report.errors.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["bad", "orphan"]);
}

fn stub_manifest(n: usize) -> DatasetManifest {
    let mut m = DatasetManifest::new("stub", "stub", 256);
    m.records = (0..n).map(|i| SampleRecord::standard(&format!("t{i:05}"))).collect();
    m
}

#[test]
fn paper_splits_on_full_size_stubs() {
    let levir = split_dataset(&stub_manifest(10_192), SplitSpec::Counts([7120, 1024, 2048]), 0).unwrap();
    assert_eq!(levir.split_counts(), [7120, 1024, 2048]);
    let whu = split_dataset(&stub_manifest(7620), SplitSpec::Counts([6096, 762, 762]), 0).unwrap();
    assert_eq!(whu.split_counts(), [6096, 762, 762]);
    let ratios = split_dataset(&stub_manifest(7620), SplitSpec::Ratios([0.8, 0.1, 0.1]), 0).unwrap();
    assert_eq!(ratios.split_counts(), [6096, 762, 762]);
    assert!(split_dataset(&stub_manifest(10), SplitSpec::Counts([5, 5, 1]), 0).is_err());
    assert!(split_dataset(&stub_manifest(10), SplitSpec::Ratios([0.5, 0.2, 0.2]), 0).is_err());
}

#[test]
fn split_is_seeded_and_disjoint() {
    let m = stub_manifest(500);
    let spec = SplitSpec::Counts([400, 50, 50]);
    let a = split_dataset(&m, spec, 9).unwrap();
    assert_eq!(a, split_dataset(&m, spec, 9).unwrap());
    assert_ne!(a, split_dataset(&m, spec, 10).unwrap());
    assert!(a.records.iter().all(|r| r.split.is_some()));
    a.validate(false).unwrap();
}

#[test]
fn manifest_round_trip_from_another_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        pairs: 6,
        tile_size: 32,
        ..SynthConfig::default()
    };
    let m = synth_generate(&cfg, &dir.path().join("data")).unwrap();
    let m = split_dataset(&m, SplitSpec::Counts([4, 1, 1]), 0).unwrap();
    let elsewhere = dir.path().join("meta/split.json");
    std::fs::create_dir_all(elsewhere.parent().unwrap()).unwrap();
    m.save(Some(&elsewhere)).unwrap();
    let back = DatasetManifest::load(&elsewhere).unwrap();
    back.validate(true).unwrap();
    let train = load_split(&back, Split::Train).unwrap();
    assert_eq!(train.len(), 4);
    let direct = synth_samples(&cfg).unwrap();
    for s in &train {
        let d = direct.iter().find(|d| d.id == s.id).unwrap();
        assert_eq!(s.label, d.label);
        assert!(s.t1.data().iter().zip(d.t1.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0));
    }
}

#[test]
fn fixture_decode_is_checksum_stable() {
    let dir = tempfile::tempdir().unwrap();
    write_source(dir.path(), "fx", 40, 24);
    let tile = ImageTile::load_png(&dir.path().join("A/fx.png")).unwrap();
    assert_eq!((tile.height(), tile.width(), tile.channels()), (24, 40, 3));
    for y in 0..24 {
        for x in 0..40 {
            assert_eq!(tile.get(y, x, 0), (x % 251) as f64 / 255.0);
            assert_eq!(tile.get(y, x, 2), ((x + y) % 7) as f64 / 255.0);
        }
    }
    let mut h = Sha256::new();
    for v in tile.data() {
        h.update(v.to_le_bytes());
    }
    let digest: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, FIXTURE_DIGEST);
}

const FIXTURE_DIGEST: &str = "dce31e56aaebc1b193471845a226259810817e878e3f87cd576dd0fcda948bf3";

#[test]
fn cli_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_lrnet");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
    };
    std::fs::write(dir.path().join("synth.cfg"), "pairs = 6\ntile_size = 32\n").unwrap();
    let (ok, _, err) = run(&["synth", "--config", "synth.cfg", "--out", "data", "--counts", "4,1,1"]);
    assert!(ok, "{err}");
    std::fs::write(
        dir.path().join("train.cfg"),
        "manifest = data/manifest.json\nepochs = 1\nbatch_size = 2\nwidths = 2,2,4,4,4\ncheckpoint_dir = ck\n",
    )
    .unwrap();
    let (ok, _, err) = run(&["train", "--preset", "desk", "--config", "train.cfg"]);
    assert!(ok, "{err}");
    let (ok, out, err) = run(&["eval", "--ckpt", "ck/last.ckpt", "--split", "test", "--out", "rep"]);
    assert!(ok, "{err}");
    assert!(out.contains("\"F1_Edge\""));
    assert!(dir.path().join("rep/report_test.csv").is_file());
    let (ok, _, err) = run(&[
        "predict", "--ckpt", "ck/best.ckpt", "--t1", "data/A/synth_0000.png", "--t2", "data/B/synth_0000.png",
        "--label", "data/label/synth_0000.png", "--out", "pred",
    ]);
    assert!(ok, "{err}");
    for f in ["probability.png", "mask.png", "edge.png", "overlay.png"] {
        assert!(dir.path().join("pred").join(f).is_file(), "{f}");
    }
    let (ok, out, err) = run(&["split", "--manifest", "data/manifest.json", "--ratios", "0.5,0.5,0", "--seed", "3", "--out", "half.json"]);
    assert!(ok, "{err}");
    assert!(out.starts_with("train 3, val 3, test 0"));
    let (ok, _, err) = run(&["split", "--manifest", "data/manifest.json", "--counts", "1,1"]);
    assert!(!ok && err.contains("three"));
    let (ok, _, _) = run(&["tile", "--src", "missing", "--out", "t"]);
    assert!(!ok);
}
