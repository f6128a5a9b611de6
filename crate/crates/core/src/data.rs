//! Dataset tiling, splitting, loading, normalisation and a synthetic
//! bi-temporal generator.
//!
//! Datasets live on disk as `root/{A,B,label}/<id>.png` with a JSON manifest
//! whose record paths are relative to `root`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GenericImageView, ImageBuffer, Pixel};
use lrnet_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_key_values, NormalizeMode};
use crate::error::{Error, Result};
use crate::raster::{difference_image, BinaryMask, ImageTile};

/// Per-channel mean of the ImageNet-pretrained backbone inputs.
pub const BACKBONE_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel standard deviation of the ImageNet-pretrained backbone inputs.
pub const BACKBONE_STD: [f64; 3] = [0.229, 0.224, 0.225];

pub const DIR_T1: &str = "A";
pub const DIR_T2: &str = "B";
pub const DIR_LABEL: &str = "label";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path_t1: PathBuf,
    pub path_t2: PathBuf,
    pub path_label: PathBuf,
    /// `None` until the manifest is split.
    pub split: Option<Split>,
}

impl SampleRecord {
    /// Record for `<id>.png` in the standard layout.
    pub fn standard(id: &str) -> Self {
        let file = format!("{id}.png");
        Self {
            id: id.to_owned(),
            path_t1: Path::new(DIR_T1).join(&file),
            path_t2: Path::new(DIR_T2).join(&file),
            path_label: Path::new(DIR_LABEL).join(&file),
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    pub source: String,
    pub tile_size: usize,
    pub split_seed: Option<u64>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, source: &str, tile_size: usize) -> Self {
        Self {
            root: root.into(),
            source: source.to_owned(),
            tile_size,
            split_seed: None,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn split_counts(&self) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| self.split(s).count())
    }

    /// Writes `root/manifest.json` (or `path` when given). The stored root is
    /// relative to the file's directory when it lies inside it, absolute
    /// otherwise.
    pub fn save(&self, path: Option<&Path>) -> Result<PathBuf> {
        let path = path.map_or_else(|| self.root.join(MANIFEST_FILE), Path::to_path_buf);
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let dir = abs(path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
        let root = abs(&self.root)?;
        let stored = match root.strip_prefix(&dir) {
            Ok(rel) if rel.as_os_str().is_empty() => PathBuf::from("."),
            Ok(rel) => rel.to_path_buf(),
            Err(_) => root,
        };
        let text = serde_json::to_string_pretty(&Self {
            root: stored,
            ..self.clone()
        })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a manifest; a relative `root` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            m.root = base.join(&m.root);
        }
        Ok(m)
    }

    /// Checks split disjointness (by id) and, optionally, that every file
    /// exists.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(&r.id) {
                return Err(Error::InvalidInput(format!("duplicate sample id {}", r.id)));
            }
            if check_files {
                for p in [&r.path_t1, &r.path_t2, &r.path_label] {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        return Err(Error::InvalidInput(format!(
                            "missing file {}",
                            full.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// What to do with the remainder when an image is not a multiple of the
/// tile size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadPolicy {
    /// Zero-pad bottom/right to the next multiple.
    Ceil,
    /// Drop the remainder.
    Floor,
}

impl std::str::FromStr for PadPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ceil" => Ok(PadPolicy::Ceil),
            "floor" => Ok(PadPolicy::Floor),
            other => Err(Error::InvalidInput(format!("unknown pad policy {other:?}"))),
        }
    }
}

/// Tile rows and columns for an `height × width` image.
pub fn tile_grid(height: usize, width: usize, tile: usize, pad: PadPolicy) -> (usize, usize) {
    assert!(tile > 0, "tile size must be positive");
    match pad {
        PadPolicy::Ceil => (height.div_ceil(tile), width.div_ceil(tile)),
        PadPolicy::Floor => (height / tile, width / tile),
    }
}

/// Cuts an image into non-overlapping tiles in row-major order. Pixels past
/// the image edge are zero.
pub fn tile_image<P, I>(img: &I, tile: usize, pad: PadPolicy) -> Vec<ImageBuffer<P, Vec<P::Subpixel>>>
where
    P: Pixel,
    I: GenericImageView<Pixel = P>,
{
    let (w, h) = img.dimensions();
    let (rows, cols) = tile_grid(h as usize, w as usize, tile, pad);
    let t = tile as u32;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as u32 {
        for c in 0..cols as u32 {
            let mut buf = ImageBuffer::<P, Vec<P::Subpixel>>::new(t, t);
            for y in 0..t {
                for x in 0..t {
                    let (sx, sy) = (c * t + x, r * t + y);
                    if sx < w && sy < h {
                        buf.put_pixel(x, y, img.get_pixel(sx, sy));
                    }
                }
            }
            out.push(buf);
        }
    }
    out
}

/// Inverse of [`tile_image`]: reassembles tiles and crops to `width × height`.
pub fn untile<P: Pixel>(
    tiles: &[ImageBuffer<P, Vec<P::Subpixel>>],
    width: u32,
    height: u32,
    tile: usize,
    pad: PadPolicy,
) -> ImageBuffer<P, Vec<P::Subpixel>> {
    let (_, cols) = tile_grid(height as usize, width as usize, tile, pad);
    let t = tile as u32;
    let mut out = ImageBuffer::<P, Vec<P::Subpixel>>::new(width, height);
    for (i, tb) in tiles.iter().enumerate() {
        let (r, c) = ((i / cols) as u32, (i % cols) as u32);
        for y in 0..t {
            for x in 0..t {
                let (dx, dy) = (c * t + x, r * t + y);
                if dx < width && dy < height {
                    out.put_pixel(dx, dy, *tb.get_pixel(x, y));
                }
            }
        }
    }
    out
}

/// Outcome of [`tile_dataset`]: the manifest plus per-file problems that
/// were skipped.
#[derive(Debug)]
pub struct TilingReport {
    pub manifest: DatasetManifest,
    pub errors: Vec<(String, String)>,
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    Ok(stems)
}

fn tile_one(src: &Path, out: &Path, stem: &str, tile: usize, pad: PadPolicy) -> Result<Vec<String>> {
    let file = format!("{stem}.png");
    let open = |dir: &str| {
        let p = src.join(dir).join(&file);
        image::open(&p).map_err(|e| Error::image(&p, e))
    };
    let (a, b, l) = (open(DIR_T1)?.to_rgb8(), open(DIR_T2)?.to_rgb8(), open(DIR_LABEL)?.to_luma8());
    if a.dimensions() != b.dimensions() || a.dimensions() != l.dimensions() {
        return Err(Error::Shape(format!(
            "{stem}: T1 {:?}, T2 {:?}, label {:?}",
            a.dimensions(),
            b.dimensions(),
            l.dimensions()
        )));
    }
    let (_, cols) = tile_grid(a.height() as usize, a.width() as usize, tile, pad);
    let ta = tile_image(&a, tile, pad);
    let tb = tile_image(&b, tile, pad);
    let tl = tile_image(&l, tile, pad);
    let mut ids = Vec::with_capacity(ta.len());
    for (i, ((x, y), z)) in ta.iter().zip(&tb).zip(&tl).enumerate() {
        let id = format!("{stem}_r{}_c{}", i / cols, i % cols);
        let name = format!("{id}.png");
        for (dir, res) in [
            (DIR_T1, x.save(out.join(DIR_T1).join(&name))),
            (DIR_T2, y.save(out.join(DIR_T2).join(&name))),
            (DIR_LABEL, z.save(out.join(DIR_LABEL).join(&name))),
        ] {
            res.map_err(|e| Error::image(out.join(dir).join(&name), e))?;
        }
        ids.push(id);
    }
    Ok(ids)
}

fn create_layout(root: &Path) -> Result<()> {
    for d in [DIR_T1, DIR_T2, DIR_LABEL] {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Tiles every `src/{A,B,label}/<name>.png` triplet into `out`. Problems
/// with one source (missing member, size mismatch, decode failure) are
/// reported and the run continues.
pub fn tile_dataset(src: &Path, out: &Path, tile: usize, pad: PadPolicy) -> Result<TilingReport> {
    if tile == 0 {
        return Err(Error::InvalidInput("tile size must be positive".into()));
    }
    create_layout(out)?;
    let mut manifest = DatasetManifest::new(out, &src.display().to_string(), tile);
    let mut errors = Vec::new();
    let b: HashSet<_> = png_stems(&src.join(DIR_T2))?.into_iter().collect();
    let l: HashSet<_> = png_stems(&src.join(DIR_LABEL))?.into_iter().collect();
    for stem in png_stems(&src.join(DIR_T1))? {
        if !b.contains(&stem) || !l.contains(&stem) {
            errors.push((stem, "missing T2 or label".to_owned()));
            continue;
        }
        match tile_one(src, out, &stem, tile, pad) {
            Ok(ids) => manifest
                .records
                .extend(ids.iter().map(|id| SampleRecord::standard(id))),
            Err(e) => {
                log::warn!("skipping {stem}: {e}");
                errors.push((stem, e.to_string()));
            }
        }
    }
    Ok(TilingReport { manifest, errors })
}

/// Explicit split sizes or fractions, in train/val/test order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    Counts([usize; 3]),
    Ratios([f64; 3]),
}

impl SplitSpec {
    /// Sizes for `n` records. Ratios round train and val to the nearest
    /// integer; test takes the rest.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        match *self {
            SplitSpec::Counts(c) => {
                if c.iter().sum::<usize>() != n {
                    return Err(Error::InvalidInput(format!(
                        "split counts {c:?} do not sum to {n}"
                    )));
                }
                Ok(c)
            }
            SplitSpec::Ratios(r) => {
                if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "split ratios {r:?} must be nonnegative and sum to 1"
                    )));
                }
                let train = (n as f64 * r[0]).round() as usize;
                let val = (n as f64 * r[1]).round() as usize;
                if train + val > n {
                    return Err(Error::InvalidInput("split ratios overflow".into()));
                }
                Ok([train, val, n - train - val])
            }
        }
    }
}

/// Seeded shuffle, then contiguous train/val/test assignment.
pub fn split_dataset(manifest: &DatasetManifest, spec: SplitSpec, seed: u64) -> Result<DatasetManifest> {
    let [train, val, _] = spec.sizes(manifest.len())?;
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (pos, &i) in order.iter().enumerate() {
        out.records[i].split = Some(if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        });
    }
    out.split_seed = Some(seed);
    Ok(out)
}

/// A decoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub t1: ImageTile,
    pub t2: ImageTile,
    pub label: BinaryMask,
}

/// Decodes one record; labels are binarised at 128.
pub fn load_sample(manifest: &DatasetManifest, record: &SampleRecord) -> Result<Sample> {
    let t1 = ImageTile::load_png(&manifest.resolve(&record.path_t1))?;
    let t2 = ImageTile::load_png(&manifest.resolve(&record.path_t2))?;
    let label = BinaryMask::load_png(&manifest.resolve(&record.path_label))?;
    if !t1.same_shape(&t2) || t1.height() != label.height() || t1.width() != label.width() {
        return Err(Error::Shape(format!("sample {} members differ in size", record.id)));
    }
    Ok(Sample {
        id: record.id.clone(),
        t1,
        t2,
        label,
    })
}

/// Loads every record of a split.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest.split(split).map(|r| load_sample(manifest, r)).collect()
}

/// `[1, C, H, W]` tensor of a tile, standardised with the backbone
/// statistics in [`NormalizeMode::Backbone`].
pub fn normalize(tile: &ImageTile, mode: NormalizeMode) -> Result<Tensor> {
    let mut t = tile.to_tensor();
    if mode == NormalizeMode::Backbone {
        if tile.channels() != 3 {
            return Err(Error::InvalidInput(format!(
                "backbone standardisation needs 3 channels, got {}",
                tile.channels()
            )));
        }
        for c in 0..3 {
            for v in t.plane_slice_mut(0, c) {
                *v = (*v - BACKBONE_MEAN[c]) / BACKBONE_STD[c];
            }
        }
    }
    Ok(t)
}

/// Network inputs for a batch of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub t1: Tensor,
    pub t2: Tensor,
    /// Difference of the unnormalised images.
    pub diff: Tensor,
    /// `[N, 1, H, W]` of zeros and ones.
    pub label: Tensor,
}

pub fn make_batch(samples: &[&Sample], mode: NormalizeMode) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut t1 = Vec::with_capacity(samples.len());
    let mut t2 = Vec::with_capacity(samples.len());
    let mut diff = Vec::with_capacity(samples.len());
    let mut label = Vec::with_capacity(samples.len());
    for s in samples {
        t1.push(normalize(&s.t1, mode)?);
        t2.push(normalize(&s.t2, mode)?);
        diff.push(difference_image(&s.t1, &s.t2)?.as_tile().to_tensor());
        label.push(s.label.to_tensor());
    }
    let same = t1.iter().all(|t| t.dims() == t1[0].dims());
    if !same {
        return Err(Error::Shape("batch samples differ in size".into()));
    }
    Ok(Batch {
        t1: Tensor::stack(&t1),
        t2: Tensor::stack(&t2),
        diff: Tensor::stack(&diff),
        label: Tensor::stack(&label),
    })
}

/// Synthetic dataset settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tile_size: usize,
    pub pairs: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Bound on the per-channel global intensity shift of `T2`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tile_size: 64,
            pairs: 8,
            min_shapes: 1,
            max_shapes: 3,
            jitter: 0.05,
            seed: 0,
        }
    }
}

/// Background intensities stay within this range before jitter.
const BG_RANGE: (f64, f64) = (0.3, 0.6);
const TEXTURE_AMPLITUDE: f64 = 0.04;
/// Lowest channel value of a shape colour.
const SHAPE_FLOOR: f64 = 0.85;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.tile_size % 16 != 0 {
            return Err(Error::Config(format!(
                "synthetic tile size {} is not a positive multiple of 16",
                self.tile_size
            )));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("min_shapes exceeds max_shapes".into()));
        }
        let margin = SHAPE_FLOOR - (BG_RANGE.1 + TEXTURE_AMPLITUDE);
        if !(self.jitter >= 0.0 && 2.0 * self.jitter < margin) {
            return Err(Error::Config(format!(
                "jitter must lie in [0, {:.3})",
                margin / 2.0
            )));
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            let bad = || Error::Config(format!("bad value {v:?} for {k}"));
            match k.as_str() {
                "tile_size" => cfg.tile_size = v.parse().map_err(|_| bad())?,
                "pairs" => cfg.pairs = v.parse().map_err(|_| bad())?,
                "min_shapes" => cfg.min_shapes = v.parse().map_err(|_| bad())?,
                "max_shapes" => cfg.max_shapes = v.parse().map_err(|_| bad())?,
                "jitter" => cfg.jitter = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Axis-aligned rectangle or inscribed ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
    pub ellipse: bool,
}

impl Shape {
    pub fn contains(&self, py: usize, px: usize) -> bool {
        if py < self.y || px < self.x || py >= self.y + self.h || px >= self.x + self.w {
            return false;
        }
        if !self.ellipse {
            return true;
        }
        let dy = (py - self.y) as f64 + 0.5 - self.h as f64 / 2.0;
        let dx = (px - self.x) as f64 + 0.5 - self.w as f64 / 2.0;
        let (ry, rx) = (self.h as f64 / 2.0, self.w as f64 / 2.0);
        (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
    }

    /// Overlap of the bounding boxes grown by `gap` pixels.
    fn near(&self, o: &Shape, gap: usize) -> bool {
        self.y < o.y + o.h + gap && o.y < self.y + self.h + gap && self.x < o.x + o.w + gap && o.x < self.x + self.w + gap
    }
}

/// Textured background: a per-channel base level plus low-frequency waves.
fn background<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(BG_RANGE.0..=BG_RANGE.1 - TEXTURE_AMPLITUDE));
    let fy: f64 = rng.random_range(1.0..4.0);
    let fx: f64 = rng.random_range(1.0..4.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut data = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let t = std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) / size as f64 + phase;
            let wave = 0.5 * (1.0 + t.sin()) * TEXTURE_AMPLITUDE;
            for c in 0..3 {
                data[(y * size + x) * 3 + c] = base[c] + wave;
            }
        }
    }
    data
}

/// Places `count` shapes with at least a one-pixel gap between them; gives
/// up on a shape after a bounded number of attempts.
fn place_shapes<R: Rng + ?Sized>(size: usize, count: usize, rng: &mut R) -> Vec<Shape> {
    let (lo, hi) = ((size / 8).max(2), (size / 3).max(3));
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..50 {
            let h = rng.random_range(lo..=hi);
            let w = rng.random_range(lo..=hi);
            let s = Shape {
                y: rng.random_range(0..=size - h),
                x: rng.random_range(0..=size - w),
                h,
                w,
                ellipse: rng.random_bool(0.5),
            };
            if shapes.iter().all(|o| !s.near(o, 1)) {
                shapes.push(s);
                break;
            }
        }
    }
    shapes
}

/// A generated pair plus the shapes and jitter behind it.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub t1: ImageTile,
    pub t2: ImageTile,
    pub label: BinaryMask,
    pub shapes: Vec<(Shape, bool)>,
    pub jitter: [f64; 3],
}

/// One pair: each shape is either added in `T2` or removed from `T1`
/// (present only in `T1`); `T2` then gets a global per-channel shift.
pub fn synth_pair<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> SynthPair {
    let n = cfg.tile_size;
    let bg = background(n, rng);
    let k = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    let shapes: Vec<(Shape, bool)> = place_shapes(n, k, rng)
        .into_iter()
        .map(|s| (s, rng.random_bool(0.5)))
        .collect();
    let colours: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| std::array::from_fn(|_| rng.random_range(SHAPE_FLOOR..=1.0)))
        .collect();
    let jitter: [f64; 3] = std::array::from_fn(|_| {
        if cfg.jitter > 0.0 {
            rng.random_range(-cfg.jitter..=cfg.jitter)
        } else {
            0.0
        }
    });
    let mut a = bg.clone();
    let mut b = bg;
    let mut label = BinaryMask::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            for ((s, added), col) in shapes.iter().zip(&colours) {
                if s.contains(y, x) {
                    label.set(y, x, true);
                    let target = if *added { &mut b } else { &mut a };
                    target[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(col);
                }
            }
        }
    }
    for (i, v) in b.iter_mut().enumerate() {
        *v = (*v + jitter[i % 3]).clamp(0.0, 1.0);
    }
    let tile = |d: Vec<f64>| ImageTile::new(n, n, 3, d).expect("synthetic values lie in [0, 1]");
    SynthPair {
        t1: tile(a),
        t2: tile(b),
        label,
        shapes,
        jitter,
    }
}

/// All pairs of a configuration, in memory.
pub fn synth_samples(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.pairs)
        .map(|i| {
            let p = synth_pair(cfg, &mut rng);
            Sample {
                id: format!("synth_{i:04}"),
                t1: p.t1,
                t2: p.t2,
                label: p.label,
            }
        })
        .collect())
}

/// Writes the synthetic dataset to `out` in the standard layout and returns
/// its (unsplit) manifest, which is also saved.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    let samples = synth_samples(cfg)?;
    create_layout(out)?;
    let mut manifest = DatasetManifest::new(out, "synthetic", cfg.tile_size);
    for s in samples {
        let rec = SampleRecord::standard(&s.id);
        s.t1.save_png(&out.join(&rec.path_t1))?;
        s.t2.save_png(&out.join(&rec.path_t2))?;
        s.label.save_png(&out.join(&rec.path_label))?;
        manifest.records.push(rec);
    }
    manifest.save(None)?;
    Ok(manifest)
}

/// Assigns every record of a manifest to one split.
pub fn assign_all(manifest: &mut DatasetManifest, split: Split) {
    for r in &mut manifest.records {
        r.split = Some(split);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};
    use proptest::prelude::*;

    #[test]
    fn grid_counts() {
        assert_eq!(tile_grid(1024, 1024, 256, PadPolicy::Ceil), (4, 4));
        assert_eq!(tile_grid(15354, 32507, 256, PadPolicy::Ceil), (60, 127));
        assert_eq!(tile_grid(15354, 32507, 256, PadPolicy::Floor), (59, 126));
        assert_eq!(tile_grid(300, 700, 256, PadPolicy::Ceil), (2, 3));
    }

    #[test]
    fn single_tile_is_source() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8, y as u8, 7]));
        let tiles = tile_image(&img, 16, PadPolicy::Ceil);
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0], img);
    }

    #[test]
    fn split_sizes() {
        assert_eq!(SplitSpec::Ratios([0.8, 0.1, 0.1]).sizes(7620).unwrap(), [6096, 762, 762]);
        assert_eq!(SplitSpec::Counts([7120, 1024, 2048]).sizes(10192).unwrap(), [7120, 1024, 2048]);
        assert!(SplitSpec::Counts([1, 1, 1]).sizes(4).is_err());
        assert!(SplitSpec::Ratios([0.5, 0.1, 0.1]).sizes(10).is_err());
    }

    fn stub(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("/nowhere", "stub", 256);
        m.records = (0..n).map(|i| SampleRecord::standard(&format!("t{i}"))).collect();
        m
    }

    #[test]
    fn split_is_deterministic() {
        let m = stub(50);
        let a = split_dataset(&m, SplitSpec::Ratios([0.8, 0.1, 0.1]), 3).unwrap();
        let b = split_dataset(&m, SplitSpec::Ratios([0.8, 0.1, 0.1]), 3).unwrap();
        let c = split_dataset(&m, SplitSpec::Ratios([0.8, 0.1, 0.1]), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, c.records);
        assert_eq!(a.split_counts(), [40, 5, 5]);
    }

    #[test]
    fn normalize_modes() {
        let tile = ImageTile::from_fn(2, 2, 3, |y, x, c| (y + x + c) as f64 / 5.0);
        assert_eq!(normalize(&tile, NormalizeMode::Unit).unwrap(), tile.to_tensor());
        let mean = ImageTile::from_fn(2, 2, 3, |_, _, c| BACKBONE_MEAN[c]);
        let z = normalize(&mean, NormalizeMode::Backbone).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));
        let s = normalize(&tile, NormalizeMode::Backbone).unwrap();
        assert!((s.at(0, 1, 1, 0) - (tile.get(1, 0, 1) - BACKBONE_MEAN[1]) / BACKBONE_STD[1]).abs() < 1e-12);
    }

    #[test]
    fn no_shapes_means_no_change() {
        let cfg = SynthConfig {
            min_shapes: 0,
            max_shapes: 0,
            ..SynthConfig::default()
        };
        let p = synth_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.label.count_ones(), 0);
        for y in 0..64 {
            for x in 0..64 {
                for c in 0..3 {
                    let d = p.t2.get(y, x, c) - p.t1.get(y, x, c);
                    assert!((d - p.jitter[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn square_has_exact_area() {
        let s = Shape { y: 3, x: 5, h: 8, w: 8, ellipse: false };
        let m = BinaryMask::from_fn(16, 16, |y, x| s.contains(y, x));
        assert_eq!(m.count_ones(), 64);
    }

    #[test]
    fn config_text_and_validation() {
        let cfg = SynthConfig::from_text("tile_size = 32\npairs = 3\njitter = 0.02").unwrap();
        assert_eq!((cfg.tile_size, cfg.pairs), (32, 3));
        assert!(SynthConfig::from_text("tile_size = 40").is_err());
        assert!(SynthConfig::from_text("jitter = 0.2").is_err());
        assert!(SynthConfig::from_text("colour = red").is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            pairs: 2,
            tile_size: 32,
            ..SynthConfig::default()
        };
        let mut m = synth_generate(&cfg, dir.path()).unwrap();
        m.validate(true).unwrap();
        assign_all(&mut m, Split::Train);
        let loaded = load_split(&m, Split::Train).unwrap();
        let mem = synth_samples(&cfg).unwrap();
        for (a, b) in loaded.iter().zip(&mem) {
            assert_eq!(a.label, b.label);
            assert!(a.t1.data().iter().zip(b.t1.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
        }
        let back = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.records.len(), 2);
    }

    #[test]
    fn tiling_skips_bad_triplets() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        create_layout(src.path()).unwrap();
        let img = RgbImage::from_pixel(40, 20, Rgb([9, 9, 9]));
        let lab = GrayImage::from_pixel(40, 20, Luma([255]));
        for (d, name) in [(DIR_T1, "good"), (DIR_T2, "good"), (DIR_T1, "lonely"), (DIR_T1, "odd"), (DIR_T2, "odd")] {
            img.save(src.path().join(d).join(format!("{name}.png"))).unwrap();
        }
        lab.save(src.path().join(DIR_LABEL).join("good.png")).unwrap();
        GrayImage::new(4, 4).save(src.path().join(DIR_LABEL).join("odd.png")).unwrap();
        let report = tile_dataset(src.path(), out.path(), 16, PadPolicy::Ceil).unwrap();
        assert_eq!(report.manifest.len(), 2 * 3);
        assert_eq!(report.errors.len(), 2);
        report.manifest.validate(true).unwrap();
    }

    proptest! {
        #[test]
        fn tiling_is_a_partition(w in 1u32..50, h in 1u32..50, tile in 1usize..20, seed in any::<u8>()) {
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8 ^ seed, y as u8, (x * y) as u8]));
            let tiles = tile_image(&img, tile, PadPolicy::Ceil);
            let (r, c) = tile_grid(h as usize, w as usize, tile, PadPolicy::Ceil);
            prop_assert_eq!(tiles.len(), r * c);
            prop_assert_eq!(untile(&tiles, w, h, tile, PadPolicy::Ceil), img);
        }

        #[test]
        fn split_disjoint_and_exhaustive(n in 0usize..200, seed in any::<u64>()) {
            let m = split_dataset(&stub(n), SplitSpec::Ratios([0.8, 0.1, 0.1]), seed).unwrap();
            prop_assert!(m.records.iter().all(|r| r.split.is_some()));
            prop_assert_eq!(m.split_counts().iter().sum::<usize>(), n);
        }

        #[test]
        fn labels_mark_real_change(seed in any::<u64>()) {
            let cfg = SynthConfig { seed, pairs: 1, max_shapes: 4, ..SynthConfig::default() };
            let s = &synth_samples(&cfg).unwrap()[0];
            for y in 0..64 {
                for x in 0..64 {
                    let diff = (0..3).map(|c| (s.t1.get(y, x, c) - s.t2.get(y, x, c)).abs()).fold(0.0, f64::max);
                    if s.label.get(y, x) {
                        prop_assert!(diff > cfg.jitter);
                    } else {
                        prop_assert!(diff <= cfg.jitter + 1e-12);
                    }
                }
            }
        }
    }
}
