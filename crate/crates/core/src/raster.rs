//! Image tiles, masks and probability maps, plus the pixelwise operations
//! shared by the encoder, the supervision path and the metrics.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use lrnet_tensor::Tensor;

use crate::error::{Error, Result};

/// Default probability threshold for turning a change map into a mask.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// An `H×W×C` image with intensities in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTile {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTile {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "image tile must be non-empty, got {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width}×{channels} tile",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "tile intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a tile from `f(y, x, c)`; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageTile) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    /// `[1, C, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn([1, self.channels, self.height, self.width], |_, c, y, x| {
            self.get(y, x, c)
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, 3, |y, x, c| {
            f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(self.channels - 1);
                (self.get(y as usize, x as usize, c) * 255.0).round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::image(path, e))
    }
}

/// Pixelwise absolute difference of two co-registered tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffImage(ImageTile);

impl DiffImage {
    pub fn as_tile(&self) -> &ImageTile {
        &self.0
    }

    pub fn into_tile(self) -> ImageTile {
        self.0
    }
}

/// `|a − b|` per pixel and channel.
pub fn difference_image(a: &ImageTile, b: &ImageTile) -> Result<DiffImage> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "difference of {}×{}×{} and {}×{}×{} tiles",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect();
    Ok(DiffImage(ImageTile { data, ..a.clone() }))
}

/// A binary `H×W` mask; `1` marks a changed pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        (self.height, self.width) == (other.height, other.width)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if !self.same_shape(other) {
            return Err(Error::Shape("mask union of different sizes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect();
        Ok(BinaryMask { data, ..*self })
    }

    /// `[1, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Reads one `H×W` plane of `t` (batch `n`, channel 0); nonzero is set.
    pub fn from_tensor(t: &Tensor, n: usize) -> Self {
        let data = t.plane_slice(n, 0).iter().map(|&v| u8::from(v != 0.0)).collect();
        Self {
            height: t.height(),
            width: t.width(),
            data,
        }
    }

    /// Reads an 8-bit label image; values ≥ 128 are changed pixels.
    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, |y, x| {
            img.get_pixel(x as u32, y as u32)[0] >= 128
        })
    }

    /// Encodes as `{0, 255}`.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_gray8(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray8().save(path).map_err(|e| Error::image(path, e))
    }
}

/// Per-pixel change probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width} probability map",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone())
    }

    /// Reads one plane of a `[N, 1, H, W]` tensor of probabilities.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        Self::new(t.height(), t.width(), t.plane_slice(n, 0).to_vec())
    }

    /// Encodes as `round(255·p)`.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(y as usize, x as usize) * 255.0).round() as u8])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray8().save(path).map_err(|e| Error::image(path, e))
    }
}

/// `mask[p] = 1` iff `prob[p] ≥ threshold`.
pub fn binarize(prob: &ProbabilityMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let data = prob.data.iter().map(|&p| u8::from(p >= threshold)).collect();
    Ok(BinaryMask {
        height: prob.height,
        width: prob.width,
        data,
    })
}

/// Changed pixels with at least one unchanged pixel among their in-bounds
/// 4-neighbours: the mask minus its 4-neighbourhood erosion.
///
/// Pixels outside the image do not count as unchanged, so a region cut by
/// the tile border has no boundary along that border.
pub fn boundary_extract(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    BinaryMask::from_fn(h, w, |y, x| {
        if !mask.get(y, x) {
            return false;
        }
        (y > 0 && !mask.get(y - 1, x))
            || (y + 1 < h && !mask.get(y + 1, x))
            || (x > 0 && !mask.get(y, x - 1))
            || (x + 1 < w && !mask.get(y, x + 1))
    })
}

/// Writes a single-channel attention map whose values lie in `[0, 2]` as an
/// 8-bit PNG (`value / 2 · 255`).
pub fn save_attention_png(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape("attention map size".into()));
    }
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let v = values[y as usize * width + x as usize].clamp(0.0, 2.0);
        Luma([(v / 2.0 * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |y, x| rows[y].as_bytes()[x] == b'1')
    }

    #[test]
    fn identical_tiles_have_zero_difference() {
        let a = ImageTile::from_fn(4, 5, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0);
        let d = difference_image(&a, &a).unwrap();
        assert!(d.as_tile().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_with_zero_is_identity() {
        let x = ImageTile::from_fn(3, 3, 3, |y, x, c| (y + x + c) as f64 / 8.0);
        let zero = ImageTile::zeros(3, 3, 3);
        assert_eq!(difference_image(&zero, &x).unwrap().into_tile(), x);
    }

    #[test]
    fn difference_matches_scalar_loop() {
        let a = ImageTile::from_fn(4, 4, 3, |y, x, c| ((y * 13 + x * 5 + c * 3) % 17) as f64 / 16.0);
        let b = ImageTile::from_fn(4, 4, 3, |y, x, c| ((y * 3 + x * 11 + c * 7) % 19) as f64 / 18.0);
        let d = difference_image(&a, &b).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    let expect = (a.get(y, x, c) - b.get(y, x, c)).abs();
                    assert_eq!(d.as_tile().get(y, x, c), expect);
                }
            }
        }
    }

    #[test]
    fn difference_rejects_shape_mismatch() {
        let a = ImageTile::zeros(4, 4, 3);
        let b = ImageTile::zeros(4, 5, 3);
        assert!(matches!(difference_image(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn tile_rejects_out_of_range() {
        assert!(ImageTile::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTile::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageTile::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn binarize_is_inclusive() {
        let p = ProbabilityMap::filled(2, 2, 0.5).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count_ones(), 4);
        let p = ProbabilityMap::filled(2, 2, 0.49).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count_ones(), 0);
        assert!(binarize(&p, 0.0).is_err());
        assert!(binarize(&p, 1.0).is_err());
    }

    #[test]
    fn binarize_mixed_map_matches_loop() {
        let vals: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let p = ProbabilityMap::new(4, 5, vals.clone()).unwrap();
        let m = binarize(&p, 0.3).unwrap();
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(m.data()[i] == 1, *v >= 0.3);
        }
    }

    #[test]
    fn boundary_cases() {
        let empty = BinaryMask::zeros(5, 5);
        assert_eq!(boundary_extract(&empty), empty);

        let mut single = BinaryMask::zeros(5, 5);
        single.set(2, 2, true);
        assert_eq!(boundary_extract(&single), single);

        let square = mask_from_rows(&["00000", "01110", "01110", "01110", "00000"]);
        let b = boundary_extract(&square);
        assert_eq!(b.count_ones(), 8);
        assert!(!b.get(2, 2));
    }

    #[test]
    fn full_mask_has_no_border_boundary() {
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        assert_eq!(boundary_extract(&full).count_ones(), 0);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = mask_from_rows(&["0110", "1001"]);
        m.save_png(&path).unwrap();
        assert_eq!(BinaryMask::load_png(&path).unwrap(), m);
        let raw = image::open(&path).unwrap().to_luma8();
        assert_eq!(raw.get_pixel(1, 0)[0], 255);
    }

    #[test]
    fn probability_png_encoding() {
        let p = ProbabilityMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let g = p.to_gray8();
        assert_eq!(
            [g.get_pixel(0, 0)[0], g.get_pixel(1, 0)[0], g.get_pixel(2, 0)[0]],
            [0, 128, 255]
        );
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
            prop::collection::vec(0u8..2, h * w)
                .prop_map(move |data| BinaryMask::new(h, w, data).unwrap())
        })
    }

    fn arb_tile_pair() -> impl Strategy<Value = (ImageTile, ImageTile)> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            let n = h * w * 3;
            (
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(0.0f64..=1.0, n),
            )
                .prop_map(move |(a, b)| {
                    (
                        ImageTile::new(h, w, 3, a).unwrap(),
                        ImageTile::new(h, w, 3, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn difference_is_symmetric((a, b) in arb_tile_pair()) {
            prop_assert_eq!(difference_image(&a, &b).unwrap(), difference_image(&b, &a).unwrap());
        }

        #[test]
        fn boundary_is_subset(m in arb_mask()) {
            prop_assert!(boundary_extract(&m).is_subset_of(&m));
        }

        #[test]
        fn boundary_idempotent_without_interior(m in arb_mask()) {
            let b = boundary_extract(&m);
            if b == m {
                prop_assert_eq!(boundary_extract(&b), b.clone());
            }
            // A boundary of a boundary is stable once it has no interior.
            let bb = boundary_extract(&b);
            if bb == b {
                prop_assert_eq!(boundary_extract(&bb), bb);
            }
        }

        #[test]
        fn binarize_monotone_in_threshold(
            vals in prop::collection::vec(0.0f64..=1.0, 16),
            t1 in 0.01f64..0.99,
            t2 in 0.01f64..0.99,
        ) {
            let p = ProbabilityMap::new(4, 4, vals).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let high = binarize(&p, hi).unwrap();
            let low = binarize(&p, lo).unwrap();
            prop_assert!(high.is_subset_of(&low));
        }
    }
}
