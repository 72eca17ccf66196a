//! Region → patch-set conversion: CIELAB color, 3×3 patch decomposition and
//! the feature-provider boundary used by the tracker.

use std::sync::OnceLock;

use image::RgbImage;

use crate::error::{Result, Tm3Error};
use crate::geometry::{crop_normalize, BoundingBox, Raster, REGION_SIDE};
use crate::scalar::Scalar;

/// Side of the square patches a region is split into.
pub const PATCH_SIDE: usize = 3;

// D65 reference white, 2° observer.
const WHITE_X: f64 = 0.950_47;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.088_83;

fn linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            let c = i as f64 / 255.0;
            *v = if c <= 0.040_45 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        lut
    })
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (8-bit, D65) → CIELAB.
pub fn rgb_to_lab<T: Scalar>(rgb: [u8; 3]) -> [T; 3] {
    let lut = linear_lut();
    let (r, g, b) = (lut[rgb[0] as usize], lut[rgb[1] as usize], lut[rgb[2] as usize]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);
    [
        T::lit((116.0 * fy - 16.0).max(0.0)),
        T::lit(500.0 * (fx - fy)),
        T::lit(200.0 * (fy - fz)),
    ]
}

/// Converts a whole RGB image into a 3-channel Lab raster.
pub fn lab_raster<T: Scalar>(image: &RgbImage) -> Raster<T> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for p in image.pixels() {
        data.extend_from_slice(&rgb_to_lab::<T>(p.0));
    }
    Raster {
        width: w,
        height: h,
        channels: 3,
        data,
    }
}

/// A region as a set of equal-dimension patch vectors, stored contiguously.
///
/// Patches are ordered row-major over the patch grid; within a patch, pixels are
/// row-major with channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    data: Vec<T>,
    count: usize,
    dim: usize,
}

impl<T: Scalar> PatchSet<T> {
    pub fn new(data: Vec<T>, count: usize, dim: usize) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Tm3Error::Empty("patch set"));
        }
        if data.len() != count * dim {
            return Err(Tm3Error::DimensionMismatch {
                expected: count * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Tm3Error::NonFinite("patch set"));
        }
        Ok(Self { data, count, dim })
    }

    /// Builds a set from individual vectors.
    pub fn from_patches(patches: &[Vec<T>]) -> Result<Self> {
        let dim = patches.first().map(Vec::len).ok_or(Tm3Error::Empty("patch set"))?;
        let mut data = Vec::with_capacity(patches.len() * dim);
        for p in patches {
            if p.len() != dim {
                return Err(Tm3Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            data.extend_from_slice(p);
        }
        Self::new(data, patches.len(), dim)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn patch(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    /// Flat feature vector (all patches concatenated). Euclidean distances between
    /// flat vectors equal distances between the underlying regions.
    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }
}

/// Splits a region into non-overlapping `side × side` patches.
pub fn decompose_patches_with<T: Scalar>(region: &Raster<T>, side: usize) -> Result<PatchSet<T>> {
    if side == 0 || region.width % side != 0 || region.height % side != 0 || region.width == 0 {
        return Err(Tm3Error::NotDivisible {
            width: region.width,
            height: region.height,
            patch: side,
        });
    }
    let (gw, gh) = (region.width / side, region.height / side);
    let dim = side * side * region.channels;
    let mut data = Vec::with_capacity(region.data.len());
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..side {
                for dx in 0..side {
                    data.extend_from_slice(region.pixel(px * side + dx, py * side + dy));
                }
            }
        }
    }
    PatchSet::new(data, gw * gh, dim)
}

/// [`decompose_patches_with`] using 3×3 patches.
pub fn decompose_patches<T: Scalar>(region: &Raster<T>) -> Result<PatchSet<T>> {
    decompose_patches_with(region, PATCH_SIDE)
}

/// Inverse of [`decompose_patches_with`].
pub fn reassemble_patches<T: Scalar>(
    patches: &PatchSet<T>,
    width: usize,
    height: usize,
    channels: usize,
    side: usize,
) -> Result<Raster<T>> {
    if side == 0 || width % side != 0 || height % side != 0 {
        return Err(Tm3Error::NotDivisible { width, height, patch: side });
    }
    let (gw, gh) = (width / side, height / side);
    if patches.count() != gw * gh || patches.dim() != side * side * channels {
        return Err(Tm3Error::DimensionMismatch {
            expected: gw * gh * side * side * channels,
            got: patches.count() * patches.dim(),
        });
    }
    let mut out = Raster::filled(width, height, channels, T::zero());
    for (k, patch) in patches.patches().enumerate() {
        let (px, py) = (k % gw, k / gw);
        for dy in 0..side {
            for dx in 0..side {
                let o = (dy * side + dx) * channels;
                out.pixel_mut(px * side + dx, py * side + dy)
                    .copy_from_slice(&patch[o..o + channels]);
            }
        }
    }
    Ok(out)
}

/// Source of patch sets for image regions.
pub trait FeatureProvider<T: Scalar> {
    /// Per-frame precomputation shared by all regions of that frame.
    type Frame;

    /// Dimension of every produced patch vector.
    fn patch_dim(&self) -> usize;

    fn prepare(&self, image: &RgbImage) -> Result<Self::Frame>;

    /// One patch set per box, in input order.
    fn extract(&self, frame: &Self::Frame, boxes: &[BoundingBox<T>]) -> Result<Vec<PatchSet<T>>>;
}

/// 36×36 Lab regions split into 144 patches of dimension 27.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorProvider;

impl<T: Scalar> FeatureProvider<T> for ColorProvider {
    type Frame = Raster<T>;

    fn patch_dim(&self) -> usize {
        PATCH_SIDE * PATCH_SIDE * 3
    }

    fn prepare(&self, image: &RgbImage) -> Result<Raster<T>> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Tm3Error::Empty("image"));
        }
        Ok(lab_raster(image))
    }

    fn extract(&self, frame: &Raster<T>, boxes: &[BoundingBox<T>]) -> Result<Vec<PatchSet<T>>> {
        boxes
            .iter()
            .map(|b| decompose_patches(&crop_normalize(frame, b)?))
            .collect()
    }
}

/// Color features for `boxes` straight from an RGB image.
pub fn color_provider_extract<T: Scalar>(
    image: &RgbImage,
    boxes: &[BoundingBox<T>],
) -> Result<Vec<PatchSet<T>>> {
    let provider = ColorProvider;
    let frame = FeatureProvider::<T>::prepare(&provider, image)?;
    provider.extract(&frame, boxes)
}

/// Placeholder for region-pooled CNN features (4096-dim). Needs an external
/// network runtime, so extraction always fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeepProvider;

impl<T: Scalar> FeatureProvider<T> for DeepProvider {
    type Frame = ();

    fn patch_dim(&self) -> usize {
        4096
    }

    fn prepare(&self, _image: &RgbImage) -> Result<()> {
        Ok(())
    }

    fn extract(&self, _frame: &(), _boxes: &[BoundingBox<T>]) -> Result<Vec<PatchSet<T>>> {
        Err(Tm3Error::Unsupported("deep features need an external CNN backend"))
    }
}

/// Number of patches a region of `side × side` produces.
pub const fn patches_per_region(side: usize) -> usize {
    (side / PATCH_SIDE) * (side / PATCH_SIDE)
}

/// Patch count for the standard region.
pub const COLOR_PATCH_COUNT: usize = patches_per_region(REGION_SIDE);

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn reference_white_and_black() {
        let w = rgb_to_lab::<f64>([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-3, "{w:?}");
        assert!(w[1].abs() < 0.01 && w[2].abs() < 0.01, "{w:?}");
        assert_eq!(rgb_to_lab::<f64>([0, 0, 0]), [0.0, 0.0, 0.0]);
    }

    // Reference values from an independent sRGB→Lab implementation (D65, 2°).
    #[test]
    fn matches_reference_converter() {
        let cases = [
            ([255, 0, 0], [53.240_587_9, 80.092_308_2, 67.202_751_0]),
            ([0, 255, 0], [87.735_099_5, -86.183_029_7, 83.179_703_2]),
            ([0, 0, 255], [32.295_672_6, 79.185_590_9, -107.857_300_2]),
            ([128, 64, 200], [41.884_782_3, 53.521_301_7, -60.355_009_6]),
            ([200, 150, 100], [65.760_060_8, 12.758_894_7, 33.564_736_6]),
        ];
        for (rgb, lab) in cases {
            let got = rgb_to_lab::<f64>(rgb);
            assert!(close(got, lab, 0.1), "{rgb:?}: {got:?} vs {lab:?}");
        }
    }

    #[test]
    fn gray_lightness_is_monotone() {
        let mut prev = -1.0;
        for g in 0..=255u8 {
            let l = rgb_to_lab::<f64>([g, g, g])[0];
            assert!(l > prev, "g={g}");
            prev = l;
        }
    }

    fn ramp_region() -> Raster<f64> {
        let data = (0..36 * 36 * 3).map(|i| i as f64).collect();
        Raster::new(36, 36, 3, data).unwrap()
    }

    #[test]
    fn decomposition_shape_and_layout() {
        let region = ramp_region();
        let ps = decompose_patches(&region).unwrap();
        assert_eq!((ps.count(), ps.dim()), (144, 27));
        assert_eq!(COLOR_PATCH_COUNT, 144);
        // second patch starts at pixel (3, 0)
        assert_eq!(&ps.patch(1)[..3], region.pixel(3, 0));
        // fourth pixel of the first patch is (0, 1)
        assert_eq!(&ps.patch(0)[9..12], region.pixel(0, 1));
    }

    #[test]
    fn constant_region_gives_equal_patches() {
        let region = Raster::filled(36, 36, 3, 4.5f32);
        let ps = decompose_patches(&region).unwrap();
        assert!(ps.patches().all(|p| p.iter().all(|&v| v == 4.5)));
    }

    #[test]
    fn non_divisible_region_rejected() {
        let region = Raster::filled(35, 36, 3, 0.0f64);
        assert!(matches!(decompose_patches(&region), Err(Tm3Error::NotDivisible { .. })));
    }

    #[test]
    fn patch_set_validation() {
        assert!(PatchSet::new(vec![1.0f64, 2.0], 1, 3).is_err());
        assert!(PatchSet::new(vec![1.0f64, f64::NAN], 1, 2).is_err());
        assert!(PatchSet::<f64>::from_patches(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn provider_is_deterministic_and_ordered() {
        let img = RgbImage::from_fn(80, 60, |x, y| Rgb([(x * 3) as u8, (y * 4) as u8, 90]));
        let b1 = BoundingBox::new(10.0f32, 5.0, 36.0, 36.0).unwrap();
        let b2 = BoundingBox::new(30.0f32, 15.0, 40.0, 30.0).unwrap();
        let out = color_provider_extract(&img, &[b1, b2, b1]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|p| p.count() == 144 && p.dim() == 27));
        assert_eq!(out[0], out[2]);
        assert_ne!(out[0], out[1]);
        let single = color_provider_extract(&img, &[b2]).unwrap();
        assert_eq!(single[0], out[1]);
    }

    #[test]
    fn provider_propagates_crop_errors() {
        let img = RgbImage::new(20, 20);
        let far = BoundingBox::new(100.0f64, 100.0, 10.0, 10.0).unwrap();
        assert!(color_provider_extract(&img, &[far]).is_err());
        let deep = DeepProvider;
        assert_eq!(FeatureProvider::<f64>::patch_dim(&deep), 4096);
        assert!(FeatureProvider::<f64>::extract(&deep, &(), &[far]).is_err());
    }

    proptest! {
        #[test]
        fn reassembly_inverts_decomposition(
            gw in 1usize..6, gh in 1usize..6, seed in any::<u64>()
        ) {
            let (w, h) = (gw * 3, gh * 3);
            let data: Vec<f64> = (0..w * h * 3)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64)
                .collect();
            let region = Raster::new(w, h, 3, data).unwrap();
            let ps = decompose_patches(&region).unwrap();
            prop_assert_eq!(ps.count(), gw * gh);
            let back = reassemble_patches(&ps, w, h, 3, 3).unwrap();
            prop_assert_eq!(back, region);
        }
    }
}
