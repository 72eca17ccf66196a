//! Boxes, target states, candidate sampling and region cropping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, Tm3Error};
use crate::scalar::Scalar;

/// Side length (pixels) every region is resampled to before patch decomposition.
pub const REGION_SIDE: usize = 36;

/// Axis-aligned box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite || self.w <= T::zero() || self.h <= T::zero() {
            return Err(Tm3Error::InvalidBox(format!(
                "{},{},{},{}",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (self.x + self.w * half, self.y + self.h * half)
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        Self {
            x: cx - w * half,
            y: cy - h * half,
            w,
            h,
        }
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= T::zero() || iy <= T::zero() {
            T::zero()
        } else {
            ix * iy
        }
    }

    /// Whether the box overlaps `[0, width) x [0, height)` with positive area.
    pub fn intersects_frame(&self, width: usize, height: usize) -> bool {
        let w = T::from_usize_lossy(width);
        let h = T::from_usize_lossy(height);
        self.x < w && self.x + self.w > T::zero() && self.y < h && self.y + self.h > T::zero()
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x: U::lit(self.x.to_f64_lossy()),
            y: U::lit(self.y.to_f64_lossy()),
            w: U::lit(self.w.to_f64_lossy()),
            h: U::lit(self.h.to_f64_lossy()),
        }
    }
}

/// Overlap ratio `area(a ∩ b) / area(a ∪ b)`.
pub fn vor<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// Tracker estimate for one frame. `scale` multiplies the initial target size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState<T> {
    pub cx: T,
    pub cy: T,
    pub scale: T,
    pub frame_index: usize,
}

impl<T: Scalar> TargetState<T> {
    pub fn new(cx: T, cy: T, scale: T, frame_index: usize) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Tm3Error::NonFinite("target center"));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Tm3Error::InvalidParameter(format!("scale must be > 0, got {scale}")));
        }
        Ok(Self {
            cx,
            cy,
            scale,
            frame_index,
        })
    }

    /// Box of this state given the base (scale = 1) target size.
    pub fn to_box(&self, base_w: T, base_h: T) -> BoundingBox<T> {
        BoundingBox::from_center(self.cx, self.cy, base_w * self.scale, base_h * self.scale)
    }
}

/// Weighted distance between two states over translation and scale:
/// `‖[Δx / (w·Σs), Δy / (h·Σs), τ·Δs / Σs]‖₂`.
pub fn geometry_distance<T: Scalar>(
    cand: &TargetState<T>,
    reference: &TargetState<T>,
    ref_box_w: T,
    ref_box_h: T,
    tau: T,
) -> Result<T> {
    let scale_sum = reference.scale + cand.scale;
    if !(scale_sum > T::zero()) {
        return Err(Tm3Error::InvalidParameter(format!(
            "scale sum must be positive, got {scale_sum}"
        )));
    }
    if !(ref_box_w > T::zero() && ref_box_h > T::zero()) {
        return Err(Tm3Error::InvalidParameter("reference box size must be positive".into()));
    }
    let dx = (reference.cx - cand.cx) / (ref_box_w * scale_sum);
    let dy = (reference.cy - cand.cy) / (ref_box_h * scale_sum);
    let ds = tau * (reference.scale - cand.scale) / scale_sum;
    Ok((dx * dx + dy * dy + ds * ds).sqrt())
}

/// Standard deviations of the Gaussian used to draw random candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams<T> {
    pub sigma_x: T,
    pub sigma_y: T,
    pub sigma_s: T,
    pub n_samples: usize,
}

impl<T: Scalar> SamplingParams<T> {
    /// `σx = min(w/4, cap)`, `σy = min(h/4, cap)` for a previous box of size `w × h`.
    pub fn for_box(w: T, h: T, translation_cap: T, sigma_s: T, n_samples: usize) -> Self {
        let quarter = T::lit(0.25);
        Self {
            sigma_x: (w * quarter).min(translation_cap),
            sigma_y: (h * quarter).min(translation_cap),
            sigma_s,
            n_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_x >= T::zero() && self.sigma_y >= T::zero() && self.sigma_s >= T::zero();
        if !ok {
            return Err(Tm3Error::InvalidParameter("sampling sigmas must be >= 0".into()));
        }
        if self.n_samples == 0 {
            return Err(Tm3Error::InvalidParameter("n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws `n_samples` states from `N(prev, diag(σx², σy², σs²))`.
///
/// Sampled scales are clamped to `[0.5·prev.scale, 2·prev.scale]`.
pub fn sample_candidates<T: Scalar>(
    prev: &TargetState<T>,
    params: &SamplingParams<T>,
    seed: u64,
) -> Result<Vec<TargetState<T>>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = prev.scale * T::lit(0.5);
    let hi = prev.scale * T::lit(2.0);
    let mut out = Vec::with_capacity(params.n_samples);
    for _ in 0..params.n_samples {
        let zx: f64 = StandardNormal.sample(&mut rng);
        let zy: f64 = StandardNormal.sample(&mut rng);
        let zs: f64 = StandardNormal.sample(&mut rng);
        out.push(TargetState {
            cx: prev.cx + params.sigma_x * T::lit(zx),
            cy: prev.cy + params.sigma_y * T::lit(zy),
            scale: (prev.scale + params.sigma_s * T::lit(zs)).max(lo).min(hi),
            frame_index: prev.frame_index + 1,
        });
    }
    Ok(out)
}

/// Dense multi-channel raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Raster<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Tm3Error::DimensionMismatch {
                expected: width * height * channels,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }
}

/// Crops `bbox` from `raster` and resamples it to `out_w × out_h` with bilinear
/// interpolation. Samples falling outside the raster replicate the nearest border pixel.
pub fn crop_resample<T: Scalar>(
    raster: &Raster<T>,
    bbox: &BoundingBox<T>,
    out_w: usize,
    out_h: usize,
) -> Result<Raster<T>> {
    bbox.validate()?;
    if raster.width == 0 || raster.height == 0 || !bbox.intersects_frame(raster.width, raster.height) {
        return Err(Tm3Error::OutOfFrame {
            x: bbox.x.to_f64_lossy(),
            y: bbox.y.to_f64_lossy(),
            w: bbox.w.to_f64_lossy(),
            h: bbox.h.to_f64_lossy(),
            width: raster.width,
            height: raster.height,
        });
    }
    let ch = raster.channels;
    let half = T::lit(0.5);
    let step_x = bbox.w / T::from_usize_lossy(out_w);
    let step_y = bbox.h / T::from_usize_lossy(out_h);
    let max_x = T::from_usize_lossy(raster.width - 1);
    let max_y = T::from_usize_lossy(raster.height - 1);

    let sample_axis = |start: T, step: T, i: usize, max: T, len: usize| -> (usize, usize, T) {
        let s = (start + (T::from_usize_lossy(i) + half) * step - half).max(T::zero()).min(max);
        let i0 = s.floor().to_usize().unwrap_or(0).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - T::from_usize_lossy(i0))
    };
    let xs: Vec<_> = (0..out_w)
        .map(|u| sample_axis(bbox.x, step_x, u, max_x, raster.width))
        .collect();

    let mut data = Vec::with_capacity(out_w * out_h * ch);
    for v in 0..out_h {
        let (y0, y1, fy) = sample_axis(bbox.y, step_y, v, max_y, raster.height);
        let gy = T::one() - fy;
        for &(x0, x1, fx) in &xs {
            let gx = T::one() - fx;
            let p00 = raster.pixel(x0, y0);
            let p10 = raster.pixel(x1, y0);
            let p01 = raster.pixel(x0, y1);
            let p11 = raster.pixel(x1, y1);
            for c in 0..ch {
                let top = p00[c] * gx + p10[c] * fx;
                let bottom = p01[c] * gx + p11[c] * fx;
                data.push(top * gy + bottom * fy);
            }
        }
    }
    Ok(Raster {
        width: out_w,
        height: out_h,
        channels: ch,
        data,
    })
}

/// [`crop_resample`] to the standard `36 × 36` region.
pub fn crop_normalize<T: Scalar>(raster: &Raster<T>, bbox: &BoundingBox<T>) -> Result<Raster<T>> {
    crop_resample(raster, bbox, REGION_SIDE, REGION_SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox<f64> {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn st(cx: f64, cy: f64, s: f64) -> TargetState<f64> {
        TargetState::new(cx, cy, s, 0).unwrap()
    }

    #[test]
    fn vor_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(vor(&a, &a), 1.0);
        assert_eq!(vor(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        assert_relative_eq!(vor(&a, &bx(5.0, 0.0, 10.0, 10.0)), 1.0 / 3.0, epsilon = 1e-12);
        // touching edges share no area
        assert_eq!(vor(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(TargetState::new(0.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn geometry_distance_examples() {
        let a = st(50.0, 40.0, 1.0);
        assert_eq!(geometry_distance(&a, &a, 10.0, 10.0, 5.0).unwrap(), 0.0);
        let b = st(60.0, 40.0, 1.0);
        assert_relative_eq!(geometry_distance(&b, &a, 10.0, 10.0, 5.0).unwrap(), 0.5, epsilon = 1e-12);
        let r = st(50.0, 40.0, 1.2);
        let c = st(50.0, 40.0, 0.8);
        assert_relative_eq!(geometry_distance(&c, &r, 10.0, 10.0, 5.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn geometry_distance_rejects_bad_scales() {
        let a = TargetState { cx: 0.0, cy: 0.0, scale: -1.0, frame_index: 0 };
        let b = TargetState { cx: 0.0, cy: 0.0, scale: 1.0, frame_index: 0 };
        assert!(geometry_distance(&a, &b, 1.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn degenerate_sampling_copies_prev() {
        let prev = st(30.0, 20.0, 1.1);
        let p = SamplingParams { sigma_x: 0.0, sigma_y: 0.0, sigma_s: 0.0, n_samples: 7 };
        let out = sample_candidates(&prev, &p, 3).unwrap();
        assert_eq!(out.len(), 7);
        for s in out {
            assert_eq!((s.cx, s.cy, s.scale), (prev.cx, prev.cy, prev.scale));
        }
        let p1 = SamplingParams { n_samples: 1, ..p };
        assert_eq!(sample_candidates(&prev, &p1, 3).unwrap().len(), 1);
    }

    #[test]
    fn sampling_mean_tracks_prev() {
        let prev = st(100.0, 80.0, 1.0);
        let p = SamplingParams { sigma_x: 15.0, sigma_y: 15.0, sigma_s: 0.15, n_samples: 700 };
        let out = sample_candidates(&prev, &p, 42).unwrap();
        let mx = out.iter().map(|s| s.cx).sum::<f64>() / 700.0;
        let my = out.iter().map(|s| s.cy).sum::<f64>() / 700.0;
        assert!((mx - 100.0).abs() < 2.0 && (my - 80.0).abs() < 2.0, "{mx} {my}");
        assert!(out.iter().all(|s| s.scale >= 0.5 && s.scale <= 2.0));
    }

    #[test]
    fn sampling_is_reproducible() {
        let prev = st(10.0, 10.0, 1.0);
        let p = SamplingParams::for_box(40.0, 100.0, 15.0, 0.15, 50);
        assert_eq!(p.sigma_x, 10.0);
        assert_eq!(p.sigma_y, 15.0);
        let a = sample_candidates(&prev, &p, 9).unwrap();
        let b = sample_candidates(&prev, &p, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_candidates(&prev, &p, 10).unwrap());
    }

    fn ramp(w: usize, h: usize) -> Raster<f64> {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[x as f64, y as f64, (x * y) as f64]);
            }
        }
        Raster::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn identity_crop_is_exact() {
        let r = ramp(50, 40);
        let out = crop_normalize(&r, &bx(5.0, 2.0, 36.0, 36.0)).unwrap();
        for v in 0..36 {
            for u in 0..36 {
                assert_eq!(out.pixel(u, v), r.pixel(u + 5, v + 2));
            }
        }
    }

    #[test]
    fn constant_raster_stays_constant() {
        let r = Raster::filled(20, 20, 3, 7.25);
        let out = crop_normalize(&r, &bx(-5.0, 3.0, 30.0, 12.5)).unwrap();
        assert!(out.data.iter().all(|&v| v == 7.25));
    }

    #[test]
    fn out_of_frame_crop_errors() {
        let r = Raster::filled(20, 20, 3, 1.0);
        let err = crop_normalize(&r, &bx(25.0, 0.0, 10.0, 10.0)).unwrap_err();
        assert!(matches!(err, Tm3Error::OutOfFrame { .. }));
    }

    #[test]
    fn border_pixels_replicate() {
        let r = ramp(10, 10);
        let out = crop_resample(&r, &bx(-4.0, 0.0, 4.0, 1.0), 4, 1).unwrap_err();
        assert!(matches!(out, Tm3Error::OutOfFrame { .. }));
        let out = crop_resample(&r, &bx(-3.0, 0.0, 4.0, 1.0), 4, 1).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 0.0);
        assert_eq!(out.pixel(3, 0)[0], 0.0);
    }
}
