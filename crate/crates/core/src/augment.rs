//! Seeded geometric augmentation: reflection, rotation, scaling, translation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::RasterImage;

pub const ANGLE_RANGE_DEG: (f64, f64) = (-10.0, 10.0);
pub const SHIFT_RANGE_PX: (u32, u32) = (0, 5);
pub const SCALE_RANGE: (f64, f64) = (1.0, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Mirror left-right.
    pub reflect_h: bool,
    /// Mirror top-bottom.
    pub reflect_v: bool,
    pub angle_deg: f64,
    /// Columns the content moves right.
    pub shift_x: u32,
    /// Rows the content moves down.
    pub shift_y: u32,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            reflect_h: false,
            reflect_v: false,
            angle_deg: 0.0,
            shift_x: 0,
            shift_y: 0,
            scale_x: 1.0,
            scale_y: 1.0,
        }
    }

    pub fn in_range(&self) -> bool {
        (ANGLE_RANGE_DEG.0..=ANGLE_RANGE_DEG.1).contains(&self.angle_deg)
            && (SHIFT_RANGE_PX.0..=SHIFT_RANGE_PX.1).contains(&self.shift_x)
            && (SHIFT_RANGE_PX.0..=SHIFT_RANGE_PX.1).contains(&self.shift_y)
            && (SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale_x)
            && (SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale_y)
    }
}

/// Every field drawn independently and uniformly over its closed range.
pub fn sample_spec(seed: u64) -> AugmentSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentSpec {
        reflect_h: rng.random_bool(0.5),
        reflect_v: rng.random_bool(0.5),
        angle_deg: rng.random_range(ANGLE_RANGE_DEG.0..=ANGLE_RANGE_DEG.1),
        shift_x: rng.random_range(SHIFT_RANGE_PX.0..=SHIFT_RANGE_PX.1),
        shift_y: rng.random_range(SHIFT_RANGE_PX.0..=SHIFT_RANGE_PX.1),
        scale_x: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        scale_y: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
    }
}

/// Applies reflect, rotate, scale, translate in that order. Output has the
/// input's dimensions; pixels sampled from outside the source are black.
pub fn apply(img: &RasterImage, spec: &AugmentSpec) -> RasterImage {
    let mut out = img.clone();
    if spec.reflect_h || spec.reflect_v {
        out = reflect(&out, spec.reflect_h, spec.reflect_v);
    }
    if spec.angle_deg != 0.0 {
        out = rotate(&out, spec.angle_deg);
    }
    if spec.scale_x != 1.0 || spec.scale_y != 1.0 {
        out = scale_center_crop(&out, spec.scale_x, spec.scale_y);
    }
    if spec.shift_x != 0 || spec.shift_y != 0 {
        out = translate(&out, spec.shift_x as usize, spec.shift_y as usize);
    }
    out
}

fn remap(img: &RasterImage, mut f: impl FnMut(usize, usize, &mut [f64])) -> RasterImage {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; h * w * ch];
    for (i, px) in data.chunks_exact_mut(ch).enumerate() {
        f(i / w, i % w, px);
    }
    RasterImage::new(h, w, ch, data).expect("remap keeps dims and range")
}

fn reflect(img: &RasterImage, horizontal: bool, vertical: bool) -> RasterImage {
    let (h, w) = img.dims();
    remap(img, |r, c, px| {
        let sr = if vertical { h - 1 - r } else { r };
        let sc = if horizontal { w - 1 - c } else { c };
        px.copy_from_slice(img.pixel(sr, sc));
    })
}

/// Bilinear sample at fractional `(y, x)`; taps outside the image count as black.
fn sample_black(img: &RasterImage, y: f64, x: f64, px: &mut [f64]) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    px.fill(0.0);
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            let weight = wy * wx;
            if weight == 0.0 || yy < 0 || xx < 0 || yy >= h || xx >= w {
                continue;
            }
            for (o, v) in px.iter_mut().zip(img.pixel(yy as usize, xx as usize)) {
                *o += weight * v;
            }
        }
    }
    for v in px.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Counter-clockwise rotation about the image center.
fn rotate(img: &RasterImage, angle_deg: f64) -> RasterImage {
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    remap(img, |r, c, px| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        // Inverse rotation of the output position gives the source position.
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        sample_black(img, sy, sx, px);
    })
}

/// Upscales by `(sx, sy)` about the center and keeps the central window.
fn scale_center_crop(img: &RasterImage, sx: f64, sy: f64) -> RasterImage {
    let (h, w) = img.dims();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (maxy, maxx) = ((h - 1) as f64, (w - 1) as f64);
    remap(img, |r, c, px| {
        let y = ((r as f64 + 0.5 - cy) / sy + cy - 0.5).clamp(0.0, maxy);
        let x = ((c as f64 + 0.5 - cx) / sx + cx - 0.5).clamp(0.0, maxx);
        sample_black(img, y, x, px);
    })
}

fn translate(img: &RasterImage, dx: usize, dy: usize) -> RasterImage {
    remap(img, |r, c, px| {
        if r >= dy && c >= dx {
            px.copy_from_slice(img.pixel(r - dy, c - dx));
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> RasterImage {
        RasterImage::from_fn(12, 15, 3, |r, c, ch| ((r * 15 + c) * 3 + ch) as f64 / 540.0).unwrap()
    }

    #[test]
    fn sampled_specs_are_in_range_and_deterministic() {
        for seed in 0..500 {
            let s = sample_spec(seed);
            assert!(s.in_range(), "{s:?}");
            assert_eq!(s, sample_spec(seed));
        }
    }

    #[test]
    fn sampling_means_match_ranges() {
        let n = 10_000;
        let specs: Vec<_> = (0..n).map(sample_spec).collect();
        let angle = specs.iter().map(|s| s.angle_deg).sum::<f64>() / n as f64;
        let scale = specs.iter().map(|s| s.scale_x).sum::<f64>() / n as f64;
        assert!(angle.abs() < 0.5, "angle mean {angle}");
        assert!((scale - 1.5).abs() < 0.02, "scale mean {scale}");
    }

    #[test]
    fn identity_spec_is_bitwise_identity() {
        let img = test_image();
        assert_eq!(apply(&img, &AugmentSpec::identity()), img);
    }

    #[test]
    fn reflecting_symmetric_image_is_identity() {
        let img = RasterImage::from_fn(6, 8, 1, |r, c, _| ((r + 1) * (c.min(7 - c) + 1)) as f64 / 40.0).unwrap();
        let spec = AugmentSpec {
            reflect_h: true,
            ..AugmentSpec::identity()
        };
        assert_eq!(apply(&img, &spec), img);
    }

    #[test]
    fn reflecting_twice_restores() {
        let img = test_image();
        let once = reflect(&img, true, true);
        assert_ne!(once, img);
        assert_eq!(reflect(&once, true, true), img);
    }

    #[test]
    fn shift_moves_bright_pixel() {
        let img = RasterImage::from_fn(9, 9, 1, |r, c, _| if (r, c) == (4, 3) { 1.0 } else { 0.0 }).unwrap();
        let spec = AugmentSpec {
            shift_x: 2,
            ..AugmentSpec::identity()
        };
        let out = apply(&img, &spec);
        assert_eq!(out.get(4, 5, 0), 1.0);
        assert_eq!(out.data().iter().filter(|&&v| v > 0.0).count(), 1);
        for r in 0..9 {
            assert_eq!(out.get(r, 0, 0), 0.0);
            assert_eq!(out.get(r, 1, 0), 0.0);
        }
    }

    #[test]
    fn rotation_by_zero_degrees_via_rotate_is_near_identity() {
        let img = test_image();
        let out = rotate(&img, 0.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_blackens_corners() {
        let img = RasterImage::filled(21, 21, 1, 1.0).unwrap();
        let out = rotate(&img, 10.0);
        assert!(out.get(0, 0, 0) < 1.0);
        assert_eq!(out.get(10, 10, 0), 1.0);
    }

    #[test]
    fn upscaling_constant_image_is_constant() {
        let img = RasterImage::filled(10, 14, 3, 0.25).unwrap();
        let out = scale_center_crop(&img, 1.7, 1.3);
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn output_keeps_dims_and_range(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
                let img = RasterImage::from_fn(h, w, 3, |r, c, ch| ((r * 7 + c * 5 + ch) % 11) as f64 / 10.0).unwrap();
                let spec = sample_spec(seed);
                let a = apply(&img, &spec);
                prop_assert_eq!(a.dims(), img.dims());
                prop_assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert_eq!(a, apply(&img, &spec));
            }
        }
    }
}
