//! Spectral residual saliency.
//!
//! The log amplitude spectrum of natural images follows a smooth trend; the
//! residual after subtracting its local average carries the unexpected part
//! of the image. Reconstructing with the residual amplitude and the original
//! phase highlights those regions.
//!
//! Spectra are kept in the unshifted layout: the DC bin sits at `(0, 0)`.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::imaging::{normalize_map, resize_bilinear, rgb_to_luminance, GrayMap, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct SpeParams {
    pub work_height: usize,
    pub work_width: usize,
    /// Side of the box filter estimating the expected log spectrum.
    pub mean_filter_size: usize,
    /// Standard deviation of the final Gaussian blur, in work-grid pixels.
    pub gauss_sigma: f64,
    /// Amplitude floor inside the logarithm. Must stay well above the FFT
    /// rounding level, or exact spectral zeros dominate the residual.
    pub eps_log: f64,
}

impl Default for SpeParams {
    fn default() -> Self {
        Self {
            work_height: 64,
            work_width: 64,
            mean_filter_size: 3,
            gauss_sigma: 2.5,
            eps_log: 1e-2,
        }
    }
}

impl SpeParams {
    pub fn validate(&self) -> Result<()> {
        if self.work_height == 0 || self.work_width == 0 {
            return Err(Error::Config("spe.work_size must be >= 1".into()));
        }
        if self.mean_filter_size < 3 || self.mean_filter_size % 2 == 0 {
            return Err(Error::Config(format!(
                "spe.mean_filter_size must be odd and >= 3, got {}",
                self.mean_filter_size
            )));
        }
        if !(self.gauss_sigma > 0.0) {
            return Err(Error::Config("spe.gauss_sigma must be > 0".into()));
        }
        if !(self.eps_log > 0.0) {
            return Err(Error::Config("spe.eps_log must be > 0".into()));
        }
        Ok(())
    }
}

/// Amplitude, phase, log amplitude and residual of a map's 2-D DFT.
///
/// `log_spectrum = ln(amplitude + eps_log)`. The residual starts out as
/// zeros; [`spectral_residual`] fills it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumDecomposition {
    pub amplitude: GrayMap,
    pub phase: GrayMap,
    pub log_spectrum: GrayMap,
    pub residual: GrayMap,
}

/// Unnormalized 2-D DFT of a row-major buffer, in place.
pub fn fft_2d(height: usize, width: usize, buf: &mut [Complex<f64>], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = buf[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            buf[r * width + c] = column[r];
        }
    }
}

pub fn spectrum(map: &GrayMap, eps_log: f64) -> SpectrumDecomposition {
    let (h, w) = map.dims();
    let mut buf: Vec<Complex<f64>> = map.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(h, w, &mut buf, FftDirection::Forward);

    let amplitude: Vec<f64> = buf.iter().map(|z| z.norm()).collect();
    let phase: Vec<f64> = buf
        .iter()
        .map(|z| {
            let p = z.arg();
            // arg() lands on -pi for (-x, -0.0); fold it into (-pi, pi].
            if p <= -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                p
            }
        })
        .collect();
    let log_spectrum: Vec<f64> = amplitude.iter().map(|a| (a + eps_log).ln()).collect();

    let grid = |d: Vec<f64>| GrayMap::new(h, w, d).expect("dims match the input map");
    SpectrumDecomposition {
        amplitude: grid(amplitude),
        phase: grid(phase),
        log_spectrum: grid(log_spectrum),
        residual: grid(vec![0.0; h * w]),
    }
}

/// Real part of the normalized inverse DFT of `amplitude * e^{i phase}`.
pub fn inverse_spectrum(amplitude: &GrayMap, phase: &GrayMap) -> Result<GrayMap> {
    let (h, w) = amplitude.dims();
    let mut buf = polar_buffer(amplitude, phase)?;
    fft_2d(h, w, &mut buf, FftDirection::Inverse);
    let n = (h * w) as f64;
    GrayMap::new(h, w, buf.iter().map(|z| z.re / n).collect())
}

fn polar_buffer(amplitude: &GrayMap, phase: &GrayMap) -> Result<Vec<Complex<f64>>> {
    if amplitude.dims() != phase.dims() {
        return Err(Error::invalid(format!(
            "amplitude {:?} and phase {:?} differ in size",
            amplitude.dims(),
            phase.dims()
        )));
    }
    Ok(amplitude
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&a, &p)| Complex::from_polar(a, p))
        .collect())
}

/// Mean over an `n x n` window with clamp-to-edge borders.
pub fn box_filter(map: &GrayMap, n: usize) -> Result<GrayMap> {
    if n % 2 == 0 {
        return Err(Error::invalid(format!("box filter size must be odd, got {n}")));
    }
    let r = (n / 2) as isize;
    let (h, w) = map.dims();
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let area = (n * n) as f64;
    GrayMap::from_fn(h, w, |row, col| {
        let mut acc = 0.0;
        for dr in -r..=r {
            let rr = clamp(row as isize + dr, h);
            for dc in -r..=r {
                acc += map.get(rr, clamp(col as isize + dc, w));
            }
        }
        acc / area
    })
}

/// Moves the DC bin from `(0, 0)` to `(h / 2, w / 2)`.
fn center_dc(map: &GrayMap) -> GrayMap {
    let (h, w) = map.dims();
    GrayMap::from_fn(h, w, |r, c| map.get((r + h - h / 2) % h, (c + w - w / 2) % w)).expect("same dims")
}

/// Inverse of [`center_dc`].
fn uncenter_dc(map: &GrayMap) -> GrayMap {
    let (h, w) = map.dims();
    GrayMap::from_fn(h, w, |r, c| map.get((r + h / 2) % h, (c + w / 2) % w)).expect("same dims")
}

/// `L - mean_n(L)`.
pub fn spectral_residual(log_spectrum: &GrayMap, mean_filter_size: usize) -> Result<GrayMap> {
    if log_spectrum.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("log spectrum has non-finite values"));
    }
    let avg = box_filter(log_spectrum, mean_filter_size)?;
    GrayMap::new(
        log_spectrum.height(),
        log_spectrum.width(),
        log_spectrum
            .data()
            .iter()
            .zip(avg.data())
            .map(|(l, a)| l - a)
            .collect(),
    )
}

/// Separable Gaussian blur, kernel radius `ceil(3 sigma)`, clamp-to-edge borders.
pub fn gaussian_blur(map: &GrayMap, sigma: f64) -> Result<GrayMap> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("blur sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = map.dims();
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let horizontal = GrayMap::from_fn(h, w, |r, c| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * map.get(r, clamp(c as isize + d, w)))
            .sum()
    })?;
    GrayMap::from_fn(h, w, |r, c| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * horizontal.get(clamp(r as isize + d, h), c))
            .sum()
    })
}

/// Squared modulus of the inverse transform of `exp(R) e^{iP}`, before blurring.
pub fn residual_reconstruction(spec: &SpectrumDecomposition) -> Result<GrayMap> {
    let (h, w) = spec.residual.dims();
    let amplitude = spec.residual.map(f64::exp);
    let mut buf = polar_buffer(&amplitude, &spec.phase)?;
    fft_2d(h, w, &mut buf, FftDirection::Inverse);
    let n = (h * w) as f64;
    GrayMap::new(h, w, buf.iter().map(|z| (z / n).norm_sqr()).collect())
}

/// Saliency at the work grid size, normalized to `[0, 1]`.
pub fn spe_work_map(img: &RasterImage, params: &SpeParams) -> Result<GrayMap> {
    params.validate()?;
    let lum = rgb_to_luminance(img)?;
    let work = resize_bilinear(&lum, params.work_height, params.work_width)?;
    let mut spec = spectrum(&work, params.eps_log);
    // Filtered with DC centered so edge clamping only touches the highest frequencies.
    spec.residual = uncenter_dc(&spectral_residual(&center_dc(&spec.log_spectrum), params.mean_filter_size)?);
    let recon = residual_reconstruction(&spec)?;
    normalize_map(&gaussian_blur(&recon, params.gauss_sigma)?)
}

pub fn spe_saliency(img: &RasterImage, params: &SpeParams) -> Result<GrayMap> {
    let work = spe_work_map(img, params)?;
    normalize_map(&resize_bilinear(&work, img.height(), img.width())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &GrayMap, b: &GrayMap) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_spectrum_is_dc_only() {
        let c = 0.3;
        let m = GrayMap::filled(8, 6, c).unwrap();
        let s = spectrum(&m, 1e-8);
        assert!((s.amplitude.get(0, 0) - c * 48.0).abs() < 1e-12);
        for (i, &a) in s.amplitude.data().iter().enumerate().skip(1) {
            assert!(a < 1e-12, "bin {i} has amplitude {a}");
        }
        assert!(s.residual.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let mut m = GrayMap::filled(8, 8, 0.0).unwrap();
        m.set(0, 0, 1.0);
        let s = spectrum(&m, 1e-8);
        assert!(s.amplitude.data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
    }

    #[test]
    fn phase_in_half_open_interval() {
        let m = GrayMap::from_fn(5, 7, |r, c| ((r * 13 + c * 7) % 11) as f64 / 10.0).unwrap();
        let s = spectrum(&m, 1e-8);
        let pi = std::f64::consts::PI;
        assert!(s.phase.data().iter().all(|&p| p > -pi && p <= pi));
    }

    #[test]
    fn roundtrip_reproduces_input() {
        let m = GrayMap::from_fn(16, 12, |r, c| ((r * 31 + c * 17) % 23) as f64 / 22.0).unwrap();
        let s = spectrum(&m, 1e-8);
        let back = inverse_spectrum(&s.amplitude, &s.phase).unwrap();
        assert!(max_abs_diff(&back, &m) < 1e-9);
    }

    #[test]
    fn residual_of_constant_is_zero() {
        let l = GrayMap::filled(6, 6, -3.2).unwrap();
        let r = spectral_residual(&l, 3).unwrap();
        assert!(r.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn residual_of_ramp_vanishes_inside() {
        let l = GrayMap::from_fn(8, 8, |r, c| 0.5 * r as f64 - 0.25 * c as f64 + 1.0).unwrap();
        let r = spectral_residual(&l, 3).unwrap();
        for row in 1..7 {
            for col in 1..7 {
                assert!(r.get(row, col).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_of_center_spike() {
        let mut l = GrayMap::filled(5, 5, 0.0).unwrap();
        l.set(2, 2, 9.0);
        let r = spectral_residual(&l, 3).unwrap();
        assert!((r.get(2, 2) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn even_filter_rejected() {
        let l = GrayMap::filled(5, 5, 0.0).unwrap();
        assert!(matches!(spectral_residual(&l, 4), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_image_saliency_is_deterministic() {
        let img = RasterImage::filled(40, 30, 3, 0.6).unwrap();
        let a = spe_saliency(&img, &SpeParams::default()).unwrap();
        let b = spe_saliency(&img, &SpeParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (40, 30));
    }

    #[test]
    fn bright_patch_is_localized() {
        let img = RasterImage::from_fn(64, 64, 1, |r, c, _| {
            if (20..24).contains(&r) && (40..44).contains(&c) {
                0.95
            } else {
                0.2
            }
        })
        .unwrap();
        let params = SpeParams::default();
        let sal = spe_saliency(&img, &params).unwrap();
        let (r, c) = sal.argmax();
        let margin = 3.0 * params.gauss_sigma;
        assert!((r as f64) >= 20.0 - margin && (r as f64) < 24.0 + margin);
        assert!((c as f64) >= 40.0 - margin && (c as f64) < 44.0 + margin);
    }

    #[test]
    fn circular_shift_moves_reconstruction() {
        let (h, w) = (32, 32);
        let base = |r: usize, c: usize| {
            if (r, c) == (11, 9) {
                1.0
            } else if (10..13).contains(&r) && (8..11).contains(&c) {
                0.9
            } else {
                0.1
            }
        };
        let (sr, sc) = (5, 9);
        let a = GrayMap::from_fn(h, w, base).unwrap();
        let b = GrayMap::from_fn(h, w, |r, c| base((r + h - sr) % h, (c + w - sc) % w)).unwrap();
        let recon = |m: &GrayMap| {
            let mut s = spectrum(m, 1e-8);
            s.residual = spectral_residual(&s.log_spectrum, 3).unwrap();
            residual_reconstruction(&s).unwrap()
        };
        let (ra, rb) = (recon(&a), recon(&b));
        let (ar, ac) = ra.argmax();
        // The reconstruction can have symmetric twin maxima, so compare values.
        assert!((rb.get((ar + sr) % h, (ac + sc) % w) - rb.max()).abs() < 1e-12);
        for r in 0..h {
            for c in 0..w {
                assert!((ra.get(r, c) - rb.get((r + sr) % h, (c + sc) % w)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let m = GrayMap::filled(7, 9, 0.3).unwrap();
        let b = gaussian_blur(&m, 1.7).unwrap();
        assert!(max_abs_diff(&m, &b) < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn spectrum_roundtrip(h in 1usize..=64, w in 1usize..=64, seed in any::<u64>()) {
                let mut state = seed | 1;
                let m = GrayMap::from_fn(h, w, |_, _| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64
                }).unwrap();
                let s = spectrum(&m, 1e-8);
                let back = inverse_spectrum(&s.amplitude, &s.phase).unwrap();
                prop_assert!(max_abs_diff(&back, &m) < 1e-9);
            }

            #[test]
            fn saliency_in_unit_range(h in 4usize..80, w in 4usize..80, level in 0.0f64..1.0) {
                let img = RasterImage::from_fn(h, w, 1, |r, c, _| if (r + c) % 5 == 0 { level } else { 1.0 - level }).unwrap();
                let s = spe_saliency(&img, &SpeParams::default()).unwrap();
                prop_assert_eq!(s.dims(), (h, w));
                prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
