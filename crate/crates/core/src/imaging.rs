//! Raster model shared by every saliency method.
//!
//! Images and maps are stored row-major as `f64` in `[0, 1]`. Decoding and
//! encoding go through the `image` crate; 8-bit samples map to `v / 255`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
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

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// The `channels` samples of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Single channel plane as a map.
    pub fn channel(&self, ch: usize) -> GrayMap {
        let data = self
            .data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect();
        GrayMap {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Reassembles an image from per-channel planes. Values are clamped to [0, 1].
    pub fn from_channels(planes: &[GrayMap]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("no channel planes"))?;
        if planes.iter().any(|p| p.dims() != first.dims()) {
            return Err(Error::invalid("channel planes differ in size"));
        }
        let n = first.len();
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i].clamp(0.0, 1.0));
            }
        }
        Self::new(first.height, first.width, planes.len(), data)
    }

    /// Copies the pixels inside `bbox`.
    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        bbox.check_within(self.height, self.width)?;
        let mut data = Vec::with_capacity(bbox.height() * bbox.width() * self.channels);
        for r in bbox.row_start..bbox.row_end {
            let start = (r * self.width + bbox.col_start) * self.channels;
            let end = (r * self.width + bbox.col_end) * self.channels;
            data.extend_from_slice(&self.data[start..end]);
        }
        Ok(Self {
            height: bbox.height(),
            width: bbox.width(),
            channels: self.channels,
            data,
        })
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Resizes every channel with [`resize_bilinear`].
    pub fn resized(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let planes = (0..self.channels)
            .map(|ch| resize_bilinear(&self.channel(ch), out_h, out_w))
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(&planes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "map buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
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

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `(row, col)` of the largest value; the first one in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayMap {
        GrayMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Half-open pixel window `[row_start, row_end) x [col_start, col_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl BoundingBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row_start: 0,
            row_end: height,
            col_start: 0,
            col_end: width,
        }
    }

    pub fn height(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn width(&self) -> usize {
        self.col_end - self.col_start
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }

    pub(crate) fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.row_start < self.row_end
            && self.row_end <= height
            && self.col_start < self.col_end
            && self.col_end <= width
        {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bounding box {self:?} does not fit a {height}x{width} raster"
            )))
        }
    }
}

pub fn rgb_to_luminance(img: &RasterImage) -> Result<GrayMap> {
    let data = match img.channels {
        1 => img.data.clone(),
        3 => img
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect(),
        n => {
            return Err(Error::invalid(format!(
                "luminance needs 1 or 3 channels, got {n}"
            )))
        }
    };
    GrayMap::new(img.height, img.width, data)
}

/// Bilinear resampling on pixel centers with clamp-to-edge.
pub fn resize_bilinear(map: &GrayMap, out_h: usize, out_w: usize) -> Result<GrayMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == map.dims() {
        return Ok(map.clone());
    }
    let rows = sample_positions(map.height, out_h);
    let cols = sample_positions(map.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, tr) in &rows {
        for &(c0, c1, tc) in &cols {
            let top = map.get(r0, c0) * (1.0 - tc) + map.get(r0, c1) * tc;
            let bottom = map.get(r1, c0) * (1.0 - tc) + map.get(r1, c1) * tc;
            data.push(top * (1.0 - tr) + bottom * tr);
        }
    }
    GrayMap::new(out_h, out_w, data)
}

/// For every output index: the two source indices and the weight of the second.
fn sample_positions(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let last = (in_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let i0 = lo as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - lo)
        })
        .collect()
}

/// Min-max rescale to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(map: &GrayMap) -> Result<GrayMap> {
    if let Some(v) = map.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("cannot normalize non-finite value {v}")));
    }
    let (lo, hi) = (map.min(), map.max());
    if hi <= lo {
        return GrayMap::filled(map.height, map.width, 0.0);
    }
    let range = hi - lo;
    Ok(map.map(|v| (v - lo) / range))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    ImageFormat::from_path(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// True when the extension names a format this crate can decode.
pub fn is_supported_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm" | "pbm" | "jpg" | "jpeg" | "bmp")
    )
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let dynimg = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(from_dynamic(dynimg))
}

pub fn from_dynamic(dynimg: DynamicImage) -> RasterImage {
    let gray = matches!(
        dynimg,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = dynimg.into_luma8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        RasterImage {
            height: h as usize,
            width: w as usize,
            channels: 1,
            data,
        }
    } else {
        let buf = dynimg.into_rgb8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        RasterImage {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data,
        }
    }
}

pub fn to_dynamic(img: &RasterImage) -> DynamicImage {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    if img.channels == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size checked"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size checked"))
    }
}

/// Writes an image; the format follows the file extension. Gray-only
/// formats (`.pgm`) receive the luminance of color images.
pub fn save_image(img: &RasterImage, path: &Path) -> Result<()> {
    let format = format_for(path)?;
    let mut dynimg = to_dynamic(img);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "pgm" && img.channels == 3 {
        dynimg = to_dynamic(&gray_image(&rgb_to_luminance(img)?));
    } else if ext == "ppm" && img.channels == 1 {
        dynimg = DynamicImage::ImageRgb8(dynimg.into_rgb8());
    }
    write_dynamic(&dynimg, path, format)
}

fn write_dynamic(dynimg: &DynamicImage, path: &Path, format: ImageFormat) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynimg.save_with_format(path, format).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gray_image(map: &GrayMap) -> RasterImage {
    RasterImage {
        height: map.height,
        width: map.width,
        channels: 1,
        data: map.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

/// Writes a map as 8-bit gray (`round(v * 255)`), PGM or PNG by extension.
pub fn save_map(map: &GrayMap, path: &Path) -> Result<()> {
    let format = format_for(path)?;
    let dynimg = to_dynamic(&gray_image(map));
    let dynimg = if format == ImageFormat::Pnm
        && path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("ppm")) == Some(true)
    {
        DynamicImage::ImageRgb8(dynimg.into_rgb8())
    } else {
        dynimg
    };
    write_dynamic(&dynimg, path, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, data: &[f64]) -> GrayMap {
        GrayMap::new(h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn white_rgb_is_full_luminance() {
        let img = RasterImage::filled(4, 5, 3, 1.0).unwrap();
        let lum = rgb_to_luminance(&img).unwrap();
        for &v in lum.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_luminance_is_identity() {
        let img = RasterImage::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(rgb_to_luminance(&img).unwrap().data(), img.data());
    }

    #[test]
    fn pure_red_luminance() {
        let img = RasterImage::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(rgb_to_luminance(&img).unwrap().data(), &[0.2126]);
    }

    #[test]
    fn bad_channel_count_rejected() {
        assert!(matches!(
            RasterImage::new(1, 1, 2, vec![0.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn resize_same_dims_is_identity() {
        let m = map(2, 3, &[0.1, 0.7, 0.3, 0.9, 0.0, 0.5]);
        assert_eq!(resize_bilinear(&m, 2, 3).unwrap(), m);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let m = GrayMap::filled(3, 7, 0.42).unwrap();
        let out = resize_bilinear(&m, 11, 2).unwrap();
        assert_eq!(out.dims(), (11, 2));
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn resize_one_by_two_to_one_by_three() {
        // Output centers at source x = -1/6 (clamped), 1/2, 7/6 (clamped).
        let out = resize_bilinear(&map(1, 2, &[0.0, 1.0]), 1, 3).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_zero_target_rejected() {
        let m = map(1, 2, &[0.0, 1.0]);
        assert!(resize_bilinear(&m, 0, 3).is_err());
        assert!(resize_bilinear(&m, 3, 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_map(&map(1, 3, &[2.0, 4.0, 6.0])).unwrap().data(), &[0.0, 0.5, 1.0]);
        assert_eq!(
            normalize_map(&GrayMap::filled(2, 2, 3.0).unwrap()).unwrap().data(),
            &[0.0; 4]
        );
        let unit = map(1, 4, &[0.0, 0.25, 1.0, 0.6]);
        assert_eq!(normalize_map(&unit).unwrap(), unit);
    }

    #[test]
    fn normalize_rejects_nan() {
        assert!(normalize_map(&map(1, 2, &[0.0, f64::NAN])).is_err());
        assert!(normalize_map(&map(1, 2, &[0.0, f64::INFINITY])).is_err());
    }

    #[test]
    fn crop_copies_window() {
        let img = RasterImage::from_fn(3, 4, 1, |r, c, _| (r * 4 + c) as f64 / 12.0).unwrap();
        let bbox = BoundingBox {
            row_start: 1,
            row_end: 3,
            col_start: 2,
            col_end: 4,
        };
        let out = img.crop(&bbox).unwrap();
        assert_eq!(out.dims(), (2, 2));
        assert_eq!(out.data(), &[6.0 / 12.0, 7.0 / 12.0, 10.0 / 12.0, 11.0 / 12.0]);
        let bad = BoundingBox { row_end: 4, ..bbox };
        assert!(img.crop(&bad).is_err());
    }

    #[test]
    fn png_and_pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(5, 6, 3, |r, c, ch| ((r * 31 + c * 7 + ch * 50) % 256) as f64 / 255.0)
            .unwrap();
        let png = dir.path().join("a.png");
        save_image(&img, &png).unwrap();
        assert_eq!(load_image(&png).unwrap(), img);

        let m = GrayMap::from_fn(4, 4, |r, c| (r * 4 + c) as f64 / 15.0).unwrap();
        let pgm = dir.path().join("m.pgm");
        save_map(&m, &pgm).unwrap();
        let back = load_image(&pgm).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_map() -> impl Strategy<Value = GrayMap> {
            (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
                proptest::collection::vec(-5.0f64..5.0, h * w)
                    .prop_map(move |d| GrayMap::new(h, w, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn resize_is_value_bounded(m in any_map(), oh in 1usize..20, ow in 1usize..20) {
                let out = resize_bilinear(&m, oh, ow).unwrap();
                prop_assert!(out.min() >= m.min() - 1e-12);
                prop_assert!(out.max() <= m.max() + 1e-12);
            }

            #[test]
            fn normalize_is_idempotent(m in any_map()) {
                let once = normalize_map(&m).unwrap();
                if m.max() > m.min() {
                    prop_assert_eq!(normalize_map(&once).unwrap(), once);
                }
            }

            #[test]
            fn gray_triple_luminance(v in 0.0f64..=1.0) {
                let img = RasterImage::new(1, 1, 3, vec![v, v, v]).unwrap();
                let lum = rgb_to_luminance(&img).unwrap();
                prop_assert!((lum.data()[0] - v).abs() < 1e-12);
            }
        }
    }
}
