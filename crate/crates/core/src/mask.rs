//! Saliency thresholding and the three derived images.
//!
//! - FG: the image multiplied by its mask (background pixels become black).
//! - FG-ROI: the original image cropped to the mask's support.
//! - ROI: the FG image cropped to the mask's support.

use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, GrayMap, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct RoiParams {
    /// Threshold as a multiple of the mean saliency.
    pub alpha: f64,
    /// Minimum fraction of set bits for a row or column to be kept.
    pub rho: f64,
    /// Minimum mask area fraction before falling back to the quantile rule.
    pub min_coverage: f64,
}

impl Default for RoiParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            rho: 0.02,
            min_coverage: 0.01,
        }
    }
}

impl RoiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config("roi.alpha must be > 0".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config("roi.rho must be in (0, 1)".into()));
        }
        if !(self.min_coverage >= 0.0 && self.min_coverage < 1.0) {
            return Err(Error::Config("roi.min_coverage must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Quantile used when the mean-relative threshold selects too little.
pub const FALLBACK_QUANTILE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::invalid(format!(
                "mask of {} bits does not fit {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, bits)
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        bbox.check_within(self.height, self.width)?;
        let mut bits = Vec::with_capacity(bbox.height() * bbox.width());
        for r in bbox.row_start..bbox.row_end {
            bits.extend_from_slice(&self.bits[r * self.width + bbox.col_start..r * self.width + bbox.col_end]);
        }
        Self::new(bbox.height(), bbox.width(), bits)
    }

    /// 0.0 / 1.0 map, for export as a 0/255 image.
    pub fn to_map(&self) -> GrayMap {
        GrayMap::new(
            self.height,
            self.width,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are valid")
    }
}

/// Nearest-rank quantile.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// `saliency > alpha * mean`, falling back to `saliency >= q95` and then to
/// an all-ones mask whenever the area stays below `min_coverage`.
pub fn binarize(saliency: &GrayMap, params: &RoiParams) -> BinaryMask {
    let (h, w) = saliency.dims();
    let n = saliency.len() as f64;
    let enough = |m: &BinaryMask| {
        let c = m.count();
        c > 0 && c as f64 >= params.min_coverage * n
    };

    let threshold = params.alpha * saliency.mean();
    let primary = BinaryMask::new(h, w, saliency.data().iter().map(|&v| v > threshold).collect())
        .expect("dims come from a valid map");
    if enough(&primary) {
        return primary;
    }
    let q = quantile(saliency.data(), FALLBACK_QUANTILE);
    let fallback = BinaryMask::new(h, w, saliency.data().iter().map(|&v| v >= q).collect())
        .expect("dims come from a valid map");
    if enough(&fallback) {
        return fallback;
    }
    BinaryMask::filled(h, w, true).expect("dims come from a valid map")
}

fn check_dims(img: &RasterImage, mask: &BinaryMask) -> Result<()> {
    if img.dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "image is {:?} but mask is {:?}",
            img.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Keeps pixels under set mask bits and blackens the rest.
pub fn foreground(img: &RasterImage, mask: &BinaryMask) -> Result<RasterImage> {
    check_dims(img, mask)?;
    let ch = img.channels();
    let mut out = img.clone();
    for (px, &keep) in out.data_mut().chunks_exact_mut(ch).zip(mask.bits()) {
        if !keep {
            px.fill(0.0);
        }
    }
    Ok(out)
}

/// Indices of lines whose set-bit fraction is at least `rho`; full range if none.
fn kept_span(counts: &[usize], line_len: usize, rho: f64) -> (usize, usize) {
    let kept = |c: &usize| *c as f64 / line_len as f64 >= rho;
    match (counts.iter().position(kept), counts.iter().rposition(kept)) {
        (Some(first), Some(last)) => (first, last + 1),
        _ => (0, counts.len()),
    }
}

/// One pass: first to last row (column) whose set-bit fraction is `>= rho`.
/// An axis with no qualifying line keeps its full extent.
pub fn supported_bounds(mask: &BinaryMask, rho: f64) -> BoundingBox {
    let (h, w) = mask.dims();
    let mut rows = vec![0usize; h];
    let mut cols = vec![0usize; w];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                rows[r] += 1;
                cols[c] += 1;
            }
        }
    }
    let (row_start, row_end) = kept_span(&rows, w, rho);
    let (col_start, col_end) = kept_span(&cols, h, rho);
    BoundingBox {
        row_start,
        row_end,
        col_start,
        col_end,
    }
}

/// Crop window of the mask's support.
///
/// Repeats [`supported_bounds`] on the cropped mask until the window stops
/// shrinking, so cropping a crop with its own mask is the identity.
pub fn mask_bounds(mask: &BinaryMask, rho: f64) -> BoundingBox {
    let mut bbox = BoundingBox::full(mask.height(), mask.width());
    let mut current = mask.clone();
    loop {
        let inner = supported_bounds(&current, rho);
        if inner == BoundingBox::full(current.height(), current.width()) {
            return bbox;
        }
        bbox = BoundingBox {
            row_start: bbox.row_start + inner.row_start,
            row_end: bbox.row_start + inner.row_end,
            col_start: bbox.col_start + inner.col_start,
            col_end: bbox.col_start + inner.col_end,
        };
        current = current.crop(&inner).expect("inner box lies within the mask");
    }
}

/// Original image cropped to the mask's support.
pub fn fg_roi(img: &RasterImage, mask: &BinaryMask, params: &RoiParams) -> Result<RasterImage> {
    check_dims(img, mask)?;
    img.crop(&mask_bounds(mask, params.rho))
}

/// Foreground image cropped to the mask's support.
pub fn roi(img: &RasterImage, mask: &BinaryMask, params: &RoiParams) -> Result<RasterImage> {
    check_dims(img, mask)?;
    foreground(img, mask)?.crop(&mask_bounds(mask, params.rho))
}

/// The three derived images of one saliency map.
#[derive(Clone, Debug, PartialEq)]
pub struct Derived {
    pub mask: BinaryMask,
    pub fg: RasterImage,
    pub fg_roi: RasterImage,
    pub roi: RasterImage,
}

pub fn derive_images(img: &RasterImage, saliency: &GrayMap, params: &RoiParams) -> Result<Derived> {
    if img.dims() != saliency.dims() {
        return Err(Error::invalid(format!(
            "image is {:?} but saliency map is {:?}",
            img.dims(),
            saliency.dims()
        )));
    }
    let mask = binarize(saliency, params);
    let bbox = mask_bounds(&mask, params.rho);
    let fg = foreground(img, &mask)?;
    Ok(Derived {
        fg_roi: img.crop(&bbox)?,
        roi: fg.crop(&bbox)?,
        fg,
        mask,
    })
}
