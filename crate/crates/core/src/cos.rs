//! Cluster-based (co-)saliency.
//!
//! Pixels are clustered by color in CIE Lab. Each cluster is scored by three
//! cues and every pixel inherits the combined score of its cluster:
//!
//! - contrast: size-weighted color distance to all other clusters, so rare
//!   colors score high;
//! - spatial: Gaussian falloff of the distance between the cluster's spatial
//!   centroid and the image center;
//! - corresponding (multi-image only): how evenly the cluster spreads over
//!   the images, `1 - Var_j(q_k) / Var_max`.

use palette::white_point::D65;
use palette::{IntoColor, Lab, Srgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gbvs::work_dims;
use crate::imaging::{normalize_map, resize_bilinear, GrayMap, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct CosParams {
    pub k_single: usize,
    pub k_multi: usize,
    /// Spatial cue scale as a fraction of the image half-diagonal.
    pub sigma_s: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Images are downsampled so their longest side is at most this.
    pub max_side: usize,
}

impl Default for CosParams {
    fn default() -> Self {
        Self {
            k_single: 6,
            k_multi: 10,
            sigma_s: 0.5,
            seed: 0,
            max_iter: 100,
            max_side: 128,
        }
    }
}

impl CosParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_single == 0 || self.k_multi == 0 {
            return Err(Error::Config("cos.k_single and cos.k_multi must be >= 1".into()));
        }
        if !(self.sigma_s > 0.0) {
            return Err(Error::Config("cos.sigma_s must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("cos.max_iter must be >= 1".into()));
        }
        if self.max_side == 0 {
            return Err(Error::Config("cos.max_side must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel clustering input, pooled over one or more images.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelFeatureSet {
    /// Lab scaled to roughly `[0, 1]`: `(L / 100, (a + 128) / 255, (b + 128) / 255)`.
    pub colors: Vec<[f64; 3]>,
    /// Pixel centers `((col + 0.5) / w, (row + 0.5) / h)`.
    pub positions: Vec<[f64; 2]>,
    pub image_index: Vec<usize>,
    /// `(height, width)` of every image.
    pub image_dims: Vec<(usize, usize)>,
}

impl PixelFeatureSet {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Scaled Lab triple of an sRGB pixel with channels in `[0, 1]`.
pub fn scaled_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lab: Lab<D65, f64> = Srgb::new(rgb[0], rgb[1], rgb[2]).into_linear().into_color();
    [lab.l / 100.0, (lab.a + 128.0) / 255.0, (lab.b + 128.0) / 255.0]
}

pub fn extract_pixel_features(imgs: &[RasterImage]) -> Result<PixelFeatureSet> {
    if imgs.is_empty() {
        return Err(Error::invalid("co-saliency needs at least one image"));
    }
    let total: usize = imgs.iter().map(|i| i.height() * i.width()).sum();
    let mut set = PixelFeatureSet {
        colors: Vec::with_capacity(total),
        positions: Vec::with_capacity(total),
        image_index: Vec::with_capacity(total),
        image_dims: imgs.iter().map(|i| i.dims()).collect(),
    };
    for (j, img) in imgs.iter().enumerate() {
        let (h, w) = img.dims();
        for r in 0..h {
            for c in 0..w {
                let px = img.pixel(r, c);
                let rgb = if px.len() == 3 {
                    [px[0], px[1], px[2]]
                } else {
                    [px[0]; 3]
                };
                set.colors.push(scaled_lab(rgb));
                set.positions
                    .push([(c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64]);
                set.image_index.push(j);
            }
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<[f64; 3]>,
    pub assignment: Vec<usize>,
    pub counts: Vec<usize>,
    /// `image_counts[k][j]`: pixels of cluster `k` in image `j`.
    pub image_counts: Vec<Vec<usize>>,
    /// `spatial_centroids[k][j]`: mean pixel-center position `(x, y)` of
    /// cluster `k` in image `j`, in pixels; `None` when absent from the image.
    pub spatial_centroids: Vec<Vec<Option<(f64, f64)>>>,
    pub image_dims: Vec<(usize, usize)>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn kmeans_pp(colors: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = colors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(colors[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = colors.iter().map(|c| dist2(c, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = colors[pick];
        for (d, x) in d2.iter_mut().zip(colors) {
            *d = d.min(dist2(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn recompute_centroids(colors: &[[f64; 3]], assignment: &[usize], centroids: &mut [[f64; 3]]) -> Vec<usize> {
    let k = centroids.len();
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in colors.iter().zip(assignment) {
        counts[a] += 1;
        for d in 0..3 {
            sums[a][d] += x[d];
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
        if n > 0 {
            for d in 0..3 {
                c[d] = s[d] / n as f64;
            }
        }
    }
    counts
}

/// Squared color distance below which a point counts as sitting on its centroid.
const RESEED_MIN_DIST2: f64 = 1e-18;

/// Seeded k-means++ followed by Lloyd iterations on the color features.
///
/// Ties go to the lowest cluster index. A cluster left empty takes the point
/// farthest from its centroid, if that point is further than rounding noise.
pub fn kmeans(features: &PixelFeatureSet, k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let colors = &features.colors;
    let n = colors.len();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} available pixels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(colors, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let mut changed = 0;
        for (i, x) in colors.iter().enumerate() {
            let (mut best, mut best_d) = (0, dist2(x, &centroids[0]));
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let d = dist2(x, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed += 1;
            }
            dists[i] = best_d;
        }
        trace.push(dists.iter().sum());
        if changed == 0 {
            converged = true;
            break;
        }
        let mut counts = recompute_centroids(colors, &assignment, &mut centroids);
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .map(|i| (i, dist2(&colors[i], &centroids[assignment[i]])))
                .filter(|&(_, d)| d > RESEED_MIN_DIST2)
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            let Some((i, _)) = far else { break };
            assignment[i] = empty;
            centroids[empty] = colors[i];
            counts = recompute_centroids(colors, &assignment, &mut centroids);
        }
    }
    if !converged {
        recompute_centroids(colors, &assignment, &mut centroids);
    }
    Ok(summarize(features, k, centroids, assignment, trace, converged))
}

fn summarize(
    features: &PixelFeatureSet,
    k: usize,
    centroids: Vec<[f64; 3]>,
    assignment: Vec<usize>,
    objective_trace: Vec<f64>,
    converged: bool,
) -> ClusterModel {
    let n_images = features.image_dims.len();
    let mut counts = vec![0usize; k];
    let mut image_counts = vec![vec![0usize; n_images]; k];
    let mut pos_sums = vec![vec![(0.0, 0.0); n_images]; k];
    for ((&a, &j), p) in assignment.iter().zip(&features.image_index).zip(&features.positions) {
        let (h, w) = features.image_dims[j];
        counts[a] += 1;
        image_counts[a][j] += 1;
        pos_sums[a][j].0 += p[0] * w as f64;
        pos_sums[a][j].1 += p[1] * h as f64;
    }
    let spatial_centroids = pos_sums
        .iter()
        .zip(&image_counts)
        .map(|(sums, cnts)| {
            sums.iter()
                .zip(cnts)
                .map(|(&(sx, sy), &c)| (c > 0).then(|| (sx / c as f64, sy / c as f64)))
                .collect()
        })
        .collect();
    ClusterModel {
        k,
        centroids,
        assignment,
        counts,
        image_counts,
        spatial_centroids,
        image_dims: features.image_dims.clone(),
        objective_trace,
        converged,
    }
}

/// `w_k = sum_{i != k} (n_i / N) * ||mu_k - mu_i||`; empty clusters score 0.
pub fn contrast_cue(model: &ClusterModel) -> Vec<f64> {
    let total: usize = model.counts.iter().sum();
    (0..model.k)
        .map(|k| {
            if model.counts[k] == 0 {
                return 0.0;
            }
            (0..model.k)
                .filter(|&i| i != k)
                .map(|i| {
                    model.counts[i] as f64 / total as f64
                        * dist2(&model.centroids[k], &model.centroids[i]).sqrt()
                })
                .sum()
        })
        .collect()
}

/// Gaussian center prior for a point `(x, y)` in pixels of an `(h, w)` image.
pub fn spatial_weight(point: (f64, f64), dims: (usize, usize), sigma_s: f64) -> f64 {
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    let half_diag = 0.5 * (h * h + w * w).sqrt();
    let scale = sigma_s * half_diag;
    let (dx, dy) = (point.0 - 0.5 * w, point.1 - 0.5 * h);
    (-(dx * dx + dy * dy) / (2.0 * scale * scale)).exp()
}

/// Center prior of every cluster's spatial centroid. With several images the
/// per-image values are averaged with the cluster's pixel share in each image.
pub fn spatial_cue(model: &ClusterModel, sigma_s: f64) -> Vec<f64> {
    (0..model.k)
        .map(|k| {
            if model.counts[k] == 0 {
                return 0.0;
            }
            let n_k = model.counts[k] as f64;
            model.spatial_centroids[k]
                .iter()
                .zip(&model.image_dims)
                .zip(&model.image_counts[k])
                .filter_map(|((c, &dims), &cnt)| c.map(|c| cnt as f64 / n_k * spatial_weight(c, dims, sigma_s)))
                .sum()
        })
        .collect()
}

/// Evenness of each cluster across the images: `1 - Var_j(q_k) / ((J - 1) / J^2)`.
pub fn corresponding_cue(model: &ClusterModel) -> Result<Vec<f64>> {
    let j = model.image_dims.len();
    if j < 2 {
        return Err(Error::invalid(format!(
            "corresponding cue needs at least 2 images, got {j}"
        )));
    }
    let jf = j as f64;
    let var_max = (jf - 1.0) / (jf * jf);
    Ok((0..model.k)
        .map(|k| {
            if model.counts[k] == 0 {
                return 0.0;
            }
            let n_k = model.counts[k] as f64;
            let q: Vec<f64> = model.image_counts[k].iter().map(|&c| c as f64 / n_k).collect();
            let mean = 1.0 / jf;
            let var = q.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / jf;
            (1.0 - var / var_max).clamp(0.0, 1.0)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CueVector {
    pub contrast: Vec<f64>,
    pub spatial: Vec<f64>,
    pub corresponding: Option<Vec<f64>>,
    /// Elementwise product of the cues, divided by its maximum when positive.
    pub combined: Vec<f64>,
}

pub fn combine_cues(contrast: Vec<f64>, spatial: Vec<f64>, corresponding: Option<Vec<f64>>) -> CueVector {
    let mut combined: Vec<f64> = contrast.iter().zip(&spatial).map(|(a, b)| a * b).collect();
    if let Some(u) = &corresponding {
        combined.iter_mut().zip(u).for_each(|(c, u)| *c *= u);
    }
    let max = combined.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        combined.iter_mut().for_each(|c| *c /= max);
    }
    CueVector {
        contrast,
        spatial,
        corresponding,
        combined,
    }
}

/// Everything computed on the way to the saliency maps.
#[derive(Clone, Debug)]
pub struct CosAnalysis {
    pub model: ClusterModel,
    pub cues: CueVector,
    /// Per-image maps at the clustering resolution.
    pub work_maps: Vec<GrayMap>,
    pub maps: Vec<GrayMap>,
}

fn downsample(img: &RasterImage, max_side: usize) -> Result<RasterImage> {
    if img.height().max(img.width()) <= max_side {
        return Ok(img.clone());
    }
    let (h, w) = work_dims(img.height(), img.width(), max_side);
    img.resized(h, w)
}

pub fn cos_analyze(imgs: &[RasterImage], params: &CosParams) -> Result<CosAnalysis> {
    params.validate()?;
    if imgs.is_empty() {
        return Err(Error::invalid("co-saliency needs at least one image"));
    }
    let small = imgs
        .iter()
        .map(|i| downsample(i, params.max_side))
        .collect::<Result<Vec<_>>>()?;
    let features = extract_pixel_features(&small)?;
    let multi = imgs.len() > 1;
    let k = if multi { params.k_multi } else { params.k_single }.min(features.len());
    let model = kmeans(&features, k, params.seed, params.max_iter)?;

    let contrast = contrast_cue(&model);
    let spatial = spatial_cue(&model, params.sigma_s);
    let corresponding = if multi { Some(corresponding_cue(&model)?) } else { None };
    let cues = combine_cues(contrast, spatial, corresponding);

    let mut offset = 0;
    let mut work_maps = Vec::with_capacity(small.len());
    let mut maps = Vec::with_capacity(small.len());
    for (s, orig) in small.iter().zip(imgs) {
        let n = s.height() * s.width();
        let values = model.assignment[offset..offset + n]
            .iter()
            .map(|&a| cues.combined[a])
            .collect();
        offset += n;
        let work = normalize_map(&GrayMap::new(s.height(), s.width(), values)?)?;
        let full = normalize_map(&resize_bilinear(&work, orig.height(), orig.width())?)?;
        work_maps.push(work);
        maps.push(full);
    }
    Ok(CosAnalysis {
        model,
        cues,
        work_maps,
        maps,
    })
}

/// One saliency map per input image; more than one image enables the
/// corresponding cue over the pooled clustering.
pub fn cos_saliency(imgs: &[RasterImage], params: &CosParams) -> Result<Vec<GrayMap>> {
    Ok(cos_analyze(imgs, params)?.maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_from_counts(centroids: Vec<[f64; 3]>, image_counts: Vec<Vec<usize>>, dims: Vec<(usize, usize)>) -> ClusterModel {
        let k = centroids.len();
        let counts = image_counts.iter().map(|c| c.iter().sum()).collect();
        ClusterModel {
            k,
            centroids,
            assignment: Vec::new(),
            counts,
            spatial_centroids: image_counts
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(&dims)
                        .map(|(&n, &(h, w))| (n > 0).then_some((w as f64 / 2.0, h as f64 / 2.0)))
                        .collect()
                })
                .collect(),
            image_counts,
            image_dims: dims,
            objective_trace: Vec::new(),
            converged: true,
        }
    }

    pub(crate) fn disk_image(size: usize, radius: f64, disk: [f64; 3], bg: [f64; 3]) -> RasterImage {
        let c = size as f64 / 2.0;
        RasterImage::from_fn(size, size, 3, |r, col, ch| {
            let (dy, dx) = (r as f64 + 0.5 - c, col as f64 + 0.5 - c);
            if dx * dx + dy * dy <= radius * radius {
                disk[ch]
            } else {
                bg[ch]
            }
        })
        .unwrap()
    }

    #[test]
    fn white_is_full_lightness() {
        let lab = scaled_lab([1.0, 1.0, 1.0]);
        assert!((lab[0] - 1.0).abs() < 1e-6);
        assert!((lab[1] - 128.0 / 255.0).abs() < 1e-3);
        assert!((lab[2] - 128.0 / 255.0).abs() < 1e-3);
    }

    #[test]
    fn reference_lab_values() {
        // Standard D65 Lab of the sRGB primaries.
        let red = scaled_lab([1.0, 0.0, 0.0]);
        let blue = scaled_lab([0.0, 0.0, 1.0]);
        assert!((red[0] * 100.0 - 53.24).abs() < 0.05);
        assert!((red[1] * 255.0 - 128.0 - 80.09).abs() < 0.1);
        assert!((red[2] * 255.0 - 128.0 - 67.20).abs() < 0.1);
        assert!((blue[0] * 100.0 - 32.30).abs() < 0.05);
        assert!((blue[2] * 255.0 - 128.0 + 107.86).abs() < 0.1);

        let g1 = scaled_lab([0.5; 3]);
        let g2 = scaled_lab([0.5 + 1.0 / 255.0; 3]);
        assert!(dist2(&red, &blue) > dist2(&g1, &g2));
    }

    #[test]
    fn identical_pixels_identical_features() {
        let img = RasterImage::filled(2, 2, 3, 0.3).unwrap();
        let f = extract_pixel_features(&[img]).unwrap();
        assert!(f.colors.windows(2).all(|w| w[0] == w[1]));
        assert!(f.positions.iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn empty_image_list_rejected() {
        assert!(extract_pixel_features(&[]).is_err());
        assert!(cos_saliency(&[], &CosParams::default()).is_err());
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let img = RasterImage::from_fn(3, 3, 3, |r, c, ch| ((r + c + ch) % 4) as f64 / 4.0).unwrap();
        let f = extract_pixel_features(&[img]).unwrap();
        let m = kmeans(&f, 1, 5, 100).unwrap();
        for d in 0..3 {
            let mean = f.colors.iter().map(|c| c[d]).sum::<f64>() / f.len() as f64;
            assert!((m.centroids[0][d] - mean).abs() < 1e-12);
        }
        assert_eq!(contrast_cue(&m), vec![0.0]);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let f = extract_pixel_features(&[RasterImage::filled(2, 2, 3, 0.1).unwrap()]).unwrap();
        assert!(matches!(kmeans(&f, 5, 0, 10), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn separated_blobs_are_pure() {
        let img = RasterImage::from_fn(20, 20, 3, |r, c, ch| {
            let jitter = ((r * 7 + c * 3 + ch) % 5) as f64 * 0.004;
            if c < 10 {
                [0.9, 0.1, 0.1][ch] - jitter
            } else {
                [0.1, 0.2, 0.9][ch] + jitter
            }
        })
        .unwrap();
        let f = extract_pixel_features(&[img]).unwrap();
        let m = kmeans(&f, 2, 11, 100).unwrap();
        let left = m.assignment[0];
        for (i, &a) in m.assignment.iter().enumerate() {
            assert_eq!(a == left, i % 20 < 10);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let img = RasterImage::from_fn(16, 16, 3, |r, c, ch| ((r * 5 + c * 11 + ch * 3) % 17) as f64 / 16.0).unwrap();
        let f = extract_pixel_features(&[img]).unwrap();
        assert_eq!(kmeans(&f, 4, 99, 100).unwrap(), kmeans(&f, 4, 99, 100).unwrap());
    }

    #[test]
    fn contrast_examples() {
        let dims = vec![(10, 10)];
        let m = model_from_counts(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![vec![50], vec![50]], dims.clone());
        let c = contrast_cue(&m);
        assert_eq!(c[0], c[1]);

        let m = model_from_counts(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![vec![90], vec![10]], dims);
        let c = contrast_cue(&m);
        assert!((c[0] - 0.1).abs() < 1e-12);
        assert!((c[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn spatial_examples() {
        let dims = (30, 40);
        assert_eq!(spatial_weight((20.0, 15.0), dims, 0.5), 1.0);
        assert!(spatial_weight((20.0, 15.0), dims, 0.5) > spatial_weight((0.5, 0.5), dims, 0.5));
        // Half-diagonal of a 30x40 image is 25; sigma_s 0.5 puts sigma at 12.5.
        let v = spatial_weight((20.0 + 12.5, 15.0), dims, 0.5);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn corresponding_examples() {
        let dims = vec![(4, 4), (4, 4)];
        let m = model_from_counts(vec![[0.0; 3], [1.0; 3], [0.5; 3]], vec![vec![8, 8], vec![0, 5], vec![6, 2]], dims);
        let u = corresponding_cue(&m).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12);
        assert!(u[1].abs() < 1e-12);
        assert!((u[2] - 0.75).abs() < 1e-12);

        let single = model_from_counts(vec![[0.0; 3]], vec![vec![4]], vec![(2, 2)]);
        assert!(corresponding_cue(&single).is_err());
    }

    #[test]
    fn single_color_image_gives_zero_map() {
        let img = RasterImage::filled(20, 24, 3, 0.35).unwrap();
        let maps = cos_saliency(&[img], &CosParams::default()).unwrap();
        assert!(maps[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn red_disk_is_the_salient_cluster() {
        let size = 96;
        let radius = (0.1 * (size * size) as f64 / std::f64::consts::PI).sqrt();
        let img = disk_image(size, radius, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let a = cos_analyze(&[img], &CosParams::default()).unwrap();
        let disk_cluster = a.model.assignment[(size / 2) * size + size / 2];
        let best = a.cues.combined[disk_cluster];
        assert_eq!(best, 1.0);
        for (k, &v) in a.cues.combined.iter().enumerate() {
            if k != disk_cluster {
                assert!(v < best);
            }
        }
    }

    #[test]
    fn shared_object_beats_single_image_blob() {
        let size = 64;
        let a = disk_image(size, 10.0, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let mut b = disk_image(size, 10.0, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        for r in 0..10 {
            for c in 0..10 {
                let i = (r * size + c) * 3;
                b.data_mut()[i..i + 3].copy_from_slice(&[1.0, 1.0, 0.0]);
            }
        }
        let an = cos_analyze(&[a, b], &CosParams::default()).unwrap();
        let n0 = size * size;
        let disk = an.model.assignment[(size / 2) * size + size / 2];
        let blob = an.model.assignment[n0];
        assert_ne!(disk, blob);
        let u = an.cues.corresponding.as_ref().unwrap();
        assert!(u[disk] > u[blob]);
        assert!(u[blob] < 1e-12);
        assert_eq!(an.maps.len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn noisy_image() -> impl Strategy<Value = RasterImage> {
            (4usize..20, 4usize..20, any::<u64>()).prop_map(|(h, w, seed)| {
                let mut s = seed | 1;
                RasterImage::from_fn(h, w, 3, |_, _, _| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    ((s >> 11) % 6) as f64 / 5.0
                })
                .unwrap()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn objective_never_increases(img in noisy_image(), k in 1usize..6, seed in any::<u64>()) {
                let f = extract_pixel_features(&[img]).unwrap();
                let m = kmeans(&f, k, seed, 100).unwrap();
                for w in m.objective_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
                prop_assert_eq!(m.counts.iter().sum::<usize>(), f.len());
                prop_assert!(m.assignment.iter().all(|&a| a < k));
                if m.converged {
                    for (j, c) in m.centroids.iter().enumerate() {
                        let members: Vec<_> = f.colors.iter().zip(&m.assignment).filter(|(_, &a)| a == j).map(|(x, _)| x).collect();
                        if members.is_empty() { continue; }
                        for d in 0..3 {
                            let mean = members.iter().map(|x| x[d]).sum::<f64>() / members.len() as f64;
                            prop_assert!((c[d] - mean).abs() < 1e-6);
                        }
                    }
                }
            }

            #[test]
            fn cue_ranges(img in noisy_image(), seed in any::<u64>()) {
                let params = CosParams { seed, ..CosParams::default() };
                let a = cos_analyze(&[img], &params).unwrap();
                prop_assert!(a.cues.contrast.iter().all(|&v| v >= 0.0));
                prop_assert!(a.cues.spatial.iter().zip(&a.model.counts).all(|(&v, &n)| n == 0 || (v > 0.0 && v <= 1.0)));
                prop_assert!(a.cues.combined.iter().all(|&v| (0.0..=1.0).contains(&v)));
                if a.cues.combined.iter().any(|&v| v > 0.0) {
                    prop_assert_eq!(a.cues.combined.iter().copied().fold(0.0, f64::max), 1.0);
                }
                for m in &a.maps {
                    prop_assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }

            #[test]
            fn saliency_is_deterministic(img in noisy_image(), seed in any::<u64>()) {
                let params = CosParams { seed, ..CosParams::default() };
                let a = cos_saliency(std::slice::from_ref(&img), &params).unwrap();
                let b = cos_saliency(&[img], &params).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
