//! Graph-based visual saliency.
//!
//! Every pixel of a small luminance feature map is a state of a Markov chain
//! on the fully connected pixel graph. The weight of the edge `a -> b` is the
//! log-ratio dissimilarity of the two feature values times a Gaussian falloff
//! in their spatial offset, plus a small additive floor that keeps the chain
//! ergodic. Saliency is the stationary distribution of the row-normalized
//! chain.

use crate::error::{Error, Result};
use crate::imaging::{normalize_map, resize_bilinear, rgb_to_luminance, GrayMap, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct GbvsParams {
    /// Longest side of the feature map.
    pub work_size: usize,
    /// Spatial falloff scale in pixels; `None` means `work_size / 6`.
    pub sigma: Option<f64>,
    /// Floor for feature values so the log stays finite.
    pub epsilon: f64,
    /// Additive weight on every edge, self loops included.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GbvsParams {
    fn default() -> Self {
        Self {
            work_size: 32,
            sigma: None,
            epsilon: 1e-4,
            lambda: 1e-6,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

impl GbvsParams {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.work_size as f64 / 6.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.work_size == 0 {
            return Err(Error::Config("gbvs.work_size must be >= 1".into()));
        }
        if !(self.sigma() > 0.0) {
            return Err(Error::Config("gbvs.sigma must be > 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config("gbvs.epsilon must be in (0, 1]".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("gbvs.lambda must be >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("gbvs.tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("gbvs.max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Feature map with every value in `[epsilon, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    map: GrayMap,
    epsilon: f64,
}

impl FeatureMap {
    /// Clamps `map` into `[epsilon, 1]`.
    pub fn new(map: GrayMap, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid(format!("feature floor {epsilon} not in (0, 1]")));
        }
        if map.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map has non-finite values"));
        }
        let map = map.map(|v| v.clamp(epsilon, 1.0));
        Ok(Self { map, epsilon })
    }

    pub fn map(&self) -> &GrayMap {
        &self.map
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }
}

/// Dims of the work grid: longest side becomes `work_size`, aspect preserved.
pub fn work_dims(height: usize, width: usize, work_size: usize) -> (usize, usize) {
    let longest = height.max(width) as f64;
    let scale = work_size as f64 / longest;
    let h = ((height as f64 * scale).round() as usize).max(1);
    let w = ((width as f64 * scale).round() as usize).max(1);
    (h, w)
}

pub fn build_feature_map(img: &RasterImage, params: &GbvsParams) -> Result<FeatureMap> {
    params.validate()?;
    let lum = rgb_to_luminance(img)?;
    let (h, w) = work_dims(img.height(), img.width(), params.work_size);
    FeatureMap::new(resize_bilinear(&lum, h, w)?, params.epsilon)
}

fn check_pixel(m: &FeatureMap, p: (usize, usize)) -> Result<()> {
    let (h, w) = m.dims();
    if p.0 >= h || p.1 >= w {
        return Err(Error::invalid(format!(
            "pixel {p:?} outside {h}x{w} feature map"
        )));
    }
    Ok(())
}

/// `|log(M(a) / M(b))|`, computed as a difference of logs so it is exactly symmetric.
pub fn dissimilarity(m: &FeatureMap, a: (usize, usize), b: (usize, usize)) -> Result<f64> {
    check_pixel(m, a)?;
    check_pixel(m, b)?;
    Ok((m.map.get(a.0, a.1).ln() - m.map.get(b.0, b.1).ln()).abs())
}

/// Gaussian falloff of the offset between two pixels.
pub fn distance_weight(a: (usize, usize), b: (usize, usize), sigma: f64) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    offset_weight(dr, dc, sigma)
}

#[inline]
fn offset_weight(dr: f64, dc: f64, sigma: f64) -> f64 {
    (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
}

/// Dense row-stochastic matrix over the flattened feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    probs: Vec<f64>,
}

impl TransitionMatrix {
    /// Wraps a row-major `n x n` matrix; rows must be nonnegative and sum to 1 within 1e-9.
    pub fn from_rows(n: usize, probs: Vec<f64>) -> Result<Self> {
        if n == 0 || probs.len() != n * n {
            return Err(Error::invalid(format!(
                "transition matrix needs {n}x{n} entries, got {}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(n).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { n, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n + j]
    }

    /// `pi * P`.
    pub fn left_multiply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &p) in self.probs.chunks_exact(self.n).zip(pi) {
            if p == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(row) {
                *o += p * t;
            }
        }
        out
    }
}

pub fn build_transition_matrix(m: &FeatureMap, params: &GbvsParams) -> Result<TransitionMatrix> {
    let (h, w) = m.dims();
    let n = h * w;
    let sigma = params.sigma();
    let lambda = params.lambda;
    let logs: Vec<f64> = m.map.data().iter().map(|v| v.ln()).collect();

    // Falloff depends only on |dr|, |dc|.
    let falloff: Vec<f64> = (0..h)
        .flat_map(|dr| (0..w).map(move |dc| offset_weight(dr as f64, dc as f64, sigma)))
        .collect();

    let mut probs = vec![0.0; n * n];
    for (a, row) in probs.chunks_exact_mut(n).enumerate() {
        let (ar, ac) = (a / w, a % w);
        let la = logs[a];
        let mut sum = 0.0;
        for (b, slot) in row.iter_mut().enumerate() {
            let weight = if a == b {
                lambda
            } else {
                let (br, bc) = (b / w, b % w);
                let f = falloff[ar.abs_diff(br) * w + ac.abs_diff(bc)];
                (la - logs[b]).abs() * f + lambda
            };
            *slot = weight;
            sum += weight;
        }
        if !(sum > 0.0) {
            return Err(Error::DegenerateGraph(format!(
                "state {a} has no outgoing weight (constant feature map?); use a positive lambda"
            )));
        }
        for slot in row.iter_mut() {
            *slot /= sum;
        }
    }
    Ok(TransitionMatrix { n, probs })
}

/// L1 norm of `pi * P - pi`.
pub fn stationarity_residual(p: &TransitionMatrix, pi: &[f64]) -> f64 {
    p.left_multiply(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Power iteration from the uniform distribution.
///
/// Iterates the lazy chain `(I + P) / 2`, which has the same stationary
/// distribution as `P` but no eigenvalue at -1, so nearly bipartite graphs
/// (two flat regions) still converge. Stops once `||pi P - pi||_1 < tol`.
pub fn stationary_distribution(p: &TransitionMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = p.n_states();
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = p.left_multiply(&pi);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual < tol {
            return Ok(pi);
        }
        let mut total = 0.0;
        for (x, y) in pi.iter_mut().zip(&next) {
            *x = 0.5 * (*x + y);
            total += *x;
        }
        for x in pi.iter_mut() {
            *x /= total;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Saliency of an already built feature map, at the feature map's size, in `[0, 1]`.
pub fn saliency_from_features(m: &FeatureMap, params: &GbvsParams) -> Result<GrayMap> {
    let p = build_transition_matrix(m, params)?;
    let pi = stationary_distribution(&p, params.tol, params.max_iter)?;
    let (h, w) = m.dims();
    normalize_map(&GrayMap::new(h, w, pi)?)
}

pub fn gbvs_saliency(img: &RasterImage, params: &GbvsParams) -> Result<GrayMap> {
    let m = build_feature_map(img, params)?;
    let sal = saliency_from_features(&m, params)?;
    let out = resize_bilinear(&sal, img.height(), img.width())?;
    normalize_map(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmap(h: usize, w: usize, data: &[f64], eps: f64) -> FeatureMap {
        FeatureMap::new(GrayMap::new(h, w, data.to_vec()).unwrap(), eps).unwrap()
    }

    #[test]
    fn feature_map_of_white_image() {
        let img = RasterImage::filled(64, 64, 3, 1.0).unwrap();
        let m = build_feature_map(&img, &GbvsParams::default()).unwrap();
        assert_eq!(m.dims(), (32, 32));
        assert!(m.map().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn feature_map_of_black_image_is_floor() {
        let img = RasterImage::filled(10, 10, 1, 0.0).unwrap();
        let params = GbvsParams::default();
        let m = build_feature_map(&img, &params).unwrap();
        assert!(m.map().data().iter().all(|&v| v == params.epsilon));
    }

    #[test]
    fn feature_map_preserves_aspect() {
        let img = RasterImage::filled(128, 64, 1, 0.5).unwrap();
        let m = build_feature_map(&img, &GbvsParams::default()).unwrap();
        assert_eq!(m.dims(), (32, 16));
        assert_eq!(work_dims(1, 500, 32), (1, 32));
    }

    #[test]
    fn dissimilarity_examples() {
        let e = std::f64::consts::E;
        let m = fmap(1, 4, &[0.3, 0.3, 0.2, 0.05], 1e-4);
        assert_eq!(dissimilarity(&m, (0, 0), (0, 1)).unwrap(), 0.0);
        let m2 = fmap(1, 2, &[e * 0.1, 0.1], 1e-4);
        assert!((dissimilarity(&m2, (0, 0), (0, 1)).unwrap() - 1.0).abs() < 1e-12);
        assert!((dissimilarity(&m, (0, 2), (0, 3)).unwrap() - 1.3862943611198906).abs() < 1e-12);
        assert!(dissimilarity(&m, (0, 0), (1, 0)).is_err());
    }

    #[test]
    fn distance_weight_examples() {
        assert_eq!(distance_weight((3, 3), (3, 3), 2.0), 1.0);
        let w = distance_weight((0, 0), (4, 4), 4.0);
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        let w = distance_weight((0, 0), (3, 4), 5.0);
        assert!((w - 0.6065306597126334).abs() < 1e-12);
        assert!(distance_weight((0, 0), (0, 1), 2.0) > distance_weight((0, 0), (1, 1), 2.0));
    }

    #[test]
    fn constant_map_gives_uniform_rows() {
        let m = fmap(3, 3, &[0.5; 9], 1e-4);
        let p = build_transition_matrix(&m, &GbvsParams::default()).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert!((p.get(i, j) - 1.0 / 9.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_state_map_without_smoothing() {
        let eps = 1e-4;
        let m = fmap(1, 2, &[eps, 1.0], eps);
        let params = GbvsParams {
            lambda: 0.0,
            ..GbvsParams::default()
        };
        let p = build_transition_matrix(&m, &params).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0]);
        assert_eq!(p.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn constant_map_without_smoothing_is_degenerate() {
        let m = fmap(2, 2, &[0.7; 4], 1e-4);
        let params = GbvsParams {
            lambda: 0.0,
            ..GbvsParams::default()
        };
        assert!(matches!(
            build_transition_matrix(&m, &params),
            Err(Error::DegenerateGraph(_))
        ));
    }

    #[test]
    fn uniform_chain_has_uniform_distribution() {
        let p = TransitionMatrix::from_rows(2, vec![0.5; 4]).unwrap();
        assert_eq!(stationary_distribution(&p, 1e-12, 10).unwrap(), vec![0.5, 0.5]);
        let p = TransitionMatrix::from_rows(4, vec![0.25; 16]).unwrap();
        assert_eq!(stationary_distribution(&p, 1e-12, 10).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let p = TransitionMatrix::from_rows(2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        match stationary_distribution(&p, 1e-15, 2) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn bipartite_two_region_map_converges() {
        // Two flat regions: almost all mass moves between regions each step.
        let m = fmap(4, 4, &[0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9], 1e-4);
        let params = GbvsParams::default();
        let p = build_transition_matrix(&m, &params).unwrap();
        let pi = stationary_distribution(&p, params.tol, params.max_iter).unwrap();
        assert!(stationarity_residual(&p, &pi) < params.tol);
    }

    #[test]
    fn toy_three_by_three_peaks_at_anomaly() {
        let mut data = [0.5; 9];
        data[4] = 0.9;
        let m = fmap(3, 3, &data, 1e-4);
        let sal = saliency_from_features(&m, &GbvsParams::default()).unwrap();
        assert_eq!(sal.argmax(), (1, 1));
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let img = RasterImage::filled(20, 20, 3, 0.4).unwrap();
        let sal = gbvs_saliency(&img, &GbvsParams::default()).unwrap();
        assert!(sal.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bright_square_is_salient() {
        let img = RasterImage::from_fn(32, 32, 1, |r, c, _| {
            if (12..20).contains(&r) && (12..20).contains(&c) {
                0.9
            } else {
                0.1
            }
        })
        .unwrap();
        let sal = gbvs_saliency(&img, &GbvsParams::default()).unwrap();
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for r in 0..32 {
            for c in 0..32 {
                if (12..20).contains(&r) && (12..20).contains(&c) {
                    inside.push(sal.get(r, c));
                } else {
                    outside.push(sal.get(r, c));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&inside) > mean(&outside));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_feature_map() -> impl Strategy<Value = FeatureMap> {
            (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
                proptest::collection::vec(1e-3f64..1.0, h * w)
                    .prop_map(move |d| fmap(h, w, &d, 1e-4))
            })
        }

        proptest! {
            #[test]
            fn rows_are_stochastic_and_positive(m in any_feature_map()) {
                let p = build_transition_matrix(&m, &GbvsParams::default()).unwrap();
                for i in 0..p.n_states() {
                    let s: f64 = p.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                    prop_assert!(p.row(i).iter().all(|&x| x > 0.0));
                }
            }

            #[test]
            fn dissimilarity_is_symmetric(m in any_feature_map(), seed in 0usize..1000) {
                let (h, w) = m.dims();
                let a = (seed % h, (seed / 7) % w);
                let b = ((seed / 3) % h, (seed / 11) % w);
                prop_assert_eq!(dissimilarity(&m, a, b).unwrap(), dissimilarity(&m, b, a).unwrap());
            }

            #[test]
            fn power_of_two_scaling_leaves_chain_unchanged(m in any_feature_map(), k in 1i32..4) {
                // Scaling by 2^-k is exact in floating point, so logs shift by a
                // constant and every pairwise difference is unchanged.
                let scaled = FeatureMap::new(m.map().map(|v| v * 2f64.powi(-k)), 1e-9).unwrap();
                let params = GbvsParams::default();
                let p1 = build_transition_matrix(&m, &params).unwrap();
                let p2 = build_transition_matrix(&scaled, &params).unwrap();
                for i in 0..p1.n_states() {
                    for j in 0..p1.n_states() {
                        prop_assert!((p1.get(i, j) - p2.get(i, j)).abs() < 1e-12);
                    }
                }
                let s1 = saliency_from_features(&m, &params).unwrap();
                let s2 = saliency_from_features(&scaled, &params).unwrap();
                for (a, b) in s1.data().iter().zip(s2.data()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }

            #[test]
            fn residual_below_tolerance(m in any_feature_map()) {
                let params = GbvsParams::default();
                let p = build_transition_matrix(&m, &params).unwrap();
                let pi = stationary_distribution(&p, params.tol, params.max_iter).unwrap();
                prop_assert!(stationarity_residual(&p, &pi) < params.tol);
                prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(pi.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
