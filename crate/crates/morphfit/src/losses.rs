//! The self-supervised face loss stack: masked pixel loss, perceptual
//! loss, landmark loss and coefficient regularization, each returning its
//! value together with an analytic adjoint, plus their weighted
//! combination with a single gradient over all parameters.
//!
//! Pixel and landmark losses are means (mask-mass / landmark-count
//! normalized), so the loss scale is resolution independent and the
//! default weights work across image sizes.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::decode::{decode_geometry, decode_geometry_vjp_sparse, select_landmarks_3d};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::MorphableModel;
use crate::params::FaceParams;
use crate::raster::rasterize;
use crate::render::{backward_from, prepare, shade_with_assignment};
use crate::scene::{project, project_vjp};

/// Weights of the four loss terms. Defaults follow the established
/// (0.5, 0.25, 5e-4, 0.1) configuration for pixel, perceptual, landmark
/// and regularization terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_perc: f64,
    pub lambda_lm: f64,
    pub lambda_reg: f64,
    /// Extra per-block multipliers inside the regularizer for
    /// (alpha, delta, gamma).
    pub reg_block_weights: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pixel: 0.5,
            lambda_perc: 0.25,
            lambda_lm: 5e-4,
            lambda_reg: 0.1,
            reg_block_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.lambda_pixel, self.lambda_perc, self.lambda_lm, self.lambda_reg];
        if all.iter().chain(&self.reg_block_weights).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("loss weights must be nonnegative".to_string()));
        }
        Ok(())
    }
}

/// Values of the combined loss, raw and weighted per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub pixel_raw: f64,
    pub pixel_weighted: f64,
    pub perc_raw: f64,
    pub perc_weighted: f64,
    pub lm_raw: f64,
    pub lm_weighted: f64,
    pub reg_raw: f64,
    pub reg_weighted: f64,
}

/// Mask-weighted mean squared pixel difference:
/// `L = sum_p mask_p * |x_p - y_p|^2 / max(sum_p mask_p, 1)`.
/// Returns the loss and its adjoint with respect to the rendered image.
pub fn pixel_loss(target: &Image, rendered: &Image, mask: &Mask) -> Result<(f64, Image)> {
    if !target.same_shape(rendered)
        || mask.width != target.width
        || mask.height != target.height
    {
        return Err(Error::dimension(format!(
            "pixel loss shapes differ: target {}x{}, rendered {}x{}, mask {}x{}",
            target.width, target.height, rendered.width, rendered.height, mask.width, mask.height
        )));
    }
    let mass: f64 = mask.data.iter().sum::<f64>().max(1.0);
    let mut loss = 0.0;
    let mut adjoint = Image::black(rendered.width, rendered.height);
    for (i, &m) in mask.data.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for ch in 0..3 {
            let d = target.data[3 * i + ch] - rendered.data[3 * i + ch];
            loss += m * d * d;
            adjoint.data[3 * i + ch] = -2.0 * m * d / mass;
        }
    }
    Ok((loss / mass, adjoint))
}

/// Mean squared distance between detected and projected landmarks, in
/// pixel units. Entries flagged invalid (`None`) are skipped and the mean
/// renormalized. Returns the loss and its adjoint on the projected points.
pub fn landmark_loss(
    detected: &[Option<[f64; 2]>],
    projected: &[[f64; 2]],
) -> Result<(f64, Vec<[f64; 2]>)> {
    if detected.len() != projected.len() {
        return Err(Error::dimension(format!(
            "landmark count mismatch: {} detected vs {} projected",
            detected.len(),
            projected.len()
        )));
    }
    let n_valid = detected.iter().flatten().count();
    let mut adjoint = vec![[0.0f64; 2]; projected.len()];
    if n_valid == 0 {
        return Ok((0.0, adjoint));
    }
    let inv = 1.0 / n_valid as f64;
    let mut loss = 0.0;
    for (i, det) in detected.iter().enumerate() {
        let Some(d) = det else { continue };
        let dx = projected[i][0] - d[0];
        let dy = projected[i][1] - d[1];
        loss += (dx * dx + dy * dy) * inv;
        adjoint[i] = [2.0 * dx * inv, 2.0 * dy * inv];
    }
    Ok((loss, adjoint))
}

/// Maps an image to a unit-norm feature vector and pulls feature
/// cotangents back to image space.
pub trait FeatureExtractor: Sync {
    fn extract(&self, image: &Image) -> Vec<f64>;
    fn extract_vjp(&self, image: &Image, d_feature: &[f64]) -> Image;
}

/// Default parameter-free extractor: grayscale average-pool to a
/// `grid x grid` patch, flatten, normalize to unit length.
#[derive(Debug, Clone)]
pub struct DownsampleExtractor {
    pub grid: usize,
}

impl Default for DownsampleExtractor {
    fn default() -> Self {
        DownsampleExtractor { grid: 8 }
    }
}

impl DownsampleExtractor {
    /// Pooled grayscale values before normalization, plus cell pixel counts.
    fn pool(&self, image: &Image) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let mut sums = vec![0.0f64; g * g];
        let mut counts = vec![0.0f64; g * g];
        for y in 0..image.height {
            let cy = (y * g) / image.height;
            for x in 0..image.width {
                let cx = (x * g) / image.width;
                let p = image.pixel(x, y);
                sums[cy * g + cx] += (p[0] + p[1] + p[2]) / 3.0;
                counts[cy * g + cx] += 1.0;
            }
        }
        for (s, c) in sums.iter_mut().zip(&counts) {
            if *c > 0.0 {
                *s /= c;
            }
        }
        (sums, counts)
    }
}

impl FeatureExtractor for DownsampleExtractor {
    fn extract(&self, image: &Image) -> Vec<f64> {
        let (mut pooled, _) = self.pool(image);
        let norm: f64 = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-30 {
            return vec![0.0; pooled.len()];
        }
        for v in pooled.iter_mut() {
            *v /= norm;
        }
        pooled
    }

    fn extract_vjp(&self, image: &Image, d_feature: &[f64]) -> Image {
        let (pooled, counts) = self.pool(image);
        let norm: f64 = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut out = Image::black(image.width, image.height);
        if norm < 1e-30 {
            return out;
        }
        // f = p / |p|  =>  d_p = (d_f - f (f . d_f)) / |p|
        let f: Vec<f64> = pooled.iter().map(|v| v / norm).collect();
        let radial: f64 = f.iter().zip(d_feature).map(|(a, b)| a * b).sum();
        let d_pooled: Vec<f64> = d_feature
            .iter()
            .zip(&f)
            .map(|(df, fi)| (df - fi * radial) / norm)
            .collect();
        let g = self.grid;
        for y in 0..image.height {
            let cy = (y * g) / image.height;
            for x in 0..image.width {
                let cx = (x * g) / image.width;
                let cell = cy * g + cx;
                let w = d_pooled[cell] / counts[cell] / 3.0;
                let i = 3 * (y * image.width + x);
                out.data[i] += w;
                out.data[i + 1] += w;
                out.data[i + 2] += w;
            }
        }
        out
    }
}

/// Perceptual dissimilarity `L = 1 - cos(f(target), f(rendered))` in
/// [0, 2]. Returns the loss and its adjoint on the rendered image.
pub fn perceptual_loss(
    target: &Image,
    rendered: &Image,
    extractor: &dyn FeatureExtractor,
) -> Result<(f64, Image)> {
    if !target.same_shape(rendered) {
        return Err(Error::dimension("perceptual loss image shapes differ".to_string()));
    }
    let u = extractor.extract(target);
    let v = extractor.extract(rendered);
    if u.len() != v.len() {
        return Err(Error::dimension("extractor returned inconsistent feature sizes".to_string()));
    }
    let cos: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    // d(1 - u.v)/dv = -u; features are already unit norm, the extractor
    // VJP handles the normalization chain.
    let d_feature: Vec<f64> = u.iter().map(|a| -a).collect();
    let adjoint = extractor.extract_vjp(rendered, &d_feature);
    Ok((1.0 - cos, adjoint))
}

/// Gaussian prior on the morphable-model coefficients:
/// `sum_b w_b |block_b|^2` over (alpha, delta, gamma). Illumination and
/// camera have no such prior and are excluded. Returns the loss and its
/// adjoint as a flat parameter cotangent.
pub fn reg_loss(params: &FaceParams, block_weights: &[f64; 3]) -> (f64, Vec<f64>) {
    let mut adjoint = vec![0.0f64; params.theta_dim()];
    let mut loss = 0.0;
    let blocks = [&params.alpha, &params.delta, &params.gamma];
    let mut offset = 0usize;
    for (b, block) in blocks.iter().enumerate() {
        let w = block_weights[b];
        for (j, &v) in block.iter().enumerate() {
            loss += w * v * v;
            adjoint[offset + j] = 2.0 * w * v;
        }
        offset += block.len();
    }
    (loss, adjoint)
}

/// A weighted Gaussian mixture over RGB with diagonal covariances; a
/// subset of components model skin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub covariances_diag: Vec<[f64; 3]>,
    pub skin_components: Vec<usize>,
}

impl Gmm {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Gmm> {
        let text = std::fs::read_to_string(path)?;
        let gmm: Gmm = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("cannot parse GMM file: {e}")))?;
        gmm.check()?;
        Ok(gmm)
    }

    pub fn check(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances_diag.len() != k {
            return Err(Error::format(format!(
                "GMM component counts differ: {} weights, {} means, {} covariances",
                k,
                self.means.len(),
                self.covariances_diag.len()
            )));
        }
        if self.skin_components.iter().any(|&i| i >= k) {
            return Err(Error::format("GMM skin component index out of range".to_string()));
        }
        if self.covariances_diag.iter().flatten().any(|&v| v <= 0.0) {
            return Err(Error::format("GMM covariances must be positive".to_string()));
        }
        Ok(())
    }

    /// Posterior probability that `rgb` belongs to a skin component.
    pub fn skin_posterior(&self, rgb: [f64; 3]) -> f64 {
        let mut total = 0.0;
        let mut skin = 0.0;
        for (k, (w, (mean, cov))) in self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.covariances_diag))
            .enumerate()
        {
            let mut log_density = 0.0;
            for ch in 0..3 {
                let d = rgb[ch] - mean[ch];
                log_density += -0.5 * d * d / cov[ch] - 0.5 * (2.0 * std::f64::consts::PI * cov[ch]).ln();
            }
            let contrib = w * log_density.exp();
            total += contrib;
            if self.skin_components.contains(&k) {
                skin += contrib;
            }
        }
        if total <= 0.0 {
            // Degenerate tail: fall back to the prior mass of skin.
            let prior: f64 = self.skin_components.iter().map(|&k| self.weights[k]).sum();
            let total_prior: f64 = self.weights.iter().sum();
            return if total_prior > 0.0 { prior / total_prior } else { 0.0 };
        }
        skin / total
    }
}

/// Per-pixel skin probability mask. With `hard` the posterior is
/// thresholded at 0.5. When no GMM is available callers should use
/// `Mask::ones` (the documented fallback).
pub fn skin_mask(image: &Image, gmm: &Gmm, hard: bool) -> Mask {
    let mut mask = Mask::zeros(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let p = gmm.skin_posterior(image.pixel(x, y));
            mask.data[y * image.width + x] = if hard {
                if p > 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                p
            };
        }
    }
    mask
}

/// Project the model's landmark vertices for `params`.
pub fn project_landmarks(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
) -> Result<Vec<[f64; 2]>> {
    params.check(&model.dims())?;
    let positions = decode_geometry(model, &params.alpha, &params.delta)?;
    let points = select_landmarks_3d(&positions, &model.landmark_indices)?;
    let screen = project(&points, &params.cam, width, height)?;
    Ok(screen.iter().map(|s| [s.x_pix, s.y_pix]).collect())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn face_loss_impl(
    target: &Image,
    detected_landmarks: &[Option<[f64; 2]>],
    mask: Option<&Mask>,
    model: &MorphableModel,
    params: &FaceParams,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    width: usize,
    height: usize,
    image_terms: bool,
) -> Result<(LossReport, Vec<f64>)> {
    weights.check()?;
    params.check(&model.dims())?;
    let theta_dim = params.theta_dim();
    let mut grad = vec![0.0f64; theta_dim];

    // Image terms share one rendered forward pass and one backward pass.
    let (pixel_raw, perc_raw) = if image_terms {
        let prepared = prepare(model, params, width, height)?;
        let raster = rasterize(&prepared.screen, &model.triangles, width, height)?;
        let rendered = shade_with_assignment(model, &prepared, &raster, &params.phi);

        let ones;
        let mask_ref = match mask {
            Some(m) => m,
            None => {
                ones = Mask::ones(width, height);
                &ones
            }
        };
        let (pixel_raw, pixel_adjoint) = pixel_loss(target, &rendered, mask_ref)?;
        let (perc_raw, perc_adjoint) = perceptual_loss(target, &rendered, extractor)?;

        let mut adjoint = Image::black(width, height);
        for i in 0..adjoint.data.len() {
            adjoint.data[i] = weights.lambda_pixel * pixel_adjoint.data[i]
                + weights.lambda_perc * perc_adjoint.data[i];
        }
        let g_img = backward_from(model, params, &prepared, &raster, &adjoint)?;
        for (g, gi) in grad.iter_mut().zip(&g_img) {
            *g += gi;
        }
        (pixel_raw, perc_raw)
    } else {
        (0.0, 0.0)
    };

    // Landmark term: analytic chain through projection and geometry.
    let positions = decode_geometry(model, &params.alpha, &params.delta)?;
    let lm_points = select_landmarks_3d(&positions, &model.landmark_indices)?;
    let lm_screen = project(&lm_points, &params.cam, width, height)?;
    let projected: Vec<[f64; 2]> = lm_screen.iter().map(|s| [s.x_pix, s.y_pix]).collect();
    let (lm_raw, lm_adjoint) = landmark_loss(detected_landmarks, &projected)?;
    let lm_scaled: Vec<[f64; 2]> = lm_adjoint
        .iter()
        .map(|d| [weights.lambda_lm * d[0], weights.lambda_lm * d[1]])
        .collect();
    let (d_points, d_cam) = project_vjp(&lm_points, &params.cam, width, height, &lm_scaled)?;
    let (d_alpha, d_delta) =
        decode_geometry_vjp_sparse(model, &model.landmark_indices, &d_points);
    let dims = model.dims();
    for (j, d) in d_alpha.iter().enumerate() {
        grad[j] += d;
    }
    for (j, d) in d_delta.iter().enumerate() {
        grad[dims.k_shape + j] += d;
    }
    let cam_offset = theta_dim - 6;
    for (a, d) in d_cam.iter().enumerate() {
        grad[cam_offset + a] += d;
    }

    // Regularizer.
    let (reg_raw, reg_adjoint) = reg_loss(params, &weights.reg_block_weights);
    for (g, r) in grad.iter_mut().zip(&reg_adjoint) {
        *g += weights.lambda_reg * r;
    }

    let report = LossReport {
        pixel_raw,
        pixel_weighted: weights.lambda_pixel * pixel_raw,
        perc_raw,
        perc_weighted: weights.lambda_perc * perc_raw,
        lm_raw,
        lm_weighted: weights.lambda_lm * lm_raw,
        reg_raw,
        reg_weighted: weights.lambda_reg * reg_raw,
        total: weights.lambda_pixel * pixel_raw
            + weights.lambda_perc * perc_raw
            + weights.lambda_lm * lm_raw
            + weights.lambda_reg * reg_raw,
    };
    if !report.total.is_finite() {
        return Err(Error::numeric(format!("face loss is not finite: {report:?}")));
    }
    Ok((report, grad))
}

/// The combined face loss: renders the model, assembles the four weighted
/// terms, and chains every adjoint into a single gradient over the
/// flattened parameter vector. `mask` weights the pixel term and defaults
/// to all-ones.
#[allow(clippy::too_many_arguments)]
pub fn face_loss(
    target: &Image,
    detected_landmarks: &[Option<[f64; 2]>],
    mask: Option<&Mask>,
    model: &MorphableModel,
    params: &FaceParams,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    width: usize,
    height: usize,
) -> Result<(LossReport, Vec<f64>)> {
    face_loss_impl(
        target,
        detected_landmarks,
        mask,
        model,
        params,
        weights,
        extractor,
        width,
        height,
        true,
    )
}
