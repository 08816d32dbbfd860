//! Analysis-by-synthesis fitting: estimate face parameters for a target
//! image plus detected landmarks by running Adam on the combined face
//! loss. The first `warmup_iters` iterations use only the landmark and
//! regularization terms (no rendering), because frozen-visibility pixel
//! gradients are unreliable while the coverage barely overlaps; the
//! remaining iterations optimize the full loss. The best-loss iterate is
//! returned rather than the last one.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::{
    face_loss_impl, project_landmarks, DownsampleExtractor, FeatureExtractor, LossWeights,
};
use crate::model::MorphableModel;
use crate::optim::Adam;
use crate::params::{FaceParams, ParamBlock};
use crate::render::render;
use crate::scene::project;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    /// Iterations optimizing only landmark + regularization terms.
    pub landmark_only_warmup_iters: usize,
    /// Stop when the relative change of the full loss between consecutive
    /// iterations falls below this.
    pub convergence_tol: f64,
    pub seed: u64,
    /// Per-block step-size multipliers for (alpha, delta, gamma, phi, cam).
    pub block_step_multipliers: [f64; 5],
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 200,
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            landmark_only_warmup_iters: 30,
            convergence_tol: 1e-6,
            seed: 0,
            block_step_multipliers: [1.0; 5],
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be positive".to_string()));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::validation("step_size must be positive".to_string()));
        }
        self.weights.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub pixel: f64,
    pub perc: f64,
    pub lm: f64,
    pub reg: f64,
}

/// Per-iteration weighted loss values, written as CSV with columns
/// `iter,total,pixel,perc,lm,reg`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
}

impl FitTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("iter,total,pixel,perc,lm,reg\n");
        for r in &self.rows {
            text.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.iter, r.total, r.pixel, r.perc, r.lm, r.reg
            ));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Running minimum of the total column; nonincreasing by construction.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.total);
                best
            })
            .collect()
    }
}

/// Pose initialization from detected landmarks: coefficients zero,
/// rotation zero, translation centers the landmark centroid and the scale
/// matches the ratio of bounding-box diagonals between the detected
/// landmarks and the mean shape's projected landmarks.
///
/// Illumination starts at the neutral white light rather than zero: a
/// zero-light face renders black, exactly on the clamp boundary where
/// image gradients vanish, so a fit started there could never recover
/// the illumination.
pub fn init_from_landmarks(
    landmarks: &[Option<[f64; 2]>],
    model: &MorphableModel,
    width: usize,
    height: usize,
) -> Result<FaceParams> {
    if landmarks.len() != model.landmark_indices.len() {
        return Err(Error::dimension(format!(
            "{} landmarks supplied, model has {}",
            landmarks.len(),
            model.landmark_indices.len()
        )));
    }
    let valid: Vec<(usize, [f64; 2])> = landmarks
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|p| (i, p)))
        .collect();
    if valid.len() < 2 {
        return Err(Error::validation(format!(
            "need at least 2 valid landmarks, got {}",
            valid.len()
        )));
    }

    // Mean-shape landmarks projected with the identity camera.
    let mut params = FaceParams::neutral_lit(&model.dims());
    let mean_points: Vec<[f64; 3]> = model
        .landmark_indices
        .iter()
        .map(|&v| model.mean_vertex(v as usize))
        .collect();
    let reference = project(&mean_points, &params.cam, width, height)?;

    let bbox = |pts: &mut dyn Iterator<Item = [f64; 2]>| -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    };
    let (det_lo, det_hi) = bbox(&mut valid.iter().map(|(_, p)| *p));
    let (ref_lo, ref_hi) =
        bbox(&mut valid.iter().map(|(i, _)| [reference[*i].x_pix, reference[*i].y_pix]));
    let diag = |lo: [f64; 2], hi: [f64; 2]| ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let det_diag = diag(det_lo, det_hi);
    let ref_diag = diag(ref_lo, ref_hi);
    if ref_diag < 1e-9 || det_diag < 1e-12 {
        return Err(Error::validation("landmark sets are degenerate".to_string()));
    }
    let scale = det_diag / ref_diag;
    params.cam[5] = scale.ln();

    // Centroids after applying the scale, still at zero translation.
    let n = valid.len() as f64;
    let mut det_centroid = [0.0f64; 2];
    let mut ref_centroid_scaled = [0.0f64; 2];
    for (i, p) in &valid {
        det_centroid[0] += p[0] / n;
        det_centroid[1] += p[1] / n;
        // Scaling model coordinates by s maps pixel x to
        // (s * nx + 1)/2 * w, i.e. pixels scale about the image center.
        let cx = width as f64 / 2.0;
        let cy = height as f64 / 2.0;
        ref_centroid_scaled[0] += (cx + scale * (reference[*i].x_pix - cx)) / n;
        ref_centroid_scaled[1] += (cy + scale * (reference[*i].y_pix - cy)) / n;
    }
    params.cam[3] = (det_centroid[0] - ref_centroid_scaled[0]) * 2.0 / width as f64;
    params.cam[4] = -(det_centroid[1] - ref_centroid_scaled[1]) * 2.0 / height as f64;
    Ok(params)
}

/// Fit parameters to a target image and landmarks. Deterministic given
/// identical inputs and config. Returns the best-loss parameters seen and
/// the per-iteration loss trace.
pub fn fit(
    target: &Image,
    landmarks: &[Option<[f64; 2]>],
    mask: Option<&Mask>,
    model: &MorphableModel,
    config: &FitConfig,
    init: Option<&FaceParams>,
    extractor: &dyn FeatureExtractor,
) -> Result<(FaceParams, FitTrace)> {
    config.check()?;
    let (width, height) = (target.width, target.height);
    let init_params = match init {
        Some(p) => {
            p.check(&model.dims())?;
            p.clone()
        }
        None => init_from_landmarks(landmarks, model, width, height)?,
    };

    let mut flat = init_params.to_flat();
    let dims = model.dims();
    let mut adam = Adam::new(flat.len(), config.beta1, config.beta2, config.eps);

    // Expand per-block multipliers to per-coordinate scales.
    let mut scale = vec![1.0f64; flat.len()];
    for (b, block) in ParamBlock::ALL.iter().enumerate() {
        let range = init_params.block_range(*block);
        for s in &mut scale[range] {
            *s = config.block_step_multipliers[b];
        }
    }

    let warmup_weights = LossWeights {
        lambda_pixel: 0.0,
        lambda_perc: 0.0,
        ..config.weights.clone()
    };

    let mut trace = FitTrace::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut prev_total: Option<f64> = None;
    for iter in 0..config.max_iters {
        let warmup = iter < config.landmark_only_warmup_iters;
        let params = FaceParams::from_flat(&flat, &dims)?;
        let (weights, image_terms) = if warmup {
            (&warmup_weights, false)
        } else {
            (&config.weights, true)
        };
        let (report, grad) = face_loss_impl(
            target,
            landmarks,
            mask,
            model,
            &params,
            weights,
            extractor,
            width,
            height,
            image_terms,
        )
        .map_err(|e| match e {
            Error::Numeric(msg) => Error::numeric(format!("at iteration {iter}: {msg}")),
            other => other,
        })?;

        trace.rows.push(TraceRow {
            iter,
            total: report.total,
            pixel: report.pixel_weighted,
            perc: report.perc_weighted,
            lm: report.lm_weighted,
            reg: report.reg_weighted,
        });

        // Track the best iterate under the full objective only; warmup
        // totals are a different objective.
        if !warmup && best.as_ref().is_none_or(|(b, _)| report.total < *b) {
            best = Some((report.total, flat.clone()));
        }

        adam.step_scaled(&mut flat, &grad, config.step_size, &scale);

        if !warmup {
            if let Some(prev) = prev_total {
                let change = (report.total - prev).abs() / prev.abs().max(1e-12);
                if change < config.convergence_tol {
                    break;
                }
            }
            prev_total = Some(report.total);
        }
    }

    let final_flat = best.map(|(_, f)| f).unwrap_or(flat);
    Ok((FaceParams::from_flat(&final_flat, &dims)?, trace))
}

/// Evaluation metrics. `None` marks an undefined metric (empty
/// mask-coverage intersection or no valid landmarks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub photometric_l2: Option<f64>,
    pub landmark_px: Option<f64>,
}

/// Photometric and landmark metrics for given parameters:
/// mean per-pixel RGB Euclidean distance over pixels that are covered and
/// mask-selected (mask > 0.5), and mean landmark pixel distance.
pub fn evaluate(
    target: &Image,
    mask: Option<&Mask>,
    landmarks: &[Option<[f64; 2]>],
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
) -> Result<EvalMetrics> {
    if target.width != width || target.height != height {
        return Err(Error::dimension(format!(
            "target is {}x{}, expected {width}x{height}",
            target.width, target.height
        )));
    }
    let out = render(model, params, width, height)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..out.coverage.len() {
        if !out.coverage[i] {
            continue;
        }
        if let Some(m) = mask {
            if m.data[i] <= 0.5 {
                continue;
            }
        }
        let mut d2 = 0.0;
        for ch in 0..3 {
            let d = target.data[3 * i + ch] - out.color.data[3 * i + ch];
            d2 += d * d;
        }
        sum += d2.sqrt();
        count += 1;
    }
    let photometric_l2 = if count > 0 { Some(sum / count as f64) } else { None };

    let projected = project_landmarks(model, params, width, height)?;
    if projected.len() != landmarks.len() {
        return Err(Error::dimension(format!(
            "{} landmarks supplied, model projects {}",
            landmarks.len(),
            projected.len()
        )));
    }
    let mut lm_sum = 0.0f64;
    let mut lm_count = 0usize;
    for (det, proj) in landmarks.iter().zip(&projected) {
        let Some(d) = det else { continue };
        lm_sum += ((proj[0] - d[0]).powi(2) + (proj[1] - d[1]).powi(2)).sqrt();
        lm_count += 1;
    }
    let landmark_px = if lm_count > 0 { Some(lm_sum / lm_count as f64) } else { None };

    Ok(EvalMetrics { photometric_l2, landmark_px })
}

/// Default feature extractor used by the fitting entry points.
pub fn default_extractor() -> DownsampleExtractor {
    DownsampleExtractor::default()
}
