//! Synthetic embedding datasets for head training.
//!
//! Each sample pairs an opaque embedding vector with a rendered target
//! image and its projected landmarks. Embeddings are linear-plus-noise
//! encodings of the parameters that generated the image
//! (`e = W theta + noise` with a fixed seed-derived mixing matrix `W`),
//! so the embedding determines the face while the head still has to invert
//! `W` through the renderer-mediated loss. Ground-truth parameters ride
//! along for diagnostics only; training never reads them.
//!
//! # Directory layout
//!
//! `sample_%05d.ppm` (target image), `sample_%05d.landmarks` (JSON array
//! of `[x, y]` pixel pairs, invalid entries as `null`),
//! `sample_%05d.embedding` (length-prefixed little-endian f32 array), and
//! `sample_%05d.theta` (same f32 container, diagnostics only).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::project_landmarks;
use crate::math::{derive_seed, std_normal};
use crate::model::{MorphableModel, ThetaDims};
use crate::params::{FaceParams, WHITE_LIGHT_DC};
use crate::render::render;

/// One training sample. `ground_truth_theta` is diagnostic metadata; the
/// training loop strips it before looking at anything.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub embedding: Vec<f32>,
    pub target_image: Image,
    pub landmarks: Vec<Option<[f64; 2]>>,
    pub ground_truth_theta: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub embed_dim: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { width: 32, height: 32, embed_dim: crate::head::DEFAULT_EMBED_DIM }
    }
}

/// Draw face parameters from the synthetic data distribution:
/// morphable-model blocks from N(0, 0.5^2), white light plus N(0, 0.1^2)
/// illumination noise, and a small random camera.
pub fn sample_face_params(rng: &mut ChaCha8Rng, dims: &ThetaDims) -> FaceParams {
    let mut p = FaceParams::zeros(dims);
    for v in p.alpha.iter_mut().chain(&mut p.delta).chain(&mut p.gamma) {
        *v = 0.5 * std_normal(rng);
    }
    for ch in 0..3 {
        p.phi[9 * ch] = WHITE_LIGHT_DC;
    }
    for v in p.phi.iter_mut() {
        *v += 0.1 * std_normal(rng);
    }
    for a in 0..3 {
        p.cam[a] = 0.08 * std_normal(rng); // rotations, radians
    }
    p.cam[3] = 0.04 * std_normal(rng);
    p.cam[4] = 0.04 * std_normal(rng);
    p.cam[5] = 0.08 * std_normal(rng);
    p
}

/// The fixed embedding mixing matrix for a dataset seed, row-major
/// `embed_dim x theta_dim`, entries N(0, 1/sqrt(theta_dim)).
fn mixing_matrix(seed: u64, embed_dim: usize, theta_dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x3a7_f00d));
    let scale = 1.0 / (theta_dim as f64).sqrt();
    (0..embed_dim * theta_dim).map(|_| scale * std_normal(&mut rng)).collect()
}

/// Generate a dataset with the default configuration (32x32 images,
/// 4096-dimensional embeddings).
pub fn gen_embedding_dataset(
    model: &MorphableModel,
    n_samples: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<Vec<EmbeddingSample>> {
    gen_embedding_dataset_with(model, n_samples, seed, noise_sigma, &DatasetConfig::default())
}

/// Generate `n_samples` samples, deterministically in `(seed, config)`.
/// Target images carry the 8-bit quantized values, so in-memory samples
/// agree exactly with their on-disk form.
pub fn gen_embedding_dataset_with(
    model: &MorphableModel,
    n_samples: usize,
    seed: u64,
    noise_sigma: f64,
    config: &DatasetConfig,
) -> Result<Vec<EmbeddingSample>> {
    if n_samples == 0 {
        return Err(Error::validation("n_samples must be at least 1".to_string()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::validation("noise_sigma must be nonnegative".to_string()));
    }
    let dims = model.dims();
    let theta_dim = dims.theta_dim();
    let mixing = mixing_matrix(seed, config.embed_dim, theta_dim);

    // Per-sample RNG streams derive from (seed, index), so parallel
    // generation is independent of scheduling.
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64 + 1));
            let params = sample_face_params(&mut rng, &dims);
            let theta = params.to_flat();

            let mut embedding = Vec::with_capacity(config.embed_dim);
            for row in 0..config.embed_dim {
                let mut acc = 0.0f64;
                let w_row = &mixing[row * theta_dim..(row + 1) * theta_dim];
                for (w, t) in w_row.iter().zip(&theta) {
                    acc += w * t;
                }
                if noise_sigma > 0.0 {
                    acc += noise_sigma * std_normal(&mut rng);
                }
                embedding.push(acc as f32);
            }

            let out = render(model, &params, config.width, config.height)?;
            // Quantize through the 8-bit image format.
            let target =
                Image::from_rgb8(config.width, config.height, &out.color.to_rgb8())?;
            let landmarks: Vec<Option<[f64; 2]>> =
                project_landmarks(model, &params, config.width, config.height)?
                    .into_iter()
                    .map(Some)
                    .collect();
            Ok(EmbeddingSample {
                embedding,
                target_image: target,
                landmarks,
                ground_truth_theta: Some(theta.iter().map(|&v| v as f32).collect()),
            })
        })
        .collect()
}

fn write_f32_vector(path: &Path, data: &[f32]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32_vector(path: &Path) -> Result<Vec<f32>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated f32 array in {}", path.display())))?;
    let count = u32::from_le_bytes(buf) as usize;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated f32 array in {}", path.display())))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_landmarks(path: impl AsRef<Path>, landmarks: &[Option<[f64; 2]>]) -> Result<()> {
    let text = serde_json::to_string(landmarks)
        .map_err(|e| Error::format(format!("cannot serialize landmarks: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<Option<[f64; 2]>>> {
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("cannot parse landmarks: {e}")))
}

/// Write a dataset as `sample_%05d.{ppm,landmarks,embedding,theta}`.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[EmbeddingSample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("sample_{i:05}");
        s.target_image.write_ppm(dir.join(format!("{stem}.ppm")))?;
        save_landmarks(dir.join(format!("{stem}.landmarks")), &s.landmarks)?;
        write_f32_vector(&dir.join(format!("{stem}.embedding")), &s.embedding)?;
        if let Some(theta) = &s.ground_truth_theta {
            write_f32_vector(&dir.join(format!("{stem}.theta")), theta)?;
        }
    }
    Ok(())
}

/// Load all samples of a dataset directory, in index order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<EmbeddingSample>> {
    let dir = dir.as_ref();
    let mut stems: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".embedding").map(|s| s.to_string())
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::validation(format!(
            "no samples found in {}",
            dir.display()
        )));
    }
    stems
        .iter()
        .map(|stem| {
            let embedding = read_f32_vector(&dir.join(format!("{stem}.embedding")))?;
            let target_image = Image::read_ppm(dir.join(format!("{stem}.ppm")))?;
            let landmarks = load_landmarks(dir.join(format!("{stem}.landmarks")))?;
            let theta_path = dir.join(format!("{stem}.theta"));
            let ground_truth_theta =
                if theta_path.exists() { Some(read_f32_vector(&theta_path)?) } else { None };
            Ok(EmbeddingSample { embedding, target_image, landmarks, ground_truth_theta })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::project;
    use crate::synth::gen_synthetic_model;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig { width: 16, height: 16, embed_dim: 20 }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let model = gen_synthetic_model(0, 8).unwrap();
        let a = gen_embedding_dataset_with(&model, 4, 9, 0.01, &small_cfg()).unwrap();
        let b = gen_embedding_dataset_with(&model, 4, 9, 0.01, &small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = gen_embedding_dataset_with(&model, 4, 10, 0.01, &small_cfg()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_embedding_is_exact_linear_encoding() {
        let model = gen_synthetic_model(0, 8).unwrap();
        let cfg = small_cfg();
        let samples = gen_embedding_dataset_with(&model, 3, 4, 0.0, &cfg).unwrap();
        let theta_dim = model.theta_dim();
        let mixing = mixing_matrix(4, cfg.embed_dim, theta_dim);
        for s in &samples {
            let theta: Vec<f64> = s
                .ground_truth_theta
                .as_ref()
                .unwrap()
                .iter()
                .map(|&v| v as f64)
                .collect();
            for row in 0..cfg.embed_dim {
                let mut acc = 0.0;
                for (w, t) in mixing[row * theta_dim..(row + 1) * theta_dim].iter().zip(&theta) {
                    acc += w * t;
                }
                // in-memory theta is f32-quantized; recompute from it and
                // allow only the f32 cast on the embedding itself
                assert!(
                    (acc as f32 - s.embedding[row]).abs() < 1e-4,
                    "row {row}: {acc} vs {}",
                    s.embedding[row]
                );
            }
        }
    }

    /// Projection oracle: stored landmarks equal projecting the stored
    /// ground-truth parameters.
    #[test]
    fn stored_landmarks_match_projection_of_theta() {
        let model = gen_synthetic_model(0, 8).unwrap();
        let cfg = small_cfg();
        let samples = gen_embedding_dataset_with(&model, 3, 11, 0.01, &cfg).unwrap();
        for s in &samples {
            let theta: Vec<f64> = s
                .ground_truth_theta
                .as_ref()
                .unwrap()
                .iter()
                .map(|&v| v as f64)
                .collect();
            let params = FaceParams::from_flat(&theta, &model.dims()).unwrap();
            let positions =
                crate::decode::decode_geometry(&model, &params.alpha, &params.delta).unwrap();
            let pts =
                crate::decode::select_landmarks_3d(&positions, &model.landmark_indices).unwrap();
            let screen = project(&pts, &params.cam, cfg.width, cfg.height).unwrap();
            for (lm, s) in s.landmarks.iter().zip(&screen) {
                let lm = lm.unwrap();
                // stored landmarks were computed from f64 theta; the f32
                // quantization of theta shifts the check slightly
                assert!((lm[0] - s.x_pix).abs() < 1e-3);
                assert!((lm[1] - s.y_pix).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dataset_directory_round_trip() {
        let model = gen_synthetic_model(0, 8).unwrap();
        let samples = gen_embedding_dataset_with(&model, 3, 2, 0.01, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &samples).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), loaded.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.embedding, b.embedding);
            assert_eq!(a.ground_truth_theta, b.ground_truth_theta);
            assert_eq!(a.target_image.to_rgb8(), b.target_image.to_rgb8());
            for (la, lb) in a.landmarks.iter().zip(&b.landmarks) {
                let (la, lb) = (la.unwrap(), lb.unwrap());
                assert!((la[0] - lb[0]).abs() < 1e-12);
                assert!((la[1] - lb[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_dataset_request_is_rejected() {
        let model = gen_synthetic_model(0, 8).unwrap();
        assert!(gen_embedding_dataset_with(&model, 0, 0, 0.0, &small_cfg()).is_err());
    }
}
