//! The embedding-to-parameters projection head: a GeLU MLP mapping opaque
//! embedding vectors to the flattened face parameters, trained purely
//! through the rendering loss (the training loop never sees ground-truth
//! parameters; samples are stripped to embedding + image + landmarks
//! before the loop).
//!
//! # Weight container (`FIGH`)
//!
//! Same conventions as the model container: magic `FIGH`, version u32 = 1,
//! then named length-prefixed arrays: `layer_sizes` (u32) followed by
//! `w0, b0, w1, b1, ...` (f32, row-major `out x in`).

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::EmbeddingSample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{face_loss, DownsampleExtractor, LossWeights};
use crate::math::{gelu, gelu_deriv};
use crate::model::{MorphableModel, ThetaDims};
use crate::optim::{AdamW, WarmupDecaySchedule};
use crate::params::FaceParams;

pub const HEAD_MAGIC: &[u8; 4] = b"FIGH";
pub const HEAD_VERSION: u32 = 1;

/// Default embedding dimensionality.
pub const DEFAULT_EMBED_DIM: usize = 4096;
/// Default hidden layer sizes.
pub const DEFAULT_HIDDEN: [usize; 2] = [1024, 1024];

/// Dense MLP weights. `layer_sizes` includes input and output sizes, so a
/// default head is `[4096, 1024, 1024, 257]` with GeLU between layers and
/// a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub layer_sizes: Vec<usize>,
    /// One `(out, in)` matrix per layer transition.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl HeadWeights {
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn check(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::validation("head needs at least input and output sizes".to_string()));
        }
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(Error::dimension("head layer count mismatch".to_string()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (out, inp) = (self.layer_sizes[l + 1], self.layer_sizes[l]);
            if w.shape() != [out, inp] || b.len() != out {
                return Err(Error::dimension(format!(
                    "layer {l} has shape {:?}, expected [{out}, {inp}]",
                    w.shape()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("layer {l} contains non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Deterministic Xavier-uniform initialization: weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn head_init(seed: u64, layer_sizes: &[usize]) -> Result<HeadWeights> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::validation(format!("invalid layer sizes {layer_sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (inp, out) = (layer_sizes[l], layer_sizes[l + 1]);
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let w = Array2::from_shape_fn((out, inp), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound);
        weights.push(w);
        biases.push(Array1::zeros(out));
    }
    Ok(HeadWeights { layer_sizes: layer_sizes.to_vec(), weights, biases })
}

/// Forward activations cached for the backward pass.
pub struct ForwardCache {
    /// Input to each layer (batch x in).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each non-final layer (batch x out).
    pre_activations: Vec<Array2<f64>>,
}

/// Batched forward pass: rows of `x` are embeddings.
pub fn head_forward_batch(head: &HeadWeights, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != head.input_dim() {
        return Err(Error::dimension(format!(
            "embedding has {} entries, head expects {}",
            x.ncols(),
            head.input_dim()
        )));
    }
    let mut cache = ForwardCache { inputs: Vec::new(), pre_activations: Vec::new() };
    let mut cur = x.clone();
    let last = head.n_layers() - 1;
    for (l, (w, b)) in head.weights.iter().zip(&head.biases).enumerate() {
        cache.inputs.push(cur.clone());
        let mut pre = cur.dot(&w.t());
        for mut row in pre.rows_mut() {
            row += b;
        }
        if l < last {
            cache.pre_activations.push(pre.clone());
            cur = pre.mapv(gelu);
        } else {
            cur = pre;
        }
    }
    Ok((cur, cache))
}

/// Gradients with respect to every weight tensor, in layer order.
pub struct HeadGrads {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
    /// Gradient with respect to the input embeddings.
    pub d_input: Array2<f64>,
}

/// Batched backward pass for `d_out = dL/d(output)`.
pub fn head_backward_batch(
    head: &HeadWeights,
    cache: &ForwardCache,
    d_out: &Array2<f64>,
) -> HeadGrads {
    let n_layers = head.n_layers();
    let mut d_weights: Vec<Array2<f64>> = head.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let mut d_biases: Vec<Array1<f64>> = head.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    let mut d_y = d_out.clone();
    for l in (0..n_layers).rev() {
        d_weights[l] = d_y.t().dot(&cache.inputs[l]);
        d_biases[l] = d_y.sum_axis(Axis(0));
        let d_x = d_y.dot(&head.weights[l]);
        if l == 0 {
            return HeadGrads { d_weights, d_biases, d_input: d_x };
        }
        let pre = &cache.pre_activations[l - 1];
        d_y = d_x * pre.mapv(gelu_deriv);
    }
    unreachable!("loop returns at l == 0");
}

/// Project one embedding to face parameters.
pub fn head_forward(head: &HeadWeights, embedding: &[f64], dims: &ThetaDims) -> Result<FaceParams> {
    head.check()?;
    if head.output_dim() != dims.theta_dim() {
        return Err(Error::dimension(format!(
            "head outputs {} values, parameter vector needs {}",
            head.output_dim(),
            dims.theta_dim()
        )));
    }
    let x = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec())
        .map_err(|e| Error::dimension(e.to_string()))?;
    let (out, _) = head_forward_batch(head, &x)?;
    FaceParams::from_flat(out.row(0).as_slice().unwrap(), dims)
}

pub fn save_head(head: &HeadWeights, path: impl AsRef<Path>) -> Result<()> {
    head.check()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&HEAD_VERSION.to_le_bytes())?;
    write_named(&mut w, "layer_sizes", &NamedData::U32(
        head.layer_sizes.iter().map(|&s| s as u32).collect(),
    ))?;
    for (l, (wm, b)) in head.weights.iter().zip(&head.biases).enumerate() {
        let wf: Vec<f32> = wm.iter().map(|&v| v as f32).collect();
        let bf: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        write_named(&mut w, &format!("w{l}"), &NamedData::F32(wf))?;
        write_named(&mut w, &format!("b{l}"), &NamedData::F32(bf))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_head(path: impl AsRef<Path>) -> Result<HeadWeights> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("truncated head file".to_string()))?;
    if &magic != HEAD_MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}, expected {HEAD_MAGIC:?}")));
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf)
        .map_err(|_| Error::format("truncated head file".to_string()))?;
    let version = u32::from_le_bytes(vbuf);
    if version != HEAD_VERSION {
        return Err(Error::format(format!("unsupported head version {version}")));
    }
    let sizes_u32 = match read_named(&mut r, "layer_sizes")? {
        NamedData::U32(v) => v,
        _ => return Err(Error::format("layer_sizes must be a u32 array".to_string())),
    };
    let layer_sizes: Vec<usize> = sizes_u32.iter().map(|&s| s as usize).collect();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len().saturating_sub(1) {
        let (inp, out) = (layer_sizes[l], layer_sizes[l + 1]);
        let wf = match read_named(&mut r, &format!("w{l}"))? {
            NamedData::F32(v) => v,
            _ => return Err(Error::format("weight arrays must be f32".to_string())),
        };
        if wf.len() != out * inp {
            return Err(Error::dimension(format!(
                "w{l} has {} entries, expected {}",
                wf.len(),
                out * inp
            )));
        }
        let bf = match read_named(&mut r, &format!("b{l}"))? {
            NamedData::F32(v) => v,
            _ => return Err(Error::format("bias arrays must be f32".to_string())),
        };
        if bf.len() != out {
            return Err(Error::dimension(format!("b{l} has {} entries, expected {out}", bf.len())));
        }
        weights.push(Array2::from_shape_vec((out, inp), wf.iter().map(|&v| v as f64).collect()).unwrap());
        biases.push(Array1::from_vec(bf.iter().map(|&v| v as f64).collect()));
    }
    let head = HeadWeights { layer_sizes, weights, biases };
    head.check()?;
    Ok(head)
}

enum NamedData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

fn write_named<W: Write>(w: &mut W, name: &str, data: &NamedData) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    match data {
        NamedData::F32(v) => {
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for &x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        NamedData::U32(v) => {
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for &x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_named<R: Read>(r: &mut R, expected: &str) -> Result<NamedData> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated file while reading {expected}")))?;
    let name_len = u32::from_le_bytes(buf) as usize;
    if name_len > 256 {
        return Err(Error::format("implausible array name length".to_string()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|_| Error::format("truncated array name".to_string()))?;
    let name = String::from_utf8(name).map_err(|_| Error::format("bad array name".to_string()))?;
    if name != expected {
        return Err(Error::format(format!("unexpected array '{name}', expected '{expected}'")));
    }
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated length of {expected}")))?;
    let count = u32::from_le_bytes(buf) as usize;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated data of {expected}")))?;
    // layer_sizes is the only u32 array in the container
    if expected == "layer_sizes" {
        Ok(NamedData::U32(
            bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        ))
    } else {
        Ok(NamedData::F32(
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        ))
    }
}

/// Head-training configuration. The optimizer defaults are AdamW with
/// learning rate 2e-5 and weight decay 0, linear warmup over 100
/// iterations followed by linear decay, batch size 8 with 4 gradient
/// accumulation steps per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub hidden_sizes: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            learning_rate: 2e-5,
            weight_decay: 0.0,
            warmup_iters: 100,
            total_iters: 2000,
            batch_size: 8,
            grad_accum: 4,
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl HeadTrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.total_iters == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::validation(
                "total_iters, batch_size and grad_accum must be positive".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::validation("learning rate must be nonnegative".to_string()));
        }
        self.loss_weights.check()
    }
}

/// What the training loop is allowed to see: ground-truth parameters are
/// stripped before training starts.
struct TrainView<'a> {
    embedding: Vec<f64>,
    target: &'a Image,
    landmarks: &'a [Option<[f64; 2]>],
}

/// Train a fresh head on the dataset with AdamW, supervising only through
/// the face loss (self-supervision: no ground-truth parameters are read).
/// One iteration consumes `batch_size * grad_accum` samples and performs
/// one optimizer update; the returned curve holds each iteration's mean
/// face loss. Deterministic given the config seed.
pub fn head_train(
    samples: &[EmbeddingSample],
    model: &MorphableModel,
    config: &HeadTrainConfig,
) -> Result<(HeadWeights, Vec<f64>)> {
    config.check()?;
    if samples.is_empty() {
        return Err(Error::validation("training dataset is empty".to_string()));
    }
    let embed_dim = samples[0].embedding.len();
    let (width, height) = (samples[0].target_image.width, samples[0].target_image.height);
    for (i, s) in samples.iter().enumerate() {
        if s.embedding.len() != embed_dim {
            return Err(Error::dimension(format!(
                "sample {i} embedding has {} entries, expected {embed_dim}",
                s.embedding.len()
            )));
        }
        if s.target_image.width != width || s.target_image.height != height {
            return Err(Error::dimension(format!("sample {i} image size differs")));
        }
    }

    // Strip to the self-supervised view: the loop below can only reach
    // embeddings, target images and landmarks.
    let views: Vec<TrainView> = samples
        .iter()
        .map(|s| TrainView {
            embedding: s.embedding.iter().map(|&v| v as f64).collect(),
            target: &s.target_image,
            landmarks: &s.landmarks,
        })
        .collect();

    let dims = model.dims();
    let mut layer_sizes = vec![embed_dim];
    layer_sizes.extend_from_slice(&config.hidden_sizes);
    layer_sizes.push(dims.theta_dim());
    let mut head = head_init(config.seed, &layer_sizes)?;

    let tensor_sizes: Vec<usize> = head
        .weights
        .iter()
        .zip(&head.biases)
        .flat_map(|(w, b)| [w.len(), b.len()])
        .collect();
    let mut opt = AdamW::new(&tensor_sizes, config.beta1, config.beta2, config.eps, config.weight_decay);
    let schedule = WarmupDecaySchedule {
        base_lr: config.learning_rate,
        warmup_iters: config.warmup_iters,
        total_iters: config.total_iters,
    };
    let extractor = DownsampleExtractor::default();

    // Epoch shuffling; batches are consumed sequentially from the order.
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = views.len(); // force an initial shuffle
    let mut rng = ChaCha8Rng::seed_from_u64(crate::math::derive_seed(config.seed, 0xbadc0de));

    let per_iter = config.batch_size * config.grad_accum;
    let mut curve = Vec::with_capacity(config.total_iters);
    for iter in 0..config.total_iters {
        // Accumulated gradients for this iteration.
        let mut acc_dw: Vec<Array2<f64>> =
            head.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        let mut acc_db: Vec<Array1<f64>> =
            head.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
        let mut loss_sum = 0.0f64;

        for _micro in 0..config.grad_accum {
            let mut batch_idx = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                if cursor >= order.len() {
                    // Fisher-Yates reshuffle.
                    for i in (1..order.len()).rev() {
                        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
                        order.swap(i, j);
                    }
                    cursor = 0;
                }
                batch_idx.push(order[cursor]);
                cursor += 1;
            }

            let b = batch_idx.len();
            let mut x = Array2::zeros((b, embed_dim));
            for (row, &si) in batch_idx.iter().enumerate() {
                for (col, &v) in views[si].embedding.iter().enumerate() {
                    x[[row, col]] = v;
                }
            }
            let (theta, cache) = head_forward_batch(&head, &x)?;

            // Per-sample rendering loss and parameter gradient; parallel
            // over the batch, collected in batch order.
            let results: Vec<Result<(f64, Vec<f64>)>> = batch_idx
                .par_iter()
                .enumerate()
                .map(|(row, &si)| {
                    let flat: Vec<f64> = theta.row(row).to_vec();
                    let params = FaceParams::from_flat(&flat, &dims)?;
                    let (report, grad) = face_loss(
                        views[si].target,
                        views[si].landmarks,
                        None,
                        model,
                        &params,
                        &config.loss_weights,
                        &extractor,
                        width,
                        height,
                    )?;
                    Ok((report.total, grad))
                })
                .collect();

            let mut d_out = Array2::zeros((b, dims.theta_dim()));
            let inv = 1.0 / per_iter as f64;
            for (row, res) in results.into_iter().enumerate() {
                let (total, grad) = res.map_err(|e| match e {
                    Error::Numeric(msg) => Error::numeric(format!("at iteration {iter}: {msg}")),
                    other => other,
                })?;
                loss_sum += total;
                for (col, g) in grad.iter().enumerate() {
                    d_out[[row, col]] = g * inv;
                }
            }

            let grads = head_backward_batch(&head, &cache, &d_out);
            for l in 0..head.n_layers() {
                acc_dw[l] += &grads.d_weights[l];
                acc_db[l] += &grads.d_biases[l];
            }
        }

        let mean_loss = loss_sum / per_iter as f64;
        if !mean_loss.is_finite() {
            return Err(Error::numeric(format!(
                "head training loss became non-finite at iteration {iter}"
            )));
        }
        curve.push(mean_loss);

        let lr = schedule.lr_at(iter);
        let mut tensors: Vec<(&mut [f64], &[f64])> = Vec::with_capacity(2 * head.n_layers());
        for ((w, b), (dw, db)) in head
            .weights
            .iter_mut()
            .zip(&mut head.biases)
            .zip(acc_dw.iter().zip(&acc_db))
        {
            tensors.push((w.as_slice_mut().unwrap(), dw.as_slice().unwrap()));
            tensors.push((b.as_slice_mut().unwrap(), db.as_slice().unwrap()));
        }
        opt.step(&mut tensors, lr);
    }

    Ok((head, curve))
}

/// Mean of a sliding window ending at each index (window clipped at the
/// start); used to smooth training curves.
pub fn smoothed(curve: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(curve.len());
    let mut sum = 0.0;
    for i in 0..curve.len() {
        sum += curve[i];
        if i >= window {
            sum -= curve[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_embedding_dataset_with, DatasetConfig};
    use crate::synth::gen_synthetic_model;
    use approx::assert_relative_eq;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let sizes = [64, 32, 16];
        let a = head_init(7, &sizes).unwrap();
        let b = head_init(7, &sizes).unwrap();
        assert_eq!(a, b);
        let c = head_init(8, &sizes).unwrap();
        assert_ne!(a, c);

        for (l, w) in a.weights.iter().enumerate() {
            let bound = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
            for &v in w.iter() {
                assert!(v.abs() <= bound, "layer {l} weight {v} exceeds {bound}");
            }
        }
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_weights_produce_zero_params() {
        let dims = ThetaDims { k_shape: 4, k_expr: 3, k_albedo: 2 };
        let sizes = [8, 6, dims.theta_dim()];
        let mut head = head_init(0, &sizes).unwrap();
        for w in head.weights.iter_mut() {
            w.fill(0.0);
        }
        let params = head_forward(&head, &[1.0; 8], &dims).unwrap();
        assert_eq!(params, FaceParams::zeros(&dims));
    }

    #[test]
    fn identity_single_layer_reproduces_input() {
        let dims = ThetaDims { k_shape: 4, k_expr: 3, k_albedo: 2 };
        let n = dims.theta_dim();
        let mut head = head_init(0, &[n, n]).unwrap();
        head.weights[0] = Array2::eye(n);
        head.biases[0].fill(0.0);
        let input: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 1.0).collect();
        let params = head_forward(&head, &input, &dims).unwrap();
        assert_eq!(params.to_flat(), input);
    }

    #[test]
    fn forward_gelu_between_layers() {
        // One hidden unit: out = gelu(x). Checks the exact GeLU is used.
        let dims = ThetaDims { k_shape: 0, k_expr: 0, k_albedo: 0 };
        assert_eq!(dims.theta_dim(), 33);
        let mut head = head_init(0, &[1, 1, 33]).unwrap();
        head.weights[0].fill(1.0);
        head.weights[1].fill(0.0);
        head.weights[1][[0, 0]] = 1.0;
        head.biases[0].fill(0.0);
        head.biases[1].fill(0.0);
        let params = head_forward(&head, &[1.0], &dims).unwrap();
        assert_relative_eq!(params.phi[0], 0.8413447460685429, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dims = ThetaDims { k_shape: 4, k_expr: 3, k_albedo: 2 };
        let head = head_init(0, &[8, 6, dims.theta_dim()]).unwrap();
        assert!(head_forward(&head, &[0.0; 9], &dims).is_err());
        let wrong = ThetaDims { k_shape: 5, k_expr: 3, k_albedo: 2 };
        assert!(head_forward(&head, &[0.0; 8], &wrong).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sizes = [5, 7, 4];
        let head = head_init(11, &sizes).unwrap();
        let x = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>() - 0.5);
        let d_out = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() - 0.5);

        let (_, cache) = head_forward_batch(&head, &x).unwrap();
        let grads = head_backward_batch(&head, &cache, &d_out);

        let loss = |h: &HeadWeights, x: &Array2<f64>| -> f64 {
            let (out, _) = head_forward_batch(h, x).unwrap();
            (out * &d_out).sum()
        };
        let eps = 1e-6;

        // weight gradient spot checks
        for l in 0..2 {
            for &(i, j) in &[(0usize, 0usize), (1, 2), (head.weights[l].nrows() - 1, 1)] {
                let mut hp = head.clone();
                hp.weights[l][[i, j]] += eps;
                let mut hm = head.clone();
                hm.weights[l][[i, j]] -= eps;
                let fd = (loss(&hp, &x) - loss(&hm, &x)) / (2.0 * eps);
                assert_relative_eq!(grads.d_weights[l][[i, j]], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
        // input gradient spot checks
        for &(r, c) in &[(0usize, 0usize), (2, 4)] {
            let mut xp = x.clone();
            xp[[r, c]] += eps;
            let mut xm = x.clone();
            xm[[r, c]] -= eps;
            let fd = (loss(&head, &xp) - loss(&head, &xm)) / (2.0 * eps);
            assert_relative_eq!(grads.d_input[[r, c]], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn head_container_round_trip() {
        let head = head_init(5, &[12, 9, 7]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.figh");
        save_head(&head, &path).unwrap();
        let loaded = load_head(&path).unwrap();
        assert_eq!(loaded.layer_sizes, head.layer_sizes);
        // f32 storage: values round-trip through f32.
        for (a, b) in head.weights.iter().zip(&loaded.weights) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    fn tiny_training_setup() -> (MorphableModel, Vec<EmbeddingSample>) {
        let model = gen_synthetic_model(0, 8).unwrap();
        let cfg = DatasetConfig { width: 16, height: 16, embed_dim: 24 };
        let samples = gen_embedding_dataset_with(&model, 6, 3, 0.01, &cfg).unwrap();
        (model, samples)
    }

    #[test]
    fn zero_learning_rate_keeps_full_batch_curve_constant() {
        let (model, samples) = tiny_training_setup();
        let config = HeadTrainConfig {
            learning_rate: 0.0,
            total_iters: 5,
            batch_size: samples.len(),
            grad_accum: 1,
            hidden_sizes: vec![16],
            ..HeadTrainConfig::default()
        };
        let (_, curve) = head_train(&samples, &model, &config).unwrap();
        assert_eq!(curve.len(), 5);
        for v in &curve[1..] {
            assert_relative_eq!(*v, curve[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, samples) = tiny_training_setup();
        let config = HeadTrainConfig {
            total_iters: 4,
            batch_size: 2,
            grad_accum: 2,
            hidden_sizes: vec![16],
            learning_rate: 1e-3,
            ..HeadTrainConfig::default()
        };
        let (h1, c1) = head_train(&samples, &model, &config).unwrap();
        let (h2, c2) = head_train(&samples, &model, &config).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    /// Poisoning check: overwriting the ground-truth field changes
    /// nothing, because the training path never reads it.
    #[test]
    fn training_ignores_ground_truth_params() {
        let (model, mut samples) = tiny_training_setup();
        let config = HeadTrainConfig {
            total_iters: 3,
            batch_size: 2,
            grad_accum: 1,
            hidden_sizes: vec![16],
            learning_rate: 1e-3,
            ..HeadTrainConfig::default()
        };
        let (h1, c1) = head_train(&samples, &model, &config).unwrap();
        for s in samples.iter_mut() {
            s.ground_truth_theta = Some(vec![f32::NAN; model.theta_dim()]);
        }
        let (h2, c2) = head_train(&samples, &model, &config).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn smoothing_window_means() {
        let curve = vec![4.0, 2.0, 6.0, 0.0];
        let s = smoothed(&curve, 2);
        assert_eq!(s, vec![4.0, 3.0, 4.0, 3.0]);
    }
}
