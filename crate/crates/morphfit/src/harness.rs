//! Reproducible command entry points used by the `morphfit` binary.
//!
//! Every command validates its inputs, writes its outputs, and records a
//! [`RunManifest`] (JSON, next to the primary output by default) holding
//! the full argument snapshot, seeds, input/output paths, headline metrics
//! and wall-clock time. Re-running a manifest re-executes the recorded
//! command with identical arguments; since every computation is
//! deterministic and thread-count invariant, outputs reproduce
//! byte-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{
    gen_embedding_dataset_with, load_dataset, load_landmarks, save_dataset, DatasetConfig,
};
use crate::error::{Error, Result};
use crate::fitter::{default_extractor, evaluate, fit, FitConfig};
use crate::head::{head_train, save_head, HeadTrainConfig};
use crate::image::Image;
use crate::losses::{skin_mask, Gmm, LossWeights};
use crate::model::{load_model, save_model};
use crate::params::{FaceParams, ParamBlock};
use crate::render::{gradcheck, render};
use crate::synth::gen_synthetic_model;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Complete argument snapshot; `rerun` re-executes from this.
    pub args: serde_json::Value,
    pub threads: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Value,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("cannot parse manifest: {e}")))
    }

    /// One-line machine-readable summary for stdout.
    pub fn summary_line(&self) -> String {
        serde_json::to_string(&json!({
            "command": self.command,
            "outputs": self.outputs,
            "metrics": self.metrics,
        }))
        .unwrap_or_else(|_| format!("{{\"command\":\"{}\"}}", self.command))
    }
}

fn default_manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary_output.with_file_name(name)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    command: &str,
    args: impl Serialize,
    threads: usize,
    inputs: Vec<String>,
    outputs: Vec<String>,
    metrics: serde_json::Value,
    started: Instant,
    manifest_path: &Path,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        command: command.to_string(),
        args: serde_json::to_value(args)
            .map_err(|e| Error::format(format!("cannot snapshot args: {e}")))?,
        threads,
        inputs,
        outputs,
        metrics,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    manifest.save(manifest_path)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenModelArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub grid: usize,
    pub manifest: Option<PathBuf>,
}

pub fn run_gen_model(args: &GenModelArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = gen_synthetic_model(args.seed, args.grid)?;
    save_model(&model, &args.out)?;
    let manifest_path = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.out));
    finish(
        "gen-model",
        args,
        threads,
        vec![],
        vec![path_str(&args.out)],
        json!({
            "n_vertices": model.n_vertices,
            "n_triangles": model.n_triangles(),
            "theta_dim": model.theta_dim(),
        }),
        started,
        &manifest_path,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDatasetArgs {
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub n_samples: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub width: usize,
    pub height: usize,
    pub embed_dim: usize,
    pub manifest: Option<PathBuf>,
}

pub fn run_gen_dataset(args: &GenDatasetArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let cfg = DatasetConfig { width: args.width, height: args.height, embed_dim: args.embed_dim };
    let samples = gen_embedding_dataset_with(&model, args.n_samples, args.seed, args.noise_sigma, &cfg)?;
    save_dataset(&args.out_dir, &samples)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out_dir.join("dataset.manifest.json"));
    let outputs: Vec<String> = (0..samples.len())
        .flat_map(|i| {
            ["ppm", "landmarks", "embedding", "theta"]
                .iter()
                .map(move |ext| path_str(&args.out_dir.join(format!("sample_{i:05}.{ext}"))))
                .collect::<Vec<_>>()
        })
        .collect();
    finish(
        "gen-dataset",
        args,
        threads,
        vec![path_str(&args.model)],
        outputs,
        json!({ "n_samples": samples.len() }),
        started,
        &manifest_path,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderArgs {
    pub model: PathBuf,
    /// Parameter file; zero parameters when absent.
    pub params: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
}

pub fn run_render(args: &RenderArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let params = match &args.params {
        Some(p) => FaceParams::load_json(p)?,
        None => FaceParams::zeros(&model.dims()),
    };
    let out = render(&model, &params, args.width, args.height)?;
    out.color.write_ppm(&args.out)?;
    let covered = out.coverage.iter().filter(|&&c| c).count();
    let manifest_path = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.out));
    let mut inputs = vec![path_str(&args.model)];
    if let Some(p) = &args.params {
        inputs.push(path_str(p));
    }
    finish(
        "render",
        args,
        threads,
        inputs,
        vec![path_str(&args.out)],
        json!({ "covered_pixels": covered }),
        started,
        &manifest_path,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    pub model: PathBuf,
    pub image: PathBuf,
    pub landmarks: PathBuf,
    pub out_params: PathBuf,
    pub trace: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub max_iters: usize,
    pub step_size: f64,
    pub warmup_iters: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
}

pub fn run_fit(args: &FitArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let target = Image::read_ppm(&args.image)?;
    let landmarks = load_landmarks(&args.landmarks)?;
    let mask = match &args.gmm {
        Some(path) => Some(skin_mask(&target, &Gmm::load_json(path)?, false)),
        None => None,
    };
    let init = match &args.init {
        Some(path) => Some(FaceParams::load_json(path)?),
        None => None,
    };
    let config = FitConfig {
        max_iters: args.max_iters,
        step_size: args.step_size,
        landmark_only_warmup_iters: args.warmup_iters,
        seed: args.seed,
        ..FitConfig::default()
    };
    let extractor = default_extractor();
    let (params, trace) = fit(
        &target,
        &landmarks,
        mask.as_ref(),
        &model,
        &config,
        init.as_ref(),
        &extractor,
    )?;
    params.save_json(&args.out_params)?;
    let mut outputs = vec![path_str(&args.out_params)];
    if let Some(trace_path) = &args.trace {
        trace.write_csv(trace_path)?;
        outputs.push(path_str(trace_path));
    }
    let metrics = evaluate(
        &target,
        mask.as_ref(),
        &landmarks,
        &model,
        &params,
        target.width,
        target.height,
    )?;
    let manifest_path =
        args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.out_params));
    let mut inputs = vec![path_str(&args.model), path_str(&args.image), path_str(&args.landmarks)];
    for p in [&args.gmm, &args.init].into_iter().flatten() {
        inputs.push(path_str(p));
    }
    finish(
        "fit",
        args,
        threads,
        inputs,
        outputs,
        json!({
            "final_total": trace.rows.last().map(|r| r.total),
            "photometric_l2": metrics.photometric_l2,
            "landmark_px": metrics.landmark_px,
            "iterations": trace.rows.len(),
        }),
        started,
        &manifest_path,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHeadArgs {
    pub model: PathBuf,
    pub dataset_dir: PathBuf,
    pub out_weights: PathBuf,
    pub curve: Option<PathBuf>,
    pub total_iters: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub learning_rate: f64,
    pub warmup_iters: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
}

pub fn run_train_head(args: &TrainHeadArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let samples = load_dataset(&args.dataset_dir)?;
    let config = HeadTrainConfig {
        learning_rate: args.learning_rate,
        warmup_iters: args.warmup_iters,
        total_iters: args.total_iters,
        batch_size: args.batch_size,
        grad_accum: args.grad_accum,
        seed: args.seed,
        ..HeadTrainConfig::default()
    };
    let (head, curve) = head_train(&samples, &model, &config)?;
    save_head(&head, &args.out_weights)?;
    let mut outputs = vec![path_str(&args.out_weights)];
    if let Some(curve_path) = &args.curve {
        let mut text = String::from("iter,mean_face_loss\n");
        for (i, v) in curve.iter().enumerate() {
            text.push_str(&format!("{i},{v:.17e}\n"));
        }
        std::fs::write(curve_path, text)?;
        outputs.push(path_str(curve_path));
    }
    let smoothed = crate::head::smoothed(&curve, 100);
    let manifest_path =
        args.manifest.clone().unwrap_or_else(|| default_manifest_path(&args.out_weights));
    finish(
        "train-head",
        args,
        threads,
        vec![path_str(&args.model), path_str(&args.dataset_dir)],
        outputs,
        json!({
            "iterations": curve.len(),
            "initial_loss": curve.first(),
            "final_loss": curve.last(),
            "final_smoothed_loss": smoothed.last(),
        }),
        started,
        &manifest_path,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub params: PathBuf,
    pub image: PathBuf,
    pub landmarks: PathBuf,
    pub gmm: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let params = FaceParams::load_json(&args.params)?;
    let target = Image::read_ppm(&args.image)?;
    let landmarks = load_landmarks(&args.landmarks)?;
    let mask = match &args.gmm {
        Some(path) => Some(skin_mask(&target, &Gmm::load_json(path)?, false)),
        None => None,
    };
    let metrics = evaluate(
        &target,
        mask.as_ref(),
        &landmarks,
        &model,
        &params,
        target.width,
        target.height,
    )?;
    let metrics_json = json!({
        "photometric_l2": metrics.photometric_l2,
        "landmark_px": metrics.landmark_px,
    });
    let mut outputs = Vec::new();
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&metrics_json).unwrap())?;
        outputs.push(path_str(out));
    }
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        args.out
            .as_ref()
            .map(|p| default_manifest_path(p))
            .unwrap_or_else(|| default_manifest_path(&args.params))
    });
    let mut inputs =
        vec![path_str(&args.model), path_str(&args.params), path_str(&args.image), path_str(&args.landmarks)];
    if let Some(p) = &args.gmm {
        inputs.push(path_str(p));
    }
    finish("eval", args, threads, inputs, outputs, metrics_json, started, &manifest_path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckArgs {
    pub model: PathBuf,
    /// Parameter file; a seed-derived probe configuration when absent.
    pub params: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub blocks: Vec<String>,
    pub tolerance: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

pub fn run_gradcheck(args: &GradcheckArgs, threads: usize) -> Result<RunManifest> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    let params = match &args.params {
        Some(p) => FaceParams::load_json(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            crate::dataset::sample_face_params(&mut rng, &model.dims())
        }
    };
    let blocks: Vec<ParamBlock> =
        args.blocks.iter().map(|b| ParamBlock::parse(b)).collect::<Result<_>>()?;
    let report = gradcheck(&model, &params, args.width, args.height, &blocks, args.tolerance)?;
    let blocks_json: Vec<serde_json::Value> = report
        .blocks
        .iter()
        .map(|b| {
            json!({
                "block": b.block.name(),
                "max_rel_error": b.max_rel_error,
                "pass": b.pass,
                "pixels_checked": b.n_pixels_checked,
                "rel_errors": b.rel_errors,
            })
        })
        .collect();
    let metrics = json!({ "pass": report.pass, "blocks": blocks_json });
    let mut outputs = Vec::new();
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&metrics).unwrap())?;
        outputs.push(path_str(out));
    }
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        args.out
            .as_ref()
            .map(|p| default_manifest_path(p))
            .unwrap_or_else(|| default_manifest_path(&args.model))
    });
    let mut inputs = vec![path_str(&args.model)];
    if let Some(p) = &args.params {
        inputs.push(path_str(p));
    }
    finish("gradcheck", args, threads, inputs, outputs, metrics, started, &manifest_path)
}

/// Re-execute the command recorded in a manifest with identical
/// arguments. All computations are thread-count invariant, so the rerun
/// reproduces outputs byte-identically regardless of `threads`.
pub fn run_rerun(manifest_path: &Path, threads: usize) -> Result<RunManifest> {
    let manifest = RunManifest::load(manifest_path)?;
    let bad_args =
        |e: serde_json::Error| Error::format(format!("manifest args do not parse: {e}"));
    match manifest.command.as_str() {
        "gen-model" => {
            let args: GenModelArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_gen_model(&args, threads)
        }
        "gen-dataset" => {
            let args: GenDatasetArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_gen_dataset(&args, threads)
        }
        "render" => {
            let args: RenderArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_render(&args, threads)
        }
        "fit" => {
            let args: FitArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_fit(&args, threads)
        }
        "train-head" => {
            let args: TrainHeadArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_train_head(&args, threads)
        }
        "eval" => {
            let args: EvalArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_eval(&args, threads)
        }
        "gradcheck" => {
            let args: GradcheckArgs = serde_json::from_value(manifest.args).map_err(bad_args)?;
            run_gradcheck(&args, threads)
        }
        other => Err(Error::validation(format!("manifest records unknown command '{other}'"))),
    }
}

/// Exit-code classes used by the CLI: validation/format/dimension
/// problems exit 2, I/O problems 3, numeric blow-ups 4.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Format(_) | Error::Validation(_) | Error::Dimension(_) => 2,
        Error::Numeric(_) => 4,
    }
}

/// Verify that default configurations match the published training setup
/// (used by the acceptance suite's configuration snapshot test).
pub fn config_snapshot() -> serde_json::Value {
    let lw = LossWeights::default();
    let ht = HeadTrainConfig::default();
    json!({
        "loss_weights": {
            "lambda_pixel": lw.lambda_pixel,
            "lambda_perc": lw.lambda_perc,
            "lambda_lm": lw.lambda_lm,
            "lambda_reg": lw.lambda_reg,
        },
        "head_training": {
            "optimizer": "AdamW",
            "learning_rate": ht.learning_rate,
            "weight_decay": ht.weight_decay,
            "warmup_iters": ht.warmup_iters,
            "batch_size": ht.batch_size,
            "grad_accum": ht.grad_accum,
        },
    })
}
