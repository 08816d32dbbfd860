//! `morphfit` command-line interface: thin argument parsing over the
//! harness entry points in the `morphfit` crate.
//!
//! Every command prints a single-line machine-readable summary on success
//! and writes a run manifest that `morphfit rerun` can replay. Exit codes:
//! 0 success, 2 validation/format problems (including bad usage), 3 I/O
//! problems, 4 numeric failures. `gradcheck` additionally exits nonzero
//! when the check itself fails.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use morphfit::harness::{
    self, EvalArgs, FitArgs, GenDatasetArgs, GenModelArgs, GradcheckArgs, RenderArgs,
    RunManifest, TrainHeadArgs,
};

#[derive(Parser)]
#[command(
    name = "morphfit",
    about = "Inverse graphics for linear morphable face models",
    version
)]
struct Cli {
    /// Base random seed for commands that generate or optimize.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; results are bit-identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic morphable model container.
    GenModel(GenModelCli),
    /// Generate a synthetic embedding dataset from a model.
    GenDataset(GenDatasetCli),
    /// Render parameters to a binary PPM image.
    Render(RenderCli),
    /// Fit parameters to an image plus landmarks.
    Fit(FitCli),
    /// Train the embedding-to-parameters head on a dataset.
    TrainHead(TrainHeadCli),
    /// Compute photometric and landmark metrics for given parameters.
    Eval(EvalCli),
    /// Check analytic renderer gradients against finite differences.
    Gradcheck(GradcheckCli),
    /// Re-execute the command recorded in a run manifest.
    Rerun(RerunCli),
}

#[derive(Args)]
struct GenModelCli {
    /// Output model path (.figm).
    #[arg(long)]
    out: PathBuf,
    /// Grid resolution of the generated mesh (>= 4).
    #[arg(long, default_value_t = 16)]
    grid: usize,
    /// Manifest path (defaults to <out>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetCli {
    #[arg(long)]
    model: PathBuf,
    /// Output directory for sample_%05d.{ppm,landmarks,embedding,theta}.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_samples: usize,
    /// Embedding noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 4096)]
    embed_dim: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RenderCli {
    #[arg(long)]
    model: PathBuf,
    /// Parameter JSON; zero parameters when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Output PPM path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FitCli {
    #[arg(long)]
    model: PathBuf,
    /// Target image (binary PPM).
    #[arg(long)]
    image: PathBuf,
    /// Detected landmarks (JSON array of [x, y] or null).
    #[arg(long)]
    landmarks: PathBuf,
    /// Output parameter JSON.
    #[arg(long)]
    out_params: PathBuf,
    /// Optional per-iteration loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Optional skin-color GMM JSON for the pixel-loss mask.
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Optional initial parameters (defaults to landmark-based init).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    /// Landmark-only warmup iterations.
    #[arg(long, default_value_t = 30)]
    warmup_iters: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainHeadCli {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Output weights path (.figh).
    #[arg(long)]
    out_weights: PathBuf,
    /// Optional loss-curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    total_iters: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    grad_accum: usize,
    #[arg(long, default_value_t = 2e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    warmup_iters: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCli {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Optional metrics JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckCli {
    #[arg(long)]
    model: PathBuf,
    /// Parameter JSON; a seed-derived probe configuration when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Comma-separated blocks among alpha,delta,gamma,phi,cam.
    #[arg(long, value_delimiter = ',', default_value = "alpha,delta,gamma,phi,cam")]
    blocks: Vec<String>,
    #[arg(long, default_value_t = 1e-2)]
    tolerance: f64,
    /// Optional report JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RerunCli {
    /// Manifest of the run to replay.
    #[arg(long)]
    manifest: PathBuf,
}

fn dispatch(cli: Cli) -> morphfit::Result<RunManifest> {
    let threads = cli.threads.max(1);
    let seed = cli.seed;
    match cli.command {
        Command::GenModel(a) => harness::run_gen_model(
            &GenModelArgs { out: a.out, seed, grid: a.grid, manifest: a.manifest },
            threads,
        ),
        Command::GenDataset(a) => harness::run_gen_dataset(
            &GenDatasetArgs {
                model: a.model,
                out_dir: a.out_dir,
                n_samples: a.n_samples,
                seed,
                noise_sigma: a.noise_sigma,
                width: a.width,
                height: a.height,
                embed_dim: a.embed_dim,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::Render(a) => harness::run_render(
            &RenderArgs {
                model: a.model,
                params: a.params,
                width: a.width,
                height: a.height,
                out: a.out,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::Fit(a) => harness::run_fit(
            &FitArgs {
                model: a.model,
                image: a.image,
                landmarks: a.landmarks,
                out_params: a.out_params,
                trace: a.trace,
                gmm: a.gmm,
                init: a.init,
                max_iters: a.max_iters,
                step_size: a.step_size,
                warmup_iters: a.warmup_iters,
                seed,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::TrainHead(a) => harness::run_train_head(
            &TrainHeadArgs {
                model: a.model,
                dataset_dir: a.dataset_dir,
                out_weights: a.out_weights,
                curve: a.curve,
                total_iters: a.total_iters,
                batch_size: a.batch_size,
                grad_accum: a.grad_accum,
                learning_rate: a.learning_rate,
                warmup_iters: a.warmup_iters,
                seed,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::Eval(a) => harness::run_eval(
            &EvalArgs {
                model: a.model,
                params: a.params,
                image: a.image,
                landmarks: a.landmarks,
                gmm: a.gmm,
                out: a.out,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::Gradcheck(a) => harness::run_gradcheck(
            &GradcheckArgs {
                model: a.model,
                params: a.params,
                width: a.width,
                height: a.height,
                blocks: a.blocks,
                tolerance: a.tolerance,
                seed,
                out: a.out,
                manifest: a.manifest,
            },
            threads,
        ),
        Command::Rerun(a) => harness::run_rerun(&a.manifest, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("morphfit: cannot configure {threads} threads: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli) {
        Ok(manifest) => {
            println!("{}", manifest.summary_line());
            // gradcheck reports pass/fail through the exit code as well
            if manifest.command == "gradcheck"
                && manifest.metrics.get("pass").and_then(|v| v.as_bool()) == Some(false)
            {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("morphfit: {e}");
            ExitCode::from(harness::exit_code_for(&e))
        }
    }
}
