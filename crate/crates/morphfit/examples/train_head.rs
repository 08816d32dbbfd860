//! Train a small embedding-to-parameters head purely through the
//! rendering loss (no ground-truth parameters are read), then inspect how
//! well the trained head reconstructs a held-out sample.
//!
//! This is a scaled-down run; the full-size configuration is
//! `HeadTrainConfig::default()` on a 200-sample dataset.
//!
//! ```bash
//! cargo run --release -p morphfit --example train_head
//! ```

use morphfit::dataset::{gen_embedding_dataset_with, DatasetConfig};
use morphfit::fitter::evaluate;
use morphfit::head::{head_forward, head_train, smoothed, HeadTrainConfig};
use morphfit::synth::gen_synthetic_model;

fn main() -> morphfit::Result<()> {
    let model = gen_synthetic_model(0, 16)?;
    let cfg = DatasetConfig { width: 24, height: 24, embed_dim: 256 };
    let n_train = 48;
    let samples = gen_embedding_dataset_with(&model, n_train + 1, 0, 0.01, &cfg)?;
    let (train, held_out) = samples.split_at(n_train);

    let config = HeadTrainConfig {
        total_iters: 400,
        batch_size: 8,
        grad_accum: 1,
        learning_rate: 3e-4, // scaled up for the small demo
        warmup_iters: 40,
        hidden_sizes: vec![128, 128],
        seed: 0,
        ..HeadTrainConfig::default()
    };
    println!("training {} iterations on {} samples...", config.total_iters, train.len());
    let (head, curve) = head_train(train, &model, &config)?;

    let sm = smoothed(&curve, 50);
    for i in (0..curve.len()).step_by(50) {
        println!("  iter {i:4}: loss {:.4} (smoothed {:.4})", curve[i], sm[i]);
    }
    println!(
        "loss: first {:.4}, last smoothed {:.4} ({:.1}x reduction)",
        curve[0],
        sm.last().unwrap(),
        curve[0] / sm.last().unwrap()
    );

    // Reconstruct the held-out sample from its embedding alone.
    let probe = &held_out[0];
    let embedding: Vec<f64> = probe.embedding.iter().map(|&v| v as f64).collect();
    let predicted = head_forward(&head, &embedding, &model.dims())?;
    let metrics = evaluate(
        &probe.target_image,
        None,
        &probe.landmarks,
        &model,
        &predicted,
        cfg.width,
        cfg.height,
    )?;
    println!(
        "held-out sample: photometric {:.4}, landmark {:.2}px",
        metrics.photometric_l2.unwrap(),
        metrics.landmark_px.unwrap()
    );
    Ok(())
}
