//! Generate a synthetic morphable model and a small embedding dataset,
//! validate them, and save both to `examples_out/`.
//!
//! ```bash
//! cargo run --release -p morphfit --example generate_assets
//! ```

use morphfit::dataset::{gen_embedding_dataset_with, save_dataset, DatasetConfig};
use morphfit::model::{save_model, validate_model};
use morphfit::synth::gen_synthetic_model;

fn main() -> morphfit::Result<()> {
    let out_dir = std::path::Path::new("examples_out");
    std::fs::create_dir_all(out_dir)?;

    let model = gen_synthetic_model(0, 16)?;
    println!(
        "generated model: {} vertices, {} triangles, {} landmarks, theta dim {}",
        model.n_vertices,
        model.n_triangles(),
        model.landmark_indices.len(),
        model.theta_dim()
    );
    let report = validate_model(&model);
    println!("validation report: {} entries (empty = all invariants hold)", report.len());

    let model_path = out_dir.join("model.figm");
    save_model(&model, &model_path)?;
    println!("saved {}", model_path.display());

    let cfg = DatasetConfig { width: 32, height: 32, embed_dim: 256 };
    let samples = gen_embedding_dataset_with(&model, 8, 0, 0.01, &cfg)?;
    let ds_dir = out_dir.join("dataset");
    save_dataset(&ds_dir, &samples)?;
    println!(
        "saved {} samples ({}x{} targets, {}-dim embeddings) to {}",
        samples.len(),
        cfg.width,
        cfg.height,
        cfg.embed_dim,
        ds_dir.display()
    );
    Ok(())
}
