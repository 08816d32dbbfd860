//! Render a few faces: the neutral mean face under white light, a shape
//! variation, and a posed sample from the synthetic data distribution.
//! Writes binary PPM images to `examples_out/`.
//!
//! ```bash
//! cargo run --release -p morphfit --example render_faces
//! ```

use morphfit::dataset::sample_face_params;
use morphfit::params::FaceParams;
use morphfit::render::render;
use morphfit::synth::gen_synthetic_model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> morphfit::Result<()> {
    let out_dir = std::path::Path::new("examples_out");
    std::fs::create_dir_all(out_dir)?;
    let model = gen_synthetic_model(0, 16)?;
    let (w, h) = (128usize, 128usize);

    let neutral = FaceParams::neutral_lit(&model.dims());
    let out = render(&model, &neutral, w, h)?;
    out.color.write_ppm(out_dir.join("mean_face.ppm"))?;
    let covered = out.coverage.iter().filter(|&&c| c).count();
    println!("mean face: {covered}/{} pixels covered", w * h);

    let mut shaped = neutral.clone();
    shaped.alpha[0] = 3.0;
    shaped.delta[0] = -2.0;
    render(&model, &shaped, w, h)?.color.write_ppm(out_dir.join("shaped_face.ppm"))?;

    let mut side_lit = neutral.clone();
    for ch in 0..3 {
        side_lit.phi[9 * ch] *= 0.6;
        side_lit.phi[9 * ch + 3] = 0.9; // light from +x
    }
    render(&model, &side_lit, w, h)?.color.write_ppm(out_dir.join("side_lit_face.ppm"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sampled = sample_face_params(&mut rng, &model.dims());
    render(&model, &sampled, w, h)?.color.write_ppm(out_dir.join("sampled_face.ppm"))?;
    println!(
        "wrote mean_face.ppm, shaped_face.ppm, side_lit_face.ppm, sampled_face.ppm to {}",
        out_dir.display()
    );
    Ok(())
}
