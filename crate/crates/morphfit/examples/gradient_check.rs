//! Check the renderer's analytic gradients against finite differences of
//! the frozen-visibility forward map, block by block.
//!
//! ```bash
//! cargo run --release -p morphfit --example gradient_check
//! ```

use morphfit::dataset::sample_face_params;
use morphfit::params::ParamBlock;
use morphfit::render::gradcheck;
use morphfit::synth::gen_synthetic_model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> morphfit::Result<()> {
    let model = gen_synthetic_model(0, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = sample_face_params(&mut rng, &model.dims());

    // The shading path is exactly linear in phi and gamma, so those
    // blocks are held to a much tighter tolerance than the blocks that
    // pass through mesh normals and rotation.
    let linear = gradcheck(&model, &params, 32, 32, &[ParamBlock::Phi, ParamBlock::Gamma], 1e-4)?;
    println!("{}", linear.summary());

    let geometric = gradcheck(
        &model,
        &params,
        32,
        32,
        &[ParamBlock::Alpha, ParamBlock::Delta, ParamBlock::Cam],
        1e-2,
    )?;
    println!("{}", geometric.summary());

    for report in [&linear, &geometric] {
        for block in &report.blocks {
            let mean: f64 =
                block.rel_errors.iter().sum::<f64>() / block.rel_errors.len().max(1) as f64;
            println!(
                "  {}: {} coords, mean rel err {:.2e}, max {:.2e}",
                block.block.name(),
                block.rel_errors.len(),
                mean,
                block.max_rel_error
            );
        }
    }
    if linear.pass && geometric.pass {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(morphfit::Error::numeric("gradient check failed".to_string()))
    }
}
