//! The differentiable renderer: forward rasterization plus a reverse-mode
//! gradient with respect to all face parameters.
//!
//! # Gradient semantics: frozen visibility
//!
//! The backward pass treats the per-pixel triangle assignment *and* the
//! barycentric weights as constants of the forward pass. Gradients flow
//! through shading (phi), albedo (gamma), and through the vertex normals
//! into (alpha, delta) and the rotation part of cam; they do **not** flow
//! through coverage changes, and `d(barycentric)/d(screen position)` is
//! excluded by definition. Consequently tx, ty and log_scale receive zero
//! gradient from the image term alone; the landmark loss supplies that
//! pose signal. Boundary gradients are biased by this choice, which is the
//! price of a hard rasterizer.
//!
//! Pixels whose shaded color saturates the [0, 1] clamp get zero gradient
//! in the saturated channels.
//!
//! Shading uses camera-space normals (the model normal rotated by the
//! camera rotation), so lighting is fixed in the camera frame and head
//! rotation changes shading.
//!
//! # Determinism
//!
//! Forward rendering is a pure function of (model, params, size). The
//! backward pass accumulates per-pixel contributions in fixed row bands
//! of [`BAND_ROWS`] rows which are merged in band order; band contents and
//! merge order are independent of the number of threads, so results are
//! bit-identical for any thread count.

use rayon::prelude::*;

use crate::decode::{
    decode_albedo, decode_albedo_vjp, decode_geometry, decode_geometry_vjp, vertex_normals,
    vertex_normals_vjp,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{dot3, mat3_tvec, mat3_vec, Mat3, Vec3};
use crate::model::MorphableModel;
use crate::params::{FaceParams, ParamBlock};
use crate::raster::{rasterize, RasterOutput};
use crate::scene::{project, rotation_derivatives, rotation_from_euler, shade, shade_vjp, ScreenVertex};

/// Row-band height for gradient accumulation; fixed so parallel and serial
/// execution reduce in the same order.
const BAND_ROWS: usize = 16;

/// Full forward rendering result.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub coverage: Vec<bool>,
    pub depth: Vec<f64>,
    pub tri_id: Vec<Option<u32>>,
    pub bary: Vec<[f64; 3]>,
}

/// Per-vertex quantities shared by the forward and backward passes.
pub(crate) struct Prepared {
    pub positions: Vec<Vec3>,
    pub normals_model: Vec<Vec3>,
    /// Unit normals rotated into camera space.
    pub normals_cam: Vec<Vec3>,
    pub albedo: Vec<Vec3>,
    pub screen: Vec<ScreenVertex>,
    pub rotation: Mat3,
}

pub(crate) fn prepare(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
) -> Result<Prepared> {
    params.check(&model.dims())?;
    let positions = decode_geometry(model, &params.alpha, &params.delta)?;
    let normals_model = vertex_normals(&positions, &model.triangles);
    let rotation = rotation_from_euler(params.pitch(), params.yaw(), params.roll());
    let normals_cam: Vec<Vec3> = normals_model.iter().map(|&n| mat3_vec(&rotation, n)).collect();
    let albedo = decode_albedo(model, &params.gamma)?;
    let screen = project(&positions, &params.cam, width, height)?;
    Ok(Prepared { positions, normals_model, normals_cam, albedo, screen, rotation })
}

#[inline]
fn interp3(a: Vec3, b: Vec3, c: Vec3, w: [f64; 3]) -> Vec3 {
    [
        w[0] * a[0] + w[1] * b[0] + w[2] * c[0],
        w[0] * a[1] + w[1] * b[1] + w[2] * c[1],
        w[0] * a[2] + w[1] * b[2] + w[2] * c[2],
    ]
}

/// Shade every covered pixel of `raster` using the vertex attributes in
/// `prepared`. Returns the clamped color image. The triangle assignment
/// and barycentric weights come entirely from `raster`, which is what
/// makes this usable as the frozen-visibility forward map.
pub(crate) fn shade_with_assignment(
    model: &MorphableModel,
    prepared: &Prepared,
    raster: &RasterOutput,
    phi: &[f64],
) -> Image {
    let (width, height) = (raster.width, raster.height);
    let mut color = Image::black(width, height);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let Some(t) = raster.tri_id[i] else { continue };
            let tri = &model.triangles[t as usize];
            let w = raster.bary[i];
            let (v0, v1, v2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
            let albedo = interp3(prepared.albedo[v0], prepared.albedo[v1], prepared.albedo[v2], w);
            let m = interp3(
                prepared.normals_cam[v0],
                prepared.normals_cam[v1],
                prepared.normals_cam[v2],
                w,
            );
            let len = crate::math::norm3(m);
            let n = if len < 1e-12 { [0.0, 0.0, 1.0] } else { [m[0] / len, m[1] / len, m[2] / len] };
            let c = shade(albedo, n, phi);
            color.set_pixel(x, y, [
                c[0].clamp(0.0, 1.0),
                c[1].clamp(0.0, 1.0),
                c[2].clamp(0.0, 1.0),
            ]);
        }
    }
    color
}

/// Render the model under the given parameters.
pub fn render(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
) -> Result<RenderOutput> {
    let prepared = prepare(model, params, width, height)?;
    let raster = rasterize(&prepared.screen, &model.triangles, width, height)?;
    let color = shade_with_assignment(model, &prepared, &raster, &params.phi);
    Ok(RenderOutput {
        color,
        coverage: raster.coverage,
        depth: raster.depth,
        tri_id: raster.tri_id,
        bary: raster.bary,
    })
}

/// Re-evaluate the rendered image for `params` under a frozen pixel-to-
/// triangle assignment taken from an earlier rasterization. This is the
/// forward map whose exact derivative `render_backward` computes.
pub fn render_with_assignment(
    model: &MorphableModel,
    params: &FaceParams,
    raster: &RasterOutput,
) -> Result<Image> {
    let prepared = prepare(model, params, raster.width, raster.height)?;
    Ok(shade_with_assignment(model, &prepared, raster, &params.phi))
}

struct BandAccum {
    d_albedo: Vec<Vec3>,
    d_normal_cam: Vec<Vec3>,
    d_phi: [f64; 27],
}

/// Backward pass given precomputed forward state.
pub(crate) fn backward_from(
    model: &MorphableModel,
    params: &FaceParams,
    prepared: &Prepared,
    raster: &RasterOutput,
    adjoint: &Image,
) -> Result<Vec<f64>> {
    let (width, height) = (raster.width, raster.height);
    if adjoint.width != width || adjoint.height != height {
        return Err(Error::dimension(format!(
            "adjoint image is {}x{}, render is {width}x{height}",
            adjoint.width, adjoint.height
        )));
    }
    let n_vertices = model.n_vertices;
    let phi = &params.phi;

    let n_bands = height.div_ceil(BAND_ROWS);
    let bands: Vec<BandAccum> = (0..n_bands)
        .into_par_iter()
        .map(|band| {
            let mut acc = BandAccum {
                d_albedo: vec![[0.0; 3]; n_vertices],
                d_normal_cam: vec![[0.0; 3]; n_vertices],
                d_phi: [0.0; 27],
            };
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height);
            for y in y0..y1 {
                for x in 0..width {
                    let i = y * width + x;
                    let Some(t) = raster.tri_id[i] else { continue };
                    let g = adjoint.pixel(x, y);
                    if g == [0.0, 0.0, 0.0] {
                        continue;
                    }
                    let tri = &model.triangles[t as usize];
                    let w = raster.bary[i];
                    let (v0, v1, v2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
                    let albedo =
                        interp3(prepared.albedo[v0], prepared.albedo[v1], prepared.albedo[v2], w);
                    let m = interp3(
                        prepared.normals_cam[v0],
                        prepared.normals_cam[v1],
                        prepared.normals_cam[v2],
                        w,
                    );
                    let len = crate::math::norm3(m);
                    if len < 1e-12 {
                        continue; // constant fallback normal, no gradient
                    }
                    let n = [m[0] / len, m[1] / len, m[2] / len];
                    let c_pre = shade(albedo, n, phi);
                    // Zero gradient in saturated channels.
                    let g_masked = [
                        if c_pre[0] > 0.0 && c_pre[0] < 1.0 { g[0] } else { 0.0 },
                        if c_pre[1] > 0.0 && c_pre[1] < 1.0 { g[1] } else { 0.0 },
                        if c_pre[2] > 0.0 && c_pre[2] < 1.0 { g[2] } else { 0.0 },
                    ];
                    if g_masked == [0.0, 0.0, 0.0] {
                        continue;
                    }
                    let (d_albedo, d_n, d_phi) = shade_vjp(albedo, n, phi, g_masked);
                    for k in 0..27 {
                        acc.d_phi[k] += d_phi[k];
                    }
                    // n = m / |m|  =>  d_m = (d_n - n (n . d_n)) / |m|
                    let radial = dot3(n, d_n);
                    let d_m = [
                        (d_n[0] - n[0] * radial) / len,
                        (d_n[1] - n[1] * radial) / len,
                        (d_n[2] - n[2] * radial) / len,
                    ];
                    // Frozen barycentric weights scatter to the vertices.
                    for (vi, wi) in [(v0, w[0]), (v1, w[1]), (v2, w[2])] {
                        for axis in 0..3 {
                            acc.d_albedo[vi][axis] += wi * d_albedo[axis];
                            acc.d_normal_cam[vi][axis] += wi * d_m[axis];
                        }
                    }
                }
            }
            acc
        })
        .collect();

    // Merge bands in fixed order.
    let mut d_albedo_v = vec![[0.0f64; 3]; n_vertices];
    let mut d_normal_cam_v = vec![[0.0f64; 3]; n_vertices];
    let mut d_phi = [0.0f64; 27];
    for band in bands {
        for v in 0..n_vertices {
            for axis in 0..3 {
                d_albedo_v[v][axis] += band.d_albedo[v][axis];
                d_normal_cam_v[v][axis] += band.d_normal_cam[v][axis];
            }
        }
        for k in 0..27 {
            d_phi[k] += band.d_phi[k];
        }
    }

    // Albedo chain: vertex albedo -> gamma.
    let d_gamma = decode_albedo_vjp(model, &d_albedo_v);

    // Normal chain: camera normals depend on the rotation and on the
    // model normals; n_cam = R n_model.
    let mut d_rot = [[0.0f64; 3]; 3];
    let mut d_normal_model = vec![[0.0f64; 3]; n_vertices];
    for v in 0..n_vertices {
        let dnc = d_normal_cam_v[v];
        let nm = prepared.normals_model[v];
        for r in 0..3 {
            for c in 0..3 {
                d_rot[r][c] += dnc[r] * nm[c];
            }
        }
        d_normal_model[v] = mat3_tvec(&prepared.rotation, dnc);
    }
    let d_positions = vertex_normals_vjp(&prepared.positions, &model.triangles, &d_normal_model);
    let (d_alpha, d_delta) = decode_geometry_vjp(model, &d_positions);

    let rot_derivs = rotation_derivatives(params.pitch(), params.yaw(), params.roll());
    let mut d_cam = [0.0f64; 6];
    for a in 0..3 {
        d_cam[a] = crate::math::mat3_frobenius(&d_rot, &rot_derivs[a]);
    }
    // tx, ty, log_scale only move screen positions, which are frozen.

    let mut grad = Vec::with_capacity(params.theta_dim());
    grad.extend_from_slice(&d_alpha);
    grad.extend_from_slice(&d_delta);
    grad.extend_from_slice(&d_gamma);
    grad.extend_from_slice(&d_phi);
    grad.extend_from_slice(&d_cam);
    Ok(grad)
}

/// Gradient of `L = sum(adjoint ⊙ color)` with respect to the flattened
/// parameter vector, under frozen visibility (see module docs).
pub fn render_backward(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
    adjoint: &Image,
) -> Result<Vec<f64>> {
    let prepared = prepare(model, params, width, height)?;
    let raster = rasterize(&prepared.screen, &model.triangles, width, height)?;
    backward_from(model, params, &prepared, &raster, adjoint)
}

/// Result of checking one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub block: ParamBlock,
    /// Relative error per coordinate of the block.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub pass: bool,
    /// Pixels that survived the stability and saturation masks.
    pub n_pixels_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        for b in &self.blocks {
            parts.push(format!(
                "{}: max_rel={:.3e} over {} px [{}]",
                b.block.name(),
                b.max_rel_error,
                b.n_pixels_checked,
                if b.pass { "pass" } else { "FAIL" }
            ));
        }
        format!("gradcheck eps={:.1e} tol={:.1e}: {}", self.eps, self.tolerance, parts.join("; "))
    }
}

/// Deterministic sign-varying adjoint pattern used by the gradient checker.
fn checker_adjoint(width: usize, height: usize) -> Image {
    let mut img = Image::black(width, height);
    for (i, v) in img.data.iter_mut().enumerate() {
        *v = 0.6 + 0.4 * (0.9 * i as f64 + 0.7).sin();
    }
    img
}

/// Compare the analytic gradient of the frozen-visibility forward map
/// against central finite differences of that same map, per coordinate.
///
/// Pixels are excluded when the full (re-rasterized) triangle assignment
/// changes under the +/- eps perturbations of any coordinate in the block
/// (occlusion-boundary pixels), or when a base color channel sits within
/// `SAT_MARGIN` of the clamp boundaries.
///
/// The finite difference is evaluated as a sum of per-pixel color
/// differences, and coordinates whose loss response at the base step is
/// below the f64 cancellation floor are re-probed with a larger step
/// (their parameter-to-geometry response is microscopic, so the larger
/// step stays well inside the smooth regime).
pub fn gradcheck(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
    blocks: &[ParamBlock],
    tolerance: f64,
) -> Result<GradCheckReport> {
    const SAT_MARGIN: f64 = 1e-3;
    // Loss responses below this are cancellation noise at the base step.
    const MIN_TRUSTED_DELTA: f64 = 1e-8;
    const EPS_RETRY: f64 = 0.25;
    let eps = 1e-4;

    let base_prepared = prepare(model, params, width, height)?;
    let base_raster = rasterize(&base_prepared.screen, &model.triangles, width, height)?;
    let adjoint = checker_adjoint(width, height);
    let flat = params.to_flat();
    let dims = model.dims();

    // Saturation mask from the unclamped base colors.
    let n_pixels = width * height;
    let mut sat_ok = vec![true; n_pixels];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let Some(t) = base_raster.tri_id[i] else { continue };
            let tri = &model.triangles[t as usize];
            let w = base_raster.bary[i];
            let (v0, v1, v2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
            let albedo = interp3(
                base_prepared.albedo[v0],
                base_prepared.albedo[v1],
                base_prepared.albedo[v2],
                w,
            );
            let m = interp3(
                base_prepared.normals_cam[v0],
                base_prepared.normals_cam[v1],
                base_prepared.normals_cam[v2],
                w,
            );
            let len = crate::math::norm3(m);
            let n = if len < 1e-12 { [0.0, 0.0, 1.0] } else { [m[0] / len, m[1] / len, m[2] / len] };
            let c = shade(albedo, n, &params.phi);
            for ch in 0..3 {
                if (c[ch] - 0.0).abs() < SAT_MARGIN || (c[ch] - 1.0).abs() < SAT_MARGIN {
                    sat_ok[i] = false;
                }
            }
        }
    }

    let mut report = GradCheckReport { blocks: Vec::new(), eps, tolerance, pass: true };
    for &block in blocks {
        let range = params.block_range(block);

        // Stability mask: the triangle assignment of every pixel must be
        // unchanged under +/- eps on every coordinate of the block.
        let mut stable = vec![true; n_pixels];
        let mut frozen_plus: Vec<Image> = Vec::with_capacity(range.len());
        let mut frozen_minus: Vec<Image> = Vec::with_capacity(range.len());
        for idx in range.clone() {
            for (side, store) in [(1.0, &mut frozen_plus), (-1.0, &mut frozen_minus)] {
                let mut pert = flat.clone();
                pert[idx] += side * eps;
                let pert_params = FaceParams::from_flat(&pert, &dims)?;
                let prepared = prepare(model, &pert_params, width, height)?;
                let raster = rasterize(&prepared.screen, &model.triangles, width, height)?;
                for i in 0..n_pixels {
                    if raster.tri_id[i] != base_raster.tri_id[i] {
                        stable[i] = false;
                    }
                }
                // Frozen-assignment forward under the perturbed params.
                store.push(shade_with_assignment(model, &prepared, &base_raster, &pert_params.phi));
            }
        }

        let mut masked_adjoint = adjoint.clone();
        let mut n_checked = 0usize;
        for i in 0..n_pixels {
            let keep = stable[i] && sat_ok[i] && base_raster.tri_id[i].is_some();
            if keep {
                n_checked += 1;
            } else {
                for ch in 0..3 {
                    masked_adjoint.data[3 * i + ch] = 0.0;
                }
            }
        }

        let analytic = backward_from(model, params, &base_prepared, &base_raster, &masked_adjoint)?;

        // Differencing the images before the weighted sum avoids the
        // catastrophic cancellation of subtracting two large loss values.
        let fd_of = |plus: &Image, minus: &Image, step: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..plus.data.len() {
                acc += masked_adjoint.data[i] * (plus.data[i] - minus.data[i]);
            }
            acc / (2.0 * step)
        };
        let mut rel_errors = Vec::with_capacity(range.len());
        for (k, idx) in range.clone().enumerate() {
            let mut fd = fd_of(&frozen_plus[k], &frozen_minus[k], eps);
            if (fd * 2.0 * eps).abs() < MIN_TRUSTED_DELTA {
                let mut images = [None, None];
                for (slot, side) in [(0usize, 1.0), (1usize, -1.0)] {
                    let mut pert = flat.clone();
                    pert[idx] += side * EPS_RETRY;
                    let pert_params = FaceParams::from_flat(&pert, &dims)?;
                    let prepared = prepare(model, &pert_params, width, height)?;
                    images[slot] =
                        Some(shade_with_assignment(model, &prepared, &base_raster, &pert_params.phi));
                }
                fd = fd_of(images[0].as_ref().unwrap(), images[1].as_ref().unwrap(), EPS_RETRY);
            }
            let an = analytic[idx];
            let denom = fd.abs().max(an.abs()).max(1e-12);
            rel_errors.push((fd - an).abs() / denom);
        }
        let max_rel_error = rel_errors.iter().cloned().fold(0.0, f64::max);
        let pass = max_rel_error <= tolerance;
        report.pass &= pass;
        report.blocks.push(BlockCheck {
            block,
            rel_errors,
            max_rel_error,
            pass,
            n_pixels_checked: n_checked,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::WHITE_LIGHT_DC;
    use crate::synth::gen_synthetic_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lit_params(model: &MorphableModel, seed: u64) -> FaceParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FaceParams::zeros(&model.dims());
        for v in p.alpha.iter_mut().chain(&mut p.delta).chain(&mut p.gamma) {
            *v = (rng.random::<f64>() - 0.5) * 0.8;
        }
        for ch in 0..3 {
            // Dimmed white light keeps colors inside (0, 1).
            p.phi[9 * ch] = 0.75 * WHITE_LIGHT_DC;
            for k in 1..9 {
                p.phi[9 * ch + k] = (rng.random::<f64>() - 0.5) * 0.3;
            }
        }
        p.cam = vec![0.05, -0.08, 0.03, 0.02, -0.01, 0.05];
        p
    }

    #[test]
    fn render_is_deterministic() {
        let model = gen_synthetic_model(0, 12).unwrap();
        let params = FaceParams::zeros(&model.dims());
        let a = render(&model, &params, 32, 32).unwrap();
        let b = render(&model, &params, 32, 32).unwrap();
        assert_eq!(a.color.data, b.color.data);
        assert_eq!(a.tri_id, b.tri_id);
        assert_eq!(a.color.to_rgb8(), b.color.to_rgb8());
    }

    #[test]
    fn zero_light_renders_black_but_covered() {
        let model = gen_synthetic_model(0, 12).unwrap();
        let params = FaceParams::zeros(&model.dims());
        let out = render(&model, &params, 32, 32).unwrap();
        let covered = out.coverage.iter().filter(|&&c| c).count();
        assert!(covered > 100, "mean face should cover a good chunk of 32x32");
        for i in 0..out.coverage.len() {
            if out.coverage[i] {
                assert_eq!(out.color.data[3 * i], 0.0);
            }
        }
    }

    #[test]
    fn render_output_invariants_hold() {
        let model = gen_synthetic_model(2, 16).unwrap();
        let params = lit_params(&model, 3);
        let out = render(&model, &params, 48, 48).unwrap();
        for i in 0..out.coverage.len() {
            assert_eq!(out.coverage[i], out.tri_id[i].is_some());
            if out.coverage[i] {
                let s: f64 = out.bary[i].iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
            for ch in 0..3 {
                let c = out.color.data[3 * i + ch];
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let model = gen_synthetic_model(0, 10).unwrap();
        let params = lit_params(&model, 1);
        let adjoint = Image::black(24, 24);
        let grad = render_backward(&model, &params, 24, 24, &adjoint).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradcheck_passes_for_linear_blocks_at_tight_tolerance() {
        let model = gen_synthetic_model(0, 12).unwrap();
        let params = lit_params(&model, 2);
        let report = gradcheck(
            &model,
            &params,
            32,
            32,
            &[ParamBlock::Phi, ParamBlock::Gamma],
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn gradcheck_passes_for_geometric_blocks() {
        let model = gen_synthetic_model(0, 12).unwrap();
        let params = lit_params(&model, 4);
        let report = gradcheck(
            &model,
            &params,
            32,
            32,
            &[ParamBlock::Alpha, ParamBlock::Delta, ParamBlock::Cam],
            1e-2,
        )
        .unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    /// Full-pipeline finite differences for phi: illumination moves no
    /// geometry, so the frozen and true forward maps coincide.
    #[test]
    fn phi_gradient_matches_full_render_finite_differences() {
        let model = gen_synthetic_model(1, 10).unwrap();
        let params = lit_params(&model, 5);
        let (w, h) = (24usize, 24usize);
        let adjoint = checker_adjoint(w, h);
        let grad = render_backward(&model, &params, w, h, &adjoint).unwrap();

        let loss = |p: &FaceParams| -> f64 {
            let out = render(&model, p, w, h).unwrap();
            out.color.data.iter().zip(&adjoint.data).map(|(c, a)| c * a).sum()
        };
        let eps = 1e-4;
        let range = params.block_range(ParamBlock::Phi);
        let flat = params.to_flat();
        for idx in range.step_by(4) {
            let mut plus = flat.clone();
            plus[idx] += eps;
            let mut minus = flat.clone();
            minus[idx] -= eps;
            let fd = (loss(&FaceParams::from_flat(&plus, &model.dims()).unwrap())
                - loss(&FaceParams::from_flat(&minus, &model.dims()).unwrap()))
                / (2.0 * eps);
            let an = grad[idx];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "phi[{idx}]: fd={fd:.6e} analytic={an:.6e}"
            );
        }
    }

    /// Gradient-descent smoke test: a small step along -grad decreases
    /// the weighted pixel objective.
    #[test]
    fn gradient_step_decreases_pixel_objective() {
        let model = gen_synthetic_model(0, 12).unwrap();
        let (w, h) = (32usize, 32usize);
        let mut improved = 0;
        for seed in 0..20u64 {
            let target_params = lit_params(&model, 100 + seed);
            let target = render(&model, &target_params, w, h).unwrap().color;

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut start = target_params.clone();
            for v in start
                .alpha
                .iter_mut()
                .chain(&mut start.delta)
                .chain(&mut start.gamma)
                .chain(&mut start.phi)
            {
                *v += (rng.random::<f64>() - 0.5) * 0.1;
            }

            let loss_of = |p: &FaceParams| -> f64 {
                let img = render(&model, p, w, h).unwrap().color;
                img.data
                    .iter()
                    .zip(&target.data)
                    .map(|(c, t)| (c - t) * (c - t))
                    .sum::<f64>()
            };
            let base_loss = loss_of(&start);

            // dL/dcolor = 2 (color - target)
            let img = render(&model, &start, w, h).unwrap().color;
            let mut adjoint = Image::black(w, h);
            for i in 0..img.data.len() {
                adjoint.data[i] = 2.0 * (img.data[i] - target.data[i]);
            }
            let grad = render_backward(&model, &start, w, h, &adjoint).unwrap();
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2 == 0.0 {
                improved += 1;
                continue;
            }
            let step = 1e-3 / gnorm2.sqrt();
            let flat = start.to_flat();
            let moved: Vec<f64> = flat.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let moved_params = FaceParams::from_flat(&moved, &model.dims()).unwrap();
            if loss_of(&moved_params) < base_loss {
                improved += 1;
            }
        }
        assert!(improved >= 19, "descent held for only {improved}/20 seeds");
    }

    #[test]
    fn backward_is_bit_identical_across_thread_counts() {
        let model = gen_synthetic_model(0, 16).unwrap();
        let params = lit_params(&model, 6);
        let (w, h) = (48usize, 48usize);
        let adjoint = checker_adjoint(w, h);
        let run_with = |threads: usize| -> Vec<f64> {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render_backward(&model, &params, w, h, &adjoint).unwrap())
        };
        let serial = run_with(1);
        for threads in [2, 4, 8] {
            assert_eq!(serial, run_with(threads), "gradient differs with {threads} threads");
        }
    }

    #[test]
    fn adjoint_shape_mismatch_is_rejected() {
        let model = gen_synthetic_model(0, 8).unwrap();
        let params = FaceParams::zeros(&model.dims());
        let adjoint = Image::black(8, 8);
        assert!(render_backward(&model, &params, 16, 16, &adjoint).is_err());
    }
}
