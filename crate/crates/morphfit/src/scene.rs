//! Orthographic camera and spherical-harmonics illumination.
//!
//! # Conventions (fixed, relied upon bit-exactly by tests)
//!
//! * Camera vector `cam = (pitch, yaw, roll, tx, ty, log_scale)`. Rotation
//!   is `R = Rz(roll) · Ry(yaw) · Rx(pitch)`; scale is `exp(log_scale)` so
//!   it stays positive without constraints.
//! * Projection: `p = exp(log_scale) · R · X`, NDC `(p.x + tx, p.y + ty)`,
//!   pixels `x_pix = (nx + 1) / 2 * width`, `y_pix = (1 - ny) / 2 * height`
//!   (y grows downwards). Depth is camera-space `p.z`, larger = nearer.
//!   Pixel centers sit at integer + 0.5 offsets during rasterization.
//! * Real spherical harmonics, bands 0-2, order
//!   `[Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22]`. The 27
//!   illumination coefficients are channel-major: entry `9 * ch + k` is
//!   coefficient `k` of channel `ch`.

use crate::error::{Error, Result};
use crate::math::{mat3_mul, mat3_vec, Mat3, Vec3};

/// A projected vertex in pixel coordinates plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub x_pix: f64,
    pub y_pix: f64,
    /// Camera-space z; larger values are nearer to the camera.
    pub depth: f64,
}

/// `R = Rz(roll) · Ry(yaw) · Rx(pitch)`.
pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Mat3 {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rx: Mat3 = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let ry: Mat3 = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz: Mat3 = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    mat3_mul(&rz, &mat3_mul(&ry, &rx))
}

/// Partial derivatives of the rotation with respect to (pitch, yaw, roll).
pub fn rotation_derivatives(pitch: f64, yaw: f64, roll: f64) -> [Mat3; 3] {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rx: Mat3 = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let ry: Mat3 = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz: Mat3 = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    let drx: Mat3 = [[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]];
    let dry: Mat3 = [[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]];
    let drz: Mat3 = [[-sr, -cr, 0.0], [cr, -sr, 0.0], [0.0, 0.0, 0.0]];
    [
        mat3_mul(&rz, &mat3_mul(&ry, &drx)),
        mat3_mul(&rz, &mat3_mul(&dry, &rx)),
        mat3_mul(&drz, &mat3_mul(&ry, &rx)),
    ]
}

fn check_cam(cam: &[f64]) -> Result<()> {
    if cam.len() != 6 {
        return Err(Error::dimension(format!("cam has {} entries, expected 6", cam.len())));
    }
    if cam.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("cam contains non-finite values".to_string()));
    }
    Ok(())
}

/// Project model-space positions to pixel coordinates under the
/// orthographic camera.
pub fn project(
    positions: &[Vec3],
    cam: &[f64],
    width: usize,
    height: usize,
) -> Result<Vec<ScreenVertex>> {
    check_cam(cam)?;
    if width == 0 || height == 0 {
        return Err(Error::validation(format!(
            "image size must be at least 1x1, got {width}x{height}"
        )));
    }
    let rot = rotation_from_euler(cam[0], cam[1], cam[2]);
    let (tx, ty) = (cam[3], cam[4]);
    let scale = cam[5].exp();
    let (w, h) = (width as f64, height as f64);
    Ok(positions
        .iter()
        .map(|&x| {
            let p = mat3_vec(&rot, x);
            let nx = scale * p[0] + tx;
            let ny = scale * p[1] + ty;
            ScreenVertex {
                x_pix: (nx + 1.0) / 2.0 * w,
                y_pix: (1.0 - ny) / 2.0 * h,
                depth: scale * p[2],
            }
        })
        .collect())
}

/// Adjoint of `project` for 2D pixel cotangents (depth cotangent zero,
/// which is all the landmark loss needs). Returns cotangents for the
/// 3D points and for the six camera entries.
pub fn project_vjp(
    points: &[Vec3],
    cam: &[f64],
    width: usize,
    height: usize,
    d_xy_pix: &[[f64; 2]],
) -> Result<(Vec<Vec3>, [f64; 6])> {
    check_cam(cam)?;
    if points.len() != d_xy_pix.len() {
        return Err(Error::dimension(format!(
            "{} points but {} pixel cotangents",
            points.len(),
            d_xy_pix.len()
        )));
    }
    let rot = rotation_from_euler(cam[0], cam[1], cam[2]);
    let drot = rotation_derivatives(cam[0], cam[1], cam[2]);
    let scale = cam[5].exp();
    let (w, h) = (width as f64, height as f64);

    let mut d_points = vec![[0.0f64; 3]; points.len()];
    let mut d_cam = [0.0f64; 6];
    for (i, (&x, d)) in points.iter().zip(d_xy_pix).enumerate() {
        // Through the viewport: x_pix = (nx + 1)/2 * w, y_pix = (1 - ny)/2 * h.
        let d_nx = d[0] * w / 2.0;
        let d_ny = -d[1] * h / 2.0;
        d_cam[3] += d_nx;
        d_cam[4] += d_ny;

        let p = mat3_vec(&rot, x);
        // nx = scale * p.x + tx, ny = scale * p.y + ty.
        d_cam[5] += (d_nx * p[0] + d_ny * p[1]) * scale; // d/d log_scale = scale * p
        let d_p = [d_nx * scale, d_ny * scale, 0.0];

        // p = R x: angle gradients via dR/dangle, point gradient via R^T.
        for (a, dr) in drot.iter().enumerate() {
            let dp_da = mat3_vec(dr, x);
            d_cam[a] += d_p[0] * dp_da[0] + d_p[1] * dp_da[1] + d_p[2] * dp_da[2];
        }
        d_points[i] = crate::math::mat3_tvec(&rot, d_p);
    }
    Ok((d_points, d_cam))
}

// Real SH constants, bands 0-2.
const SH_C0: f64 = 0.2820947917738781; // 1 / (2 sqrt(pi))
const SH_C1: f64 = 0.4886025119029199; // sqrt(3 / (4 pi))
const SH_C2: f64 = 1.0925484305920792; // sqrt(15 / (4 pi))
const SH_C20: f64 = 0.31539156525252005; // sqrt(5 / (16 pi))
const SH_C22: f64 = 0.5462742152960396; // sqrt(15 / (16 pi))

/// Evaluate the 9 real SH basis functions at a unit normal.
pub fn sh_basis(n: Vec3) -> [f64; 9] {
    let [x, y, z] = n;
    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C20 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C22 * (x * x - y * y),
    ]
}

/// Gradients of each SH basis function with respect to the normal.
pub fn sh_basis_grad(n: Vec3) -> [Vec3; 9] {
    let [x, y, z] = n;
    [
        [0.0, 0.0, 0.0],
        [0.0, SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [SH_C1, 0.0, 0.0],
        [SH_C2 * y, SH_C2 * x, 0.0],
        [0.0, SH_C2 * z, SH_C2 * y],
        [0.0, 0.0, 6.0 * SH_C20 * z],
        [SH_C2 * z, 0.0, SH_C2 * x],
        [2.0 * SH_C22 * x, -2.0 * SH_C22 * y, 0.0],
    ]
}

/// Shade one surface point: per channel,
/// `color[ch] = albedo[ch] * sum_k phi[9*ch + k] * Y_k(normal)`.
/// The result is deliberately unclamped.
pub fn shade(albedo: Vec3, normal: Vec3, phi: &[f64]) -> Vec3 {
    debug_assert_eq!(phi.len(), 27);
    let basis = sh_basis(normal);
    let mut out = [0.0f64; 3];
    for ch in 0..3 {
        let coeffs = &phi[9 * ch..9 * (ch + 1)];
        let mut irradiance = 0.0;
        for k in 0..9 {
            irradiance += coeffs[k] * basis[k];
        }
        out[ch] = albedo[ch] * irradiance;
    }
    out
}

/// Adjoint of `shade`: color cotangent -> (albedo, normal, phi) cotangents.
pub fn shade_vjp(albedo: Vec3, normal: Vec3, phi: &[f64], d_color: Vec3) -> (Vec3, Vec3, [f64; 27]) {
    let basis = sh_basis(normal);
    let grads = sh_basis_grad(normal);
    let mut d_albedo = [0.0f64; 3];
    let mut d_normal = [0.0f64; 3];
    let mut d_phi = [0.0f64; 27];
    for ch in 0..3 {
        let coeffs = &phi[9 * ch..9 * (ch + 1)];
        let mut irradiance = 0.0;
        for k in 0..9 {
            irradiance += coeffs[k] * basis[k];
        }
        d_albedo[ch] = d_color[ch] * irradiance;
        let w = d_color[ch] * albedo[ch];
        for k in 0..9 {
            d_phi[9 * ch + k] = w * basis[k];
            d_normal[0] += w * coeffs[k] * grads[k][0];
            d_normal[1] += w * coeffs[k] * grads[k][1];
            d_normal[2] += w * coeffs[k] * grads[k][2];
        }
    }
    (d_albedo, d_normal, d_phi)
}
