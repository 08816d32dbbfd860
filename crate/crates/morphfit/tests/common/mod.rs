//! Shared test support: a from-scratch per-pixel reference renderer and
//! small numeric helpers. The reference implementation follows the same
//! documented conventions as the library (rotation order, viewport
//! mapping, top-left fill rule, depth tie-breaking, channel-major SH
//! layout) but shares no code with it: everything below is written
//! directly against the model and parameter data.

// Each integration-test binary compiles this module separately and uses
// a different subset of it.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use morphfit::model::MorphableModel;
use morphfit::params::FaceParams;

fn decode_block(out: &mut [f64], basis: &[f32], scales: &[f32], coeffs: &[f64]) {
    let k = scales.len();
    for (r, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for j in 0..k {
            acc += basis[r * k + j] as f64 * (scales[j] as f64 * coeffs[j]);
        }
        *slot += acc;
    }
}

/// Render `model` under `params`, returning interleaved RGB data of the
/// `width x height` image (background black).
pub fn reference_render(
    model: &MorphableModel,
    params: &FaceParams,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let n = model.n_vertices;

    // Geometry and albedo by plain linear synthesis.
    let mut pos_flat: Vec<f64> = model.mean_shape.iter().map(|&v| v as f64).collect();
    decode_block(&mut pos_flat, &model.shape_basis, &model.shape_scales, &params.alpha);
    decode_block(&mut pos_flat, &model.expr_basis, &model.expr_scales, &params.delta);
    let mut alb_flat: Vec<f64> = model.mean_albedo.iter().map(|&v| v as f64).collect();
    decode_block(&mut alb_flat, &model.albedo_basis, &model.albedo_scales, &params.gamma);

    // Area-weighted vertex normals.
    let mut normal_acc = vec![[0.0f64; 3]; n];
    for tri in &model.triangles {
        let p = |v: u32| {
            let v = v as usize;
            [pos_flat[3 * v], pos_flat[3 * v + 1], pos_flat[3 * v + 2]]
        };
        let (a, b, c) = (p(tri[0]), p(tri[1]), p(tri[2]));
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cr = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        for &v in tri {
            for axis in 0..3 {
                normal_acc[v as usize][axis] += cr[axis];
            }
        }
    }
    let normals_model: Vec<[f64; 3]> = normal_acc
        .into_iter()
        .map(|u| {
            let len = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if len < 1e-300 {
                [0.0, 0.0, 1.0]
            } else {
                [u[0] / len, u[1] / len, u[2] / len]
            }
        })
        .collect();

    // Rotation R = Rz(roll) Ry(yaw) Rx(pitch), applied factor by factor.
    let (sp, cp) = params.cam[0].sin_cos();
    let (sy, cy) = params.cam[1].sin_cos();
    let (sr, cr) = params.cam[2].sin_cos();
    let rotate = |v: [f64; 3]| -> [f64; 3] {
        let v = [v[0], cp * v[1] - sp * v[2], sp * v[1] + cp * v[2]];
        let v = [cy * v[0] + sy * v[2], v[1], -sy * v[0] + cy * v[2]];
        [cr * v[0] - sr * v[1], sr * v[0] + cr * v[1], v[2]]
    };
    let (tx, ty) = (params.cam[3], params.cam[4]);
    let scale = params.cam[5].exp();

    let normals_cam: Vec<[f64; 3]> = normals_model.iter().map(|&nm| rotate(nm)).collect();
    let mut screen = Vec::with_capacity(n);
    for v in 0..n {
        let p = rotate([pos_flat[3 * v], pos_flat[3 * v + 1], pos_flat[3 * v + 2]]);
        let nx = scale * p[0] + tx;
        let ny = scale * p[1] + ty;
        screen.push([
            (nx + 1.0) / 2.0 * width as f64,
            (1.0 - ny) / 2.0 * height as f64,
            scale * p[2],
        ]);
    }

    // SH bands 0-2 at a unit direction.
    let sh = |d: [f64; 3]| -> [f64; 9] {
        let (x, y, z) = (d[0], d[1], d[2]);
        [
            0.2820947917738781,
            0.4886025119029199 * y,
            0.4886025119029199 * z,
            0.4886025119029199 * x,
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (3.0 * z * z - 1.0),
            1.0925484305920792 * x * z,
            0.5462742152960396 * (x * x - y * y),
        ]
    };

    let edge = |a: [f64; 3], b: [f64; 3], qx: f64, qy: f64| -> f64 {
        (b[0] - a[0]) * (qy - a[1]) - (b[1] - a[1]) * (qx - a[0])
    };
    let top_left = |dx: f64, dy: f64| -> bool { (dy == 0.0 && dx > 0.0) || dy < 0.0 };

    let mut image = vec![0.0f64; width * height * 3];
    for py in 0..height {
        let qy = py as f64 + 0.5;
        for px in 0..width {
            let qx = px as f64 + 0.5;
            let mut best: Option<(f64, usize, [f64; 3])> = None;
            for (t, tri) in model.triangles.iter().enumerate() {
                let v0 = screen[tri[0] as usize];
                let v1 = screen[tri[1] as usize];
                let v2 = screen[tri[2] as usize];
                let area2 = edge(v0, v1, v2[0], v2[1]);
                if area2 == 0.0 || !area2.is_finite() {
                    continue;
                }
                let s = if area2 > 0.0 { 1.0 } else { -1.0 };
                let e01 = s * edge(v0, v1, qx, qy);
                let e12 = s * edge(v1, v2, qx, qy);
                let e20 = s * edge(v2, v0, qx, qy);
                let accept = |e: f64, a: [f64; 3], b: [f64; 3]| -> bool {
                    e > 0.0 || (e == 0.0 && top_left(s * (b[0] - a[0]), s * (b[1] - a[1])))
                };
                if !(accept(e01, v0, v1) && accept(e12, v1, v2) && accept(e20, v2, v0)) {
                    continue;
                }
                let inv_area = 1.0 / (s * area2);
                let w0 = e12 * inv_area;
                let w1 = e20 * inv_area;
                let w2 = e01 * inv_area;
                let depth = w0 * v0[2] + w1 * v1[2] + w2 * v2[2];
                let better = match &best {
                    None => true,
                    Some((bd, bt, _)) => depth > *bd || (depth == *bd && t < *bt),
                };
                if better {
                    best = Some((depth, t, [w0, w1, w2]));
                }
            }

            let Some((_, t, w)) = best else { continue };
            let tri = &model.triangles[t];
            let (i0, i1, i2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
            let mut albedo = [0.0f64; 3];
            let mut m = [0.0f64; 3];
            for axis in 0..3 {
                albedo[axis] = w[0] * alb_flat[3 * i0 + axis]
                    + w[1] * alb_flat[3 * i1 + axis]
                    + w[2] * alb_flat[3 * i2 + axis];
                m[axis] = w[0] * normals_cam[i0][axis]
                    + w[1] * normals_cam[i1][axis]
                    + w[2] * normals_cam[i2][axis];
            }
            let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            let nrm = if len < 1e-12 { [0.0, 0.0, 1.0] } else { [m[0] / len, m[1] / len, m[2] / len] };
            let basis = sh(nrm);
            for ch in 0..3 {
                let mut irr = 0.0;
                for k in 0..9 {
                    irr += params.phi[9 * ch + k] * basis[k];
                }
                image[3 * (py * width + px) + ch] = (albedo[ch] * irr).clamp(0.0, 1.0);
            }
        }
    }
    image
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
