//! Procedural generation of synthetic morphable models, so the engine can
//! run and be tested without any licensed face-model data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{std_normal, sub3};
use crate::model::{
    MorphableModel, DEFAULT_K_ALBEDO, DEFAULT_K_EXPR, DEFAULT_K_SHAPE, DEFAULT_N_LANDMARKS,
};

/// Decay law for synthetic basis scales: column `k` gets `0.05 / (1 + k)`.
fn basis_scale(k: usize) -> f64 {
    0.05 / (1.0 + k as f64)
}

/// Generate a deterministic synthetic model on an `n_grid x n_grid`
/// ellipsoid patch fitted inside the unit sphere.
///
/// * Bases are random orthonormal columns scaled by the per-column
///   `basis_scales`, so `basis^T basis = diag(scales^2)`.
/// * Landmarks are chosen by farthest-point sampling on the mean shape
///   (68 of them, or all vertices when the mesh is smaller).
/// * Basis sizes default to (80, 64, 80), capped at `3 * n_vertices`
///   where orthonormality would otherwise be impossible.
///
/// The output is a pure function of `(seed, n_grid)`.
pub fn gen_synthetic_model(seed: u64, n_grid: usize) -> Result<MorphableModel> {
    if n_grid < 4 {
        return Err(Error::validation(format!(
            "n_grid must be at least 4, got {n_grid}"
        )));
    }

    let n_vertices = n_grid * n_grid;
    let rows = 3 * n_vertices;

    // Face-like ellipsoid patch: taller than wide, shallow in depth,
    // strictly inside the unit sphere. Rows sweep latitude, columns
    // longitude; the patch faces +z.
    let (ax, ay, az) = (0.78, 0.95, 0.60);
    let lon_half = 1.15_f64; // radians
    let lat_half = 1.20_f64;
    let mut mean_shape = vec![0.0f32; rows];
    for r in 0..n_grid {
        let v = r as f64 / (n_grid - 1) as f64;
        let lat = (v - 0.5) * 2.0 * lat_half;
        for c in 0..n_grid {
            let u = c as f64 / (n_grid - 1) as f64;
            let lon = (u - 0.5) * 2.0 * lon_half;
            let idx = r * n_grid + c;
            mean_shape[3 * idx] = (ax * lat.cos() * lon.sin()) as f32;
            mean_shape[3 * idx + 1] = (ay * lat.sin()) as f32;
            mean_shape[3 * idx + 2] = (az * lat.cos() * lon.cos()) as f32;
        }
    }

    // Two triangles per grid cell, wound so face normals point outward
    // (+z at the patch center) under the cross(p1-p0, p2-p0) convention.
    let mut triangles = Vec::with_capacity(2 * (n_grid - 1) * (n_grid - 1));
    for r in 0..n_grid - 1 {
        for c in 0..n_grid - 1 {
            let i00 = (r * n_grid + c) as u32;
            let i01 = (r * n_grid + c + 1) as u32;
            let i10 = ((r + 1) * n_grid + c) as u32;
            let i11 = ((r + 1) * n_grid + c + 1) as u32;
            triangles.push([i00, i11, i10]);
            triangles.push([i00, i01, i11]);
        }
    }

    // Smooth skin-toned mean albedo, kept well inside [0, 1].
    let mut mean_albedo = vec![0.0f32; rows];
    for v in 0..n_vertices {
        let p = [
            mean_shape[3 * v] as f64,
            mean_shape[3 * v + 1] as f64,
            mean_shape[3 * v + 2] as f64,
        ];
        let base = [0.72, 0.55, 0.45];
        let wav = [
            0.08 * (2.3 * p[0] + 1.1 * p[1]).sin(),
            0.06 * (1.9 * p[1] - 0.7 * p[2]).sin(),
            0.05 * (1.3 * p[2] + 0.5 * p[0]).sin(),
        ];
        for ch in 0..3 {
            mean_albedo[3 * v + ch] = (base[ch] + wav[ch]).clamp(0.05, 0.95) as f32;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_shape = DEFAULT_K_SHAPE.min(rows);
    let k_expr = DEFAULT_K_EXPR.min(rows);
    let k_albedo = DEFAULT_K_ALBEDO.min(rows);
    let shape_scales: Vec<f32> = (0..k_shape).map(|k| basis_scale(k) as f32).collect();
    let expr_scales: Vec<f32> = (0..k_expr).map(|k| basis_scale(k) as f32).collect();
    let albedo_scales: Vec<f32> = (0..k_albedo).map(|k| basis_scale(k) as f32).collect();

    let shape_basis = random_scaled_orthonormal(&mut rng, rows, &shape_scales);
    let expr_basis = random_scaled_orthonormal(&mut rng, rows, &expr_scales);
    let albedo_basis = random_scaled_orthonormal(&mut rng, rows, &albedo_scales);

    let landmark_indices = farthest_point_landmarks(&mean_shape, n_vertices);

    Ok(MorphableModel {
        n_vertices,
        mean_shape,
        shape_basis,
        expr_basis,
        mean_albedo,
        albedo_basis,
        triangles,
        landmark_indices,
        shape_scales,
        expr_scales,
        albedo_scales,
    })
}

/// Random orthonormal columns (modified Gram-Schmidt with one
/// re-orthogonalization pass), scaled per column, returned row-major.
fn random_scaled_orthonormal(rng: &mut ChaCha8Rng, rows: usize, scales: &[f32]) -> Vec<f32> {
    let k = scales.len();
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..rows).map(|_| std_normal(rng)).collect())
        .collect();

    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let (head, tail) = cols.split_at_mut(j);
                let prev = &head[i];
                for (x, &p) in tail[0].iter_mut().zip(prev) {
                    *x -= proj * p;
                }
            }
            let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in cols[j].iter_mut() {
                *x /= norm;
            }
        }
    }

    let mut out = vec![0.0f32; rows * k];
    for (j, col) in cols.iter().enumerate() {
        let s = scales[j] as f64;
        for (r, &x) in col.iter().enumerate() {
            out[r * k + j] = (x * s) as f32;
        }
    }
    out
}

/// Deterministic farthest-point sampling over the mean shape. The first
/// pick is the vertex farthest from the centroid; ties go to the lowest
/// index.
fn farthest_point_landmarks(mean_shape: &[f32], n_vertices: usize) -> Vec<u32> {
    let n_landmarks = DEFAULT_N_LANDMARKS.min(n_vertices);
    let pos = |v: usize| -> [f64; 3] {
        [
            mean_shape[3 * v] as f64,
            mean_shape[3 * v + 1] as f64,
            mean_shape[3 * v + 2] as f64,
        ]
    };
    let mut centroid = [0.0f64; 3];
    for v in 0..n_vertices {
        let p = pos(v);
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in centroid.iter_mut() {
        *c /= n_vertices as f64;
    }

    let dist2 = |a: [f64; 3], b: [f64; 3]| -> f64 {
        let d = sub3(a, b);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    };

    let mut first = 0usize;
    let mut best = f64::NEG_INFINITY;
    for v in 0..n_vertices {
        let d = dist2(pos(v), centroid);
        if d > best {
            best = d;
            first = v;
        }
    }

    let mut selected = vec![first as u32];
    let mut min_d2: Vec<f64> = (0..n_vertices).map(|v| dist2(pos(v), pos(first))).collect();
    while selected.len() < n_landmarks {
        let mut next = 0usize;
        let mut best = f64::NEG_INFINITY;
        for v in 0..n_vertices {
            if min_d2[v] > best {
                best = min_d2[v];
                next = v;
            }
        }
        selected.push(next as u32);
        for v in 0..n_vertices {
            let d = dist2(pos(v), pos(next));
            if d < min_d2[v] {
                min_d2[v] = d;
            }
        }
    }
    selected
}
