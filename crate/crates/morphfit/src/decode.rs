//! Linear synthesis from the morphable model: vertex positions from
//! (alpha, delta), per-vertex albedo from gamma, vertex normals, and 3D
//! landmark selection. Forward maps are linear in their coefficients; each
//! has a hand-derived vector-Jacobian product used by the renderer's
//! backward pass.

use crate::error::{Error, Result};
use crate::math::{cross3, dot3, norm3, sub3, Vec3};
use crate::model::MorphableModel;

fn check_coeffs(name: &str, coeffs: &[f64], expected: usize) -> Result<()> {
    if coeffs.len() != expected {
        return Err(Error::dimension(format!(
            "{name} has {} entries, expected {expected}",
            coeffs.len()
        )));
    }
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Flat linear synthesis: `out[r] = mean[r] + sum_j basis[r, j] * scales[j] * coeffs[j]`
/// for each pair of (basis, coeffs), accumulated into one buffer.
fn synthesize(
    mean: &[f32],
    terms: &[(&[f32], &[f32], &[f64])], // (basis row-major, scales, coeffs)
) -> Vec<f64> {
    let rows = mean.len();
    let mut out: Vec<f64> = mean.iter().map(|&v| v as f64).collect();
    for (basis, scales, coeffs) in terms {
        let k = scales.len();
        if k == 0 {
            continue;
        }
        let scaled: Vec<f64> = scales
            .iter()
            .zip(coeffs.iter())
            .map(|(&s, &c)| s as f64 * c)
            .collect();
        for r in 0..rows {
            let row = &basis[r * k..(r + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] as f64 * scaled[j];
            }
            out[r] += acc;
        }
    }
    out
}

/// Vector-Jacobian product of `synthesize` with respect to one coefficient
/// block: `d_coeffs[j] = scales[j] * sum_r basis[r, j] * d_out[r]`.
fn synthesize_vjp(basis: &[f32], scales: &[f32], d_out: &[f64]) -> Vec<f64> {
    let k = scales.len();
    let mut d_coeffs = vec![0.0f64; k];
    for (r, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &basis[r * k..(r + 1) * k];
        for j in 0..k {
            d_coeffs[j] += row[j] as f64 * g;
        }
    }
    for (j, d) in d_coeffs.iter_mut().enumerate() {
        *d *= scales[j] as f64;
    }
    d_coeffs
}

/// Decode per-vertex 3D positions from shape and expression coefficients:
/// `X = mean_shape + shape_basis (scales_shape ⊙ alpha) + expr_basis (scales_expr ⊙ delta)`.
pub fn decode_geometry(
    model: &MorphableModel,
    alpha: &[f64],
    delta: &[f64],
) -> Result<Vec<Vec3>> {
    check_coeffs("alpha", alpha, model.k_shape())?;
    check_coeffs("delta", delta, model.k_expr())?;
    let flat = synthesize(
        &model.mean_shape,
        &[
            (&model.shape_basis, &model.shape_scales, alpha),
            (&model.expr_basis, &model.expr_scales, delta),
        ],
    );
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Adjoint of `decode_geometry`: positions cotangent -> (d_alpha, d_delta).
pub fn decode_geometry_vjp(
    model: &MorphableModel,
    d_positions: &[Vec3],
) -> (Vec<f64>, Vec<f64>) {
    let flat: Vec<f64> = d_positions.iter().flatten().copied().collect();
    let d_alpha = synthesize_vjp(&model.shape_basis, &model.shape_scales, &flat);
    let d_delta = synthesize_vjp(&model.expr_basis, &model.expr_scales, &flat);
    (d_alpha, d_delta)
}

/// Adjoint of `decode_geometry` restricted to a sparse set of vertices
/// (used by the landmark path, which only touches the landmark vertices).
pub fn decode_geometry_vjp_sparse(
    model: &MorphableModel,
    vertices: &[u32],
    d_points: &[Vec3],
) -> (Vec<f64>, Vec<f64>) {
    let ks = model.k_shape();
    let ke = model.k_expr();
    let mut d_alpha = vec![0.0f64; ks];
    let mut d_delta = vec![0.0f64; ke];
    for (&v, d) in vertices.iter().zip(d_points) {
        for axis in 0..3 {
            let r = 3 * v as usize + axis;
            let g = d[axis];
            if g == 0.0 {
                continue;
            }
            let row_s = &model.shape_basis[r * ks..(r + 1) * ks];
            for j in 0..ks {
                d_alpha[j] += row_s[j] as f64 * g;
            }
            let row_e = &model.expr_basis[r * ke..(r + 1) * ke];
            for j in 0..ke {
                d_delta[j] += row_e[j] as f64 * g;
            }
        }
    }
    for (j, d) in d_alpha.iter_mut().enumerate() {
        *d *= model.shape_scales[j] as f64;
    }
    for (j, d) in d_delta.iter_mut().enumerate() {
        *d *= model.expr_scales[j] as f64;
    }
    (d_alpha, d_delta)
}

/// Decode per-vertex RGB albedo from gamma. Deliberately not clamped:
/// clamping happens after shading so this map stays linear.
pub fn decode_albedo(model: &MorphableModel, gamma: &[f64]) -> Result<Vec<Vec3>> {
    check_coeffs("gamma", gamma, model.k_albedo())?;
    let flat = synthesize(
        &model.mean_albedo,
        &[(&model.albedo_basis, &model.albedo_scales, gamma)],
    );
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Adjoint of `decode_albedo`.
pub fn decode_albedo_vjp(model: &MorphableModel, d_albedo: &[Vec3]) -> Vec<f64> {
    let flat: Vec<f64> = d_albedo.iter().flatten().copied().collect();
    synthesize_vjp(&model.albedo_basis, &model.albedo_scales, &flat)
}

/// Area-weighted vertex normals. Each face contributes its (unnormalized)
/// cross product, so larger faces weigh more; degenerate faces contribute
/// zero. Vertices whose accumulated normal has zero length get (0, 0, 1).
pub fn vertex_normals(positions: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut accum = vec![[0.0f64; 3]; positions.len()];
    for tri in triangles {
        let p0 = positions[tri[0] as usize];
        let p1 = positions[tri[1] as usize];
        let p2 = positions[tri[2] as usize];
        let c = cross3(sub3(p1, p0), sub3(p2, p0));
        for &v in tri {
            let a = &mut accum[v as usize];
            a[0] += c[0];
            a[1] += c[1];
            a[2] += c[2];
        }
    }
    accum
        .into_iter()
        .map(|u| {
            let n = norm3(u);
            if n < 1e-300 {
                [0.0, 0.0, 1.0]
            } else {
                [u[0] / n, u[1] / n, u[2] / n]
            }
        })
        .collect()
}

/// Adjoint of `vertex_normals`: normals cotangent -> positions cotangent.
pub fn vertex_normals_vjp(
    positions: &[Vec3],
    triangles: &[[u32; 3]],
    d_normals: &[Vec3],
) -> Vec<Vec3> {
    // Recompute the pre-normalization accumulators.
    let mut accum = vec![[0.0f64; 3]; positions.len()];
    for tri in triangles {
        let p0 = positions[tri[0] as usize];
        let p1 = positions[tri[1] as usize];
        let p2 = positions[tri[2] as usize];
        let c = cross3(sub3(p1, p0), sub3(p2, p0));
        for &v in tri {
            let a = &mut accum[v as usize];
            a[0] += c[0];
            a[1] += c[1];
            a[2] += c[2];
        }
    }

    // Backprop through normalization: n = u / |u|,
    // d_u = (d_n - n (n . d_n)) / |u|; zero-length vertices got a constant.
    let mut d_accum = vec![[0.0f64; 3]; positions.len()];
    for (v, u) in accum.iter().enumerate() {
        let len = norm3(*u);
        if len < 1e-300 {
            continue;
        }
        let n = [u[0] / len, u[1] / len, u[2] / len];
        let dn = d_normals[v];
        let radial = dot3(n, dn);
        d_accum[v] = [
            (dn[0] - n[0] * radial) / len,
            (dn[1] - n[1] * radial) / len,
            (dn[2] - n[2] * radial) / len,
        ];
    }

    // Backprop through the per-face cross products:
    // c = e1 x e2 with e1 = p1 - p0, e2 = p2 - p0,
    // d_e1 = e2 x d_c, d_e2 = d_c x e1.
    let mut d_positions = vec![[0.0f64; 3]; positions.len()];
    for tri in triangles {
        let (i0, i1, i2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
        let e1 = sub3(positions[i1], positions[i0]);
        let e2 = sub3(positions[i2], positions[i0]);
        let dc = [
            d_accum[i0][0] + d_accum[i1][0] + d_accum[i2][0],
            d_accum[i0][1] + d_accum[i1][1] + d_accum[i2][1],
            d_accum[i0][2] + d_accum[i1][2] + d_accum[i2][2],
        ];
        let de1 = cross3(e2, dc);
        let de2 = cross3(dc, e1);
        for axis in 0..3 {
            d_positions[i1][axis] += de1[axis];
            d_positions[i2][axis] += de2[axis];
            d_positions[i0][axis] -= de1[axis] + de2[axis];
        }
    }
    d_positions
}

/// Gather 3D positions at the given vertex indices, order preserved.
pub fn select_landmarks_3d(positions: &[Vec3], indices: &[u32]) -> Result<Vec<Vec3>> {
    indices
        .iter()
        .map(|&idx| {
            positions
                .get(idx as usize)
                .copied()
                .ok_or_else(|| {
                    Error::validation(format!(
                        "landmark vertex {idx} out of range ({} vertices)",
                        positions.len()
                    ))
                })
        })
        .collect()
}
