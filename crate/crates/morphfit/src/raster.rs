//! Deterministic triangle rasterization with a hard z-buffer.
//!
//! Coverage uses an inclusive edge test with the top-left tie rule: a pixel
//! center exactly on an edge counts as covered only when that edge is a
//! top edge (horizontal, interior below) or a left edge (pointing upwards
//! in the y-down normalized winding). Among covering triangles the one
//! with the greatest interpolated depth wins (larger depth = nearer);
//! exact depth ties go to the lower triangle index. Both rules together
//! make the result independent of triangle traversal order, and pixels
//! are mutually independent, so row-parallel execution is bit-identical
//! to serial execution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::ScreenVertex;

/// Per-pixel rasterization results.
#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<bool>,
    /// Interpolated depth where covered, `f64::NEG_INFINITY` elsewhere.
    pub depth: Vec<f64>,
    /// Winning triangle per pixel, `None` on background.
    pub tri_id: Vec<Option<u32>>,
    /// Barycentric coordinates of the pixel center in the winning
    /// triangle's vertex order; zeros on background.
    pub bary: Vec<[f64; 3]>,
}

#[derive(Clone, Copy)]
struct TriSetup {
    v0: [f64; 2],
    v1: [f64; 2],
    v2: [f64; 2],
    z: [f64; 3],
    /// +1 if the screen winding is counter-clockwise in y-down
    /// coordinates, -1 otherwise.
    sign: f64,
    inv_area: f64,
    top_left: [bool; 3],
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], qx: f64, qy: f64) -> f64 {
    (b[0] - a[0]) * (qy - a[1]) - (b[1] - a[1]) * (qx - a[0])
}

/// Top-left classification of a normalized-winding edge direction in
/// y-down pixel space.
#[inline]
fn is_top_left(dx: f64, dy: f64) -> bool {
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn setup_triangle(
    tri: &[u32; 3],
    screen: &[ScreenVertex],
    width: usize,
    height: usize,
) -> Option<TriSetup> {
    let p = |i: usize| -> [f64; 2] {
        let s = &screen[tri[i] as usize];
        [s.x_pix, s.y_pix]
    };
    let (v0, v1, v2) = (p(0), p(1), p(2));
    let area2 = edge(v0, v1, v2[0], v2[1]);
    if area2 == 0.0 || !area2.is_finite() {
        return None;
    }
    let sign = if area2 > 0.0 { 1.0 } else { -1.0 };

    let min_xf = v0[0].min(v1[0]).min(v2[0]);
    let max_xf = v0[0].max(v1[0]).max(v2[0]);
    let min_yf = v0[1].min(v1[1]).min(v2[1]);
    let max_yf = v0[1].max(v1[1]).max(v2[1]);
    if max_xf < 0.5 || min_xf > width as f64 - 0.5 || max_yf < 0.5 || min_yf > height as f64 - 0.5 {
        return None;
    }
    // Pixel centers are at integer + 0.5; clamp the candidate range.
    let min_x = ((min_xf - 0.5).ceil().max(0.0)) as usize;
    let max_x = ((max_xf - 0.5).floor()).min(width as f64 - 1.0) as usize;
    let min_y = ((min_yf - 0.5).ceil().max(0.0)) as usize;
    let max_y = ((max_yf - 0.5).floor()).min(height as f64 - 1.0) as usize;
    if min_x > max_x || min_y > max_y {
        return None;
    }

    let dir = |a: [f64; 2], b: [f64; 2]| [sign * (b[0] - a[0]), sign * (b[1] - a[1])];
    let d01 = dir(v0, v1);
    let d12 = dir(v1, v2);
    let d20 = dir(v2, v0);

    Some(TriSetup {
        v0,
        v1,
        v2,
        z: [
            screen[tri[0] as usize].depth,
            screen[tri[1] as usize].depth,
            screen[tri[2] as usize].depth,
        ],
        sign,
        inv_area: 1.0 / (sign * area2),
        top_left: [
            is_top_left(d01[0], d01[1]),
            is_top_left(d12[0], d12[1]),
            is_top_left(d20[0], d20[1]),
        ],
        min_x,
        max_x,
        min_y,
        max_y,
    })
}

#[inline]
fn accept(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

/// Rasterize triangles over projected vertices.
pub fn rasterize(
    screen: &[ScreenVertex],
    triangles: &[[u32; 3]],
    width: usize,
    height: usize,
) -> Result<RasterOutput> {
    if width == 0 || height == 0 {
        return Err(Error::validation(format!(
            "image size must be at least 1x1, got {width}x{height}"
        )));
    }
    for tri in triangles {
        for &v in tri {
            if v as usize >= screen.len() {
                return Err(Error::validation(format!(
                    "triangle vertex {v} out of range ({} screen vertices)",
                    screen.len()
                )));
            }
        }
    }

    let setups: Vec<(u32, TriSetup)> = triangles
        .iter()
        .enumerate()
        .filter_map(|(t, tri)| setup_triangle(tri, screen, width, height).map(|s| (t as u32, s)))
        .collect();

    let mut out = RasterOutput {
        width,
        height,
        coverage: vec![false; width * height],
        depth: vec![f64::NEG_INFINITY; width * height],
        tri_id: vec![None; width * height],
        bary: vec![[0.0; 3]; width * height],
    };

    // Pixels are independent; parallelize over rows. Each row scans the
    // triangles in index order, so the (depth, index) winner rule makes
    // the outcome identical for any partitioning.
    let row_iter = out
        .coverage
        .par_chunks_mut(width)
        .zip(out.depth.par_chunks_mut(width))
        .zip(out.tri_id.par_chunks_mut(width))
        .zip(out.bary.par_chunks_mut(width))
        .enumerate();

    row_iter.for_each(|(y, (((cov_row, depth_row), tri_row), bary_row))| {
        let qy = y as f64 + 0.5;
        for &(t, ref s) in &setups {
            if y < s.min_y || y > s.max_y {
                continue;
            }
            for x in s.min_x..=s.max_x {
                let qx = x as f64 + 0.5;
                let e01 = s.sign * edge(s.v0, s.v1, qx, qy);
                let e12 = s.sign * edge(s.v1, s.v2, qx, qy);
                let e20 = s.sign * edge(s.v2, s.v0, qx, qy);
                if !(accept(e01, s.top_left[0])
                    && accept(e12, s.top_left[1])
                    && accept(e20, s.top_left[2]))
                {
                    continue;
                }
                // Barycentric weight of a vertex comes from the opposite edge.
                let w0 = e12 * s.inv_area;
                let w1 = e20 * s.inv_area;
                let w2 = e01 * s.inv_area;
                let depth = w0 * s.z[0] + w1 * s.z[1] + w2 * s.z[2];

                let better = match tri_row[x] {
                    None => true,
                    Some(prev) => depth > depth_row[x] || (depth == depth_row[x] && t < prev),
                };
                if better {
                    cov_row[x] = true;
                    depth_row[x] = depth;
                    tri_row[x] = Some(t);
                    bary_row[x] = [w0, w1, w2];
                }
            }
        }
    });

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(x: f64, y: f64, depth: f64) -> ScreenVertex {
        ScreenVertex { x_pix: x, y_pix: y, depth }
    }

    /// Brute-force point-in-triangle oracle over every pixel center.
    fn brute_force_coverage(
        screen: &[ScreenVertex],
        tri: &[u32; 3],
        width: usize,
        height: usize,
    ) -> Vec<bool> {
        let v = |i: usize| {
            let s = &screen[tri[i] as usize];
            [s.x_pix, s.y_pix]
        };
        let (v0, v1, v2) = (v(0), v(1), v(2));
        let mut covered = vec![false; width * height];
        let area2 = edge(v0, v1, v2[0], v2[1]);
        if area2 == 0.0 {
            return covered;
        }
        let sign = if area2 > 0.0 { 1.0 } else { -1.0 };
        let dir = |a: [f64; 2], b: [f64; 2]| [sign * (b[0] - a[0]), sign * (b[1] - a[1])];
        let tl = [
            is_top_left(dir(v0, v1)[0], dir(v0, v1)[1]),
            is_top_left(dir(v1, v2)[0], dir(v1, v2)[1]),
            is_top_left(dir(v2, v0)[0], dir(v2, v0)[1]),
        ];
        for y in 0..height {
            for x in 0..width {
                let (qx, qy) = (x as f64 + 0.5, y as f64 + 0.5);
                let e01 = sign * edge(v0, v1, qx, qy);
                let e12 = sign * edge(v1, v2, qx, qy);
                let e20 = sign * edge(v2, v0, qx, qy);
                covered[y * width + x] =
                    accept(e01, tl[0]) && accept(e12, tl[1]) && accept(e20, tl[2]);
            }
        }
        covered
    }

    #[test]
    fn small_triangle_covers_expected_pixels() {
        // A sliver around x = 8.5 covering exactly the centers of
        // (8, 8) and (8, 9) on a 16x16 image: at both y = 8.5 and y = 9.5
        // the triangle spans x in [8.4, 8.55].
        let screen = vec![sv(8.4, 8.2, 0.0), sv(8.4, 9.8, 0.0), sv(8.8, 9.0, 0.0)];
        let tri = [[0u32, 1, 2]];
        let out = rasterize(&screen, &tri, 16, 16).unwrap();
        let oracle = brute_force_coverage(&screen, &tri[0], 16, 16);
        assert_eq!(out.coverage, oracle);

        let covered: Vec<(usize, usize)> = (0..16)
            .flat_map(|y| (0..16).map(move |x| (x, y)))
            .filter(|&(x, y)| out.coverage[y * 16 + x])
            .collect();
        assert_eq!(covered, vec![(8, 8), (8, 9)]);
    }

    #[test]
    fn coverage_matches_brute_force_for_random_triangles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let screen: Vec<ScreenVertex> = (0..3)
                .map(|_| {
                    sv(
                        rng.random::<f64>() * 20.0 - 2.0,
                        rng.random::<f64>() * 20.0 - 2.0,
                        rng.random::<f64>(),
                    )
                })
                .collect();
            let tri = [[0u32, 1, 2]];
            let out = rasterize(&screen, &tri, 16, 16).unwrap();
            let oracle = brute_force_coverage(&screen, &tri[0], 16, 16);
            assert_eq!(out.coverage, oracle);
        }
    }

    #[test]
    fn adjacent_triangles_cover_shared_edge_exactly_once() {
        // Two triangles sharing the diagonal of a quad: every covered
        // pixel must belong to exactly one triangle, with no gaps inside
        // the quad interior.
        let screen = vec![sv(2.0, 2.0, 0.0), sv(12.0, 2.0, 0.0), sv(12.0, 12.0, 0.0), sv(2.0, 12.0, 0.0)];
        let tris = [[0u32, 1, 2], [0u32, 2, 3]];
        let out = rasterize(&screen, &tris, 16, 16).unwrap();
        // Interior pixels of the quad.
        for y in 2..12 {
            for x in 2..12 {
                assert!(out.coverage[y * 16 + x], "pixel ({x},{y}) should be covered");
            }
        }
        // Equal depth on the shared edge: the tie rule picks the lower
        // index deterministically; just check single ownership.
        for y in 0..16 {
            for x in 0..16 {
                let i = y * 16 + x;
                assert_eq!(out.coverage[i], out.tri_id[i].is_some());
            }
        }
    }

    #[test]
    fn equal_depth_tie_goes_to_lower_index() {
        let screen = vec![
            sv(1.0, 1.0, 0.25),
            sv(14.0, 1.0, 0.25),
            sv(1.0, 14.0, 0.25),
            sv(1.0, 1.0, 0.25),
            sv(14.0, 1.0, 0.25),
            sv(1.0, 14.0, 0.25),
        ];
        // Identical coplanar triangles at equal depth.
        let tris = [[0u32, 1, 2], [3u32, 4, 5]];
        let out = rasterize(&screen, &tris, 16, 16).unwrap();
        assert!(out.coverage.iter().any(|&c| c));
        for i in 0..out.coverage.len() {
            if out.coverage[i] {
                assert_eq!(out.tri_id[i], Some(0));
            }
        }
    }

    #[test]
    fn nearer_triangle_wins_depth_test() {
        let screen = vec![
            sv(1.0, 1.0, 0.0),
            sv(14.0, 1.0, 0.0),
            sv(1.0, 14.0, 0.0),
            sv(1.0, 1.0, 0.5),
            sv(14.0, 1.0, 0.5),
            sv(1.0, 14.0, 0.5),
        ];
        // Triangle 1 is nearer (greater depth).
        let tris = [[0u32, 1, 2], [3u32, 4, 5]];
        let out = rasterize(&screen, &tris, 16, 16).unwrap();
        for i in 0..out.coverage.len() {
            if out.coverage[i] {
                assert_eq!(out.tri_id[i], Some(1));
            }
        }
    }

    #[test]
    fn empty_mesh_covers_nothing() {
        let out = rasterize(&[], &[], 8, 8).unwrap();
        assert!(out.coverage.iter().all(|&c| !c));
        assert!(out.tri_id.iter().all(|t| t.is_none()));
    }

    #[test]
    fn zero_sized_image_is_rejected() {
        let err = rasterize(&[], &[], 0, 8).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn barycentrics_sum_to_one_where_covered() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let screen: Vec<ScreenVertex> = (0..12)
            .map(|_| {
                sv(
                    rng.random::<f64>() * 32.0,
                    rng.random::<f64>() * 32.0,
                    rng.random::<f64>(),
                )
            })
            .collect();
        let tris: Vec<[u32; 3]> = (0..4).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
        let out = rasterize(&screen, &tris, 32, 32).unwrap();
        let mut covered = 0;
        for i in 0..out.coverage.len() {
            if out.coverage[i] {
                covered += 1;
                let s: f64 = out.bary[i].iter().sum();
                assert!((s - 1.0).abs() < 1e-5, "bary sum {s}");
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn traversal_order_does_not_matter() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let screen: Vec<ScreenVertex> = (0..30)
            .map(|_| {
                sv(
                    rng.random::<f64>() * 24.0,
                    rng.random::<f64>() * 24.0,
                    rng.random::<f64>(),
                )
            })
            .collect();
        let tris: Vec<[u32; 3]> = (0..10).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
        let out = rasterize(&screen, &tris, 24, 24).unwrap();

        // Reversed triangle list with remapped winner ids must agree.
        let rev: Vec<[u32; 3]> = tris.iter().rev().copied().collect();
        let out_rev = rasterize(&screen, &rev, 24, 24).unwrap();
        for i in 0..out.coverage.len() {
            assert_eq!(out.coverage[i], out_rev.coverage[i]);
            if let (Some(a), Some(b)) = (out.tri_id[i], out_rev.tri_id[i]) {
                assert_eq!(a, 9 - b, "pixel {i}");
                assert_eq!(out.depth[i], out_rev.depth[i]);
                assert_eq!(out.bary[i], out_rev.bary[i]);
            }
        }
    }
}
