//! Small fixed-size vector/matrix helpers and scalar special functions.
//!
//! Everything here operates on plain `[f64; 3]` / `[[f64; 3]; 3]` values so
//! the hot paths stay allocation-free and the operation order is explicit
//! (which the bit-reproducibility guarantees of the renderer rely on).

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Normalize `a`; returns `fallback` when the norm is (near) zero.
#[inline]
pub fn normalize3_or(a: Vec3, fallback: Vec3) -> Vec3 {
    let n = norm3(a);
    if n < 1e-300 {
        fallback
    } else {
        [a[0] / n, a[1] / n, a[2] / n]
    }
}

#[inline]
pub fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

/// `m^T · v` (equivalently multiplying by the inverse for rotations).
#[inline]
pub fn mat3_tvec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Frobenius inner product `<a, b> = sum_ij a_ij b_ij`.
pub fn mat3_frobenius(a: &Mat3, b: &Mat3) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += a[i][j] * b[i][j];
        }
    }
    acc
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal PDF.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GeLU: `x * Phi(x)` with the Gaussian CDF (no tanh approximation).
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of the exact GeLU: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_deriv(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// SplitMix64 step, used to derive independent sub-seeds from a base seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for stream `index` of a base seed. Used so that
/// parallel per-sample generation stays independent of scheduling.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// Draw a standard normal deviate via Box-Muller. Consumes exactly two
/// uniforms per call, so the stream layout is independent of rand's
/// distribution internals.
pub fn std_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cross_follows_right_hand_rule() {
        let c = cross3([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(c, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu(0.0), 0.0);
        // Phi(1) = 0.8413447...
        assert_relative_eq!(gelu(1.0), 0.8413447460685429, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
    }

    #[test]
    fn gelu_deriv_matches_finite_differences() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let eps = 1e-6;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert_relative_eq!(gelu_deriv(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn std_normal_moments_are_sane() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
