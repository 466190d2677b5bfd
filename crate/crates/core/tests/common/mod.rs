//! Shared oracles for the integration tests.

/// Matrix exponential exp(tA) by scaling-and-squaring with a Taylor series,
/// for small dense row-major matrices. Independent of the production
/// integrators.
pub fn expm(a: &[f64], d: usize, t: f64) -> Vec<f64> {
    let norm: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * d as f64 * t.abs();
    let squarings = norm.log2().ceil().max(0.0) as u32 + 2;
    let scale = t / f64::powi(2.0, squarings as i32);

    let mut scaled = vec![0.0; d * d];
    for (s, v) in scaled.iter_mut().zip(a) {
        *s = v * scale;
    }
    // exp(scaled) by Taylor to machine precision
    let mut result = identity(d);
    let mut term = identity(d);
    for k in 1..64 {
        term = mat_mul(&term, &scaled, d);
        for v in &mut term {
            *v /= k as f64;
        }
        for (r, v) in result.iter_mut().zip(&term) {
            *r += v;
        }
        if term.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-300 {
            break;
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result, d);
    }
    result
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum())
        .collect()
}
