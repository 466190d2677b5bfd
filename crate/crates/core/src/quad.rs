//! Adaptive Simpson quadrature for smooth 1D integrands.

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral of `f` over [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_gaussian() {
        let v = adaptive_simpson(|x| (-x * x).exp(), 0.0, 6.0, 1e-12);
        let exact = 0.5 * std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn integrates_polynomial_exactly() {
        let v = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
    }
}
