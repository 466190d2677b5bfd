//! Switching functions of the hybrid coupling.
//!
//! The transition bands of h, chi and alpha are only constrained by the
//! construction (monotonicity, ranges, endpoint values/derivatives); any
//! compliant choice yields the theorem. We use monotone cubic Hermite
//! interpolation matching the endpoint values and derivatives, and the
//! constraint checks live in the tests rather than being assumed.

use crate::quad::adaptive_simpson;

use super::{ContractionConstants, CouplingParams};

/// Cubic Hermite on [a, b] with endpoint values/derivatives.
fn hermite(x: f64, a: f64, b: f64, fa: f64, fb: f64, da: f64, db: f64) -> f64 {
    let h = b - a;
    let t = (x - a) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    fa * (2.0 * t3 - 3.0 * t2 + 1.0)
        + h * da * (t3 - 2.0 * t2 + t)
        + fb * (-2.0 * t3 + 3.0 * t2)
        + h * db * (t3 - t2)
}

/// Regularized-norm, switching and noise-amplitude functions together with
/// tabulated f for one parameter set.
#[derive(Debug, Clone)]
pub struct CouplingFunctions {
    pub xi: f64,
    pub m_weight: f64,
    pub theta: f64,
    pub l4: f64,
    pub r1star: f64,
    pub sstar: f64,
    pub s2star: f64,
    pub eps: f64,
    pub p: f64,
    pub n_block: usize,
    pub m_block: usize,
    // cumulative f on the smooth region [0, r1star]
    f_main: Vec<f64>,
    f_main_step: f64,
    // cumulative f and log-integral J on the taper band [r1star, r1star+xi]
    f_band: Vec<f64>,
    band_fprime: Vec<f64>,
    band_step: f64,
    f_cap: f64,
}

impl CouplingFunctions {
    pub fn new(params: &CouplingParams, constants: &ContractionConstants, n_block: usize) -> Self {
        let xi = params.xi;
        let theta = params.theta;
        let l4 = constants.l4;
        let r1star = constants.r1star;
        let a_main = l4 / (2.0 * theta * theta);

        // cumulative Simpson of f'(s) = exp(-a s^2) on [0, r1star]
        let n1 = 8192usize;
        let h1 = r1star / n1 as f64;
        let mut f_main = Vec::with_capacity(n1 + 1);
        f_main.push(0.0);
        let fp = |s: f64| (-a_main * s * s).exp();
        let mut acc = 0.0;
        for i in 0..n1 {
            let s0 = i as f64 * h1;
            let s1 = s0 + h1;
            acc += h1 / 6.0 * (fp(s0) + 4.0 * fp(0.5 * (s0 + s1)) + fp(s1));
            f_main.push(acc);
        }

        // taper band: alpha decays to zero at r1star + xi, f' with it
        let alpha_band = |r: f64| alpha_raw(r, theta, r1star, xi);
        let integrand = |s: f64| {
            let a = alpha_band(s);
            if a <= 0.0 {
                f64::INFINITY
            } else {
                s / (a * a)
            }
        };
        let n2 = 2048usize;
        let h2 = xi / n2 as f64;
        let mut j_acc = r1star * r1star / (2.0 * theta * theta);
        let mut band_fprime = Vec::with_capacity(n2 + 1);
        let mut f_band = Vec::with_capacity(n2 + 1);
        band_fprime.push((-l4 * j_acc).exp());
        f_band.push(0.0);
        let mut facc = 0.0;
        for i in 0..n2 {
            let s0 = r1star + i as f64 * h2;
            let s1 = s0 + h2;
            let mid = 0.5 * (s0 + s1);
            let (i0, im, i1) = (integrand(s0), integrand(mid), integrand(s1));
            let inc = if i0.is_finite() && im.is_finite() && i1.is_finite() {
                h2 / 6.0 * (i0 + 4.0 * im + i1)
            } else {
                f64::INFINITY
            };
            j_acc += inc;
            let fpv = if j_acc.is_finite() {
                (-l4 * j_acc).exp()
            } else {
                0.0
            };
            let prev = *band_fprime.last().unwrap();
            facc += 0.5 * h2 * (prev + fpv);
            band_fprime.push(fpv);
            f_band.push(facc);
        }
        let f_cap = acc + facc;

        CouplingFunctions {
            xi,
            m_weight: constants.m,
            theta,
            l4,
            r1star,
            sstar: constants.sstar,
            s2star: constants.s2star,
            eps: constants.eps,
            p: constants.p,
            n_block,
            m_block: params.m_block,
            f_main,
            f_main_step: h1,
            f_band,
            band_fprime,
            band_step: h2,
            f_cap,
        }
    }

    /// Regularized norm h(x^2) as a function of the plain norm x: zero below
    /// xi^2/4, identity above xi/2, monotone interpolation below the
    /// identity in between with slope within [0, 1 + 4 xi].
    pub fn h_norm(&self, x: f64) -> f64 {
        let band = HBand::new(self.xi);
        if x <= band.a {
            0.0
        } else if x >= band.b {
            x
        } else {
            band.value(x)
        }
    }

    /// d/dx of `h_norm`, the quantity constrained to [0, 1 + 4 xi].
    pub fn dh_norm(&self, x: f64) -> f64 {
        let band = HBand::new(self.xi);
        if x <= band.a {
            0.0
        } else if x >= band.b {
            1.0
        } else {
            band.deriv(x)
        }
    }

    /// Reflection switch in the z distance: 0 below xi/2, 1 above xi.
    pub fn chi_norm(&self, z: f64) -> f64 {
        let a = self.xi / 2.0;
        let b = self.xi;
        if z <= a {
            0.0
        } else if z >= b {
            1.0
        } else {
            hermite(z, a, b, 0.0, 1.0, 0.0, 0.0)
        }
    }

    /// Noise amplitude: theta up to R1*, tapering to 0 at R1* + xi.
    pub fn alpha(&self, r: f64) -> f64 {
        alpha_raw(r, self.theta, self.r1star, self.xi)
    }

    /// Regularized distance R = M h(|y|^2) + h(|z|^2) from the block norms.
    pub fn r_of(&self, ynorm: f64, znorm: f64) -> f64 {
        self.m_weight * self.h_norm(ynorm) + self.h_norm(znorm)
    }

    /// beta = chi(|z-z'|^2) alpha(R).
    pub fn beta_from_norms(&self, ynorm: f64, znorm: f64) -> f64 {
        let chi = self.chi_norm(znorm);
        if chi == 0.0 {
            return 0.0;
        }
        chi * self.alpha(self.r_of(ynorm, znorm))
    }

    /// f' of the concave modification (xi-regularized construction).
    pub fn f_prime(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 1.0;
        }
        if r <= self.r1star {
            let a = self.l4 / (2.0 * self.theta * self.theta);
            (-a * r * r).exp()
        } else if r >= self.r1star + self.xi {
            0.0
        } else {
            let t = (r - self.r1star) / self.band_step;
            let i = (t as usize).min(self.band_fprime.len() - 2);
            let frac = t - i as f64;
            self.band_fprime[i] * (1.0 - frac) + self.band_fprime[i + 1] * frac
        }
    }

    /// f(r) = integral of f'; constant `f_cap` beyond R1* + xi.
    pub fn f(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r1star + self.xi {
            return self.f_cap;
        }
        if r <= self.r1star {
            let t = r / self.f_main_step;
            let i = (t as usize).min(self.f_main.len() - 2);
            let r0 = i as f64 * self.f_main_step;
            let r1 = r0 + self.f_main_step;
            let a = self.l4 / (2.0 * self.theta * self.theta);
            hermite(
                r,
                r0,
                r1,
                self.f_main[i],
                self.f_main[i + 1],
                (-a * r0 * r0).exp(),
                (-a * r1 * r1).exp(),
            )
        } else {
            let base = *self.f_main.last().unwrap();
            let t = (r - self.r1star) / self.band_step;
            let i = (t as usize).min(self.f_band.len() - 2);
            let frac = t - i as f64;
            base + self.f_band[i] * (1.0 - frac) + self.f_band[i + 1] * frac
        }
    }

    /// Convex cost in the Q-distance (xi-regularized construction):
    /// zero below S*, g'' ramping to eps across [S*, S*+xi], g'' = eps up to
    /// S2*+xi, then p-th power growth.
    pub fn g(&self, s: f64) -> f64 {
        let (sstar, xi, eps, p) = (self.sstar, self.xi, self.eps, self.p);
        if s <= sstar {
            return 0.0;
        }
        let ramp_g = eps * xi * xi * (3.0 / 20.0);
        let ramp_gp = 0.5 * eps * xi;
        if s <= sstar + xi {
            let u = (s - sstar) / xi;
            let u4 = u * u * u * u;
            return eps * xi * xi * (0.25 * u4 - 0.1 * u4 * u);
        }
        let knee = self.s2star + xi;
        if s <= knee {
            let w = s - sstar - xi;
            return ramp_g + ramp_gp * w + 0.5 * eps * w * w;
        }
        let w_knee = knee - sstar - xi;
        let g_knee = ramp_g + ramp_gp * w_knee + 0.5 * eps * w_knee * w_knee;
        let gp_knee = ramp_gp + eps * w_knee;
        let v = s - knee;
        g_knee + gp_knee * v + v.powf(p)
    }

    pub fn g_prime(&self, s: f64) -> f64 {
        let (sstar, xi, eps, p) = (self.sstar, self.xi, self.eps, self.p);
        if s <= sstar {
            return 0.0;
        }
        if s <= sstar + xi {
            let u = (s - sstar) / xi;
            return eps * xi * (u * u * u - 0.5 * u * u * u * u);
        }
        let knee = self.s2star + xi;
        if s <= knee {
            return 0.5 * eps * xi + eps * (s - sstar - xi);
        }
        let gp_knee = 0.5 * eps * xi + eps * (knee - sstar - xi);
        gp_knee + p * (s - knee).powf(p - 1.0)
    }

    pub fn g_second(&self, s: f64) -> f64 {
        let (sstar, xi, eps, p) = (self.sstar, self.xi, self.eps, self.p);
        if s <= sstar {
            return 0.0;
        }
        if s <= sstar + xi {
            let u = (s - sstar) / xi;
            return eps * (3.0 * u * u - 2.0 * u * u * u);
        }
        let knee = self.s2star + xi;
        if s <= knee {
            return eps;
        }
        p * (p - 1.0) * (s - knee).powf(p - 2.0)
    }
}

/// C1 transition of the regularized norm on [xi^2/4, xi/2]: the derivative
/// ramps 0 -> s, holds, then ramps s -> 1, with the plateau slope s solved
/// so the integral lands on the identity at the right edge. A plain cubic
/// would overshoot the slope budget 1 + 4 xi; this profile keeps
/// s = (b - w/2)/((b - a) - w) <= 1 + 4 xi for all xi in (0, 1].
struct HBand {
    a: f64,
    b: f64,
    w: f64,
    s: f64,
}

impl HBand {
    fn new(xi: f64) -> Self {
        let a = xi * xi / 4.0;
        let b = xi / 2.0;
        let w = xi.min(0.25) * (b - a);
        let s = (b - 0.5 * w) / ((b - a) - w);
        HBand { a, b, w, s }
    }

    fn value(&self, x: f64) -> f64 {
        let (a, b, w, s) = (self.a, self.b, self.w, self.s);
        let smoothstep_int = |t: f64| t * t * t - 0.5 * t * t * t * t;
        if x <= a + w {
            let t = (x - a) / w;
            s * w * smoothstep_int(t)
        } else if x <= b - w {
            0.5 * s * w + s * (x - a - w)
        } else {
            let u = (b - x) / w;
            b - w * (u + (s - 1.0) * smoothstep_int(u))
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        let (a, b, w, s) = (self.a, self.b, self.w, self.s);
        let smoothstep = |t: f64| 3.0 * t * t - 2.0 * t * t * t;
        if x <= a + w {
            s * smoothstep((x - a) / w)
        } else if x <= b - w {
            s
        } else {
            1.0 + (s - 1.0) * smoothstep((b - x) / w)
        }
    }
}

fn alpha_raw(r: f64, theta: f64, r1star: f64, xi: f64) -> f64 {
    if r <= r1star {
        theta
    } else if r >= r1star + xi {
        0.0
    } else if r >= r1star + 0.5 * xi {
        let d = r - r1star - xi;
        theta * d * d
    } else {
        // monotone blend from theta (flat) into the quadratic taper
        let a = r1star;
        let b = r1star + 0.5 * xi;
        hermite(r, a, b, theta, theta * xi * xi / 4.0, 0.0, -theta * xi)
    }
}

/// beta(x, x') for states decomposed into (y, z) blocks.
pub fn beta_eval(x: &[f64], xp: &[f64], funcs: &CouplingFunctions) -> f64 {
    let n = funcs.n_block;
    let ynorm = x[..n]
        .iter()
        .zip(&xp[..n])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let znorm = x[n..]
        .iter()
        .zip(&xp[n..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    funcs.beta_from_norms(ynorm, znorm)
}

// ------------------------------------------------------------------
// Limit (xi -> 0) forms used by the certificate surface
// ------------------------------------------------------------------

/// f'(r) = exp(-L4 r^2 / (2 theta^2)) up to R1*, zero beyond (xi -> 0).
pub fn f_prime_eval(r: f64, constants: &ContractionConstants, theta: f64) -> f64 {
    if r < 0.0 || r > constants.r1star {
        return 0.0;
    }
    (-constants.l4 * r * r / (2.0 * theta * theta)).exp()
}

/// f(r) = integral_0^{min(r, R1*)} exp(-L4 s^2/(2 theta^2)) ds (xi -> 0).
pub fn f_eval(r: f64, constants: &ContractionConstants, theta: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let upper = r.min(constants.r1star);
    let a = constants.l4 / (2.0 * theta * theta);
    adaptive_simpson(|s| (-a * s * s).exp(), 0.0, upper, 1e-12)
}

/// Piecewise g of the xi -> 0 limit: zero, quadratic eps/2 (s-S*)^2 up to
/// S2*, then p-th power growth with matched value.
pub fn g_eval(s: f64, constants: &ContractionConstants, p: f64) -> f64 {
    super::g_chain(s, constants.sstar, constants.s2star, constants.eps, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MetricChange;

    fn functions() -> CouplingFunctions {
        let params = CouplingParams {
            rho1: 1.0,
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            theta: 1.0,
            metric: MetricChange::identity(2, 1.0, 1.0).unwrap(),
            p: 2.0,
            xi: 1e-2,
            m_block: 1,
            use_full_q_for_q22: false,
        };
        let constants = super::super::compute_constants(&params).unwrap();
        CouplingFunctions::new(&params, &constants, 1)
    }

    #[test]
    fn h_is_zero_then_identity_and_bounded_slope() {
        let f = functions();
        let xi = f.xi;
        assert_eq!(f.h_norm(xi * xi / 8.0), 0.0);
        assert_eq!(f.h_norm(xi), xi);
        assert_eq!(f.h_norm(2.5), 2.5);
        // printed band constraints: 0 <= d/dx h <= 1 + 4 xi and h <= x
        let a = xi * xi / 4.0;
        let b = xi / 2.0;
        for i in 0..=400 {
            let x = a + (b - a) * i as f64 / 400.0;
            let d = f.dh_norm(x);
            assert!((0.0..=1.0 + 4.0 * xi).contains(&d), "slope {d} at {x}");
            assert!(f.h_norm(x) <= x + 1e-15);
        }
    }

    #[test]
    fn chi_switches_between_half_xi_and_xi() {
        let f = functions();
        assert_eq!(f.chi_norm(0.0), 0.0);
        assert_eq!(f.chi_norm(f.xi / 2.0), 0.0);
        assert_eq!(f.chi_norm(f.xi), 1.0);
        for i in 0..=100 {
            let z = f.xi / 2.0 + f.xi / 2.0 * i as f64 / 100.0;
            let c = f.chi_norm(z);
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn alpha_taper_matches_printed_branches() {
        let f = functions();
        let (r1, xi, th) = (f.r1star, f.xi, f.theta);
        assert_eq!(f.alpha(0.0), th);
        assert_eq!(f.alpha(r1), th);
        assert_eq!(f.alpha(r1 + xi), 0.0);
        assert_eq!(f.alpha(r1 + 2.0 * xi), 0.0);
        // quadratic branch
        let r = r1 + 0.75 * xi;
        assert!((f.alpha(r) - th * (r - r1 - xi) * (r - r1 - xi)).abs() < 1e-15);
        // range on the blend
        for i in 0..=200 {
            let r = r1 + 0.5 * xi * i as f64 / 200.0;
            let a = f.alpha(r);
            assert!(a > 0.0 && a <= th, "alpha {a} at {r}");
        }
    }

    #[test]
    fn f_properties() {
        let f = functions();
        assert_eq!(f.f(0.0), 0.0);
        assert!((f.f_prime(0.0) - 1.0).abs() < 1e-15);
        // concave: f' non-increasing on a grid
        let mut prev = f.f_prime(0.0);
        for i in 1..=500 {
            let r = (f.r1star + f.xi) * i as f64 / 500.0;
            let cur = f.f_prime(r);
            assert!(cur <= prev + 1e-12, "f' increased at {r}");
            prev = cur;
        }
        // constant beyond R1* + xi
        let cap = f.f(f.r1star + f.xi);
        assert_eq!(f.f(f.r1star + f.xi + 5.0), cap);
        // table agrees with direct quadrature mid-range
        let direct = adaptive_simpson(
            |s| (-f.l4 * s * s / (2.0 * f.theta * f.theta)).exp(),
            0.0,
            3.0,
            1e-12,
        );
        assert!((f.f(3.0) - direct).abs() < 1e-9, "{} vs {direct}", f.f(3.0));
    }

    #[test]
    fn g_properties() {
        let f = functions();
        let (sstar, s2, xi, eps, p) = (f.sstar, f.s2star, f.xi, f.eps, f.p);
        assert_eq!(f.g(sstar), 0.0);
        assert_eq!(f.g(0.5 * sstar), 0.0);
        // convex: g'' >= 0 everywhere sampled
        for i in 0..=500 {
            let s = (s2 + 2.0) * i as f64 / 500.0;
            assert!(f.g_second(s) >= 0.0);
        }
        // power branch: g'' = p(p-1)(s - S2* - xi)^{p-2} beyond the knee
        let s = s2 + xi + 1.5;
        let expect = p * (p - 1.0) * 1.5f64.powf(p - 2.0);
        assert!((f.g_second(s) - expect).abs() < 1e-12);
        // g' continuous at the knee
        let knee = s2 + xi;
        assert!((f.g_prime(knee - 1e-9) - f.g_prime(knee + 1e-9)).abs() < 1e-6 * (1.0 + eps));
    }

    #[test]
    fn limit_forms_match_spec_points() {
        let params = CouplingParams {
            rho1: 1.0,
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            theta: 1.0,
            metric: MetricChange::identity(2, 1.0, 1.0).unwrap(),
            p: 2.0,
            xi: 1e-3,
            m_block: 1,
            use_full_q_for_q22: false,
        };
        let c = super::super::compute_constants(&params).unwrap();
        assert_eq!(f_eval(0.0, &c, 1.0), 0.0);
        assert!((f_prime_eval(0.0, &c, 1.0) - 1.0).abs() < 1e-15);
        let r = 0.5_f64.min(c.r1star);
        assert!(
            (f_prime_eval(r, &c, 1.0) - (-c.l4 * r * r / 2.0).exp()).abs() < 1e-15
        );
        assert_eq!(g_eval(c.sstar, &c, 2.0), 0.0);
        let expect = 0.5 * c.eps * (c.s2star - c.sstar) * (c.s2star - c.sstar);
        assert!((g_eval(c.s2star, &c, 2.0) - expect).abs() <= 1e-12 * expect.max(1e-300));
    }

    #[test]
    fn beta_switching_logic() {
        let f = functions();
        let xi = f.xi;
        // equal z blocks: synchronous regime
        assert_eq!(beta_eval(&[3.0, 1.0], &[0.0, 1.0], &f), 0.0);
        // both switches fully on at moderate distance: beta = theta
        let r_target = f.r1star / 2.0;
        let y = (r_target - 2.0 * xi) / f.m_weight;
        let b = beta_eval(&[y, 2.0 * xi], &[0.0, 0.0], &f);
        assert!((b - f.theta).abs() < 1e-14, "beta {b}");
        // far past the taper: noise off
        let y_far = (f.r1star + 2.0 * xi) / f.m_weight;
        assert_eq!(beta_eval(&[y_far, 2.0 * xi], &[0.0, 0.0], &f), 0.0);
    }
}
