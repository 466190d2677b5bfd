//! Closed-form contraction certificates: the concentration-based rate for
//! the cumulant, the elliptic invariant-mass bound, the kinetic metric
//! triple, the kinetic lower-bound rate, and the piecewise curvature bound
//! used by the final-assembly construction.

use nalgebra::{DMatrix, DVector};

use crate::model::{spd_sqrt, ModelError};

use super::CouplingError;

/// Inputs for the cumulant decay certificate. `c1`, `lambda1` are a
/// Wasserstein-1 contraction prefactor/rate (by default the constants
/// pipeline at p = 1); `mu_eta` is the invariant mean of eta, `l_eta` its
/// Lipschitz constant, `radius` the ball radius for the initial condition
/// and `mu_abs_moment` the invariant first absolute moment.
#[derive(Debug, Clone)]
pub struct RhoPrimeInputs {
    pub p: f64,
    pub mu_eta: f64,
    pub l_eta: f64,
    pub c1: f64,
    pub lambda1: f64,
    pub sigma_norm: f64,
    pub radius: f64,
    pub mu_abs_moment: f64,
    /// Contraction-at-infinity rate; the certified decay rate is
    /// min(rho, rho').
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RhoPrimeCertificate {
    pub a: f64,
    pub rho_prime: f64,
    /// min(rho, rho') when rho is given, rho' otherwise.
    pub rate: f64,
    pub contracts: bool,
}

/// `A = exp(p L_eta C1/lambda1 (R + mu(|y|)))` and
/// `rho' = -p mu(eta) - |sigma|^2 C1^2 p^2 L_eta^2 / lambda1^2`.
pub fn certify_rho_prime(inputs: &RhoPrimeInputs) -> Result<RhoPrimeCertificate, CouplingError> {
    if !(inputs.c1 > 0.0) || !(inputs.lambda1 > 0.0) {
        return Err(CouplingError::InvalidArgument(
            "C1 and lambda1 must be > 0".into(),
        ));
    }
    if inputs.l_eta < 0.0 {
        return Err(CouplingError::InvalidArgument("L_eta must be >= 0".into()));
    }
    let a = (inputs.p * inputs.l_eta * inputs.c1 / inputs.lambda1
        * (inputs.radius + inputs.mu_abs_moment))
        .exp();
    let rho_prime = -inputs.p * inputs.mu_eta
        - inputs.sigma_norm * inputs.sigma_norm
            * inputs.c1
            * inputs.c1
            * inputs.p
            * inputs.p
            * inputs.l_eta
            * inputs.l_eta
            / (inputs.lambda1 * inputs.lambda1);
    let rate = match inputs.rho {
        Some(rho) => rho.min(rho_prime),
        None => rho_prime,
    };
    let contracts = rho_prime > 0.0 && inputs.rho.map_or(true, |r| r > 0.0);
    Ok(RhoPrimeCertificate {
        a,
        rho_prime,
        rate,
        contracts,
    })
}

/// Three-piece curvature bound in the Q geometry: `delta_bar` inside
/// `Q^{1/2} B(0, s_bar)`, linear interpolation in `|Q^{-1/2} y|` between,
/// `-delta_bar/q_bar` outside `Q^{1/2} B(0, s2_bar)`.
#[derive(Debug, Clone)]
pub struct EtaBar {
    pub delta_bar: f64,
    pub q_bar: f64,
    pub s_bar: f64,
    pub s2_bar: f64,
    q_inv_sqrt: DMatrix<f64>,
    lipschitz: f64,
}

impl EtaBar {
    /// Value at y (in the ambient coordinates).
    pub fn eval(&self, y: &[f64]) -> f64 {
        let r = (&self.q_inv_sqrt * DVector::from_column_slice(y)).norm();
        self.eval_radial(r)
    }

    /// Value as a function of r = |Q^{-1/2} y|.
    pub fn eval_radial(&self, r: f64) -> f64 {
        let lo = self.delta_bar;
        let hi = -self.delta_bar / self.q_bar;
        if r <= self.s_bar {
            lo
        } else if r >= self.s2_bar {
            hi
        } else {
            lo + (hi - lo) * (r - self.s_bar) / (self.s2_bar - self.s_bar)
        }
    }

    /// Lipschitz constant in r = |Q^{-1/2} y|.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub fn eta_bar_construct(
    delta_bar: f64,
    q_bar: f64,
    s_bar: f64,
    s2_bar: f64,
    q: &DMatrix<f64>,
) -> Result<EtaBar, CouplingError> {
    if !(s2_bar > s_bar) || !(s_bar > 0.0) {
        return Err(CouplingError::InvalidArgument(format!(
            "need S2 > S > 0, got S = {s_bar}, S2 = {s2_bar}"
        )));
    }
    if !(delta_bar > 0.0) || !(q_bar > 0.0) {
        return Err(CouplingError::InvalidArgument(
            "delta and q must be > 0".into(),
        ));
    }
    let (_, q_inv_sqrt) = spd_sqrt(q).map_err(|e: ModelError| {
        CouplingError::InvalidArgument(format!("bad metric: {e}"))
    })?;
    let lipschitz = delta_bar * (1.0 + 1.0 / q_bar) / (s2_bar - s_bar);
    Ok(EtaBar {
        delta_bar,
        q_bar,
        s_bar,
        s2_bar,
        q_inv_sqrt,
        lipschitz,
    })
}

/// Invariant-mass bound for elliptic diffusions: `eps = theta^2 d / 2`,
/// `C = [K + theta^2/(2 (R2^2 - R^2))] R2^2 exp(K R^2 / theta^2)` and the
/// guaranteed mass `q_bar = eps/(C + eps)` outside B(0, R2).
#[derive(Debug, Clone, Copy)]
pub struct MassBound {
    pub c: f64,
    pub eps: f64,
    pub q_bar: f64,
}

pub fn elliptic_mass_bound(
    k: f64,
    r: f64,
    r2: f64,
    theta: f64,
    d: u32,
) -> Result<MassBound, CouplingError> {
    if !(r2 > r) || !(r > 0.0) {
        return Err(CouplingError::InvalidArgument(format!(
            "need R2 > R > 0, got R = {r}, R2 = {r2}"
        )));
    }
    if !(k > 0.0) || !(theta > 0.0) || d == 0 {
        return Err(CouplingError::InvalidArgument(
            "K, theta, d must be positive".into(),
        ));
    }
    let eps = theta * theta * f64::from(d) / 2.0;
    let c = (k + theta * theta / (2.0 * (r2 * r2 - r * r)))
        * (r2 * r2)
        * (k * r * r / (theta * theta)).exp();
    Ok(MassBound {
        c,
        eps,
        q_bar: eps / (c + eps),
    })
}

/// Kinetic metric triple for the high-friction branch `gamma^2 >= 4 Lambda`:
/// `(a, c, rho) = (1/Lambda, 1/gamma, ell/(3 gamma))`. Returns `None` when
/// the branch does not apply (the general construction is out of scope
/// here).
#[derive(Debug, Clone)]
pub struct KineticMetric {
    pub a: f64,
    pub c: f64,
    pub rho: f64,
}

impl KineticMetric {
    /// The 2d x 2d block matrix [[Id, c Id], [c Id, a Id]].
    pub fn matrix(&self, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            m[(i, i)] = 1.0;
            m[(i, d + i)] = self.c;
            m[(d + i, i)] = self.c;
            m[(d + i, d + i)] = self.a;
        }
        m
    }
}

pub fn kinetic_matrix(
    ell: f64,
    lambda: f64,
    gamma: f64,
) -> Result<Option<KineticMetric>, CouplingError> {
    if !(ell > 0.0) || !(lambda >= ell) || !(gamma > 0.0) {
        return Err(CouplingError::InvalidArgument(format!(
            "need Lambda >= ell > 0 and gamma > 0, got ell = {ell}, Lambda = {lambda}, gamma = {gamma}"
        )));
    }
    if gamma * gamma < 4.0 * lambda {
        return Ok(None);
    }
    let a = 1.0 / lambda;
    let c = 1.0 / gamma;
    // a - c^2 = 1/Lambda - 1/gamma^2 >= 1/Lambda - 1/(4 Lambda) > 0 under
    // the branch guard; checked defensively
    if a <= c * c {
        return Err(CouplingError::InvalidArgument(format!(
            "positivity a > c^2 violated: a = {a}, c = {c}"
        )));
    }
    Ok(Some(KineticMetric {
        a,
        c,
        rho: ell / (3.0 * gamma),
    }))
}

/// Lower bound on the asymptotic rate of `kappa_infinity` for the kinetic
/// process: `sqrt(gamma^2/4 - xi0) - gamma/2` when `xi0 < gamma^2/4`,
/// `-gamma/2` otherwise. Positive exactly when xi0 < 0 (non-convex
/// potential).
pub fn kinetic_kappa_inf_rate(gamma: f64, xi0: f64) -> Result<f64, CouplingError> {
    if !(gamma > 0.0) {
        return Err(CouplingError::InvalidArgument("gamma must be > 0".into()));
    }
    let quarter = gamma * gamma / 4.0;
    Ok(if xi0 < quarter {
        (quarter - xi0).sqrt() - gamma / 2.0
    } else {
        -gamma / 2.0
    })
}
