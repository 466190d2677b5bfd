//! Hybrid reflection/synchronous coupling: the explicit-constants pipeline,
//! the switching functions (h, chi, alpha, f, g), the coupled SDE
//! simulator, and the analytic contraction certificates.

mod certificates;
mod functions;
mod simulate;

pub use certificates::*;
pub use functions::*;
pub use simulate::*;

use thiserror::Error;

use crate::model::{MetricChange, ModelError};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

/// Inputs of the explicit-constants pipeline: the block-decomposition rates,
/// the elliptic noise level on the z block, the metric with its
/// contraction-at-infinity constants, the order p and the regularization
/// width xi used by the simulator.
#[derive(Debug, Clone)]
pub struct CouplingParams {
    pub rho1: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub theta: f64,
    pub metric: MetricChange,
    pub p: f64,
    /// Regularization width in (0, 1]; the constants are computed in the
    /// xi -> 0 limit, the simulator uses this value.
    pub xi: f64,
    /// Size of the z block (for the |Q22| norm).
    pub m_block: usize,
    /// Replace |Q22| by |Q| everywhere.
    pub use_full_q_for_q22: bool,
}

impl CouplingParams {
    pub fn validate(&self) -> Result<(), CouplingError> {
        for (name, v) in [
            ("rho1", self.rho1),
            ("l1", self.l1),
            ("l2", self.l2),
            ("l3", self.l3),
            ("theta", self.theta),
        ] {
            if !(v > 0.0) {
                return Err(CouplingError::InvalidArgument(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.p >= 1.0) {
            return Err(CouplingError::InvalidArgument(format!(
                "p must be >= 1, got {}",
                self.p
            )));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(CouplingError::InvalidArgument(format!(
                "xi must be in (0, 1], got {}",
                self.xi
            )));
        }
        if self.m_block == 0 || self.m_block > self.metric.q().nrows() {
            return Err(CouplingError::InvalidArgument(
                "m_block must be in 1..=dim".into(),
            ));
        }
        Ok(())
    }

    fn q22_norm(&self) -> f64 {
        if self.use_full_q_for_q22 {
            self.metric.norm_q()
        } else {
            self.metric.norm_q22(self.m_block)
        }
    }
}

/// Output of the explicit-constants chain, all in the xi -> 0 limit.
/// Contraction holds for the cost `max(|x-x'|, |x-x'|^p)` with prefactor
/// `Cp = Kstar/kstar` and rate `lambdap = cstar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionConstants {
    pub p: f64,
    pub theta: f64,
    pub sstar: f64,
    pub rho2: f64,
    pub norm_q: f64,
    pub norm_q_inv: f64,
    pub norm_q22: f64,

    pub m: f64,
    pub rho3: f64,
    pub l4: f64,
    pub s1s: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Equivalence constant between the regularized distance and the Q-norm.
    pub big_c0: f64,
    pub rstar: f64,
    pub r1star: f64,
    pub s2star: f64,
    pub eps: f64,
    /// Floor of `rho2 g'(s) / 2` past S1*.
    pub small_c0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub cstar: f64,
    pub kstar: f64,
    pub big_kstar: f64,
    pub cp: f64,
    pub lambdap: f64,
}

/// The printed closed form of f used inside the constants chain.
fn f_chain(r: f64, r1star: f64, l4: f64, theta: f64) -> f64 {
    let rm = r.min(r1star);
    (2.0 * theta * theta / l4) * (1.0 - (-l4 * rm / (2.0 * theta * theta)).exp())
}

/// Piecewise g of the constants chain (xi -> 0 limit): zero, then quadratic
/// eps/2 (s-S*)^2, then (s-S2*)^p with matched value.
fn g_chain(s: f64, sstar: f64, s2star: f64, eps: f64, p: f64) -> f64 {
    if s <= sstar {
        0.0
    } else if s <= s2star {
        0.5 * eps * (s - sstar) * (s - sstar)
    } else {
        (s - s2star).powf(p) + 0.5 * eps * (s2star - sstar) * (s2star - sstar)
    }
}

/// Evaluate the complete explicit-constants chain.
pub fn compute_constants(params: &CouplingParams) -> Result<ContractionConstants, CouplingError> {
    params.validate()?;
    let rho1 = params.rho1;
    let l1 = params.l1;
    let l2 = params.l2;
    let l3 = params.l3;
    let theta = params.theta;
    let p = params.p;
    let rho2 = params.metric.rho2;
    let sstar = params.metric.sstar;
    let nq = params.metric.norm_q();
    let nq_inv = params.metric.norm_q_inv();
    let nq_inv_sqrt = nq_inv.sqrt();
    let q22 = params.q22_norm();

    let m = 2.0 * l2 / rho1;
    let l31m = l3 + l1 * m;
    let rho3 = rho1 / (4.0 * (1.0 + rho1 / (4.0 * l31m)));
    let l4 = (l31m + rho3) / 8.0;
    let s1s = sstar + 16.0 * q22 * theta * theta / (sstar * rho2);
    let gamma1 = m.min(1.0) / (2.0 * nq_inv).sqrt();
    let gamma2 = (1.0 / m).max(1.0) * nq.sqrt();
    let big_c0 = gamma2 * (m + 1.0) / 2.0;
    let rstar = sstar / gamma2;
    let r1star = s1s / gamma1;
    let s2star = (gamma2 * r1star).max(s1s);
    let fp_r1s = (-l4 * r1star * r1star / (2.0 * theta * theta)).exp();
    let eps = rho3 * rstar / (16.0 * q22 * theta * theta) * fp_r1s;
    let small_c0 = 8.0 * q22 * eps * theta * theta / sstar;

    let f_r1s = f_chain(r1star, r1star, l4, theta);
    let k1 = 1.0
        + (f_r1s + g_chain(s2star, sstar, s2star, eps, p)) / s2star.powf(p)
        + eps * (s2star - sstar) / s2star.powf(p - 1.0);
    let k2 = (f_r1s + g_chain(2.0 * (s2star + 1.0), sstar, s2star, eps, p)) / s1s;
    let k3 = 1.0 + nq.sqrt() * (1.0 / m).max(1.0) * g_chain(s1s, sstar, s2star, eps, p) / sstar;

    let cstar = (p * rho2 / (2.0f64.powf(p) * k1))
        .min(small_c0 / k2)
        .min(rho3 * fp_r1s / (2.0 * k3));
    let g_s1s = g_chain(s1s, sstar, s2star, eps, p);
    let kstar = ((2.0 * nq_inv_sqrt).powf(p) * 1.0f64.min((2.0 * s2star).powf(p - 1.0)))
        .min(g_s1s / (2.0 * s2star) * nq_inv_sqrt.min(nq_inv_sqrt.powf(p) / (2.0 * s2star).powf(p - 1.0)))
        .min(fp_r1s * (m.powf(p)).min(1.0) / 1.0f64.max(r1star.powf(p - 1.0)));
    let big_kstar = (k1 * nq.powf(p / 2.0))
        .max(k2 * nq.sqrt())
        .max(2.0f64.sqrt() * k3 * m.max(1.0));
    let cp = big_kstar / kstar;
    let lambdap = cstar;

    Ok(ContractionConstants {
        p,
        theta,
        sstar,
        rho2,
        norm_q: nq,
        norm_q_inv: nq_inv,
        norm_q22: q22,
        m,
        rho3,
        l4,
        s1s,
        gamma1,
        gamma2,
        big_c0,
        rstar,
        r1star,
        s2star,
        eps,
        small_c0,
        k1,
        k2,
        k3,
        cstar,
        kstar,
        big_kstar,
        cp,
        lambdap,
    })
}
