//! Diffusion model definitions: drift, Jacobian, curvature bound, constant
//! diffusion matrix, and the structural decompositions used by the coupling
//! construction.
//!
//! The curvature bound `eta` is any pointwise upper bound on the largest
//! eigenvalue of the symmetric part of the drift Jacobian; in one dimension
//! `eta(x) = b'(x)` is exact. Multi-dimensional builtins default to the
//! numerically evaluated eigenvalue unless a closed form is supplied.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{ExprError, ScalarExpr};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
}

pub type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type JacobianFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type EtaFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A diffusion `dX = b(X) dt + sigma dB` with constant `sigma`.
#[derive(Clone)]
pub struct DriftModel {
    dim: usize,
    noise_cols: usize,
    /// dim x noise_cols, row-major.
    sigma: Vec<f64>,
    drift: Arc<DriftFn>,
    jacobian: Arc<JacobianFn>,
    eta: Arc<EtaFn>,
    one_sided_lipschitz: f64,
    bakry_emery: Option<f64>,
}

impl std::fmt::Debug for DriftModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftModel")
            .field("dim", &self.dim)
            .field("noise_cols", &self.noise_cols)
            .field("one_sided_lipschitz", &self.one_sided_lipschitz)
            .field("bakry_emery", &self.bakry_emery)
            .finish()
    }
}

impl DriftModel {
    pub fn new(
        dim: usize,
        sigma: Vec<f64>,
        noise_cols: usize,
        drift: Arc<DriftFn>,
        jacobian: Arc<JacobianFn>,
        eta: Arc<EtaFn>,
        one_sided_lipschitz: f64,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidParameter("dimension must be positive".into()));
        }
        if sigma.len() != dim * noise_cols {
            return Err(ModelError::Dimension(format!(
                "sigma has {} entries, expected {}x{}",
                sigma.len(),
                dim,
                noise_cols
            )));
        }
        Ok(DriftModel {
            dim,
            noise_cols,
            sigma,
            drift,
            jacobian,
            eta,
            one_sided_lipschitz,
            bakry_emery: None,
        })
    }

    pub fn with_bakry_emery(mut self, lambda_star: f64) -> Self {
        self.bakry_emery = Some(lambda_star);
        self
    }

    /// Replace the curvature bound with a user-supplied closed form.
    pub fn with_eta(mut self, eta: Arc<EtaFn>) -> Self {
        self.eta = eta;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_cols(&self) -> usize {
        self.noise_cols
    }

    /// Row-major dim x noise_cols diffusion matrix.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// (sigma sigma^T)_{00}; the scalar sigma^2 of a 1D model.
    pub fn sigma_squared_scalar(&self) -> f64 {
        self.sigma[..self.noise_cols].iter().map(|s| s * s).sum()
    }

    /// Frobenius norm of sigma (the |sigma| used by the concentration
    /// certificates).
    pub fn sigma_frobenius(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out);
    }

    /// Fill `out` (row-major dim x dim) with the Jacobian of the drift.
    #[inline]
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out);
    }

    #[inline]
    pub fn eta(&self, x: &[f64]) -> f64 {
        (self.eta)(x)
    }

    pub fn eta_fn(&self) -> Arc<EtaFn> {
        self.eta.clone()
    }

    pub fn one_sided_lipschitz(&self) -> f64 {
        self.one_sided_lipschitz
    }

    pub fn bakry_emery(&self) -> Option<f64> {
        self.bakry_emery
    }

    /// Curvature bound in the metric of a positive definite `m`: the largest
    /// eigenvalue of `sym(M^{1/2} grad b(M^{-1/2} z) M^{-1/2})`, evaluated at
    /// the transformed state `z = M^{1/2} x`.
    pub fn eta_weighted(&self, m: &DMatrix<f64>) -> Result<Arc<EtaFn>, ModelError> {
        let d = self.dim;
        if m.nrows() != d || m.ncols() != d {
            return Err(ModelError::Dimension("metric size != model dimension".into()));
        }
        let (m_sqrt, m_inv_sqrt) = spd_sqrt(m)?;
        let jac = self.jacobian.clone();
        Ok(Arc::new(move |z: &[f64]| {
            let zv = DVector::from_column_slice(z);
            let x = &m_inv_sqrt * &zv;
            let mut j = vec![0.0; d * d];
            jac(x.as_slice(), &mut j);
            let jm = DMatrix::from_row_slice(d, d, &j);
            let w = &m_sqrt * jm * &m_inv_sqrt;
            sym_max_eig_dmatrix(&w)
        }))
    }
}

/// Largest eigenvalue of the symmetric part of a row-major d x d matrix.
pub fn sym_jacobian_max_eig(jac: &[f64], d: usize) -> f64 {
    match d {
        1 => jac[0],
        2 => {
            let a = jac[0];
            let dd = jac[3];
            let b = 0.5 * (jac[1] + jac[2]);
            let mid = 0.5 * (a + dd);
            let rad = (0.25 * (a - dd) * (a - dd) + b * b).sqrt();
            mid + rad
        }
        _ => {
            let m = DMatrix::from_row_slice(d, d, jac);
            sym_max_eig_dmatrix(&m)
        }
    }
}

fn sym_max_eig_dmatrix(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Square root and inverse square root of a symmetric positive definite
/// matrix by eigendecomposition; rejects minimum eigenvalue below 1e-12.
pub fn spd_sqrt(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(ModelError::Dimension("matrix must be square".into()));
    }
    let asym = (q - q.transpose()).abs().max();
    if asym > 1e-10 * q.abs().max().max(1.0) {
        return Err(ModelError::NotPositiveDefinite(format!(
            "asymmetry {asym:.3e}"
        )));
    }
    let sym = (q + q.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < 1e-12 {
        return Err(ModelError::NotPositiveDefinite(format!(
            "minimum eigenvalue {min_eig:.3e} < 1e-12"
        )));
    }
    let mut sqrt_vals = eig.eigenvalues.clone();
    let mut inv_sqrt_vals = eig.eigenvalues.clone();
    for i in 0..n {
        sqrt_vals[i] = eig.eigenvalues[i].sqrt();
        inv_sqrt_vals[i] = 1.0 / sqrt_vals[i];
    }
    let v = &eig.eigenvectors;
    let q_sqrt = v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose();
    let q_inv_sqrt = v * DMatrix::from_diagonal(&inv_sqrt_vals) * v.transpose();
    Ok((q_sqrt, q_inv_sqrt))
}

// ------------------------------------------------------------------
// Structural data for the coupling construction
// ------------------------------------------------------------------

/// Block decomposition x = (y, z) with drift inequalities
/// `(b1(x)-b1(x')).(y-y') <= -rho1 |y-y'|^2 + L1 |y-y'||z-z'|` and
/// `(b2(x)-b2(x')).(z-z') <= L2 |y-y'||z-z'| + L3 |z-z'|^2`, and elliptic
/// noise level `theta` on the z block.
#[derive(Debug, Clone)]
pub struct StateDecomposition {
    pub n: usize,
    pub m: usize,
    pub rho1: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub theta: f64,
    /// Residual factor sigma_tilde ((n+m) x r), may be absent.
    pub sigma_residual: Option<DMatrix<f64>>,
}

impl StateDecomposition {
    pub fn new(
        n: usize,
        m: usize,
        rho1: f64,
        l1: f64,
        l2: f64,
        l3: f64,
        theta: f64,
        sigma_residual: Option<DMatrix<f64>>,
    ) -> Result<Self, ModelError> {
        if m == 0 {
            return Err(ModelError::InvalidParameter("z block must be non-empty".into()));
        }
        for (name, v) in [("rho1", rho1), ("l1", l1), ("l2", l2), ("l3", l3), ("theta", theta)] {
            if !(v > 0.0) {
                return Err(ModelError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if let Some(st) = &sigma_residual {
            if st.nrows() != n + m {
                return Err(ModelError::Dimension("sigma_residual rows != n+m".into()));
            }
        }
        Ok(StateDecomposition {
            n,
            m,
            rho1,
            l1,
            l2,
            l3,
            theta,
            sigma_residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    /// Checks that `Sigma - theta^2 blockdiag(0, Id_m)` equals the residual
    /// `sigma_tilde sigma_tilde^T` (positive semidefiniteness of the noise
    /// split), against the model's diffusion matrix.
    pub fn check_sigma(&self, model: &DriftModel) -> Result<(), ModelError> {
        let d = self.dim();
        if model.dim() != d {
            return Err(ModelError::Dimension("decomposition dim != model dim".into()));
        }
        let k = model.noise_cols();
        let s = DMatrix::from_row_slice(d, k, model.sigma());
        let mut residual = &s * s.transpose();
        for i in self.n..d {
            residual[(i, i)] -= self.theta * self.theta;
        }
        if let Some(st) = &self.sigma_residual {
            residual -= st * st.transpose();
        }
        let max_dev = residual.abs().max();
        if max_dev > 1e-9 {
            return Err(ModelError::NotPositiveDefinite(format!(
                "noise decomposition residual {max_dev:.3e}"
            )));
        }
        Ok(())
    }
}

/// Positive definite metric Q with cached square roots and the contraction-
/// at-infinity constants (rho2, S*).
#[derive(Debug, Clone)]
pub struct MetricChange {
    q: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    q_inv_sqrt: DMatrix<f64>,
    norm_q: f64,
    norm_q_inv: f64,
    pub rho2: f64,
    pub sstar: f64,
}

impl MetricChange {
    pub fn new(q: DMatrix<f64>, rho2: f64, sstar: f64) -> Result<Self, ModelError> {
        if !(rho2 > 0.0) || !(sstar > 0.0) {
            return Err(ModelError::InvalidParameter(
                "rho2 and S* must be > 0".into(),
            ));
        }
        let (q_sqrt, q_inv_sqrt) = spd_sqrt(&q)?;
        let eig = ((&q + q.transpose()) * 0.5).symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(MetricChange {
            q,
            q_sqrt,
            q_inv_sqrt,
            norm_q: max_eig,
            norm_q_inv: 1.0 / min_eig,
            rho2,
            sstar,
        })
    }

    pub fn identity(dim: usize, rho2: f64, sstar: f64) -> Result<Self, ModelError> {
        MetricChange::new(DMatrix::identity(dim, dim), rho2, sstar)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }

    pub fn q_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.q_inv_sqrt
    }

    /// Operator norm |Q|.
    pub fn norm_q(&self) -> f64 {
        self.norm_q
    }

    /// Operator norm |Q^{-1}|.
    pub fn norm_q_inv(&self) -> f64 {
        self.norm_q_inv
    }

    /// Operator norm of the trailing m x m block of Q.
    pub fn norm_q22(&self, m: usize) -> f64 {
        let d = self.q.nrows();
        let block = self.q.view((d - m, d - m), (m, m)).into_owned();
        sym_max_eig_dmatrix(&block)
    }

    /// sqrt(v^T Q v) via the cached square root.
    pub fn q_norm(&self, v: &[f64]) -> f64 {
        let vv = DVector::from_column_slice(v);
        (&self.q_sqrt * vv).norm()
    }
}

// ------------------------------------------------------------------
// Builtin models
// ------------------------------------------------------------------

/// Grid estimate of `sup eta` along the coordinate axes and the main
/// diagonal, used for the one-sided Lipschitz metadata of builtins.
fn grid_sup_eta(model: &DriftModel, half_width: f64, steps: usize) -> f64 {
    let d = model.dim();
    let mut sup = f64::NEG_INFINITY;
    let mut x = vec![0.0; d];
    for axis in 0..=d {
        for i in 0..=steps {
            let t = -half_width + 2.0 * half_width * (i as f64) / (steps as f64);
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = if axis == d || axis == j { t } else { 0.0 };
            }
            sup = sup.max(model.eta(&x));
        }
    }
    sup
}

/// Ornstein-Uhlenbeck: b(x) = -rate x, sigma = theta Id.
pub fn ornstein_uhlenbeck(rate: f64, dim: usize, theta: f64) -> Result<DriftModel, ModelError> {
    if !(theta > 0.0) {
        return Err(ModelError::InvalidParameter("theta must be > 0".into()));
    }
    if !(rate > 0.0) {
        return Err(ModelError::InvalidParameter("rate must be > 0".into()));
    }
    let mut sigma = vec![0.0; dim * dim];
    for i in 0..dim {
        sigma[i * dim + i] = theta;
    }
    let drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -rate * xi;
        }
    });
    let d = dim;
    let jacobian = Arc::new(move |_x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = -rate;
        }
    });
    let eta = Arc::new(move |_x: &[f64]| -rate);
    Ok(
        DriftModel::new(dim, sigma, dim, drift, jacobian, eta, -rate)?
            .with_bakry_emery(rate),
    )
}

/// Overdamped Langevin in 1D: dX = -U'(X) dt + sqrt(2) theta dB, with
/// eta = b' = -U'' exact.
pub fn overdamped_1d(potential: &ScalarExpr, theta: f64) -> Result<DriftModel, ModelError> {
    if !(theta > 0.0) {
        return Err(ModelError::InvalidParameter("theta must be > 0".into()));
    }
    let u1 = potential.differentiate();
    let u2 = u1.differentiate();
    let b = u1.compile()?;
    let bp = u2.compile()?;
    let sigma = vec![std::f64::consts::SQRT_2 * theta];
    let bc = b.clone();
    let drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out[0] = -bc.eval(x[0]);
    });
    let bpc = bp.clone();
    let jacobian = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out[0] = -bpc.eval(x[0]);
    });
    let eta = Arc::new(move |x: &[f64]| -bp.eval(x[0]));
    let model = DriftModel::new(1, sigma, 1, drift, jacobian, eta, 0.0)?;
    let l = grid_sup_eta(&model, 20.0, 4000);
    Ok(DriftModel {
        one_sided_lipschitz: l,
        ..model
    })
}

/// Kinetic Langevin with separable potential V(q) = sum_i V1(q_i):
/// dq = p dt, dp = (-grad V(q) - gamma p) dt + sqrt(2) theta dB.
/// State layout: (q_1..q_d, p_1..p_d).
pub fn kinetic_langevin(
    potential: &ScalarExpr,
    gamma: f64,
    theta: f64,
    dim: usize,
) -> Result<DriftModel, ModelError> {
    if !(theta > 0.0) || !(gamma > 0.0) {
        return Err(ModelError::InvalidParameter("theta and gamma must be > 0".into()));
    }
    let v1 = potential.differentiate().compile()?;
    let v2 = potential.differentiate().differentiate().compile()?;
    let d = dim;
    let full = 2 * d;
    let mut sigma = vec![0.0; full * d];
    for i in 0..d {
        sigma[(d + i) * d + i] = std::f64::consts::SQRT_2 * theta;
    }
    let v1c = v1.clone();
    let drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let (q, p) = x.split_at(d);
        for i in 0..d {
            out[i] = p[i];
            out[d + i] = -v1c.eval(q[i]) - gamma * p[i];
        }
    });
    let v2c = v2.clone();
    let jacobian = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * full + d + i] = 1.0;
            out[(d + i) * full + i] = -v2c.eval(x[i]);
            out[(d + i) * full + d + i] = -gamma;
        }
    });
    // separable structure: the symmetric part decomposes into d independent
    // 2x2 blocks [[0, (1 - V''(q_i))/2], [(1 - V''(q_i))/2, -gamma]]
    let eta = Arc::new(move |x: &[f64]| {
        let mut best = f64::NEG_INFINITY;
        for i in 0..d {
            let c = 0.5 * (1.0 - v2.eval(x[i]));
            let mid = -0.5 * gamma;
            let rad = (0.25 * gamma * gamma + c * c).sqrt();
            best = best.max(mid + rad);
        }
        best
    });
    let model = DriftModel::new(full, sigma, d, drift, jacobian, eta, 0.0)?;
    let l = grid_sup_eta(&model, 20.0, 4000);
    Ok(DriftModel {
        one_sided_lipschitz: l,
        ..model
    })
}

/// Colored-noise diffusion (q, w) with separable V(q) = sum_i V1(q_i):
/// dq = (-grad V(q) + A w) dt, dw = -w dt + sigma0 dB, together with the
/// change of variables (Y, Z) = (q, w + eta_cv A^T q) under which the state
/// decomposition holds.
pub struct ColoredNoiseModel {
    n: usize,
    m: usize,
    a: DMatrix<f64>,
    sigma0: f64,
    eta_cv: f64,
    raw: DriftModel,
    yz: DriftModel,
}

impl ColoredNoiseModel {
    pub fn new(
        potential: &ScalarExpr,
        a: DMatrix<f64>,
        sigma0: f64,
        eta_cv: Option<f64>,
    ) -> Result<Self, ModelError> {
        if !(sigma0 > 0.0) {
            return Err(ModelError::InvalidParameter("sigma0 must be > 0".into()));
        }
        let n = a.nrows();
        let m = a.ncols();
        if n == 0 || m == 0 {
            return Err(ModelError::Dimension("A must be a nonempty n x m matrix".into()));
        }
        let v1 = potential.differentiate().compile()?;
        let v2 = potential.differentiate().differentiate().compile()?;

        // smallest singular value of A^T (= of A)
        let svd = a.clone().svd(false, false);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 0.0 {
            return Err(ModelError::InvalidParameter("A must have full rank".into()));
        }
        let eta_cv = match eta_cv {
            Some(e) if e > 0.0 => e,
            Some(e) => {
                return Err(ModelError::InvalidParameter(format!(
                    "eta_cv must be > 0, got {e}"
                )))
            }
            None => {
                // smallest value with eta_cv * smin(A^T)^2 >= 2 L where L is
                // the one-sided Lipschitz constant of -grad V; any positive
                // value works when -grad V is already dissipative
                let mut l = f64::NEG_INFINITY;
                for i in 0..=4000 {
                    let q = -20.0 + 40.0 * (i as f64) / 4000.0;
                    l = l.max(-v2.eval(q));
                }
                if l > 0.0 {
                    2.0 * l / (smin * smin)
                } else {
                    1.0
                }
            }
        };

        let d = n + m;
        let mut sigma = vec![0.0; d * m];
        for i in 0..m {
            sigma[(n + i) * m + i] = sigma0;
        }

        // raw process (q, w)
        let a_raw = a.clone();
        let v1_raw = v1.clone();
        let raw_drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (q, w) = x.split_at(n);
            for i in 0..n {
                let mut aw = 0.0;
                for j in 0..m {
                    aw += a_raw[(i, j)] * w[j];
                }
                out[i] = -v1_raw.eval(q[i]) + aw;
            }
            for j in 0..m {
                out[n + j] = -w[j];
            }
        });
        let a_rj = a.clone();
        let v2_raw = v2.clone();
        let raw_jac = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..n {
                out[i * d + i] = -v2_raw.eval(x[i]);
                for j in 0..m {
                    out[i * d + n + j] = a_rj[(i, j)];
                }
            }
            for j in 0..m {
                out[(n + j) * d + n + j] = -1.0;
            }
        });
        let raw_eta = {
            let jac = raw_jac.clone();
            Arc::new(move |x: &[f64]| {
                let mut j = vec![0.0; d * d];
                jac(x, &mut j);
                sym_jacobian_max_eig(&j, d)
            })
        };
        let raw = DriftModel::new(d, sigma.clone(), m, raw_drift, raw_jac, raw_eta, 0.0)?;
        let l_raw = grid_sup_eta(&raw, 20.0, 2000);
        let raw = DriftModel {
            one_sided_lipschitz: l_raw,
            ..raw
        };

        // transformed process (Y, Z) = (q, w + eta_cv A^T q); the noise
        // still enters only through Z since dq carries no noise
        let a_yz = a.clone();
        let v1_yz = v1.clone();
        let yz_drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
            let (y, z) = x.split_at(n);
            // w = z - eta_cv A^T y
            let mut w = vec![0.0; m];
            for j in 0..m {
                let mut aty = 0.0;
                for i in 0..n {
                    aty += a_yz[(i, j)] * y[i];
                }
                w[j] = z[j] - eta_cv * aty;
            }
            let mut gv = vec![0.0; n];
            for i in 0..n {
                gv[i] = v1_yz.eval(y[i]);
            }
            for i in 0..n {
                let mut aw = 0.0;
                for j in 0..m {
                    aw += a_yz[(i, j)] * w[j];
                }
                out[i] = -gv[i] + aw;
            }
            for j in 0..m {
                let mut atgv = 0.0;
                let mut ata_w = 0.0;
                for i in 0..n {
                    atgv += a_yz[(i, j)] * gv[i];
                }
                for jj in 0..m {
                    let mut ata = 0.0;
                    for i in 0..n {
                        ata += a_yz[(i, j)] * a_yz[(i, jj)];
                    }
                    ata_w += ata * w[jj];
                }
                out[n + j] = -eta_cv * atgv + eta_cv * ata_w - w[j];
            }
        });
        let a_yj = a.clone();
        let v2_yz = v2.clone();
        let yz_jac = Arc::new(move |x: &[f64], out: &mut [f64]| {
            // d b1/dy = -diag(V'') - eta A A^T ; d b1/dz = A
            // d b2/dy = -eta A^T diag(V'') - (eta A^T A - I)(eta A^T)
            // d b2/dz = eta A^T A - I
            out.fill(0.0);
            let e = eta_cv;
            for i in 0..n {
                let vpp = v2_yz.eval(x[i]);
                out[i * d + i] = -vpp;
                for ii in 0..n {
                    let mut aat = 0.0;
                    for j in 0..m {
                        aat += a_yj[(i, j)] * a_yj[(ii, j)];
                    }
                    out[i * d + ii] -= e * aat;
                }
                for j in 0..m {
                    out[i * d + n + j] = a_yj[(i, j)];
                }
            }
            for j in 0..m {
                for i in 0..n {
                    let vpp = v2_yz.eval(x[i]);
                    let mut term = -e * a_yj[(i, j)] * vpp;
                    // -(e A^T A - I) e A^T, column i of e A^T is e a_{i,.}
                    for jj in 0..m {
                        let mut ata = 0.0;
                        for ii in 0..n {
                            ata += a_yj[(ii, j)] * a_yj[(ii, jj)];
                        }
                        let factor = e * ata - if j == jj { 1.0 } else { 0.0 };
                        term -= factor * e * a_yj[(i, jj)];
                    }
                    out[(n + j) * d + i] = term;
                }
                for jj in 0..m {
                    let mut ata = 0.0;
                    for ii in 0..n {
                        ata += a_yj[(ii, j)] * a_yj[(ii, jj)];
                    }
                    out[(n + j) * d + n + jj] = e * ata - if j == jj { 1.0 } else { 0.0 };
                }
            }
        });
        let yz_eta = {
            let jac = yz_jac.clone();
            Arc::new(move |x: &[f64]| {
                let mut j = vec![0.0; d * d];
                jac(x, &mut j);
                sym_jacobian_max_eig(&j, d)
            })
        };
        let yz = DriftModel::new(d, sigma, m, yz_drift, yz_jac, yz_eta, 0.0)?;
        let l_yz = grid_sup_eta(&yz, 20.0, 2000);
        let yz = DriftModel {
            one_sided_lipschitz: l_yz,
            ..yz
        };

        Ok(ColoredNoiseModel {
            n,
            m,
            a,
            sigma0,
            eta_cv,
            raw,
            yz,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eta_cv(&self) -> f64 {
        self.eta_cv
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// The (q, w) process.
    pub fn raw_model(&self) -> &DriftModel {
        &self.raw
    }

    /// The transformed (Y, Z) process used by the coupling construction.
    pub fn yz_model(&self) -> &DriftModel {
        &self.yz
    }

    /// Map (q, w) to (Y, Z) = (q, w + eta_cv A^T q).
    pub fn to_yz(&self, qw: &[f64]) -> Vec<f64> {
        let (q, w) = qw.split_at(self.n);
        let mut out = qw.to_vec();
        for j in 0..self.m {
            let mut aty = 0.0;
            for i in 0..self.n {
                aty += self.a[(i, j)] * q[i];
            }
            out[self.n + j] = w[j] + self.eta_cv * aty;
        }
        out
    }
}

/// Builtin model selector mirroring the configuration surface.
#[derive(Debug, Clone)]
pub enum BuiltinModel {
    OrnsteinUhlenbeck {
        rate: f64,
        dim: usize,
        theta: f64,
    },
    Overdamped1d {
        potential: ScalarExpr,
        theta: f64,
    },
    KineticLangevin {
        potential: ScalarExpr,
        gamma: f64,
        theta: f64,
        dim: usize,
    },
    ColoredNoise {
        potential: ScalarExpr,
        a: DMatrix<f64>,
        sigma0: f64,
        eta_cv: Option<f64>,
    },
}

impl BuiltinModel {
    /// Build the `DriftModel`; colored noise yields the raw (q, w) process.
    pub fn build(&self) -> Result<DriftModel, ModelError> {
        match self {
            BuiltinModel::OrnsteinUhlenbeck { rate, dim, theta } => {
                ornstein_uhlenbeck(*rate, *dim, *theta)
            }
            BuiltinModel::Overdamped1d { potential, theta } => overdamped_1d(potential, *theta),
            BuiltinModel::KineticLangevin {
                potential,
                gamma,
                theta,
                dim,
            } => kinetic_langevin(potential, *gamma, *theta, *dim),
            BuiltinModel::ColoredNoise {
                potential,
                a,
                sigma0,
                eta_cv,
            } => Ok(ColoredNoiseModel::new(potential, a.clone(), *sigma0, *eta_cv)?
                .raw_model()
                .clone()),
        }
    }
}

/// Convenience for tests and callers assembling parameter maps.
pub fn param_map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_jacobian(model: &DriftModel, x: &[f64], h: f64) -> Vec<f64> {
        let d = model.dim();
        let mut out = vec![0.0; d * d];
        let mut bp = vec![0.0; d];
        let mut bm = vec![0.0; d];
        let mut xp = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + h;
            model.drift(&xp, &mut bp);
            xp[j] = x[j] - h;
            model.drift(&xp, &mut bm);
            xp[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
        out
    }

    fn u0() -> ScalarExpr {
        ScalarExpr::parse("x^2", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn ou_wiring() {
        let m = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let mut b = [0.0];
        m.drift(&[2.0], &mut b);
        assert_eq!(b[0], -2.0);
        assert_eq!(m.eta(&[5.0]), -1.0);
        assert_eq!(m.bakry_emery(), Some(1.0));
    }

    #[test]
    fn overdamped_u0_wiring() {
        let m = overdamped_1d(&u0(), 1.0).unwrap();
        let mut b = [0.0];
        m.drift(&[1.5], &mut b);
        assert!((b[0] + 3.0).abs() < 1e-14);
        assert!((m.eta(&[0.3]) + 2.0).abs() < 1e-14);
        assert!((m.sigma_squared_scalar() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kinetic_jacobian_quadratic_potential() {
        let v = ScalarExpr::parse("x^2/2", &BTreeMap::new()).unwrap();
        let m = kinetic_langevin(&v, 2.0, 1.0, 1).unwrap();
        let mut j = vec![0.0; 4];
        m.jacobian(&[0.7, -0.3], &mut j);
        assert_eq!(j, vec![0.0, 1.0, -1.0, -2.0]);
    }

    #[test]
    fn eta_dominates_symmetric_jacobian_on_random_points() {
        let u1 = ScalarExpr::parse("x^2 + 2*exp(-x^2)", &BTreeMap::new()).unwrap();
        let v = ScalarExpr::parse("x^2/2 + cos(x)", &BTreeMap::new()).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let colored = ColoredNoiseModel::new(&v, a, 1.0, Some(1.0)).unwrap();
        let models: Vec<DriftModel> = vec![
            ornstein_uhlenbeck(1.0, 3, 0.5).unwrap(),
            overdamped_1d(&u1, 1.0).unwrap(),
            kinetic_langevin(&v, 2.0, 1.0, 2).unwrap(),
            colored.raw_model().clone(),
            colored.yz_model().clone(),
        ];
        let mut rng = crate::rng::RngStream::new(11, 0);
        for model in &models {
            let d = model.dim();
            let mut jac = vec![0.0; d * d];
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
                model.jacobian(&x, &mut jac);
                let lam = sym_jacobian_max_eig(&jac, d);
                assert!(
                    lam <= model.eta(&x) + 1e-9,
                    "eta violated: lam={lam} eta={}",
                    model.eta(&x)
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let u1 = ScalarExpr::parse("x^2 + 2*exp(-x^2)", &BTreeMap::new()).unwrap();
        let v = ScalarExpr::parse("x^2/2 + cos(x)", &BTreeMap::new()).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let colored = ColoredNoiseModel::new(&v, a, 1.0, Some(1.3)).unwrap();
        let models: Vec<DriftModel> = vec![
            overdamped_1d(&u1, 0.7).unwrap(),
            kinetic_langevin(&v, 2.0, 1.0, 2).unwrap(),
            colored.yz_model().clone(),
        ];
        let mut rng = crate::rng::RngStream::new(13, 0);
        for model in &models {
            let d = model.dim();
            let mut jac = vec![0.0; d * d];
            for _ in 0..20 {
                let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.standard_normal()).collect();
                model.jacobian(&x, &mut jac);
                let fd = central_jacobian(model, &x, 1e-5);
                for (idx, (a, b)) in jac.iter().zip(&fd).enumerate() {
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!(
                        (a - b).abs() <= 1e-5 * scale,
                        "entry {idx}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn metric_change_sqrt_roundtrip() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 2.0]);
        let mc = MetricChange::new(q.clone(), 0.22, 12.0).unwrap();
        let qq = mc.q_sqrt() * mc.q_sqrt();
        let dev = (&qq - &q).abs().max() / q.abs().max();
        assert!(dev < 1e-12);
        let prod = mc.q_sqrt() * mc.q_inv_sqrt();
        let dev2 = (&prod - DMatrix::<f64>::identity(2, 2)).abs().max();
        assert!(dev2 < 1e-12);
    }

    #[test]
    fn metric_change_rejects_near_singular() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(MetricChange::new(q, 1.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_sigma_check() {
        let v = ScalarExpr::parse("x^2/2", &BTreeMap::new()).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let colored = ColoredNoiseModel::new(&v, a, 1.0, Some(1.0)).unwrap();
        let dec = StateDecomposition::new(1, 1, 2.0, 1.0, 1.0, 0.1, 1.0, None).unwrap();
        dec.check_sigma(colored.yz_model()).unwrap();
        // wrong theta must fail
        let bad = StateDecomposition::new(1, 1, 2.0, 1.0, 1.0, 0.1, 0.5, None).unwrap();
        assert!(bad.check_sigma(colored.yz_model()).is_err());
    }

    #[test]
    fn colored_default_eta_cv_is_positive() {
        let v = ScalarExpr::parse("x^2/2", &BTreeMap::new()).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let colored = ColoredNoiseModel::new(&v, a, 1.0, None).unwrap();
        assert!(colored.eta_cv() > 0.0);
    }
}
