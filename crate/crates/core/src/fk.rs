//! Feynman-Kac spectral criterion in one dimension.
//!
//! Discretizes `L f = b f' + (sigma^2/2) f'' + p eta f` on a truncated
//! interval with Dirichlet boundaries and a centered second-order stencil,
//! and computes its largest eigenvalue. For gradient drifts the tridiagonal
//! is diagonally similar to a symmetric one (the product of adjacent
//! off-diagonal entries is positive), so the eigenvalue is found by Sturm
//! bisection; otherwise a shifted power iteration on the nonnegative
//! matrix `T - min(diag) I` is used (Perron-Frobenius).

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::ScalarExpr;
use crate::model::{DriftModel, ModelError};

#[derive(Debug, Error)]
pub enum FkError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("operator is 1D only (model dimension {0})")]
    NotOneDimensional(usize),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("off-diagonal product turned non-positive; matrix is not symmetrizable: {0}")]
    NotSymmetrizable(String),
    #[error("complex leading pair cannot be excluded: {0}")]
    ComplexPairRisk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMethod {
    Auto,
    SturmBisection,
    PowerIteration,
}

/// Assembled tridiagonal operator on the interior nodes of the truncated
/// domain. Stencil entries: `diag_i = -sigma^2/dx^2 + p eta_i`,
/// `super_i = sigma^2/(2 dx^2) + b_i/(2 dx)`,
/// `sub_i = sigma^2/(2 dx^2) - b_i/(2 dx)`.
#[derive(Debug, Clone)]
pub struct FkDiscretization {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub n: usize,
    pub b: Vec<f64>,
    pub p_eta: Vec<f64>,
    pub half_sigma2: f64,
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
    pub sup: Vec<f64>,
    pub boundary: BoundaryCondition,
}

impl FkDiscretization {
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + self.dx * (i as f64 + 1.0)
    }

    /// Off-diagonal entries of the symmetrized similarity transform
    /// `e_i = sqrt(super_i * sub_{i+1})`, valid when every product is
    /// positive.
    pub fn symmetrized_offdiag(&self) -> Result<Vec<f64>, FkError> {
        let mut e = Vec::with_capacity(self.n - 1);
        for i in 0..self.n - 1 {
            let prod = self.sup[i] * self.sub[i + 1];
            if prod <= 0.0 {
                return Err(FkError::NotSymmetrizable(format!(
                    "super[{i}]*sub[{}] = {prod:.3e}",
                    i + 1
                )));
            }
            e.push(prod.sqrt());
        }
        Ok(e)
    }

    /// Diagonal similarity factors `D_i` with `D_{i+1}/D_i =
    /// sqrt(sub_{i+1}/super_i)`, returned as logarithms (the factors
    /// themselves overflow for strongly confining potentials).
    pub fn symmetrizer_log(&self) -> Result<Vec<f64>, FkError> {
        let mut logs = Vec::with_capacity(self.n);
        let mut acc = 0.0;
        logs.push(0.0);
        for i in 0..self.n - 1 {
            let prod = self.sup[i] * self.sub[i + 1];
            if prod <= 0.0 {
                return Err(FkError::NotSymmetrizable(format!(
                    "super[{i}]*sub[{}] = {prod:.3e}",
                    i + 1
                )));
            }
            acc += 0.5 * (self.sub[i + 1].ln() - self.sup[i].ln());
            logs.push(acc);
        }
        Ok(logs)
    }
}

fn assemble(
    x_min: f64,
    x_max: f64,
    dx: f64,
    b: Vec<f64>,
    p_eta: Vec<f64>,
    sigma2: f64,
) -> FkDiscretization {
    let n = b.len();
    let inv2 = sigma2 / (2.0 * dx * dx);
    let mut diag = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n);
    for i in 0..n {
        diag.push(-sigma2 / (dx * dx) + p_eta[i]);
        sup.push(inv2 + b[i] / (2.0 * dx));
        sub.push(inv2 - b[i] / (2.0 * dx));
    }
    FkDiscretization {
        x_min,
        x_max,
        dx,
        n,
        b,
        p_eta,
        half_sigma2: 0.5 * sigma2,
        diag,
        sub,
        sup,
        boundary: BoundaryCondition::Dirichlet,
    }
}

/// Discretize `L_{p eta}` for a 1D model on `domain` with step `dx`.
pub fn build_operator(
    model: &DriftModel,
    p: f64,
    domain: (f64, f64),
    dx: f64,
) -> Result<FkDiscretization, FkError> {
    if model.dim() != 1 {
        return Err(FkError::NotOneDimensional(model.dim()));
    }
    let (x_min, x_max) = domain;
    if !(dx > 0.0) || !(x_max > x_min) {
        return Err(FkError::InvalidDomain(format!(
            "bad domain [{x_min}, {x_max}] with dx {dx}"
        )));
    }
    let n = ((x_max - x_min) / dx).round() as isize - 1;
    if n < 10 {
        return Err(FkError::InvalidDomain(format!(
            "only {n} interior nodes; need at least 10"
        )));
    }
    let n = n as usize;
    let sigma2 = model.sigma_squared_scalar();
    let mut b = Vec::with_capacity(n);
    let mut p_eta = Vec::with_capacity(n);
    let mut bx = [0.0f64];
    for i in 0..n {
        let x = x_min + dx * (i as f64 + 1.0);
        model.drift(&[x], &mut bx);
        b.push(bx[0]);
        p_eta.push(p * model.eta(&[x]));
    }
    Ok(assemble(x_min, x_max, dx, b, p_eta, sigma2))
}

#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub lambda: f64,
    pub eigenvector: Vec<f64>,
    pub iterations: usize,
    pub method: &'static str,
    pub residual: f64,
}

/// Largest eigenvalue with the default method selection: Sturm bisection on
/// the symmetrized tridiagonal when possible, shifted power iteration
/// otherwise.
pub fn leading_eigenvalue(op: &FkDiscretization, tol: f64) -> Result<EigenSolution, FkError> {
    leading_eigenvalue_with(op, tol, EigMethod::Auto)
}

pub fn leading_eigenvalue_with(
    op: &FkDiscretization,
    tol: f64,
    method: EigMethod,
) -> Result<EigenSolution, FkError> {
    assert!(tol > 0.0, "tolerance must be positive");
    match method {
        EigMethod::SturmBisection => sturm_solve(op, tol, true),
        EigMethod::PowerIteration => power_solve(op, tol),
        EigMethod::Auto => match sturm_solve(op, tol, true) {
            Ok(sol) => Ok(sol),
            Err(FkError::NotSymmetrizable(_)) => power_solve(op, tol),
            Err(e) => Err(e),
        },
    }
}

/// Eigenvalue-only fast path used by parameter sweeps.
fn sturm_lambda(op: &FkDiscretization, tol: f64) -> Result<(f64, usize), FkError> {
    let e = op.symmetrized_offdiag()?;
    let n = op.n;
    // Gershgorin, intersected with the row-sum bound lambda <= max p eta
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let el = if i > 0 { e[i - 1] } else { 0.0 };
        let er = if i < n - 1 { e[i] } else { 0.0 };
        lo = lo.min(op.diag[i] - el - er);
        hi = hi.max(op.diag[i] + el + er);
    }
    let row_bound = op.p_eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi = hi.min(row_bound) + tol;
    lo -= tol;
    let mut iterations = 0usize;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if count_below(&op.diag, &e, mid) >= n {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
        if iterations > 400 {
            break;
        }
    }
    Ok((0.5 * (lo + hi), iterations))
}

fn sturm_solve(op: &FkDiscretization, tol: f64, want_vector: bool) -> Result<EigenSolution, FkError> {
    let (lambda, iterations) = sturm_lambda(op, tol)?;
    let (eigenvector, residual) = if want_vector {
        inverse_iteration(op, lambda)
    } else {
        (Vec::new(), f64::NAN)
    };
    Ok(EigenSolution {
        lambda,
        eigenvector,
        iterations,
        method: "sturm-bisection",
        residual,
    })
}

/// Number of eigenvalues of the symmetric tridiagonal (d, e) strictly below
/// `x`, by counting negative LDL^T pivots.
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let n = d.len();
    let guard = 1e-300;
    let mut count = 0usize;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..n {
        let q_safe = if q.abs() < guard {
            if q >= 0.0 {
                guard
            } else {
                -guard
            }
        } else {
            q
        };
        q = (d[i] - x) - e[i - 1] * e[i - 1] / q_safe;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// A few inverse-iteration sweeps on the original (nonsymmetric) matrix,
/// using a pivoted tridiagonal LU of `T - lambda I`.
fn inverse_iteration(op: &FkDiscretization, lambda: f64) -> (Vec<f64>, f64) {
    let n = op.n;
    let mut dl: Vec<f64> = op.sub[1..].to_vec();
    let mut dd: Vec<f64> = op.diag.iter().map(|d| d - lambda).collect();
    let mut du: Vec<f64> = op.sup[..n - 1].to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut swapped = vec![false; n.saturating_sub(1)];

    let guard = 1e-300;
    for i in 0..n - 1 {
        if dd[i].abs() >= dl[i].abs() {
            let piv = if dd[i].abs() < guard {
                guard.copysign(dd[i])
            } else {
                dd[i]
            };
            dd[i] = piv;
            let fact = dl[i] / piv;
            dl[i] = fact;
            dd[i + 1] -= fact * du[i];
        } else {
            let fact = dd[i] / dl[i];
            dd[i] = dl[i];
            dl[i] = fact;
            let temp = du[i];
            du[i] = dd[i + 1];
            dd[i + 1] = temp - fact * dd[i + 1];
            if i < n - 2 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            swapped[i] = true;
        }
    }
    if dd[n - 1].abs() < guard {
        dd[n - 1] = guard.copysign(dd[n - 1]);
    }

    let solve = |v: &mut [f64]| {
        for i in 0..n - 1 {
            if swapped[i] {
                let temp = v[i];
                v[i] = v[i + 1];
                v[i + 1] = temp - dl[i] * v[i];
            } else {
                v[i + 1] -= dl[i] * v[i];
            }
        }
        v[n - 1] /= dd[n - 1];
        if n >= 2 {
            v[n - 2] = (v[n - 2] - du[n - 2] * v[n - 1]) / dd[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            v[i] = (v[i] - du[i] * v[i + 1] - du2[i] * v[i + 2]) / dd[i];
        }
    };

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..4 {
        solve(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
    }
    // deterministic sign: largest-magnitude component positive
    let mut imax = 0;
    for i in 1..n {
        if v[i].abs() > v[imax].abs() {
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    let residual = residual_norm(op, lambda, &v);
    (v, residual)
}

fn power_solve(op: &FkDiscretization, tol: f64) -> Result<EigenSolution, FkError> {
    let n = op.n;
    for i in 0..n - 1 {
        if op.sup[i] < 0.0 || op.sub[i + 1] < 0.0 {
            return Err(FkError::ComplexPairRisk(format!(
                "negative off-diagonal near node {i}; the shifted matrix is not nonnegative"
            )));
        }
    }
    let shift = -op.diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w = vec![1.0 / (n as f64).sqrt(); n];
    let mut aw = vec![0.0; n];
    let max_iter = 2_000_000usize;
    let mut lam_a = f64::NAN;
    for it in 1..=max_iter {
        // A w with A = T + shift I (entrywise nonnegative)
        for i in 0..n {
            let mut acc = (op.diag[i] + shift) * w[i];
            if i > 0 {
                acc += op.sub[i] * w[i - 1];
            }
            if i < n - 1 {
                acc += op.sup[i] * w[i + 1];
            }
            aw[i] = acc;
        }
        // Collatz-Wielandt bounds on the Perron root
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            if w[i] > 0.0 {
                let r = aw[i] / w[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
            if aw[i] < 0.0 {
                return Err(FkError::ComplexPairRisk(format!(
                    "power iterate left the positive cone at node {i} (iteration {it})"
                )));
            }
        }
        lam_a = 0.5 * (lo + hi);
        if hi - lo <= tol * lam_a.abs().max(1.0) {
            let lambda = lam_a - shift;
            let norm = aw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut vec = aw.clone();
            for v in &mut vec {
                *v /= norm;
            }
            let residual = residual_norm(op, lambda, &vec);
            return Ok(EigenSolution {
                lambda,
                eigenvector: vec,
                iterations: it,
                method: "power-iteration",
                residual,
            });
        }
        let norm = aw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n {
            w[i] = aw[i] / norm;
        }
    }
    Err(FkError::NoConvergence {
        iterations: max_iter,
        residual: lam_a,
    })
}

fn residual_norm(op: &FkDiscretization, lambda: f64, v: &[f64]) -> f64 {
    let n = op.n;
    let mut acc = 0.0;
    for i in 0..n {
        let mut tv = op.diag[i] * v[i];
        if i > 0 {
            tv += op.sub[i] * v[i - 1];
        }
        if i < n - 1 {
            tv += op.sup[i] * v[i + 1];
        }
        let r = tv - lambda * v[i];
        acc += r * r;
    }
    acc.sqrt()
}

// ------------------------------------------------------------------
// Parameter sweep
// ------------------------------------------------------------------

/// Overdamped family `dX = -U'(X) dt + sqrt(2) theta dB` with theta free.
#[derive(Debug, Clone)]
pub struct OverdampedFamily {
    u_prime: crate::expr::CompiledExpr,
    u_second: crate::expr::CompiledExpr,
}

impl OverdampedFamily {
    pub fn new(potential: &ScalarExpr) -> Result<Self, FkError> {
        let d1 = potential.differentiate();
        let d2 = d1.differentiate();
        Ok(OverdampedFamily {
            u_prime: d1.compile().map_err(ModelError::Expr)?,
            u_second: d2.compile().map_err(ModelError::Expr)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub p_grid: Vec<f64>,
    pub theta2_grid: Vec<f64>,
    /// Row-major: `j_over_p[i_p * theta2_grid.len() + j_theta]`.
    pub j_over_p: Vec<f64>,
    pub converged: Vec<bool>,
}

impl SweepResult {
    pub fn value(&self, i_p: usize, j_theta: usize) -> f64 {
        self.j_over_p[i_p * self.theta2_grid.len() + j_theta]
    }

    pub fn cell_converged(&self, i_p: usize, j_theta: usize) -> bool {
        self.converged[i_p * self.theta2_grid.len() + j_theta]
    }
}

/// Evenly spaced inclusive grid.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 1);
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * (i as f64) / ((count - 1) as f64))
        .collect()
}

/// J(p eta)/p over the (p, theta^2) grid; cells are independent and a
/// non-converged cell is flagged rather than aborting the sweep.
pub fn sweep(
    family: &OverdampedFamily,
    p_grid: &[f64],
    theta2_grid: &[f64],
    domain: (f64, f64),
    dx: f64,
    tol: f64,
) -> Result<SweepResult, FkError> {
    if p_grid.is_empty() || theta2_grid.is_empty() {
        return Err(FkError::InvalidDomain("empty sweep grid".into()));
    }
    let (x_min, x_max) = domain;
    let n = ((x_max - x_min) / dx).round() as isize - 1;
    if n < 10 {
        return Err(FkError::InvalidDomain(format!(
            "only {n} interior nodes; need at least 10"
        )));
    }
    let n = n as usize;
    let mut b = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    for i in 0..n {
        let x = x_min + dx * (i as f64 + 1.0);
        b.push(-family.u_prime.eval(x));
        eta.push(-family.u_second.eval(x));
    }

    let cells: Vec<(usize, usize)> = (0..p_grid.len())
        .flat_map(|i| (0..theta2_grid.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<(f64, bool)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let p = p_grid[i];
            let sigma2 = 2.0 * theta2_grid[j];
            let p_eta: Vec<f64> = eta.iter().map(|e| p * e).collect();
            let op = assemble(x_min, x_max, dx, b.clone(), p_eta, sigma2);
            match sturm_lambda(&op, tol) {
                Ok((lambda, _)) => (lambda / p, true),
                Err(_) => (f64::NAN, false),
            }
        })
        .collect();

    Ok(SweepResult {
        p_grid: p_grid.to_vec(),
        theta2_grid: theta2_grid.to_vec(),
        j_over_p: results.iter().map(|r| r.0).collect(),
        converged: results.iter().map(|r| r.1).collect(),
    })
}
