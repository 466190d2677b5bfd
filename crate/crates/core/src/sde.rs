//! Euler-Maruyama time stepping of the SDE, its tangent flow, and
//! synchronous coupling of pairs.
//!
//! Scheme: explicit Euler-Maruyama for the state, explicit Euler for the
//! tangent with the Jacobian frozen at the step start, trapezoid rule for
//! the running curvature integral on the same grid. A path whose sup-norm
//! exceeds [`DIVERGENCE_NORM`] (or turns non-finite) is flagged divergent
//! and no longer advanced; estimators exclude it and report the count.

use thiserror::Error;

use crate::model::DriftModel;
use crate::rng::RngStream;

/// Divergence guard threshold on the state sup-norm.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Default step size.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all {0} paths diverged")]
    AllPathsDivergent(usize),
}

/// State of one trajectory, optionally carrying a tangent vector or the full
/// tangent matrix and the running integral of the curvature bound.
#[derive(Debug, Clone)]
pub struct PathState {
    pub t: f64,
    pub x: Vec<f64>,
    pub tangent_vec: Option<Vec<f64>>,
    /// Row-major d x d; starts at the identity.
    pub tangent_mat: Option<Vec<f64>>,
    pub eta_integral: Option<f64>,
    pub divergent: bool,
}

impl PathState {
    pub fn new(x: Vec<f64>) -> Self {
        PathState {
            t: 0.0,
            x,
            tangent_vec: None,
            tangent_mat: None,
            eta_integral: None,
            divergent: false,
        }
    }

    pub fn with_tangent_vec(mut self, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.x.len());
        self.tangent_vec = Some(v);
        self
    }

    pub fn with_tangent_matrix(mut self) -> Self {
        let d = self.x.len();
        let mut id = vec![0.0; d * d];
        for i in 0..d {
            id[i * d + i] = 1.0;
        }
        self.tangent_mat = Some(id);
        self
    }

    pub fn with_eta_integral(mut self) -> Self {
        self.eta_integral = Some(0.0);
        self
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

fn finite_and_bounded(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_NORM)
}

/// Reusable stepping scratch for one model.
pub struct Stepper<'m> {
    model: &'m DriftModel,
    b: Vec<f64>,
    jac: Vec<f64>,
    xi: Vec<f64>,
    tmp: Vec<f64>,
    eta_at_x: f64,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m DriftModel) -> Self {
        let d = model.dim();
        Stepper {
            model,
            b: vec![0.0; d],
            jac: vec![0.0; d * d],
            xi: vec![0.0; model.noise_cols()],
            tmp: vec![0.0; d * d],
            eta_at_x: f64::NAN,
        }
    }

    /// Prime the trapezoid cache of eta at the current state.
    pub fn start(&mut self, s: &PathState) {
        if s.eta_integral.is_some() {
            self.eta_at_x = self.model.eta(&s.x);
        }
    }

    /// One Euler-Maruyama step; noise is drawn exactly once per call.
    pub fn step(&mut self, s: &mut PathState, dt: f64, rng: &mut RngStream) {
        let d = self.model.dim();
        rng.fill_standard_normal(&mut self.xi);
        if s.divergent {
            return;
        }
        self.model.drift(&s.x, &mut self.b);

        let need_jac = s.tangent_vec.is_some() || s.tangent_mat.is_some();
        if need_jac {
            self.model.jacobian(&s.x, &mut self.jac);
        }

        let sqdt = dt.sqrt();
        let sigma = self.model.sigma();
        let k = self.model.noise_cols();
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..k {
                noise += sigma[i * k + j] * self.xi[j];
            }
            s.x[i] += self.b[i] * dt + sqdt * noise;
        }

        if let Some(v) = &mut s.tangent_vec {
            let tmp = &mut self.tmp[..d];
            for (i, ti) in tmp.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += self.jac[i * d + j] * v[j];
                }
                *ti = acc;
            }
            for i in 0..d {
                v[i] += dt * tmp[i];
            }
        }
        if let Some(phi) = &mut s.tangent_mat {
            let tmp = &mut self.tmp;
            for i in 0..d {
                for c in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += self.jac[i * d + j] * phi[j * d + c];
                    }
                    tmp[i * d + c] = acc;
                }
            }
            for (p, t) in phi.iter_mut().zip(tmp.iter()) {
                *p += dt * t;
            }
        }

        s.t += dt;
        if !finite_and_bounded(&s.x) {
            s.divergent = true;
            return;
        }
        if let Some(acc) = &mut s.eta_integral {
            let eta_new = self.model.eta(&s.x);
            *acc += 0.5 * dt * (self.eta_at_x + eta_new);
            self.eta_at_x = eta_new;
        }
    }
}

/// One Euler-Maruyama step (allocating convenience wrapper).
pub fn em_step(model: &DriftModel, s: &PathState, dt: f64, rng: &mut RngStream) -> PathState {
    let mut out = s.clone();
    let mut stepper = Stepper::new(model);
    stepper.start(&out);
    stepper.step(&mut out, dt, rng);
    out
}

pub fn n_steps(t: f64, dt: f64) -> usize {
    ((t / dt).round() as usize).max(1)
}

/// Two trajectories driven by the same Brownian increments.
pub fn integrate_pair(
    model: &DriftModel,
    x0: &[f64],
    y0: &[f64],
    t_max: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<(PathState, PathState), SdeError> {
    if !(t_max > 0.0) || !(dt > 0.0) {
        return Err(SdeError::InvalidArgument("T and dt must be > 0".into()));
    }
    let mut xs = PathState::new(x0.to_vec());
    let mut ys = PathState::new(y0.to_vec());
    let mut sx = Stepper::new(model);
    let mut sy = Stepper::new(model);
    let steps = n_steps(t_max, dt);
    let k = model.noise_cols();
    let mut xi = vec![0.0; k];
    let sqdt = dt.sqrt();
    let sigma = model.sigma();
    let d = model.dim();
    for _ in 0..steps {
        // shared noise, consumed exactly once and applied to both
        rng.fill_standard_normal(&mut xi);
        for (state, st) in [(&mut xs, &mut sx), (&mut ys, &mut sy)] {
            if state.divergent {
                continue;
            }
            model.drift(&state.x, &mut st.b);
            for i in 0..d {
                let mut noise = 0.0;
                for j in 0..k {
                    noise += sigma[i * k + j] * xi[j];
                }
                state.x[i] += st.b[i] * dt + sqdt * noise;
            }
            state.t += dt;
            if !finite_and_bounded(&state.x) {
                state.divergent = true;
            }
        }
    }
    Ok((xs, ys))
}

/// Tangent flow along one path: terminal state, terminal tangent vector and
/// the running integral of eta along the same path.
pub fn integrate_tangent(
    model: &DriftModel,
    x0: &[f64],
    v0: &[f64],
    t_max: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<PathState, SdeError> {
    if !(t_max > 0.0) || !(dt > 0.0) {
        return Err(SdeError::InvalidArgument("T and dt must be > 0".into()));
    }
    let norm: f64 = v0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(SdeError::InvalidArgument(format!(
            "|v0| must be 1 (got {norm})"
        )));
    }
    let mut s = PathState::new(x0.to_vec())
        .with_tangent_vec(v0.to_vec())
        .with_eta_integral();
    let mut stepper = Stepper::new(model);
    stepper.start(&s);
    for _ in 0..n_steps(t_max, dt) {
        stepper.step(&mut s, dt, rng);
    }
    Ok(s)
}

/// Full tangent matrix recorded at checkpoint step indices (sorted,
/// 1-based in steps). Returns the matrices, the eta integrals at the same
/// checkpoints, and the step index at which the path diverged, if any.
pub fn integrate_tangent_matrix_checkpoints(
    model: &DriftModel,
    x0: &[f64],
    checkpoint_steps: &[usize],
    dt: f64,
    rng: &mut RngStream,
) -> (Vec<Vec<f64>>, Vec<f64>, Option<usize>) {
    let mut s = PathState::new(x0.to_vec())
        .with_tangent_matrix()
        .with_eta_integral();
    let mut stepper = Stepper::new(model);
    stepper.start(&s);
    let total = checkpoint_steps.last().copied().unwrap_or(0);
    let mut mats = Vec::with_capacity(checkpoint_steps.len());
    let mut integrals = Vec::with_capacity(checkpoint_steps.len());
    let mut diverged_at = None;
    let mut next = 0usize;
    for step in 1..=total {
        stepper.step(&mut s, dt, rng);
        if s.divergent && diverged_at.is_none() {
            diverged_at = Some(step);
        }
        while next < checkpoint_steps.len() && checkpoint_steps[next] == step {
            mats.push(s.tangent_mat.clone().expect("tangent matrix tracked"));
            integrals.push(s.eta_integral.unwrap_or(0.0));
            next += 1;
        }
    }
    (mats, integrals, diverged_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ornstein_uhlenbeck;

    #[test]
    fn ou_zero_noise_explicit_euler_step() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let s = PathState::new(vec![1.0]).with_tangent_vec(vec![1.0]);
        let mut rng = RngStream::zero();
        let out = em_step(&model, &s, 0.01, &mut rng);
        assert!((out.x[0] - 0.99).abs() < 1e-15);
        assert!((out.tangent_vec.as_ref().unwrap()[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_drift_keeps_tangent_and_moves_state() {
        let model = crate::model::DriftModel::new(
            1,
            vec![1.0],
            1,
            std::sync::Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 0.0),
            std::sync::Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 0.0),
            std::sync::Arc::new(|_x: &[f64]| 0.0),
            0.0,
        )
        .unwrap();
        let s = PathState::new(vec![0.0]).with_tangent_vec(vec![1.0]);
        let mut rng = RngStream::new(1, 0);
        let out = em_step(&model, &s, 0.5, &mut rng);
        assert_eq!(out.tangent_vec.as_ref().unwrap()[0], 1.0);
        assert_ne!(out.x[0], 0.0);
    }

    #[test]
    fn synchronous_pair_ou_contracts_exactly() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let dt = 0.01;
        let t = 1.0;
        let mut rng = RngStream::new(42, 7);
        let (xs, ys) = integrate_pair(&model, &[1.0], &[-0.5], t, dt, &mut rng).unwrap();
        let expected = (1.0f64 - dt).powi(n_steps(t, dt) as i32) * 1.5;
        assert!(((xs.x[0] - ys.x[0]).abs() - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_initial_conditions_stay_identical() {
        let u = crate::expr::ScalarExpr::parse("x^4/4 - x^2/2", &Default::default()).unwrap();
        let model = crate::model::overdamped_1d(&u, 0.8).unwrap();
        let mut rng = RngStream::new(3, 11);
        let (xs, ys) = integrate_pair(&model, &[0.1], &[0.1], 2.0, 1e-3, &mut rng).unwrap();
        assert_eq!(xs.x[0].to_bits(), ys.x[0].to_bits());
    }

    #[test]
    fn tangent_requires_unit_direction() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(integrate_tangent(&model, &[0.0], &[2.0], 1.0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn ou_tangent_matches_scheme_decay() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let mut rng = RngStream::new(5, 1);
        let dt = 1e-3;
        let s = integrate_tangent(&model, &[0.3], &[1.0], 1.0, dt, &mut rng).unwrap();
        let expected = (1.0f64 - dt).powi(1000);
        assert!((s.tangent_vec.as_ref().unwrap()[0] - expected).abs() < 1e-12);
        // eta = -1 constant, trapezoid integral is exact
        assert!((s.eta_integral.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_guard_flags_blowup() {
        // dx = x^3 dt explodes under Euler with large dt
        let model = crate::model::DriftModel::new(
            1,
            vec![0.0],
            1,
            std::sync::Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * x[0]),
            std::sync::Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 3.0 * x[0] * x[0]),
            std::sync::Arc::new(|x: &[f64]| 3.0 * x[0] * x[0]),
            0.0,
        )
        .unwrap();
        let mut s = PathState::new(vec![10.0]);
        let mut stepper = Stepper::new(&model);
        let mut rng = RngStream::zero();
        for _ in 0..200 {
            stepper.step(&mut s, 1.0, &mut rng);
        }
        assert!(s.divergent);
    }

    #[test]
    fn pathwise_identity_tangent_vs_exp_integral_shared_discretization() {
        // |V_T| versus exp(sum log|1 + b'(x_k) dt|): algebraically the same
        // product, accumulated two ways along the same path.
        let u = crate::expr::ScalarExpr::parse("x^2 + 2*exp(-x^2)", &Default::default()).unwrap();
        let model = crate::model::overdamped_1d(&u, 1.0).unwrap();
        let dt = 1e-3;
        for path in 0..20 {
            let mut rng = RngStream::new(900, path);
            let mut s = PathState::new(vec![0.5]).with_tangent_vec(vec![1.0]);
            let mut stepper = Stepper::new(&model);
            let mut log_acc = 0.0f64;
            let mut jac = [0.0f64];
            for _ in 0..2000 {
                model.jacobian(&s.x, &mut jac);
                log_acc += (1.0 + jac[0] * dt).abs().ln();
                stepper.step(&mut s, dt, &mut rng);
            }
            let v = s.tangent_vec.as_ref().unwrap()[0].abs();
            let e = log_acc.exp();
            assert!(
                (v - e).abs() <= 1e-8 * e,
                "path {path}: {v} vs {e}"
            );
        }
    }
}
