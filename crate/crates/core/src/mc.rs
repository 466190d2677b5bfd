//! Monte Carlo estimation of the synchronous-coupling contraction
//! coefficient `kappa_p(t)`, the Feynman-Kac cumulant `G_p(x,t)`, the
//! Lyapunov exponent, and the theorem-backed property checks
//! (sub-multiplicativity, monotonicity in p, Bakry-Emery bound, short-time
//! slope).
//!
//! The supremum over initial conditions is taken over a finite grid: under
//! contraction at infinity the integrand is contracting outside a compact
//! set, so the sup is attained on one, and the grid must cover the
//! non-contractive region. A maximum attained on the grid edge is reported
//! as a warning rather than silently trusted. All estimators draw
//! per-trajectory noise from `(seed, trajectory index)` substreams and
//! reduce in index order, so results are bit-reproducible for any worker
//! count, and common random numbers are shared across grid points, orders
//! `p` and checkpoint times.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::DriftModel;
use crate::rng::RngStream;
use crate::sde::{integrate_tangent_matrix_checkpoints, n_steps, DIVERGENCE_NORM};

/// Clamp for exponential overflow in `G_p` estimates; saturated samples are
/// counted and reported, never silently dropped.
pub const EXP_CLAMP: f64 = 1e300;

/// Stream index used for direction sampling, outside the trajectory range.
const DIRECTION_STREAM: u64 = 1 << 62;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all paths diverged at grid point {grid_index}")]
    AllPathsDivergent { grid_index: usize },
}

/// Point estimate with standard error, sample count and the number of
/// divergence-excluded paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub enum DirectionStrategy {
    /// One fixed unit direction (1D: the sign is irrelevant).
    Fixed1d,
    /// Coordinate directions, `random_directions` uniform unit vectors, and
    /// `refine_steps` of power-iteration-style ascent of the MC objective.
    MultiD {
        random_directions: usize,
        refine_steps: usize,
    },
    /// Explicit unit directions.
    Explicit(Vec<Vec<f64>>),
}

impl Default for DirectionStrategy {
    fn default() -> Self {
        DirectionStrategy::MultiD {
            random_directions: 32,
            refine_steps: 10,
        }
    }
}

/// Finite search domain for the supremum over initial conditions and
/// directions.
#[derive(Debug, Clone)]
pub struct SupSearchSpec {
    pub grid: Vec<Vec<f64>>,
    pub directions: DirectionStrategy,
}

impl SupSearchSpec {
    /// 1D grid `lo..=hi` with the given step.
    pub fn grid_1d(lo: f64, hi: f64, step: f64) -> Self {
        let mut grid = Vec::new();
        let count = ((hi - lo) / step).round() as usize;
        for i in 0..=count {
            grid.push(vec![lo + step * i as f64]);
        }
        SupSearchSpec {
            grid,
            directions: DirectionStrategy::Fixed1d,
        }
    }

    /// The default 1D grid [-3, 3] with step 0.25.
    pub fn default_1d() -> Self {
        SupSearchSpec::grid_1d(-3.0, 3.0, 0.25)
    }

    pub fn single_point(x: Vec<f64>) -> Self {
        SupSearchSpec {
            grid: vec![x],
            directions: DirectionStrategy::default(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), McError> {
        if self.grid.is_empty() {
            return Err(McError::InvalidArgument("empty initial-condition grid".into()));
        }
        for x in &self.grid {
            if x.len() != dim {
                return Err(McError::InvalidArgument(format!(
                    "grid point of dimension {} for model of dimension {dim}",
                    x.len()
                )));
            }
        }
        if let DirectionStrategy::Explicit(vs) = &self.directions {
            for v in vs {
                if v.len() != dim {
                    return Err(McError::InvalidArgument("direction dimension mismatch".into()));
                }
                let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(McError::InvalidArgument(format!(
                        "direction norm {norm} not unit"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ------------------------------------------------------------------
// Tangent-flow ensemble shared by the kappa-type estimators
// ------------------------------------------------------------------

struct Ensemble {
    d: usize,
    n_paths: usize,
    checkpoint_steps: Vec<usize>,
    /// mats[grid][path * n_cp + cp] is a d*d row-major matrix.
    mats: Vec<Vec<Vec<f64>>>,
    diverged: Vec<Vec<bool>>,
}

fn simulate_ensemble(
    model: &DriftModel,
    grid: &[Vec<f64>],
    checkpoint_steps: &[usize],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Ensemble {
    let d = model.dim();
    let n_cp = checkpoint_steps.len();
    let mut mats = Vec::with_capacity(grid.len());
    let mut diverged = Vec::with_capacity(grid.len());
    for x0 in grid {
        let per_path: Vec<(Vec<Vec<f64>>, bool)> = (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = RngStream::new(seed, path as u64);
                let (ms, _ints, div) = integrate_tangent_matrix_checkpoints(
                    model,
                    x0,
                    checkpoint_steps,
                    dt,
                    &mut rng,
                );
                debug_assert_eq!(ms.len(), n_cp);
                let bad = div.is_some()
                    || ms
                        .iter()
                        .any(|m| m.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_NORM));
                (ms, bad)
            })
            .collect();
        let mut grid_mats = Vec::with_capacity(n_paths * n_cp);
        let mut grid_div = Vec::with_capacity(n_paths);
        for (ms, bad) in per_path {
            grid_mats.extend(ms);
            grid_div.push(bad);
        }
        mats.push(grid_mats);
        diverged.push(grid_div);
    }
    Ensemble {
        d,
        n_paths,
        checkpoint_steps: checkpoint_steps.to_vec(),
        mats,
        diverged,
    }
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += m[i * d + j] * v[j];
        }
        out[i] = acc;
    }
}

/// Mean and standard error of |Phi v|^p over the non-divergent paths of one
/// grid point at one checkpoint (Welford, path-index order).
fn moment_p(ens: &Ensemble, grid_idx: usize, cp_idx: usize, v: &[f64], p: f64) -> (f64, f64, usize) {
    let d = ens.d;
    let n_cp = ens.checkpoint_steps.len();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut count = 0usize;
    let mut tmp = vec![0.0; d];
    for path in 0..ens.n_paths {
        if ens.diverged[grid_idx][path] {
            continue;
        }
        let m = &ens.mats[grid_idx][path * n_cp + cp_idx];
        mat_vec(m, v, &mut tmp);
        let norm: f64 = tmp.iter().map(|a| a * a).sum::<f64>().sqrt();
        let sample = norm.powf(p);
        count += 1;
        let delta = sample - mean;
        mean += delta / count as f64;
        m2 += delta * (sample - mean);
    }
    if count == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let var = if count > 1 { m2 / (count as f64 - 1.0) } else { 0.0 };
    (mean, (var / count as f64).sqrt(), count)
}

fn directions_for(ens: &Ensemble, strategy: &DirectionStrategy, seed: u64) -> Vec<Vec<f64>> {
    let d = ens.d;
    match strategy {
        DirectionStrategy::Fixed1d => vec![vec![1.0; 1]],
        DirectionStrategy::Explicit(vs) => vs.clone(),
        DirectionStrategy::MultiD {
            random_directions, ..
        } => {
            let mut out = Vec::new();
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                out.push(e);
            }
            let mut rng = RngStream::new(seed, DIRECTION_STREAM);
            for _ in 0..*random_directions {
                let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
                let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    for a in &mut v {
                        *a /= norm;
                    }
                    out.push(v);
                }
            }
            out
        }
    }
}

/// Power-iteration-style ascent of v -> mean |Phi v|^p on a fixed ensemble.
fn refine_direction(
    ens: &Ensemble,
    grid_idx: usize,
    cp_idx: usize,
    v0: &[f64],
    p: f64,
    steps: usize,
) -> Vec<f64> {
    let d = ens.d;
    let n_cp = ens.checkpoint_steps.len();
    let mut v = v0.to_vec();
    let mut phi_v = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..steps {
        grad.fill(0.0);
        for path in 0..ens.n_paths {
            if ens.diverged[grid_idx][path] {
                continue;
            }
            let m = &ens.mats[grid_idx][path * n_cp + cp_idx];
            mat_vec(m, &v, &mut phi_v);
            let norm: f64 = phi_v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm <= 0.0 {
                continue;
            }
            let w = norm.powf(p - 2.0);
            // Phi^T (Phi v) |Phi v|^{p-2}
            for i in 0..d {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += m[r * d + i] * phi_v[r];
                }
                grad[i] += w * acc;
            }
        }
        let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            break;
        }
        for i in 0..d {
            v[i] = grad[i] / norm;
        }
    }
    v
}

#[derive(Debug, Clone)]
pub struct KappaReport {
    pub estimate: McEstimate,
    pub argmax_x: Vec<f64>,
    pub argmax_v: Vec<f64>,
    /// The maximizing grid point sits on the grid boundary; the truncated
    /// supremum may not have converged.
    pub edge_warning: bool,
}

fn kappa_from_ensemble(
    ens: &Ensemble,
    spec: &SupSearchSpec,
    cp_idx: usize,
    p: f64,
    seed: u64,
) -> Result<KappaReport, McError> {
    let mut dirs = directions_for(ens, &spec.directions, seed);
    let refine_steps = match &spec.directions {
        DirectionStrategy::MultiD { refine_steps, .. } => *refine_steps,
        _ => 0,
    };
    let mut best: Option<(f64, f64, usize, usize, Vec<f64>)> = None;
    for (gi, _x) in spec.grid.iter().enumerate() {
        if refine_steps > 0 {
            let mut extra = Vec::new();
            for v in &dirs {
                extra.push(refine_direction(ens, gi, cp_idx, v, p, refine_steps));
            }
            dirs.extend(extra);
        }
        for v in &dirs {
            let (mean, se, count) = moment_p(ens, gi, cp_idx, v, p);
            if count == 0 {
                return Err(McError::AllPathsDivergent { grid_index: gi });
            }
            // kappa = mean^{1/p}; delta-method standard error
            let value = mean.powf(1.0 / p);
            let std_error = if mean > 0.0 {
                se * value / (p * mean)
            } else {
                0.0
            };
            let excluded = ens.n_paths - count;
            if best.as_ref().is_none_or(|b| value > b.0) {
                best = Some((value, std_error, excluded, gi, v.clone()));
            }
        }
        dirs.truncate(match &spec.directions {
            DirectionStrategy::Fixed1d => 1,
            DirectionStrategy::Explicit(vs) => vs.len(),
            DirectionStrategy::MultiD {
                random_directions, ..
            } => ens.d + random_directions,
        });
    }
    let (value, std_error, excluded, gi, v) = best.expect("non-empty grid");
    let edge = spec.grid.len() > 1 && (gi == 0 || gi == spec.grid.len() - 1);
    Ok(KappaReport {
        estimate: McEstimate {
            value,
            std_error,
            n: ens.n_paths,
            excluded,
        },
        argmax_x: spec.grid[gi].clone(),
        argmax_v: v,
        edge_warning: edge,
    })
}

/// Estimate `kappa_p(t) = sup_{x,v} (E_x |Phi_t v|^p)^{1/p}` over the finite
/// search spec by `n_paths` tangent-flow trajectories per grid point.
pub fn estimate_kappa_p(
    model: &DriftModel,
    p: f64,
    t: f64,
    spec: &SupSearchSpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<KappaReport, McError> {
    if !(t > 0.0) || !(dt > 0.0) {
        return Err(McError::InvalidArgument("t and dt must be > 0".into()));
    }
    if n_paths < 100 {
        return Err(McError::InvalidArgument("need at least 100 paths".into()));
    }
    if !(p >= 1.0) {
        return Err(McError::InvalidArgument("p must be >= 1".into()));
    }
    spec.validate(model.dim())?;
    let ens = simulate_ensemble(model, &spec.grid, &[n_steps(t, dt)], n_paths, dt, seed);
    kappa_from_ensemble(&ens, spec, 0, p, seed)
}

// ------------------------------------------------------------------
// G_p estimation
// ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GpEstimate {
    pub estimate: McEstimate,
    /// Samples clamped at [`EXP_CLAMP`].
    pub saturated: usize,
    /// ln(mean)/t, the finite-time growth-rate proxy for J(p eta).
    pub log_mean_over_t: f64,
}

/// Empirical mean of `exp(p * int_0^t eta(X_s) ds)` over paths started at x.
pub fn estimate_gp(
    model: &DriftModel,
    p: f64,
    x0: &[f64],
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<GpEstimate, McError> {
    if !(t > 0.0) || !(dt > 0.0) {
        return Err(McError::InvalidArgument("t and dt must be > 0".into()));
    }
    let steps = n_steps(t, dt);
    let d = model.dim();
    let k = model.noise_cols();
    if x0.len() != d {
        return Err(McError::InvalidArgument("x0 dimension mismatch".into()));
    }

    // lean per-path loop: state + trapezoid eta integral, no tangent
    let samples: Vec<(f64, bool, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = RngStream::new(seed, path as u64);
            let mut x = x0.to_vec();
            let mut b = vec![0.0; d];
            let mut xi = vec![0.0; k];
            let sigma = model.sigma();
            let sqdt = dt.sqrt();
            let mut acc = 0.0f64;
            let mut eta_old = model.eta(&x);
            let mut divergent = false;
            for _ in 0..steps {
                rng.fill_standard_normal(&mut xi);
                if divergent {
                    continue;
                }
                model.drift(&x, &mut b);
                for i in 0..d {
                    let mut noise = 0.0;
                    for j in 0..k {
                        noise += sigma[i * k + j] * xi[j];
                    }
                    x[i] += b[i] * dt + sqdt * noise;
                }
                if !x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_NORM) {
                    divergent = true;
                    continue;
                }
                let eta_new = model.eta(&x);
                acc += 0.5 * dt * (eta_old + eta_new);
                eta_old = eta_new;
            }
            let raw = (p * acc).exp();
            let saturated = raw > EXP_CLAMP;
            (if saturated { EXP_CLAMP } else { raw }, divergent, saturated)
        })
        .collect();

    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut count = 0usize;
    let mut saturated = 0usize;
    for &(sample, divergent, sat) in &samples {
        if divergent {
            continue;
        }
        if sat {
            saturated += 1;
        }
        count += 1;
        let delta = sample - mean;
        mean += delta / count as f64;
        m2 += delta * (sample - mean);
    }
    if count == 0 {
        return Err(McError::AllPathsDivergent { grid_index: 0 });
    }
    let var = if count > 1 { m2 / (count as f64 - 1.0) } else { 0.0 };
    let t_eff = steps as f64 * dt;
    Ok(GpEstimate {
        estimate: McEstimate {
            value: mean,
            std_error: (var / count as f64).sqrt(),
            n: n_paths,
            excluded: n_paths - count,
        },
        saturated,
        log_mean_over_t: mean.ln() / t_eff,
    })
}

// ------------------------------------------------------------------
// Lyapunov exponent
// ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LyapunovReport {
    pub slope: McEstimate,
    /// (t, kappa_hat, stderr) at every checkpoint, for convergence review.
    pub checkpoints: Vec<(f64, f64, f64)>,
    /// Fit residuals exceed three propagated standard errors.
    pub warn_nonconvergence: bool,
}

/// Slope of `ln kappa_p(t)` over the second half of [0, T], least squares on
/// evenly spaced checkpoints.
pub fn estimate_lyapunov(
    model: &DriftModel,
    p: f64,
    t_max: f64,
    spec: &SupSearchSpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<LyapunovReport, McError> {
    if !(t_max > 0.0) || !(dt > 0.0) {
        return Err(McError::InvalidArgument("T and dt must be > 0".into()));
    }
    spec.validate(model.dim())?;
    let n_cp = 8usize;
    let total_steps = n_steps(t_max, dt);
    let mut cp_steps: Vec<usize> = (1..=n_cp)
        .map(|k| (total_steps * k / n_cp).max(1))
        .collect();
    cp_steps.dedup();
    let ens = simulate_ensemble(model, &spec.grid, &cp_steps, n_paths, dt, seed);

    let mut checkpoints = Vec::with_capacity(cp_steps.len());
    for (ci, &s) in cp_steps.iter().enumerate() {
        let rep = kappa_from_ensemble(&ens, spec, ci, p, seed)?;
        checkpoints.push((s as f64 * dt, rep.estimate.value, rep.estimate.std_error));
    }

    // least squares on ln kappa over the second half
    let half = t_max * 0.5 - 1e-12;
    let pts: Vec<(f64, f64, f64)> = checkpoints
        .iter()
        .filter(|(t, k, _)| *t >= half && *k > 0.0)
        .map(|&(t, k, se)| (t, k.ln(), se / k))
        .collect();
    if pts.len() < 2 {
        return Err(McError::InvalidArgument(
            "fewer than two usable checkpoints in the second half".into(),
        ));
    }
    let nf = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.0 - tbar)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    // propagated MC error plus residual-based error, whichever is larger
    let var_prop: f64 = pts
        .iter()
        .map(|p| ((p.0 - tbar) / sxx) * ((p.0 - tbar) / sxx) * p.2 * p.2)
        .sum();
    let intercept = ybar - slope * tbar;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let var_res = if pts.len() > 2 {
        ss_res / (nf - 2.0) / sxx
    } else {
        0.0
    };
    let warn = pts.iter().any(|p| {
        let r = (p.1 - (intercept + slope * p.0)).abs();
        r > 3.0 * p.2 + 1e-3
    });
    let excluded = ens
        .diverged
        .iter()
        .map(|g| g.iter().filter(|d| **d).count())
        .max()
        .unwrap_or(0);
    Ok(LyapunovReport {
        slope: McEstimate {
            value: slope,
            std_error: var_prop.max(var_res).sqrt(),
            n: n_paths,
            excluded,
        },
        checkpoints,
        warn_nonconvergence: warn,
    })
}

// ------------------------------------------------------------------
// Theorem-backed property checks
// ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SubmultReport {
    pub kappa_t_plus_s: McEstimate,
    pub kappa_t: McEstimate,
    pub kappa_s: McEstimate,
    pub lhs: f64,
    pub rhs: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// kappa_p(t+s) <= kappa_p(t) kappa_p(s) within 3 combined standard errors;
/// the three estimates share paths (common random numbers).
pub fn check_submultiplicativity(
    model: &DriftModel,
    p: f64,
    t: f64,
    s: f64,
    spec: &SupSearchSpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<SubmultReport, McError> {
    if !(t > 0.0) || !(s > 0.0) {
        return Err(McError::InvalidArgument("t and s must be > 0".into()));
    }
    spec.validate(model.dim())?;
    let mut cp_steps = vec![n_steps(s, dt), n_steps(t, dt), n_steps(t + s, dt)];
    cp_steps.sort_unstable();
    cp_steps.dedup();
    let ens = simulate_ensemble(model, &spec.grid, &cp_steps, n_paths, dt, seed);
    let find = |steps: usize| cp_steps.iter().position(|&c| c == steps).unwrap();
    let k_s = kappa_from_ensemble(&ens, spec, find(n_steps(s, dt)), p, seed)?;
    let k_t = kappa_from_ensemble(&ens, spec, find(n_steps(t, dt)), p, seed)?;
    let k_ts = kappa_from_ensemble(&ens, spec, find(n_steps(t + s, dt)), p, seed)?;
    let lhs = k_ts.estimate.value;
    let rhs = k_t.estimate.value * k_s.estimate.value;
    let combined_se = k_ts.estimate.std_error
        + k_t.estimate.value * k_s.estimate.std_error
        + k_s.estimate.value * k_t.estimate.std_error;
    Ok(SubmultReport {
        lhs,
        rhs,
        combined_se,
        pass: lhs <= rhs + 3.0 * combined_se,
        kappa_t_plus_s: k_ts.estimate,
        kappa_t: k_t.estimate,
        kappa_s: k_s.estimate,
    })
}

#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub values: Vec<(f64, McEstimate)>,
    pub pass: bool,
}

/// kappa_p non-decreasing in p at fixed t, with common random numbers
/// across p (the empirical L^p norms of a shared sample are monotone).
pub fn check_monotone_p(
    model: &DriftModel,
    t: f64,
    p_list: &[f64],
    spec: &SupSearchSpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MonotoneReport, McError> {
    if p_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(McError::InvalidArgument("p-list must be sorted ascending".into()));
    }
    spec.validate(model.dim())?;
    let ens = simulate_ensemble(model, &spec.grid, &[n_steps(t, dt)], n_paths, dt, seed);
    let mut values = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let rep = kappa_from_ensemble(&ens, spec, 0, p, seed)?;
        values.push((p, rep.estimate));
    }
    let pass = values.windows(2).all(|w| {
        w[1].1.value >= w[0].1.value - 3.0 * (w[0].1.std_error + w[1].1.std_error)
    });
    Ok(MonotoneReport { values, pass })
}

#[derive(Debug, Clone)]
pub struct BakryEmeryReport {
    pub lambda_star: f64,
    pub kappa: McEstimate,
    pub bound: f64,
    pub bound_pass: bool,
    /// Fitted quadratic coefficient of the short-time defect
    /// kappa(t) - (1 - lambda* t).
    pub short_time_c: f64,
    pub short_time_pass: bool,
    pub short_time_points: Vec<(f64, f64, f64)>,
}

/// Bakry-Emery bound `kappa_p(t) <= exp(-lambda* t)` within 3 SE, plus the
/// short-time expansion `kappa_p(t) = 1 - lambda* t + O(t^2)` on t <= 0.05.
pub fn check_bakry_emery(
    model: &DriftModel,
    p: f64,
    t: f64,
    spec: &SupSearchSpec,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<BakryEmeryReport, McError> {
    spec.validate(model.dim())?;
    let lambda_star = model.bakry_emery().unwrap_or_else(|| {
        -spec
            .grid
            .iter()
            .map(|x| model.eta(x))
            .fold(f64::NEG_INFINITY, f64::max)
    });

    let rep = estimate_kappa_p(model, p, t, spec, n_paths, dt, seed)?;
    let bound = (-lambda_star * t).exp();
    let bound_pass = rep.estimate.value <= bound + 3.0 * rep.estimate.std_error;

    // short-time slope on a small-t grid
    let ts = [0.0125, 0.025, 0.0375, 0.05];
    let cp_steps: Vec<usize> = ts.iter().map(|&tt| n_steps(tt, dt)).collect();
    let ens = simulate_ensemble(model, &spec.grid, &cp_steps, n_paths, dt, seed);
    let mut pts = Vec::new();
    for (ci, &steps) in cp_steps.iter().enumerate() {
        let k = kappa_from_ensemble(&ens, spec, ci, p, seed)?;
        let tt = steps as f64 * dt;
        pts.push((tt, k.estimate.value, k.estimate.std_error));
    }
    // defect D(t) = kappa - (1 - lambda* t) fitted as C t^2
    let num: f64 = pts
        .iter()
        .map(|&(tt, k, _)| (k - (1.0 - lambda_star * tt)) * tt * tt)
        .sum();
    let den: f64 = pts.iter().map(|&(tt, _, _)| tt.powi(4)).sum();
    let c = num / den;
    // residuals must be explained by MC error plus a cubic-term allowance
    let short_pass = pts.iter().all(|&(tt, k, se)| {
        let d = k - (1.0 - lambda_star * tt);
        (d - c * tt * tt).abs() <= 3.0 * se + 0.25 * c.abs() * tt * tt + 1e-9
    });
    Ok(BakryEmeryReport {
        lambda_star,
        kappa: rep.estimate,
        bound,
        bound_pass,
        short_time_c: c,
        short_time_pass: short_pass,
        short_time_points: pts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ornstein_uhlenbeck;

    #[test]
    fn ou_kappa_is_exp_minus_t() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let spec = SupSearchSpec::grid_1d(-1.0, 1.0, 0.5);
        for p in [1.0, 2.0, 3.0] {
            let rep = estimate_kappa_p(&model, p, 1.0, &spec, 200, 1e-3, 7).unwrap();
            assert!(
                (rep.estimate.value - (-1.0f64).exp()).abs() < 1e-3,
                "kappa {} at p={p}",
                rep.estimate.value
            );
            // tangent flow of a linear drift is deterministic
            assert!(rep.estimate.std_error < 1e-12);
        }
    }

    #[test]
    fn gp_constant_eta_zero_variance() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let g = estimate_gp(&model, 2.0, &[0.5], 1.0, 200, 1e-3, 3).unwrap();
        assert!((g.estimate.value - (-2.0f64).exp()).abs() < 1e-10);
        assert!(g.estimate.std_error < 1e-14);
        assert_eq!(g.saturated, 0);
    }

    #[test]
    fn estimates_are_bit_reproducible() {
        let u = crate::expr::ScalarExpr::parse("x^2 + 2*exp(-x^2)", &Default::default()).unwrap();
        let model = crate::model::overdamped_1d(&u, 1.0).unwrap();
        let spec = SupSearchSpec::grid_1d(-2.0, 2.0, 1.0);
        let a = estimate_kappa_p(&model, 2.0, 0.5, &spec, 300, 1e-2, 99).unwrap();
        let b = estimate_kappa_p(&model, 2.0, 0.5, &spec, 300, 1e-2, 99).unwrap();
        assert_eq!(a.estimate.value.to_bits(), b.estimate.value.to_bits());
        assert_eq!(a.estimate.std_error.to_bits(), b.estimate.std_error.to_bits());
    }

    #[test]
    fn rejects_tiny_sample() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let spec = SupSearchSpec::default_1d();
        assert!(estimate_kappa_p(&model, 1.0, 1.0, &spec, 50, 1e-2, 0).is_err());
    }

    #[test]
    fn lyapunov_ou_is_minus_one() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let spec = SupSearchSpec::grid_1d(-1.0, 1.0, 1.0);
        let rep = estimate_lyapunov(&model, 2.0, 4.0, &spec, 150, 1e-3, 5).unwrap();
        assert!((rep.slope.value + 1.0).abs() < 1e-2, "slope {}", rep.slope.value);
        assert!(!rep.warn_nonconvergence);
    }

    #[test]
    fn submult_trivial_zero_drift() {
        let model = crate::model::DriftModel::new(
            1,
            vec![1.0],
            1,
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
            std::sync::Arc::new(|_: &[f64]| 0.0),
            0.0,
        )
        .unwrap();
        let spec = SupSearchSpec::grid_1d(-1.0, 1.0, 1.0);
        let rep = check_submultiplicativity(&model, 2.0, 1.0, 1.0, &spec, 200, 1e-2, 1).unwrap();
        assert!(rep.pass);
        assert!((rep.lhs - 1.0).abs() < 1e-12);
        assert!((rep.rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_requires_sorted_p() {
        let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
        let spec = SupSearchSpec::default_1d();
        assert!(check_monotone_p(&model, 1.0, &[2.0, 1.0], &spec, 200, 1e-2, 0).is_err());
    }
}
