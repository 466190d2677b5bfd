//! Euler-Maruyama simulation of the hybrid coupled pair.
//!
//! Both marginals solve the same SDE: the z block of the first process is
//! driven by `beta dB + sqrt(theta^2 - beta^2) dB'`, the second by the
//! reflected `beta (Id - 2 e e^T) dB + sqrt(theta^2 - beta^2) dB'`, and both
//! share `sigma_tilde dB''`. Per pair and step the draw order is fixed
//! (B' then B'' from the pair's main stream, B from its reflection stream),
//! so when beta is forced to zero the main-stream consumption matches the
//! plain engine exactly and the marginals reproduce the synchronous-coupling
//! trajectories bit for bit.

use rayon::prelude::*;

use crate::model::{DriftModel, StateDecomposition};
use crate::rng::{RngStream, REFLECTION_STREAM_BIT};
use crate::sde::{n_steps, DIVERGENCE_NORM};

use super::{ContractionConstants, CouplingError, CouplingFunctions, CouplingParams};

#[derive(Debug, Clone, Default)]
pub struct CouplingOptions {
    /// Force beta to a fixed value (diagnostics: 0 gives the synchronous
    /// coupling).
    pub beta_override: Option<f64>,
    /// Number of evenly spaced checkpoints (default 40).
    pub n_checkpoints: Option<usize>,
}

/// Per-checkpoint Monte Carlo means of f(R_t), g(S_t) and
/// omega(X_t, X_t') = max(|dX|, |dX|^p), with standard errors.
#[derive(Debug, Clone)]
pub struct CouplingTrace {
    pub times: Vec<f64>,
    pub mean_f_r: Vec<f64>,
    pub se_f_r: Vec<f64>,
    pub mean_g_s: Vec<f64>,
    pub se_g_s: Vec<f64>,
    pub mean_omega: Vec<f64>,
    pub se_omega: Vec<f64>,
    /// Max deviation of beta^2 (Id - 2ee^T)^2 + (theta^2 - beta^2) Id from
    /// theta^2 Id over all simulated steps.
    pub orthogonality_max_dev: f64,
    /// Steps where z = z' exactly while beta > 0, so the documented fallback
    /// direction (1, 0, ..., 0) entered the SDE.
    pub fallback_uses: u64,
    pub divergent_pairs: usize,
    pub n_pairs: usize,
}

struct PairOutcome {
    values: Vec<(f64, f64, f64)>,
    orth_dev: f64,
    fallback: u64,
    divergent: bool,
}

/// Simulate `n_pairs` coupled pairs from (x0, x0'), recording the trace at
/// evenly spaced checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupling(
    model: &DriftModel,
    decomp: &StateDecomposition,
    params: &CouplingParams,
    constants: &ContractionConstants,
    x0: &[f64],
    x0p: &[f64],
    t_max: f64,
    dt: f64,
    n_pairs: usize,
    seed: u64,
    options: &CouplingOptions,
) -> Result<CouplingTrace, CouplingError> {
    params.validate()?;
    let d = decomp.dim();
    if model.dim() != d || x0.len() != d || x0p.len() != d {
        return Err(CouplingError::InvalidArgument(
            "model/decomposition/initial-condition dimensions disagree".into(),
        ));
    }
    if !(t_max > 0.0) || !(dt > 0.0) || n_pairs == 0 {
        return Err(CouplingError::InvalidArgument(
            "T, dt and pair count must be positive".into(),
        ));
    }
    decomp.check_sigma(model)?;
    if params.m_block != decomp.m {
        return Err(CouplingError::InvalidArgument(
            "params.m_block disagrees with the decomposition".into(),
        ));
    }

    let funcs = CouplingFunctions::new(params, constants, decomp.n);
    let total_steps = n_steps(t_max, dt);
    let n_cp = options.n_checkpoints.unwrap_or(40).clamp(2, total_steps);
    let cp_steps: Vec<usize> = (1..=n_cp).map(|k| total_steps * k / n_cp).collect();

    let batch = 2048usize;
    let mut means = vec![[0.0f64; 3]; cp_steps.len()];
    let mut m2s = vec![[0.0f64; 3]; cp_steps.len()];
    let mut count = 0usize;
    let mut orth_dev = 0.0f64;
    let mut fallback = 0u64;
    let mut divergent_pairs = 0usize;

    let mut start = 0usize;
    while start < n_pairs {
        let end = (start + batch).min(n_pairs);
        let outcomes: Vec<PairOutcome> = (start..end)
            .into_par_iter()
            .map(|pair| {
                simulate_one_pair(
                    model, decomp, params, &funcs, x0, x0p, dt, &cp_steps, seed, pair as u64,
                    options,
                )
            })
            .collect();
        for out in outcomes {
            orth_dev = orth_dev.max(out.orth_dev);
            fallback += out.fallback;
            if out.divergent {
                divergent_pairs += 1;
                continue;
            }
            count += 1;
            for (ci, v) in out.values.iter().enumerate() {
                for k in 0..3 {
                    let sample = [v.0, v.1, v.2][k];
                    let delta = sample - means[ci][k];
                    means[ci][k] += delta / count as f64;
                    m2s[ci][k] += delta * (sample - means[ci][k]);
                }
            }
        }
        start = end;
    }
    if count == 0 {
        return Err(CouplingError::InvalidArgument(
            "all coupled pairs diverged".into(),
        ));
    }

    let se = |m2: f64| {
        if count > 1 {
            (m2 / (count as f64 - 1.0) / count as f64).sqrt()
        } else {
            0.0
        }
    };
    Ok(CouplingTrace {
        times: cp_steps.iter().map(|&s| s as f64 * dt).collect(),
        mean_f_r: means.iter().map(|m| m[0]).collect(),
        se_f_r: m2s.iter().map(|m| se(m[0])).collect(),
        mean_g_s: means.iter().map(|m| m[1]).collect(),
        se_g_s: m2s.iter().map(|m| se(m[1])).collect(),
        mean_omega: means.iter().map(|m| m[2]).collect(),
        se_omega: m2s.iter().map(|m| se(m[2])).collect(),
        orthogonality_max_dev: orth_dev,
        fallback_uses: fallback,
        divergent_pairs,
        n_pairs,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_one_pair(
    model: &DriftModel,
    decomp: &StateDecomposition,
    params: &CouplingParams,
    funcs: &CouplingFunctions,
    x0: &[f64],
    x0p: &[f64],
    dt: f64,
    cp_steps: &[usize],
    seed: u64,
    pair: u64,
    options: &CouplingOptions,
) -> PairOutcome {
    let n = decomp.n;
    let m = decomp.m;
    let d = n + m;
    let theta = params.theta;
    let p = params.p;
    let metric = &params.metric;
    let residual = decomp.sigma_residual.as_ref();
    let r_cols = residual.map_or(0, |s| s.ncols());

    let mut main = RngStream::new(seed, pair);
    let mut refl = RngStream::new(seed, pair | REFLECTION_STREAM_BIT);

    let mut x = x0.to_vec();
    let mut xp = x0p.to_vec();
    let mut bx = vec![0.0; d];
    let mut bxp = vec![0.0; d];
    let mut xi_refl = vec![0.0; m];
    let mut xi_prime = vec![0.0; m];
    let mut xi_dd = vec![0.0; r_cols];
    let mut e = vec![0.0; m];
    let sqdt = dt.sqrt();

    let mut values = Vec::with_capacity(cp_steps.len());
    let mut orth_dev = 0.0f64;
    let mut fallback = 0u64;
    let mut divergent = false;
    let mut next_cp = 0usize;

    let mut diff = vec![0.0; d];
    for step in 1..=*cp_steps.last().unwrap() {
        // fixed draw order: B' and B'' from the main stream, B from the
        // reflection stream; consumption never depends on the path
        main.fill_standard_normal(&mut xi_prime);
        if r_cols > 0 {
            main.fill_standard_normal(&mut xi_dd);
        }
        refl.fill_standard_normal(&mut xi_refl);

        if !divergent {
            let ynorm = block_dist(&x, &xp, 0, n);
            let znorm = block_dist(&x, &xp, n, d);
            let beta = options
                .beta_override
                .unwrap_or_else(|| funcs.beta_from_norms(ynorm, znorm));
            let beta = beta.clamp(0.0, theta);
            if znorm > 0.0 {
                for j in 0..m {
                    e[j] = (x[n + j] - xp[n + j]) / znorm;
                }
            } else {
                e.fill(0.0);
                e[0] = 1.0;
                if beta > 0.0 {
                    fallback += 1;
                }
            }

            // orthogonality of the reflected diffusion:
            // beta^2 (Id - 2ee^T)^2 + (theta^2 - beta^2) Id - theta^2 Id
            //   = 4 beta^2 (|e|^2 - 1) e e^T
            if beta > 0.0 {
                let e2: f64 = e.iter().map(|a| a * a).sum();
                let emax = e.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
                let dev = 4.0 * beta * beta * (e2 - 1.0).abs() * emax * emax;
                orth_dev = orth_dev.max(dev);
            }

            model.drift(&x, &mut bx);
            model.drift(&xp, &mut bxp);
            // at beta = 0 keep theta exactly so the synchronous marginal
            // reproduces the plain engine bit for bit
            let ortho = if beta == 0.0 {
                theta
            } else {
                (theta * theta - beta * beta).max(0.0).sqrt()
            };
            let edot: f64 = (0..m).map(|j| e[j] * xi_refl[j]).sum();

            for i in 0..n {
                x[i] += bx[i] * dt;
                xp[i] += bxp[i] * dt;
            }
            for j in 0..m {
                let shared = ortho * xi_prime[j];
                x[n + j] += bx[n + j] * dt + sqdt * (beta * xi_refl[j] + shared);
                xp[n + j] +=
                    bxp[n + j] * dt + sqdt * (beta * (xi_refl[j] - 2.0 * edot * e[j]) + shared);
            }
            if let Some(st) = residual {
                for i in 0..d {
                    let mut acc = 0.0;
                    for c in 0..r_cols {
                        acc += st[(i, c)] * xi_dd[c];
                    }
                    x[i] += sqdt * acc;
                    xp[i] += sqdt * acc;
                }
            }
            let ok = x
                .iter()
                .chain(xp.iter())
                .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_NORM);
            if !ok {
                divergent = true;
            }
        }

        while next_cp < cp_steps.len() && cp_steps[next_cp] == step {
            let ynorm = block_dist(&x, &xp, 0, n);
            let znorm = block_dist(&x, &xp, n, d);
            for i in 0..d {
                diff[i] = x[i] - xp[i];
            }
            let s_q = metric.q_norm(&diff);
            let dist: f64 = diff.iter().map(|a| a * a).sum::<f64>().sqrt();
            let omega = dist.max(dist.powf(p));
            values.push((funcs.f(funcs.r_of(ynorm, znorm)), funcs.g(s_q), omega));
            next_cp += 1;
        }
    }

    PairOutcome {
        values,
        orth_dev,
        fallback,
        divergent,
    }
}

fn block_dist(x: &[f64], xp: &[f64], from: usize, to: usize) -> f64 {
    x[from..to]
        .iter()
        .zip(&xp[from..to])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Least-squares exponential decay rate of `values` over the time window;
/// returns the rate (positive = decay), its standard error and the point
/// count used.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub rate: f64,
    pub std_error: f64,
    pub points: usize,
}

pub fn fit_decay_rate(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
) -> Result<DecayFit, CouplingError> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(CouplingError::InvalidArgument(
            "fewer than two positive points in the fit window".into(),
        ));
    }
    let nf = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.0 - tbar)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * tbar;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let se = if pts.len() > 2 {
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(DecayFit {
        rate: -slope,
        std_error: se,
        points: pts.len(),
    })
}
