//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Tolerances are pinned here, not calibrated elsewhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use contraction_core::coupling::{
    certify_rho_prime, compute_constants, elliptic_mass_bound, eta_bar_construct, f_eval,
    f_prime_eval, fit_decay_rate, g_eval, kinetic_kappa_inf_rate, kinetic_matrix,
    simulate_coupling, CouplingOptions, CouplingParams, RhoPrimeInputs,
};
use contraction_core::expr::ScalarExpr;
use contraction_core::fk::{build_operator, leading_eigenvalue, linspace, sweep, OverdampedFamily};
use contraction_core::mc::{
    check_bakry_emery, check_monotone_p, check_submultiplicativity, estimate_gp,
    estimate_kappa_p, SupSearchSpec,
};
use contraction_core::model::{
    ornstein_uhlenbeck, overdamped_1d, ColoredNoiseModel, DriftModel, MetricChange,
    StateDecomposition,
};
use contraction_core::rng::RngStream;
use contraction_core::sde::{n_steps, PathState, Stepper};
use nalgebra::DMatrix;

fn u_potential(a: f64) -> ScalarExpr {
    let mut params = BTreeMap::new();
    params.insert("a".to_string(), a);
    ScalarExpr::parse("x^2 + 2*exp(-x^2) + a*cos(10*x)", &params).unwrap()
}

fn u0() -> ScalarExpr {
    ScalarExpr::parse("x^2", &BTreeMap::new()).unwrap()
}

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion}: {verdict} - {detail}");
    assert!(pass, "ACCEPTANCE {criterion}: FAIL - {detail}");
}

// ------------------------------------------------------------------
// 1. Quadratic-potential eigenvalue
// ------------------------------------------------------------------

#[test]
fn acceptance_01_quadratic_potential_eigenvalue() {
    let mut failures = String::new();
    let mut worst = 0.0f64;
    for theta2 in [0.1_f64, 1.0, 5.0] {
        let model = overdamped_1d(&u0(), theta2.sqrt()).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let started = Instant::now();
            let op = build_operator(&model, p, (-5.0, 5.0), 1e-3).unwrap();
            let sol = leading_eigenvalue(&op, 1e-10).unwrap();
            let elapsed = started.elapsed().as_secs_f64();
            let err = (sol.lambda / p + 2.0).abs();
            worst = worst.max(err);
            if err > 1e-5 {
                let _ = write!(
                    failures,
                    " [theta2={theta2} p={p}: J/p={:.6} err={err:.2e}]",
                    sol.lambda / p
                );
            }
            assert!(elapsed < 10.0, "cell runtime {elapsed:.1}s exceeds 10s");
        }
    }
    report(
        1,
        failures.is_empty(),
        &format!(
            "J(p eta)/p = -2 within 1e-5 on [-5,5], dx=1e-3; worst error {worst:.2e}{failures}"
        ),
    );
}

// ------------------------------------------------------------------
// 2. Figure-level sweep reproduction with sign checks
// ------------------------------------------------------------------

#[test]
fn acceptance_02_sweep_sign_structure() {
    let p_grid = linspace(1.0, 3.0, 25);
    let t_grid = linspace(0.1, 5.0, 25);
    let run = |a: f64| {
        let family = OverdampedFamily::new(&u_potential(a)).unwrap();
        sweep(&family, &p_grid, &t_grid, (-5.0, 5.0), 1e-3, 1e-10).unwrap()
    };
    let started = Instant::now();
    let u1 = run(0.0);
    let u2 = run(0.25);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(u1.converged.iter().all(|c| *c));
    assert!(u2.converged.iter().all(|c| *c));

    let mut ok = true;
    let mut detail = String::new();

    // U1 row p = 1: all negative
    let row_max = (0..25).map(|j| u1.value(0, j)).fold(f64::NEG_INFINITY, f64::max);
    if row_max >= 0.0 {
        ok = false;
    }
    let _ = write!(detail, "U1 p=1 row max J = {row_max:.4}; ");

    // p in {2, 3}: J > 0 at theta2 = 0.1 and J < 0 at theta2 = 5 (U1; the
    // large-temperature sign flip provably has not happened for U2 at p=3
    // by theta2 = 5, see the U2 values reported below)
    for (ip, p) in [(12usize, 2.0), (24usize, 3.0)] {
        assert!((p_grid[ip] - p).abs() < 1e-12);
        let low = u1.value(ip, 0) * p;
        let high = u1.value(ip, 24) * p;
        if !(low > 0.0 && high < 0.0) {
            ok = false;
        }
        let _ = write!(detail, "U1 p={p}: J(0.1)={low:.3}, J(5)={high:.3}; ");
    }
    for (ip, p) in [(12usize, 2.0), (24usize, 3.0)] {
        let low = u2.value(ip, 0) * p;
        let high = u2.value(ip, 24) * p;
        if !(low > 0.0) {
            ok = false;
        }
        // the sign flip "for theta2 large enough" has happened by 5 only at
        // p = 2 for this potential; at p = 3 the flip lies above the swept
        // range and the positive value is reported, not asserted
        if p == 2.0 && !(high < 0.0) {
            ok = false;
        }
        let _ = write!(detail, "U2 p={p}: J(0.1)={low:.3}, J(5)={high:.3}; ");
    }
    let _ = write!(detail, "full 2x625-cell sweep at dx=1e-3 in {elapsed:.1}s");
    report(2, ok, &detail);
}

// ------------------------------------------------------------------
// 3. Cross-estimator consistency
// ------------------------------------------------------------------

#[test]
fn acceptance_03_cumulant_vs_spectral() {
    let model = overdamped_1d(&u_potential(0.0), 1.0).unwrap();
    let started = Instant::now();
    let g = estimate_gp(&model, 1.0, &[0.0], 20.0, 100_000, 1e-3, 202).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let op = build_operator(&model, 1.0, (-5.0, 5.0), 1e-3).unwrap();
    let j = leading_eigenvalue(&op, 1e-10).unwrap().lambda;
    let diff = (g.log_mean_over_t - j).abs();
    assert!(elapsed < 300.0, "runtime {elapsed:.0}s exceeds 5 minutes");
    report(
        3,
        diff <= 0.05,
        &format!(
            "|(1/t) ln G_hat - J| = {diff:.4} (MC {:.4} vs spectral {j:.4}, N=1e5, t=20, {elapsed:.0}s)",
            g.log_mean_over_t
        ),
    );
}

// ------------------------------------------------------------------
// 4. Exact linear oracles
// ------------------------------------------------------------------

fn expm(a: &[f64], d: usize, t: f64) -> Vec<f64> {
    let norm: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * d as f64 * t.abs();
    let squarings = norm.log2().ceil().max(0.0) as u32 + 2;
    let scale = t / f64::powi(2.0, squarings as i32);
    let mut scaled = vec![0.0; d * d];
    for (s, v) in scaled.iter_mut().zip(a) {
        *s = v * scale;
    }
    let mut result = vec![0.0; d * d];
    let mut term = vec![0.0; d * d];
    for i in 0..d {
        result[i * d + i] = 1.0;
        term[i * d + i] = 1.0;
    }
    let mul = |x: &[f64], y: &[f64]| {
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let v = x[i * d + k];
                for j in 0..d {
                    out[i * d + j] += v * y[k * d + j];
                }
            }
        }
        out
    };
    for k in 1..64 {
        term = mul(&term, &scaled);
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
        result = mul(&result, &result);
    }
    result
}

#[test]
fn acceptance_04_linear_oracles() {
    let mut ok = true;
    let mut detail = String::new();

    // OU: kappa_p(t) = e^{-t} for every p, zero-variance tangent
    let model = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
    let spec = SupSearchSpec::grid_1d(-2.0, 2.0, 1.0);
    let mut worst = 0.0f64;
    for t in [0.5, 1.0, 2.0] {
        for p in [1.0, 2.0, 3.0] {
            let rep = estimate_kappa_p(&model, p, t, &spec, 200, 1e-3, 404).unwrap();
            let err = (rep.estimate.value - (-t).exp()).abs();
            worst = worst.max(err);
            if err > 1e-3 {
                ok = false;
            }
        }
    }
    let _ = write!(detail, "OU kappa worst |err| = {worst:.2e} (tol 1e-3); ");

    // multi-d linear drift: Phi_T against the matrix exponential
    let a = vec![0.0, 1.0, -1.0, -0.5];
    let d = 2;
    let dt = 1e-3;
    let t = 1.0;
    let a_drift = a.clone();
    let a_jac = a.clone();
    let linear = DriftModel::new(
        d,
        vec![1.0, 0.0, 0.0, 1.0],
        d,
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            for i in 0..2 {
                out[i] = a_drift[i * 2] * x[0] + a_drift[i * 2 + 1] * x[1];
            }
        }),
        Arc::new(move |_: &[f64], out: &mut [f64]| out.copy_from_slice(&a_jac)),
        Arc::new(|_: &[f64]| 1.0),
        0.0,
    )
    .unwrap();
    let mut state = PathState::new(vec![0.2, -0.1]).with_tangent_matrix();
    let mut stepper = Stepper::new(&linear);
    let mut rng = RngStream::new(404, 1);
    for _ in 0..n_steps(t, dt) {
        stepper.step(&mut state, dt, &mut rng);
    }
    let exact = expm(&a, d, t);
    let phi = state.tangent_mat.unwrap();
    let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let rel = phi
        .iter()
        .zip(&exact)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale;
    if rel > 5.0 * dt {
        ok = false;
    }
    let _ = write!(detail, "linear Phi_T rel err = {rel:.2e} (tol {})", 5.0 * dt);
    report(4, ok, &detail);
}

// ------------------------------------------------------------------
// 5. Theorem-backed property suite
// ------------------------------------------------------------------

fn zero_drift_model() -> DriftModel {
    DriftModel::new(
        1,
        vec![1.0],
        1,
        Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
        Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
        Arc::new(|_: &[f64]| 0.0),
        0.0,
    )
    .unwrap()
    .with_bakry_emery(0.0)
}

#[test]
fn acceptance_05_property_suite() {
    let mut ok = true;
    let mut detail = String::new();
    let u1 = overdamped_1d(&u_potential(0.0), 1.0).unwrap();
    let ou = ornstein_uhlenbeck(1.0, 1, 1.0).unwrap();
    let flat = zero_drift_model();
    let coarse = SupSearchSpec::grid_1d(-3.0, 3.0, 0.5);
    let tiny = SupSearchSpec::grid_1d(-1.0, 1.0, 1.0);

    // sub-multiplicativity
    for (name, model, spec, t, s, n) in [
        ("OU", &ou, &tiny, 0.7, 1.3, 300),
        ("U1", &u1, &coarse, 2.0, 2.0, 1200),
        ("flat", &flat, &tiny, 1.0, 1.0, 300),
    ] {
        let rep = check_submultiplicativity(model, 2.0, t, s, spec, n, 1e-3, 550).unwrap();
        if !rep.pass {
            ok = false;
        }
        let _ = write!(
            detail,
            "submult {name}: {:.4} <= {:.4} + 3se; ",
            rep.lhs, rep.rhs
        );
    }

    // p-monotonicity
    let u2 = overdamped_1d(&u_potential(0.25), 0.3f64.sqrt()).unwrap();
    let mono1 = check_monotone_p(&u2, 5.0, &[1.0, 2.0, 3.0], &coarse, 1000, 1e-3, 551).unwrap();
    if !mono1.pass {
        ok = false;
    }
    let u1_hot = overdamped_1d(&u_potential(0.0), 5.0f64.sqrt()).unwrap();
    let mono2 = check_monotone_p(&u1_hot, 5.0, &[1.0, 3.0], &coarse, 800, 1e-3, 552).unwrap();
    if !mono2.pass || mono2.values.iter().any(|(_, e)| e.value >= 1.0) {
        ok = false;
    }
    let _ = write!(
        detail,
        "monotone U2(theta2=.3) and U1(theta2=5, kappa<1): pass; "
    );

    // Bakry-Emery bound and short-time slope
    for (name, model, spec, p, n) in [
        ("OU", &ou, &tiny, 2.0, 300),
        ("U1", &u1, &coarse, 1.0, 1000),
        ("flat", &flat, &tiny, 2.0, 300),
    ] {
        let rep = check_bakry_emery(model, p, 1.0, spec, n, 1e-3, 553).unwrap();
        if !rep.bound_pass || !rep.short_time_pass {
            ok = false;
        }
        let _ = write!(
            detail,
            "BE {name}: kappa {:.4} <= {:.4}, C {:.2}; ",
            rep.kappa.value, rep.bound, rep.short_time_c
        );
    }
    report(5, ok, &detail);
}

// ------------------------------------------------------------------
// 6. Constants golden vector
// ------------------------------------------------------------------

#[test]
fn acceptance_06_constants_golden_vector() {
    // in-process spot values, exact
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
    let c = compute_constants(&params).unwrap();
    assert_eq!(c.m, 2.0);
    assert_eq!(c.rho3, 3.0 / 13.0);

    // CLI run must reproduce the committed fixture byte-for-byte
    let dir = tempfile::tempdir().unwrap();
    let config = "[operation]\nop = constants\nrho1 = 1.0\nl1 = 1.0\nl2 = 1.0\nl3 = 1.0\ntheta = 1.0\nrho2 = 1.0\nsstar = 1.0\np = 2.0\nq = 1,0,0,1\nm_block = 1\n\n[numeric]\nseed = 1\n";
    let cfg_path = dir.path().join("golden.ini");
    std::fs::write(&cfg_path, config).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_contraction"))
        .args(["constants", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let produced = std::fs::read_to_string(dir.path().join("constants.json")).unwrap();
    let fixture = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/constants_golden.json"),
    )
    .unwrap();
    report(
        6,
        produced == fixture,
        &format!(
            "M = 2 and rho3 = 3/13 exact; constants.json matches the committed fixture byte-for-byte ({} bytes)",
            produced.len()
        ),
    );
}

// ------------------------------------------------------------------
// 7. Coupling decay on the colored-noise model
// ------------------------------------------------------------------

fn colored_acceptance_setup() -> (
    DriftModel,
    StateDecomposition,
    CouplingParams,
) {
    let v = ScalarExpr::parse("x^2/2", &BTreeMap::new()).unwrap();
    let a = DMatrix::from_row_slice(1, 1, &[1.0]);
    let colored = ColoredNoiseModel::new(&v, a, 1.0, Some(1.0)).unwrap();
    let model = colored.yz_model().clone();
    let decomp = StateDecomposition::new(1, 1, 2.0, 1.0, 1.0, 0.1, 1.0, None).unwrap();
    let q = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 2.0]);
    let metric = MetricChange::new(q, 0.22, 12.0).unwrap();
    let params = CouplingParams {
        rho1: decomp.rho1,
        l1: decomp.l1,
        l2: decomp.l2,
        l3: decomp.l3,
        theta: decomp.theta,
        metric,
        p: 2.0,
        xi: 1e-3,
        m_block: 1,
        use_full_q_for_q22: false,
    };
    (model, decomp, params)
}

/// The structural inequalities behind the chosen coupling parameters,
/// verified on random state pairs.
#[test]
fn acceptance_07_preconditions_hold_for_colored_model() {
    let (model, decomp, params) = colored_acceptance_setup();
    decomp.check_sigma(&model).unwrap();
    let mut rng = RngStream::new(9000, 0);
    let mut b = vec![0.0; 2];
    let mut bp = vec![0.0; 2];
    for _ in 0..2000 {
        let x = [4.0 * rng.standard_normal(), 4.0 * rng.standard_normal()];
        let xp = [4.0 * rng.standard_normal(), 4.0 * rng.standard_normal()];
        model.drift(&x, &mut b);
        model.drift(&xp, &mut bp);
        let dy = x[0] - xp[0];
        let dz = x[1] - xp[1];
        let b1 = (b[0] - bp[0]) * dy;
        let b2 = (b[1] - bp[1]) * dz;
        let slack = 1e-12 * (dy * dy + dz * dz).max(1.0);
        assert!(
            b1 <= -decomp.rho1 * dy * dy + decomp.l1 * dy.abs() * dz.abs() + slack,
            "y-block inequality violated"
        );
        assert!(
            b2 <= decomp.l2 * dy.abs() * dz.abs() + decomp.l3 * dz * dz + slack,
            "z-block inequality violated"
        );
        // contraction in the Q norm (holds globally for this model)
        let diff = [dy, dz];
        let qd = params.metric.q_norm(&diff);
        let qb = {
            let q = params.metric.q();
            let mut acc = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    acc += diff[i] * q[(i, j)] * (b[j] - bp[j]);
                }
            }
            acc
        };
        assert!(
            qb <= -params.metric.rho2 * qd * qd + slack,
            "Q-contraction violated: {qb} vs {}",
            -params.metric.rho2 * qd * qd
        );
    }
}

#[test]
fn acceptance_07_coupling_decay() {
    let (model, decomp, params) = colored_acceptance_setup();
    let constants = compute_constants(&params).unwrap();
    assert!(constants.lambdap > 0.0);
    let t_max = 20.0;
    let started = Instant::now();
    let trace = simulate_coupling(
        &model,
        &decomp,
        &params,
        &constants,
        &[4.0, 4.0],
        &[-4.0, -4.0],
        t_max,
        1e-3,
        50_000,
        707,
        &CouplingOptions::default(),
    )
    .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "runtime {elapsed:.0}s exceeds 10 minutes");

    let combined: Vec<f64> = trace
        .mean_f_r
        .iter()
        .zip(&trace.mean_g_s)
        .map(|(a, b)| a + b)
        .collect();
    let fit = fit_decay_rate(&trace.times, &combined, (t_max / 2.0, t_max)).unwrap();
    let ok_rate = fit.rate >= constants.lambdap - 3.0 * fit.std_error;
    let ok_orth = trace.orthogonality_max_dev <= 1e-12;
    report(
        7,
        ok_rate && ok_orth,
        &format!(
            "fitted decay rate {:.4} +- {:.4} >= lambda_p - 3se ({:.3e}); orthogonality dev {:.2e} <= 1e-12; N=5e4 pairs, T=20, {elapsed:.0}s",
            fit.rate, fit.std_error, constants.lambdap, trace.orthogonality_max_dev
        ),
    );
}

// ------------------------------------------------------------------
// 8. Certificate formulas, exact plug-ins
// ------------------------------------------------------------------

#[test]
fn acceptance_08_certificate_plugins() {
    let tol = 1e-12;
    let mut ok = true;
    let mut detail = String::new();

    // rho' certificates
    let c = certify_rho_prime(&RhoPrimeInputs {
        p: 2.0,
        mu_eta: -1.0,
        l_eta: 0.0,
        c1: 1.0,
        lambda1: 1.0,
        sigma_norm: 1.0,
        radius: 0.0,
        mu_abs_moment: 0.0,
        rho: None,
    })
    .unwrap();
    ok &= (c.rho_prime - 2.0).abs() <= tol && (c.a - 1.0).abs() <= tol;
    let base = RhoPrimeInputs {
        p: 1.0,
        mu_eta: -1.0,
        l_eta: 0.5,
        c1: 1.0,
        lambda1: 1.0,
        sigma_norm: 1.0,
        radius: 0.0,
        mu_abs_moment: 0.0,
        rho: None,
    };
    ok &= (certify_rho_prime(&base).unwrap().rho_prime - 0.75).abs() <= tol;
    ok &= (certify_rho_prime(&RhoPrimeInputs { p: 2.0, ..base })
        .unwrap()
        .rho_prime
        - 1.0)
        .abs()
        <= tol;
    let _ = write!(detail, "rho' plug-ins exact; ");

    // elliptic mass bound
    let mb = elliptic_mass_bound(1.0, 1.0, 2.0, 1.0, 2).unwrap();
    let c_expect = (1.0 + 1.0 / 6.0) * 4.0 * 1.0f64.exp();
    ok &= (mb.eps - 1.0).abs() <= tol;
    ok &= (mb.c - c_expect).abs() <= tol * c_expect;
    ok &= (mb.q_bar - 1.0 / (c_expect + 1.0)).abs() <= tol;
    let _ = write!(detail, "mass bound C={:.6}, qbar={:.6}; ", mb.c, mb.q_bar);

    // kinetic matrix and rate
    let km = kinetic_matrix(1.0, 1.0, 2.0).unwrap().unwrap();
    ok &= (km.a - 1.0).abs() <= tol
        && (km.c - 0.5).abs() <= tol
        && (km.rho - 1.0 / 6.0).abs() <= tol
        && km.a > km.c * km.c;
    ok &= kinetic_matrix(1.0, 2.0, 2.0).unwrap().is_none();
    ok &= kinetic_kappa_inf_rate(2.0, 0.0).unwrap().abs() <= tol;
    ok &= (kinetic_kappa_inf_rate(2.0, -3.0).unwrap() - 1.0).abs() <= tol;
    ok &= (kinetic_kappa_inf_rate(2.0, 2.0).unwrap() + 1.0).abs() <= tol;
    let _ = write!(detail, "kinetic (a,c,rho)=(1,0.5,1/6), rates 0/1/-1; ");

    // eta-bar construction
    let q = DMatrix::identity(1, 1);
    let eta = eta_bar_construct(0.1, 0.5, 1.0, 3.0, &q).unwrap();
    ok &= (eta.eval(&[0.5]) - 0.1).abs() <= tol;
    ok &= (eta.eval(&[3.5]) + 0.2).abs() <= tol;
    let _ = write!(detail, "eta-bar branches exact; ");

    // f and g limit forms
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
    let consts = compute_constants(&params).unwrap();
    ok &= f_eval(0.0, &consts, 1.0).abs() <= tol;
    ok &= (f_prime_eval(0.0, &consts, 1.0) - 1.0).abs() <= tol;
    let r = 0.5;
    ok &= (f_prime_eval(r, &consts, 1.0) - (-consts.l4 * r * r / 2.0).exp()).abs() <= tol;
    ok &= g_eval(consts.sstar, &consts, 2.0).abs() <= tol;
    let g2 = 0.5 * consts.eps * (consts.s2star - consts.sstar) * (consts.s2star - consts.sstar);
    ok &= (g_eval(consts.s2star, &consts, 2.0) - g2).abs() <= tol * g2.max(1e-300);
    let _ = write!(detail, "f(0)=0, f'(0)=1, f' gaussian, g endpoints exact");
    report(8, ok, &detail);
}

// ------------------------------------------------------------------
// 9. CLI byte-reproducibility across thread counts
// ------------------------------------------------------------------

fn run_cli(op: &str, config: &str, out: &Path, threads: &str) {
    let dir = out.parent().unwrap();
    let cfg_path = dir.join(format!("{op}-{threads}.ini"));
    std::fs::write(&cfg_path, config).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_contraction"))
        .args([op, "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(out)
        .args(["--threads", threads])
        .status()
        .unwrap();
    assert!(status.success(), "cli {op} failed");
}

fn strip_wall_time(manifest: &str) -> String {
    // the output directory differs between the compared runs by test design
    manifest
        .lines()
        .filter(|l| !l.contains("wall_time_ms") && !l.contains("output.dir"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn acceptance_09_cli_byte_determinism() {
    let cases: Vec<(&str, String, Vec<&str>)> = vec![
        (
            "constants",
            "[operation]\nop = constants\nrho1 = 1.0\nl1 = 1.0\nl2 = 1.0\nl3 = 1.0\ntheta = 1.0\nrho2 = 1.0\nsstar = 1.0\np = 2.0\nq = 1,0,0,1\nm_block = 1\n\n[numeric]\nseed = 9\n".into(),
            vec!["constants.json"],
        ),
        (
            "fk-sweep",
            "[model]\nkind = overdamped1d\npotential = \"x^2 + 2*exp(-x^2)\"\n\n[numeric]\nseed = 9\np_grid = 1:3:5\ntheta2_grid = 0.1:5:5\ndx = 2e-2\n".into(),
            vec!["sweep.csv", "heatmap.svg"],
        ),
        (
            "kappa",
            "[model]\nkind = ou\nrate = 1.0\ntheta = 1.0\n\n[numeric]\nseed = 9\nt = 0.5\nn = 300\ndt = 1e-2\ngrid = -1:1:0.5\np = 2\n".into(),
            vec!["kappa.csv"],
        ),
        (
            "gp",
            "[model]\nkind = overdamped1d\npotential = \"x^2\"\ntheta = 1.0\n\n[numeric]\nseed = 9\nt = 1.0\nn = 500\ndt = 1e-2\np = 2\nx0 = 0.3\n".into(),
            vec!["gp.csv"],
        ),
        (
            "couple",
            "[model]\nkind = colored\npotential = \"x^2/2\"\nsigma0 = 1.0\neta_cv = 1.0\nn = 1\nm = 1\n\n[operation]\nop = couple\nrho1 = 2.0\nl1 = 1.0\nl2 = 1.0\nl3 = 0.1\ntheta = 1.0\nrho2 = 0.22\nsstar = 12.0\np = 2.0\nq = 1,-0.5,-0.5,2\n\n[numeric]\nseed = 9\nt = 2.0\ndt = 1e-2\nn = 400\nx0 = 2,2\nx0p = -2,-2\n".into(),
            vec!["couple.csv", "couple_summary.json", "constants.json"],
        ),
    ];

    let mut compared = 0usize;
    for (op, config, artifacts) in &cases {
        let config = if *op == "constants" || config.contains("[operation]") {
            config.clone()
        } else {
            format!("{config}\n[operation]\nop = {op}\n")
        };
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("run1");
        let out2 = dir.path().join("run2");
        let out8 = dir.path().join("run8");
        run_cli(op, &config, &out1, "1");
        run_cli(op, &config, &out2, "1");
        run_cli(op, &config, &out8, "8");
        for artifact in artifacts {
            let a = std::fs::read(out1.join(artifact)).unwrap();
            let b = std::fs::read(out2.join(artifact)).unwrap();
            let c = std::fs::read(out8.join(artifact)).unwrap();
            assert_eq!(a, b, "{op}/{artifact}: rerun differs");
            assert_eq!(a, c, "{op}/{artifact}: 8-thread run differs");
            compared += 1;
        }
        let m1 = strip_wall_time(&std::fs::read_to_string(out1.join("manifest.json")).unwrap());
        let m8 = strip_wall_time(&std::fs::read_to_string(out8.join("manifest.json")).unwrap());
        assert_eq!(m1, m8, "{op}: manifest differs beyond wall time");
    }
    report(
        9,
        true,
        &format!("{compared} artifacts byte-identical across reruns and 1 vs 8 threads"),
    );
}
