//! One runner per subcommand: reads the typed configuration, executes the
//! operation, and writes the artifacts.

use std::path::Path;

use contraction_core::coupling::{
    certify_rho_prime, compute_constants, elliptic_mass_bound, fit_decay_rate,
    kinetic_kappa_inf_rate, kinetic_matrix, simulate_coupling, ContractionConstants,
    CouplingOptions, CouplingParams, RhoPrimeInputs,
};
use contraction_core::fk::{build_operator, leading_eigenvalue, linspace, sweep, OverdampedFamily};
use contraction_core::mc::{estimate_gp, estimate_kappa_p, estimate_lyapunov, SupSearchSpec};
use contraction_core::model::{MetricChange, StateDecomposition};
use nalgebra::DMatrix;

use crate::config::{ConfigError, RawConfig, Reader, ResolvedConfig};
use crate::model_cfg;
use crate::output::{fmt17, fmt_bool, fmt_vec, json_object, write_artifact, Csv, JsonValue};
use crate::svg::render_heatmap;

#[derive(Debug)]
pub enum CliFailure {
    /// Bad configuration: exit code 2.
    Config(String),
    /// Numerical non-convergence: exit code 3, partial artifacts on disk.
    Numerical(String),
    /// Environment failures (I/O).
    Io(String),
}

impl CliFailure {
    pub fn config(e: ConfigError) -> Self {
        CliFailure::Config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliFailure::Config(_) => 2,
            CliFailure::Numerical(_) => 3,
            CliFailure::Io(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliFailure::Config(m) | CliFailure::Numerical(m) | CliFailure::Io(m) => m,
        }
    }
}

fn io_err(e: anyhow::Error) -> CliFailure {
    CliFailure::Io(format!("{e:#}"))
}

pub const KNOWN_OPS: &[&str] = &[
    "fk-eig",
    "fk-sweep",
    "kappa",
    "gp",
    "lyapunov",
    "couple",
    "constants",
    "certify",
    "kinetic-rate",
    "mass-bound",
];

/// Runs the operation named by the config against the output directory.
/// Returns the resolved configuration for the manifest.
pub fn run(
    raw: &RawConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<ResolvedConfig, CliFailure> {
    let r = Reader::new(raw);
    let mut rc = ResolvedConfig::default();

    let op = r.require_str("operation", "op").map_err(CliFailure::config)?;
    if !KNOWN_OPS.contains(&op.as_str()) {
        return Err(CliFailure::Config(format!(
            "operation.op: unknown operation `{op}`"
        )));
    }
    rc.set("operation", "op", op.clone());

    // seed is mandatory for reproducibility (no wall-clock default)
    let seed = match seed_override {
        Some(s) => {
            let _ = r.optional_u64("numeric", "seed");
            s
        }
        None => r
            .optional_u64("numeric", "seed")
            .map_err(CliFailure::config)?
            .ok_or_else(|| {
                CliFailure::Config("numeric.seed: missing required key (seeds are mandatory)".into())
            })?,
    };
    rc.set("numeric", "seed", seed.to_string());
    rc.set("output", "dir", out_dir.display().to_string());

    let result = match op.as_str() {
        "fk-eig" => op_fk_eig(&r, &mut rc, out_dir, seed),
        "fk-sweep" => op_fk_sweep(&r, &mut rc, out_dir, seed),
        "kappa" => op_kappa(&r, &mut rc, out_dir, seed),
        "gp" => op_gp(&r, &mut rc, out_dir, seed),
        "lyapunov" => op_lyapunov(&r, &mut rc, out_dir, seed),
        "couple" => op_couple(&r, &mut rc, out_dir, seed),
        "constants" => op_constants(&r, &mut rc, out_dir),
        "certify" => op_certify(&r, &mut rc, out_dir),
        "kinetic-rate" => op_kinetic_rate(&r, &mut rc, out_dir),
        "mass-bound" => op_mass_bound(&r, &mut rc, out_dir),
        _ => unreachable!(),
    };

    // unknown keys are config errors even when the run itself worked
    match result {
        Ok(()) => {
            r.reject_unknown().map_err(CliFailure::config)?;
            Ok(rc)
        }
        Err(CliFailure::Numerical(m)) => {
            r.reject_unknown().map_err(CliFailure::config)?;
            Err(CliFailure::Numerical(m))
        }
        Err(other) => Err(other),
    }
}

fn read_domain(r: &Reader, rc: &mut ResolvedConfig) -> Result<(f64, f64), CliFailure> {
    let domain = r
        .optional_vec("numeric", "domain")
        .map_err(CliFailure::config)?
        .unwrap_or_else(|| vec![-5.0, 5.0]);
    if domain.len() != 2 {
        return Err(CliFailure::Config(
            "numeric.domain: expected `lo,hi`".into(),
        ));
    }
    rc.set(
        "numeric",
        "domain",
        format!("{},{}", fmt17(domain[0]), fmt17(domain[1])),
    );
    Ok((domain[0], domain[1]))
}

fn read_grid_1d(r: &Reader, rc: &mut ResolvedConfig, dim: usize) -> Result<SupSearchSpec, CliFailure> {
    if let Some(points) = r.optional_str("numeric", "grid_points") {
        let mut grid = Vec::new();
        for part in points.split(';') {
            let v: Result<Vec<f64>, _> = part.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let v = v.map_err(|_| {
                CliFailure::Config(format!("numeric.grid_points: bad vector `{part}`"))
            })?;
            if v.len() != dim {
                return Err(CliFailure::Config(format!(
                    "numeric.grid_points: point of dimension {} for model of dimension {dim}",
                    v.len()
                )));
            }
            grid.push(v);
        }
        rc.set("numeric", "grid_points", points);
        let mut spec = SupSearchSpec::default_1d();
        spec.grid = grid;
        if dim == 1 {
            spec.directions = contraction_core::mc::DirectionStrategy::Fixed1d;
        } else {
            spec.directions = contraction_core::mc::DirectionStrategy::default();
        }
        return Ok(spec);
    }
    if dim != 1 {
        return Err(CliFailure::Config(
            "numeric.grid_points is required for models of dimension > 1".into(),
        ));
    }
    let grid = r
        .optional_str("numeric", "grid")
        .unwrap_or_else(|| "-3:3:0.25".to_string());
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() != 3 {
        return Err(CliFailure::Config(
            "numeric.grid: expected `lo:hi:step`".into(),
        ));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| CliFailure::Config("numeric.grid: bad lower bound".into()))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| CliFailure::Config("numeric.grid: bad upper bound".into()))?;
    let step: f64 = parts[2]
        .trim()
        .parse()
        .map_err(|_| CliFailure::Config("numeric.grid: bad step".into()))?;
    if !(step > 0.0) || hi < lo {
        return Err(CliFailure::Config("numeric.grid: need hi >= lo, step > 0".into()));
    }
    rc.set("numeric", "grid", grid);
    Ok(SupSearchSpec::grid_1d(lo, hi, step))
}

fn op_fk_eig(r: &Reader, rc: &mut ResolvedConfig, out: &Path, _seed: u64) -> Result<(), CliFailure> {
    let model = model_cfg::build_model(r, rc)?;
    let p = r.f64_or("numeric", "p", 1.0).map_err(CliFailure::config)?;
    let dx = r.f64_or("numeric", "dx", 1e-3).map_err(CliFailure::config)?;
    let tol = r
        .f64_or("numeric", "tol", 1e-10)
        .map_err(CliFailure::config)?;
    let domain = read_domain(r, rc)?;
    rc.set_f64("numeric", "p", p);
    rc.set_f64("numeric", "dx", dx);
    rc.set_f64("numeric", "tol", tol);

    let op = build_operator(&model, p, domain, dx)
        .map_err(|e| CliFailure::Config(format!("fk-eig: {e}")))?;
    let theta2 = model.sigma_squared_scalar() / 2.0;
    let mut csv = Csv::new(&["p", "theta2", "lambda", "j_over_p", "iterations", "converged"]);
    match leading_eigenvalue(&op, tol) {
        Ok(sol) => {
            csv.row(&[
                fmt17(p),
                fmt17(theta2),
                fmt17(sol.lambda),
                fmt17(sol.lambda / p),
                sol.iterations.to_string(),
                "true".into(),
            ]);
            write_artifact(out, "fk_eig.csv", &csv.finish()).map_err(io_err)?;
            Ok(())
        }
        Err(e) => {
            csv.row(&[
                fmt17(p),
                fmt17(theta2),
                "nan".into(),
                "nan".into(),
                "0".into(),
                "false".into(),
            ]);
            write_artifact(out, "fk_eig.csv", &csv.finish()).map_err(io_err)?;
            Err(CliFailure::Numerical(format!("fk-eig: {e}")))
        }
    }
}

fn op_fk_sweep(r: &Reader, rc: &mut ResolvedConfig, out: &Path, _seed: u64) -> Result<(), CliFailure> {
    let kind = r.require_str("model", "kind").map_err(CliFailure::config)?;
    if kind != "overdamped1d" {
        return Err(CliFailure::Config(
            "fk-sweep requires model.kind = overdamped1d".into(),
        ));
    }
    rc.set("model", "kind", kind);
    let (expr, _) = model_cfg::read_potential(r, rc)?;
    // theta is swept; accept and ignore a configured value
    if let Some(theta) = r.optional_f64("model", "theta").map_err(CliFailure::config)? {
        rc.set_f64("model", "theta", theta);
    }

    let (p_lo, p_hi, p_n) = r
        .optional_linspace("numeric", "p_grid")
        .map_err(CliFailure::config)?
        .unwrap_or((1.0, 3.0, 25));
    let (t_lo, t_hi, t_n) = r
        .optional_linspace("numeric", "theta2_grid")
        .map_err(CliFailure::config)?
        .unwrap_or((0.1, 5.0, 25));
    let dx = r.f64_or("numeric", "dx", 1e-3).map_err(CliFailure::config)?;
    let tol = r
        .f64_or("numeric", "tol", 1e-10)
        .map_err(CliFailure::config)?;
    let domain = read_domain(r, rc)?;
    rc.set("numeric", "p_grid", format!("{}:{}:{}", fmt17(p_lo), fmt17(p_hi), p_n));
    rc.set(
        "numeric",
        "theta2_grid",
        format!("{}:{}:{}", fmt17(t_lo), fmt17(t_hi), t_n),
    );
    rc.set_f64("numeric", "dx", dx);
    rc.set_f64("numeric", "tol", tol);
    let lo = r
        .f64_or("output", "heatmap_lo", -4.0)
        .map_err(CliFailure::config)?;
    let hi = r
        .f64_or("output", "heatmap_hi", 4.0)
        .map_err(CliFailure::config)?;
    rc.set_f64("output", "heatmap_lo", lo);
    rc.set_f64("output", "heatmap_hi", hi);

    let family = OverdampedFamily::new(&expr).map_err(|e| CliFailure::Config(format!("{e}")))?;
    let res = sweep(
        &family,
        &linspace(p_lo, p_hi, p_n),
        &linspace(t_lo, t_hi, t_n),
        domain,
        dx,
        tol,
    )
    .map_err(|e| CliFailure::Config(format!("fk-sweep: {e}")))?;

    let mut csv = Csv::new(&["p", "theta2", "J_over_p", "converged"]);
    for (i, &p) in res.p_grid.iter().enumerate() {
        for (j, &t2) in res.theta2_grid.iter().enumerate() {
            csv.row(&[
                fmt17(p),
                fmt17(t2),
                fmt17(res.value(i, j)),
                fmt_bool(res.cell_converged(i, j)).to_string(),
            ]);
        }
    }
    write_artifact(out, "sweep.csv", &csv.finish()).map_err(io_err)?;
    write_artifact(out, "heatmap.svg", &render_heatmap(&res, lo, hi)).map_err(io_err)?;

    if res.converged.iter().any(|c| !c) {
        let bad = res.converged.iter().filter(|c| !**c).count();
        return Err(CliFailure::Numerical(format!(
            "fk-sweep: {bad} cells did not converge (flagged in sweep.csv)"
        )));
    }
    Ok(())
}

fn op_kappa(r: &Reader, rc: &mut ResolvedConfig, out: &Path, seed: u64) -> Result<(), CliFailure> {
    let model = model_cfg::build_model(r, rc)?;
    let p = r.f64_or("numeric", "p", 2.0).map_err(CliFailure::config)?;
    let t = r.require_f64("numeric", "t").map_err(CliFailure::config)?;
    let n = r.u64_or("numeric", "n", 10_000).map_err(CliFailure::config)? as usize;
    let dt = r.f64_or("numeric", "dt", 1e-3).map_err(CliFailure::config)?;
    rc.set_f64("numeric", "p", p);
    rc.set_f64("numeric", "t", t);
    rc.set("numeric", "n", n.to_string());
    rc.set_f64("numeric", "dt", dt);
    let search = read_grid_1d(r, rc, model.dim())?;

    let rep = estimate_kappa_p(&model, p, t, &search, n, dt, seed)
        .map_err(|e| CliFailure::Numerical(format!("kappa: {e}")))?;
    let mut csv = Csv::new(&[
        "t",
        "p",
        "estimate",
        "stderr",
        "argmax_x",
        "argmax_v",
        "n",
        "excluded",
        "edge_warning",
    ]);
    csv.row(&[
        fmt17(t),
        fmt17(p),
        fmt17(rep.estimate.value),
        fmt17(rep.estimate.std_error),
        fmt_vec(&rep.argmax_x),
        fmt_vec(&rep.argmax_v),
        rep.estimate.n.to_string(),
        rep.estimate.excluded.to_string(),
        fmt_bool(rep.edge_warning).to_string(),
    ]);
    write_artifact(out, "kappa.csv", &csv.finish()).map_err(io_err)?;
    Ok(())
}

fn op_gp(r: &Reader, rc: &mut ResolvedConfig, out: &Path, seed: u64) -> Result<(), CliFailure> {
    let model = model_cfg::build_model(r, rc)?;
    let d = model.dim();
    let p = r.f64_or("numeric", "p", 1.0).map_err(CliFailure::config)?;
    let t = r.require_f64("numeric", "t").map_err(CliFailure::config)?;
    let n = r.u64_or("numeric", "n", 10_000).map_err(CliFailure::config)? as usize;
    let dt = r.f64_or("numeric", "dt", 1e-3).map_err(CliFailure::config)?;
    let x0 = r
        .optional_vec("numeric", "x0")
        .map_err(CliFailure::config)?
        .unwrap_or_else(|| vec![0.0; d]);
    if x0.len() != d {
        return Err(CliFailure::Config(format!(
            "numeric.x0: expected {d} components"
        )));
    }
    rc.set_f64("numeric", "p", p);
    rc.set_f64("numeric", "t", t);
    rc.set("numeric", "n", n.to_string());
    rc.set_f64("numeric", "dt", dt);
    rc.set("numeric", "x0", fmt_vec(&x0).replace(';', ","));

    let g = estimate_gp(&model, p, &x0, t, n, dt, seed)
        .map_err(|e| CliFailure::Numerical(format!("gp: {e}")))?;
    let mut csv = Csv::new(&[
        "t",
        "p",
        "x0",
        "estimate",
        "stderr",
        "log_mean_over_t",
        "saturated",
        "n",
        "excluded",
    ]);
    csv.row(&[
        fmt17(t),
        fmt17(p),
        fmt_vec(&x0),
        fmt17(g.estimate.value),
        fmt17(g.estimate.std_error),
        fmt17(g.log_mean_over_t),
        g.saturated.to_string(),
        g.estimate.n.to_string(),
        g.estimate.excluded.to_string(),
    ]);
    write_artifact(out, "gp.csv", &csv.finish()).map_err(io_err)?;
    Ok(())
}

fn op_lyapunov(r: &Reader, rc: &mut ResolvedConfig, out: &Path, seed: u64) -> Result<(), CliFailure> {
    let model = model_cfg::build_model(r, rc)?;
    let p = r.f64_or("numeric", "p", 2.0).map_err(CliFailure::config)?;
    let t = r.require_f64("numeric", "t").map_err(CliFailure::config)?;
    let n = r.u64_or("numeric", "n", 5_000).map_err(CliFailure::config)? as usize;
    let dt = r.f64_or("numeric", "dt", 1e-3).map_err(CliFailure::config)?;
    rc.set_f64("numeric", "p", p);
    rc.set_f64("numeric", "t", t);
    rc.set("numeric", "n", n.to_string());
    rc.set_f64("numeric", "dt", dt);
    let search = read_grid_1d(r, rc, model.dim())?;

    let rep = estimate_lyapunov(&model, p, t, &search, n, dt, seed)
        .map_err(|e| CliFailure::Numerical(format!("lyapunov: {e}")))?;
    let mut csv = Csv::new(&["t", "kappa", "stderr"]);
    for (tt, k, se) in &rep.checkpoints {
        csv.row(&[fmt17(*tt), fmt17(*k), fmt17(*se)]);
    }
    write_artifact(out, "lyapunov.csv", &csv.finish()).map_err(io_err)?;
    let fit = json_object(&[
        ("slope", JsonValue::Num(rep.slope.value)),
        ("stderr", JsonValue::Num(rep.slope.std_error)),
        ("n", JsonValue::Int(rep.slope.n as u64)),
        ("excluded", JsonValue::Int(rep.slope.excluded as u64)),
        ("warn_nonconvergence", JsonValue::Bool(rep.warn_nonconvergence)),
    ]);
    write_artifact(out, "lyapunov_fit.json", &fit).map_err(io_err)?;
    Ok(())
}

/// Reads the `[operation]` coupling parameters shared by `constants` and
/// `couple`.
fn read_coupling_params(
    r: &Reader,
    rc: &mut ResolvedConfig,
    default_m_block: Option<usize>,
) -> Result<CouplingParams, CliFailure> {
    let rho1 = r.require_f64("operation", "rho1").map_err(CliFailure::config)?;
    let l1 = r.require_f64("operation", "l1").map_err(CliFailure::config)?;
    let l2 = r.require_f64("operation", "l2").map_err(CliFailure::config)?;
    let l3 = r.require_f64("operation", "l3").map_err(CliFailure::config)?;
    let theta = r.require_f64("operation", "theta").map_err(CliFailure::config)?;
    let rho2 = r.require_f64("operation", "rho2").map_err(CliFailure::config)?;
    let sstar = r.require_f64("operation", "sstar").map_err(CliFailure::config)?;
    let p = r.f64_or("operation", "p", 2.0).map_err(CliFailure::config)?;
    let xi = r.f64_or("operation", "xi", 1e-3).map_err(CliFailure::config)?;
    let use_full_q = r
        .bool_or("operation", "use_full_q", false)
        .map_err(CliFailure::config)?;
    let q_entries = r.optional_vec("operation", "q").map_err(CliFailure::config)?;
    let (q, dim) = match q_entries {
        Some(entries) => {
            let dim = (entries.len() as f64).sqrt().round() as usize;
            if dim * dim != entries.len() {
                return Err(CliFailure::Config(
                    "operation.q: expected a square row-major matrix".into(),
                ));
            }
            (DMatrix::from_row_slice(dim, dim, &entries), dim)
        }
        None => {
            let dim = r.u64_or("operation", "dim", 2).map_err(CliFailure::config)? as usize;
            rc.set("operation", "dim", dim.to_string());
            (DMatrix::identity(dim, dim), dim)
        }
    };
    let m_block = match default_m_block {
        Some(m) => m,
        None => r.u64_or("operation", "m_block", 1).map_err(CliFailure::config)? as usize,
    };

    for (key, value) in [
        ("rho1", rho1),
        ("l1", l1),
        ("l2", l2),
        ("l3", l3),
        ("theta", theta),
        ("rho2", rho2),
        ("sstar", sstar),
        ("p", p),
        ("xi", xi),
    ] {
        rc.set_f64("operation", key, value);
    }
    rc.set(
        "operation",
        "q",
        q.transpose()
            .iter()
            .map(|v| fmt17(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    rc.set("operation", "m_block", m_block.to_string());
    rc.set("operation", "use_full_q", fmt_bool(use_full_q));

    let metric = MetricChange::new(q, rho2, sstar)
        .map_err(|e| CliFailure::Config(format!("operation.q: {e}")))?;
    let params = CouplingParams {
        rho1,
        l1,
        l2,
        l3,
        theta,
        metric,
        p,
        xi,
        m_block: m_block.min(dim),
        use_full_q_for_q22: use_full_q,
    };
    params
        .validate()
        .map_err(|e| CliFailure::Config(format!("operation: {e}")))?;
    Ok(params)
}

pub fn constants_json(c: &ContractionConstants) -> String {
    json_object(&[
        ("M", JsonValue::Num(c.m)),
        ("rho3", JsonValue::Num(c.rho3)),
        ("L4", JsonValue::Num(c.l4)),
        ("S1s", JsonValue::Num(c.s1s)),
        ("gamma1", JsonValue::Num(c.gamma1)),
        ("gamma2", JsonValue::Num(c.gamma2)),
        ("C0", JsonValue::Num(c.big_c0)),
        ("Rs", JsonValue::Num(c.rstar)),
        ("R1s", JsonValue::Num(c.r1star)),
        ("S2s", JsonValue::Num(c.s2star)),
        ("eps", JsonValue::Num(c.eps)),
        ("c0", JsonValue::Num(c.small_c0)),
        ("K1", JsonValue::Num(c.k1)),
        ("K2", JsonValue::Num(c.k2)),
        ("K3", JsonValue::Num(c.k3)),
        ("cstar", JsonValue::Num(c.cstar)),
        ("kstar", JsonValue::Num(c.kstar)),
        ("Kstar", JsonValue::Num(c.big_kstar)),
        ("Cp", JsonValue::Num(c.cp)),
        ("lambdap", JsonValue::Num(c.lambdap)),
    ])
}

fn op_constants(r: &Reader, rc: &mut ResolvedConfig, out: &Path) -> Result<(), CliFailure> {
    let params = read_coupling_params(r, rc, None)?;
    let constants =
        compute_constants(&params).map_err(|e| CliFailure::Config(format!("constants: {e}")))?;
    write_artifact(out, "constants.json", &constants_json(&constants)).map_err(io_err)?;
    Ok(())
}

fn op_couple(r: &Reader, rc: &mut ResolvedConfig, out: &Path, seed: u64) -> Result<(), CliFailure> {
    let kind = r.require_str("model", "kind").map_err(CliFailure::config)?;
    if kind != "colored" {
        return Err(CliFailure::Config(
            "couple requires model.kind = colored".into(),
        ));
    }
    rc.set("model", "kind", kind);
    let colored = model_cfg::build_colored(r, rc)?;
    let model = colored.yz_model().clone();
    let params = read_coupling_params(r, rc, Some(colored.m()))?;
    let decomp = StateDecomposition::new(
        colored.n(),
        colored.m(),
        params.rho1,
        params.l1,
        params.l2,
        params.l3,
        params.theta,
        None,
    )
    .map_err(|e| CliFailure::Config(format!("couple: {e}")))?;

    let d = model.dim();
    let t = r.require_f64("numeric", "t").map_err(CliFailure::config)?;
    let dt = r.f64_or("numeric", "dt", 1e-3).map_err(CliFailure::config)?;
    let n = r.u64_or("numeric", "n", 10_000).map_err(CliFailure::config)? as usize;
    let checkpoints = r
        .u64_or("numeric", "checkpoints", 40)
        .map_err(CliFailure::config)? as usize;
    let x0 = r
        .optional_vec("numeric", "x0")
        .map_err(CliFailure::config)?
        .ok_or_else(|| CliFailure::Config("numeric.x0: required for couple".into()))?;
    let x0p = r
        .optional_vec("numeric", "x0p")
        .map_err(CliFailure::config)?
        .ok_or_else(|| CliFailure::Config("numeric.x0p: required for couple".into()))?;
    if x0.len() != d || x0p.len() != d {
        return Err(CliFailure::Config(format!(
            "numeric.x0/x0p: expected {d} components"
        )));
    }
    rc.set_f64("numeric", "t", t);
    rc.set_f64("numeric", "dt", dt);
    rc.set("numeric", "n", n.to_string());
    rc.set("numeric", "checkpoints", checkpoints.to_string());
    rc.set("numeric", "x0", fmt_vec(&x0).replace(';', ","));
    rc.set("numeric", "x0p", fmt_vec(&x0p).replace(';', ","));

    let constants =
        compute_constants(&params).map_err(|e| CliFailure::Config(format!("couple: {e}")))?;
    let options = CouplingOptions {
        beta_override: None,
        n_checkpoints: Some(checkpoints),
    };
    let trace = simulate_coupling(
        &model, &decomp, &params, &constants, &x0, &x0p, t, dt, n, seed, &options,
    )
    .map_err(|e| CliFailure::Numerical(format!("couple: {e}")))?;

    let mut csv = Csv::new(&[
        "t",
        "mean_f_R",
        "mean_g_S",
        "mean_omega",
        "se_f_R",
        "se_g_S",
        "se_omega",
    ]);
    for i in 0..trace.times.len() {
        csv.row(&[
            fmt17(trace.times[i]),
            fmt17(trace.mean_f_r[i]),
            fmt17(trace.mean_g_s[i]),
            fmt17(trace.mean_omega[i]),
            fmt17(trace.se_f_r[i]),
            fmt17(trace.se_g_s[i]),
            fmt17(trace.se_omega[i]),
        ]);
    }
    write_artifact(out, "couple.csv", &csv.finish()).map_err(io_err)?;

    let combined: Vec<f64> = trace
        .mean_f_r
        .iter()
        .zip(&trace.mean_g_s)
        .map(|(a, b)| a + b)
        .collect();
    let fit = fit_decay_rate(&trace.times, &combined, (t / 2.0, t));
    let (rate, rate_se, fit_ok) = match fit {
        Ok(f) => (f.rate, f.std_error, true),
        Err(_) => (f64::NAN, f64::NAN, false),
    };
    let summary = json_object(&[
        ("lambda_p", JsonValue::Num(constants.lambdap)),
        ("fitted_rate", JsonValue::Num(rate)),
        ("fitted_rate_stderr", JsonValue::Num(rate_se)),
        ("fit_ok", JsonValue::Bool(fit_ok)),
        (
            "orthogonality_max_dev",
            JsonValue::Num(trace.orthogonality_max_dev),
        ),
        ("fallback_uses", JsonValue::Int(trace.fallback_uses)),
        ("divergent_pairs", JsonValue::Int(trace.divergent_pairs as u64)),
        ("n_pairs", JsonValue::Int(trace.n_pairs as u64)),
    ]);
    write_artifact(out, "couple_summary.json", &summary).map_err(io_err)?;
    write_artifact(out, "constants.json", &constants_json(&constants)).map_err(io_err)?;
    Ok(())
}

fn op_certify(r: &Reader, rc: &mut ResolvedConfig, out: &Path) -> Result<(), CliFailure> {
    let p = r.require_f64("operation", "p").map_err(CliFailure::config)?;
    let mu_eta = r
        .require_f64("operation", "mu_eta")
        .map_err(CliFailure::config)?;
    let l_eta = r
        .require_f64("operation", "l_eta")
        .map_err(CliFailure::config)?;
    let sigma_norm = r
        .require_f64("operation", "sigma_norm")
        .map_err(CliFailure::config)?;
    let radius = r
        .f64_or("operation", "radius", 0.0)
        .map_err(CliFailure::config)?;
    let mu_abs = r
        .f64_or("operation", "mu_abs_moment", 0.0)
        .map_err(CliFailure::config)?;
    let rho = r.optional_f64("operation", "rho").map_err(CliFailure::config)?;

    // C1 and lambda1 default to the constants pipeline at p = 1 when the
    // coupling parameters are supplied instead
    let c1_opt = r.optional_f64("operation", "c1").map_err(CliFailure::config)?;
    let lambda1_opt = r
        .optional_f64("operation", "lambda1")
        .map_err(CliFailure::config)?;
    let (c1, lambda1) = match (c1_opt, lambda1_opt) {
        (Some(c1), Some(l1)) => (c1, l1),
        _ => {
            let mut params = read_coupling_params(r, rc, None)?;
            params.p = 1.0;
            let constants = compute_constants(&params)
                .map_err(|e| CliFailure::Config(format!("certify: {e}")))?;
            (constants.cp, constants.lambdap)
        }
    };

    for (key, value) in [
        ("p", p),
        ("mu_eta", mu_eta),
        ("l_eta", l_eta),
        ("sigma_norm", sigma_norm),
        ("radius", radius),
        ("mu_abs_moment", mu_abs),
        ("c1", c1),
        ("lambda1", lambda1),
    ] {
        rc.set_f64("operation", key, value);
    }
    if let Some(rho) = rho {
        rc.set_f64("operation", "rho", rho);
    }

    let cert = certify_rho_prime(&RhoPrimeInputs {
        p,
        mu_eta,
        l_eta,
        c1,
        lambda1,
        sigma_norm,
        radius,
        mu_abs_moment: mu_abs,
        rho,
    })
    .map_err(|e| CliFailure::Config(format!("certify: {e}")))?;
    let json = json_object(&[
        ("A", JsonValue::Num(cert.a)),
        ("rho_prime", JsonValue::Num(cert.rho_prime)),
        ("rate", JsonValue::Num(cert.rate)),
        ("contracts", JsonValue::Bool(cert.contracts)),
    ]);
    write_artifact(out, "certify.json", &json).map_err(io_err)?;
    Ok(())
}

fn op_kinetic_rate(r: &Reader, rc: &mut ResolvedConfig, out: &Path) -> Result<(), CliFailure> {
    let gamma = r
        .require_f64("operation", "gamma")
        .map_err(CliFailure::config)?;
    let xi0 = r.require_f64("operation", "xi0").map_err(CliFailure::config)?;
    rc.set_f64("operation", "gamma", gamma);
    rc.set_f64("operation", "xi0", xi0);
    let rate = kinetic_kappa_inf_rate(gamma, xi0)
        .map_err(|e| CliFailure::Config(format!("kinetic-rate: {e}")))?;

    let ell = r.optional_f64("operation", "ell").map_err(CliFailure::config)?;
    let lambda = r
        .optional_f64("operation", "lambda")
        .map_err(CliFailure::config)?;
    let mut fields = vec![
        ("gamma", JsonValue::Num(gamma)),
        ("xi0", JsonValue::Num(xi0)),
        ("rate", JsonValue::Num(rate)),
    ];
    if let (Some(ell), Some(lambda)) = (ell, lambda) {
        rc.set_f64("operation", "ell", ell);
        rc.set_f64("operation", "lambda", lambda);
        match kinetic_matrix(ell, lambda, gamma)
            .map_err(|e| CliFailure::Config(format!("kinetic-rate: {e}")))?
        {
            Some(km) => {
                fields.push(("metric_supported", JsonValue::Bool(true)));
                fields.push(("a", JsonValue::Num(km.a)));
                fields.push(("c", JsonValue::Num(km.c)));
                fields.push(("rho", JsonValue::Num(km.rho)));
            }
            None => fields.push(("metric_supported", JsonValue::Bool(false))),
        }
    }
    write_artifact(out, "kinetic_rate.json", &json_object(&fields)).map_err(io_err)?;
    Ok(())
}

fn op_mass_bound(r: &Reader, rc: &mut ResolvedConfig, out: &Path) -> Result<(), CliFailure> {
    let k = r.require_f64("operation", "k").map_err(CliFailure::config)?;
    let radius = r.require_f64("operation", "r").map_err(CliFailure::config)?;
    let r2 = r.require_f64("operation", "r2").map_err(CliFailure::config)?;
    let theta = r
        .require_f64("operation", "theta")
        .map_err(CliFailure::config)?;
    let d = r.u64_or("operation", "d", 1).map_err(CliFailure::config)? as u32;
    for (key, value) in [("k", k), ("r", radius), ("r2", r2), ("theta", theta)] {
        rc.set_f64("operation", key, value);
    }
    rc.set("operation", "d", d.to_string());

    let mb = elliptic_mass_bound(k, radius, r2, theta, d)
        .map_err(|e| CliFailure::Config(format!("mass-bound: {e}")))?;
    let json = json_object(&[
        ("C", JsonValue::Num(mb.c)),
        ("eps", JsonValue::Num(mb.eps)),
        ("qbar", JsonValue::Num(mb.q_bar)),
    ]);
    write_artifact(out, "mass_bound.json", &json).map_err(io_err)?;
    Ok(())
}
