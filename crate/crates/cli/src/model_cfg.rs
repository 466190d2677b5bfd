//! Builds diffusion models from the `[model]` section.

use contraction_core::expr::ScalarExpr;
use contraction_core::model::{
    kinetic_langevin, ornstein_uhlenbeck, overdamped_1d, ColoredNoiseModel, DriftModel,
};
use nalgebra::DMatrix;

use crate::config::{Reader, ResolvedConfig};
use crate::ops::CliFailure;

pub fn build_model(r: &Reader, rc: &mut ResolvedConfig) -> Result<DriftModel, CliFailure> {
    let kind = r
        .require_str("model", "kind")
        .map_err(CliFailure::config)?;
    rc.set("model", "kind", kind.clone());
    match kind.as_str() {
        "ou" => {
            let rate = r.f64_or("model", "rate", 1.0).map_err(CliFailure::config)?;
            let dim = r.u64_or("model", "dim", 1).map_err(CliFailure::config)? as usize;
            let theta = r.f64_or("model", "theta", 1.0).map_err(CliFailure::config)?;
            rc.set_f64("model", "rate", rate);
            rc.set("model", "dim", dim.to_string());
            rc.set_f64("model", "theta", theta);
            ornstein_uhlenbeck(rate, dim, theta)
                .map_err(|e| CliFailure::Config(format!("model: {e}")))
        }
        "overdamped1d" => {
            let (expr, source) = read_potential(r, rc)?;
            let theta = r
                .require_f64("model", "theta")
                .map_err(CliFailure::config)?;
            rc.set_f64("model", "theta", theta);
            let _ = source;
            overdamped_1d(&expr, theta)
                .map_err(|e| CliFailure::Config(format!("model: {e}")))
        }
        "kinetic" => {
            let (expr, _) = read_potential(r, rc)?;
            let gamma = r
                .require_f64("model", "gamma")
                .map_err(CliFailure::config)?;
            let theta = r
                .require_f64("model", "theta")
                .map_err(CliFailure::config)?;
            let dim = r.u64_or("model", "dim", 1).map_err(CliFailure::config)? as usize;
            rc.set_f64("model", "gamma", gamma);
            rc.set_f64("model", "theta", theta);
            rc.set("model", "dim", dim.to_string());
            kinetic_langevin(&expr, gamma, theta, dim)
                .map_err(|e| CliFailure::Config(format!("model: {e}")))
        }
        "colored" => Ok(build_colored(r, rc)?.raw_model().clone()),
        other => Err(CliFailure::Config(format!(
            "model.kind: unknown kind `{other}` (expected ou|overdamped1d|kinetic|colored)"
        ))),
    }
}

pub fn build_colored(r: &Reader, rc: &mut ResolvedConfig) -> Result<ColoredNoiseModel, CliFailure> {
    let (expr, _) = read_potential(r, rc)?;
    let n = r.u64_or("model", "n", 1).map_err(CliFailure::config)? as usize;
    let m = r.u64_or("model", "m", 1).map_err(CliFailure::config)? as usize;
    let a_entries = r
        .optional_vec("model", "a")
        .map_err(CliFailure::config)?
        .unwrap_or_else(|| {
            let mut id = vec![0.0; n * m];
            for i in 0..n.min(m) {
                id[i * m + i] = 1.0;
            }
            id
        });
    if a_entries.len() != n * m {
        return Err(CliFailure::Config(format!(
            "model.a: expected {} entries for a {n}x{m} matrix, got {}",
            n * m,
            a_entries.len()
        )));
    }
    let sigma0 = r
        .require_f64("model", "sigma0")
        .map_err(CliFailure::config)?;
    let eta_cv = r
        .optional_f64("model", "eta_cv")
        .map_err(CliFailure::config)?;
    rc.set("model", "n", n.to_string());
    rc.set("model", "m", m.to_string());
    rc.set(
        "model",
        "a",
        a_entries
            .iter()
            .map(|v| crate::output::fmt17(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    rc.set_f64("model", "sigma0", sigma0);
    let a = DMatrix::from_row_slice(n, m, &a_entries);
    let colored = ColoredNoiseModel::new(&expr, a, sigma0, eta_cv)
        .map_err(|e| CliFailure::Config(format!("model: {e}")))?;
    rc.set_f64("model", "eta_cv", colored.eta_cv());
    Ok(colored)
}

pub fn read_potential(
    r: &Reader,
    rc: &mut ResolvedConfig,
) -> Result<(ScalarExpr, String), CliFailure> {
    let source = r
        .require_str("model", "potential")
        .map_err(CliFailure::config)?;
    let params = r.expr_params("model").map_err(CliFailure::config)?;
    let expr = ScalarExpr::parse(&source, &params)
        .map_err(|e| CliFailure::Config(format!("model.potential: {e}")))?;
    rc.set("model", "potential", source.clone());
    for (name, value) in &params {
        rc.set_f64("model", &format!("param.{name}"), *value);
    }
    Ok((expr, source))
}
