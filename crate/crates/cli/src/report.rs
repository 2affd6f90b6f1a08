//! CSV outputs. Floats are written in shortest round-trip form so that reruns
//! are byte-identical.

use std::path::Path;

use csv::Writer;

use mmdiv_core::barriers::XiVerdict;
use mmdiv_core::solver::SolveResult;
use mmdiv_core::ModelSpec;

use crate::CliError;

fn writer(dir: &Path, name: &str) -> Result<Writer<std::fs::File>, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(Writer::from_path(dir.join(name))?)
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// `state,x,V,dV,v0,V_se,dV_se`
pub fn write_values(dir: &Path, spec: &ModelSpec, r: &SolveResult) -> Result<(), CliError> {
    let mut w = writer(dir, "values.csv")?;
    w.write_record(["state", "x", "V", "dV", "v0", "V_se", "dV_se"])?;
    for (y, name) in spec.states.iter().enumerate() {
        for (i, x) in r.grid().nodes.iter().enumerate() {
            w.write_record([
                name.clone(),
                f(*x),
                f(r.value.values[y][i]),
                f(r.value.derivs[y][i]),
                f(r.v0.values[y][i]),
                f(r.value_se[y][i]),
                f(r.deriv_se[y][i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `state,b_lower,b_upper,flags,b_se`; `flags` is `ok` or `dual-mismatch` when
/// the derivative-space fixed point puts a barrier more than one cell away.
pub fn write_barriers(dir: &Path, spec: &ModelSpec, r: &SolveResult) -> Result<(), CliError> {
    let mut w = writer(dir, "barriers.csv")?;
    w.write_record(["state", "b_lower", "b_upper", "flags", "b_se"])?;
    let h = r.grid().h;
    for (y, name) in spec.states.iter().enumerate() {
        let lo = r.barriers.lower[y];
        let hi = r.barriers.upper[y];
        let off = (lo - r.dual_barriers.lower[y])
            .abs()
            .max((hi - r.dual_barriers.upper[y]).abs());
        let flag = if off > h * (1.0 + 1e-9) { "dual-mismatch" } else { "ok" };
        w.write_record([name.clone(), f(lo), f(hi), flag.into(), f(r.barrier_se[y])])?;
    }
    w.flush()?;
    Ok(())
}

/// `iter,sup_change,projection,gamma_passed`
pub fn write_convergence(dir: &Path, r: &SolveResult) -> Result<(), CliError> {
    let mut w = writer(dir, "convergence.csv")?;
    w.write_record(["iter", "sup_change", "projection", "gamma_passed"])?;
    for (i, rec) in r.records.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            f(rec.sup_change),
            f(rec.projection),
            rec.gamma_passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `state,b,rho1,rho1_se,rho2,rho2_se,verdict,p_b,null,horizon_share`
pub fn write_verdicts(dir: &Path, spec: &ModelSpec, v: &XiVerdict) -> Result<(), CliError> {
    let mut w = writer(dir, "verdicts.csv")?;
    w.write_record([
        "state",
        "b",
        "rho1",
        "rho1_se",
        "rho2",
        "rho2_se",
        "verdict",
        "p_b",
        "null",
        "horizon_share",
    ])?;
    for s in &v.states {
        w.write_record([
            spec.states[s.state].clone(),
            f(s.barrier),
            f(s.rho1.value),
            f(s.rho1.std_error),
            f(s.rho2.value),
            f(s.rho2.std_error),
            s.membership.as_str().into(),
            s.mixing.map(f).unwrap_or_default(),
            s.null.to_string(),
            f(s.rho1.horizon_share.max(s.rho2.horizon_share)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic table writer for the simulate and sweep outputs.
pub fn write_table(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(dir, name)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmt(v: f64) -> String {
    f(v)
}

/// Reads the `state` and `b_lower` (or `b`) columns of a barrier file, ordered
/// as the model's states.
pub fn read_barriers(path: &Path, spec: &ModelSpec, column: &str) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read barrier file {}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let si = col("state").ok_or_else(|| CliError::Usage("barrier file has no `state` column".into()))?;
    let bi = col(column)
        .or_else(|| col("b"))
        .ok_or_else(|| CliError::Usage(format!("barrier file has no `{column}` column")))?;
    let mut out = vec![None; spec.n_states()];
    for rec in r.records() {
        let rec = rec?;
        let name = &rec[si];
        let y = spec
            .state_index(name)
            .ok_or_else(|| CliError::Usage(format!("barrier file names unknown state `{name}`")))?;
        let b: f64 = rec[bi]
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("barrier for state `{name}` is not a number: `{}`", &rec[bi])))?;
        out[y] = Some(b);
    }
    let missing: Vec<&str> = spec
        .states
        .iter()
        .zip(&out)
        .filter(|(_, b)| b.is_none())
        .map(|(n, _)| n.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "barrier file is missing state(s): {}",
            missing.join(", ")
        )));
    }
    Ok(out.into_iter().flatten().collect())
}
