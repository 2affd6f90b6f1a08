//! Run configuration: a TOML document with `[model]`, `[clock]`, `[grid]`,
//! `[mc]` and an optional `[solver]` section. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use mmdiv_core::model::{validate_model, DEFAULT_Q_FLOOR};
use mmdiv_core::sampling::{default_dt, SimParams};
use mmdiv_core::solver::{default_x_max, GridParams, McParams, SolverOptions, MIN_NODES};
use mmdiv_core::{DividendClock, JumpLaw, ModelSpec, Regime};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    clock: DividendClock,
    #[serde(default)]
    grid: RawGrid,
    mc: RawMc,
    #[serde(default)]
    solver: RawSolver,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    beta: f64,
    q_floor: Option<f64>,
    generator: Option<Vec<Vec<f64>>>,
    states: Vec<RawState>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    name: String,
    drift: f64,
    #[serde(default)]
    volatility: f64,
    discount: f64,
    #[serde(default)]
    jump_rate: f64,
    jump: Option<JumpLaw>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    x_max: Option<f64>,
    n_nodes: Option<i64>,
    h: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n_paths: i64,
    seed: u64,
    dt: Option<f64>,
    horizon: Option<i64>,
    horizon_ceiling: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eps_rel: Option<f64>,
    max_iter: Option<i64>,
    tol_d: Option<f64>,
    gamma_tol_rel: Option<f64>,
}

/// Grid request; resolved against a clock because the default domain depends on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_max: Option<f64>,
    pub n_nodes: Option<usize>,
    pub h: Option<f64>,
}

/// Default spacing when the grid section gives neither `n_nodes` nor `h`.
pub const DEFAULT_H: f64 = 0.025;

impl GridSpec {
    pub fn resolve(&self, spec: &ModelSpec, clocks: &[&DividendClock]) -> GridParams {
        let x_max = self
            .x_max
            .unwrap_or_else(|| clocks.iter().map(|c| default_x_max(spec, c)).fold(0.0, f64::max));
        match (self.n_nodes, self.h) {
            (Some(n), _) => GridParams { x_max, n_nodes: n },
            (None, h) => GridParams::with_spacing(x_max, h.unwrap_or(DEFAULT_H)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub clock: DividendClock,
    pub grid: GridSpec,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    pub horizon_ceiling: f64,
    pub solver: SolverOptions,
}

/// Command-line overrides of `[mc]` fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.paths {
            if n == 0 {
                return Err(CliError::Config(vec!["--paths: must be positive".into()]));
            }
            self.n_paths = n;
        }
        if let Some(dt) = o.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Config(vec![format!("--dt: must be positive (got {dt})")]));
            }
            self.dt = Some(dt);
        }
        Ok(())
    }

    pub fn dt_for(&self, clock: &DividendClock) -> f64 {
        self.dt.unwrap_or_else(|| default_dt(clock))
    }

    pub fn mc(&self, clock: &DividendClock) -> McParams {
        McParams {
            n_paths: self.n_paths,
            dt: self.dt_for(clock),
            seed: self.seed,
        }
    }

    pub fn sim(&self) -> SimParams {
        SimParams {
            n_paths: self.n_paths,
            dt: self.dt_for(&self.clock),
            seed: self.seed,
            horizon: self.horizon,
            horizon_ceiling: self.horizon_ceiling,
        }
    }

    pub fn grid_params(&self) -> GridParams {
        self.grid.resolve(&self.model, &[&self.clock])
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

fn positive(errs: &mut Vec<String>, field: &str, v: Option<f64>) {
    if let Some(v) = v {
        if !(v > 0.0 && v.is_finite()) {
            errs.push(format!("{field}: must be positive (got {v})"));
        }
    }
}

fn count(errs: &mut Vec<String>, field: &str, v: Option<i64>) -> Option<usize> {
    match v {
        Some(n) if n > 0 => Some(n as usize),
        Some(n) => {
            errs.push(format!("{field}: must be a positive integer (got {n})"));
            None
        }
        None => None,
    }
}

/// Parses and validates a configuration document, collecting every field error.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    let mut errs = Vec::new();

    let m = raw.model;
    let n = m.states.len();
    for (i, s) in m.states.iter().enumerate() {
        if m.states[..i].iter().any(|o| o.name == s.name) {
            errs.push(format!("model.states: duplicate state identifier `{}`", s.name));
        }
    }
    let generator = match m.generator {
        Some(g) => g,
        None if n == 1 => vec![vec![0.0]],
        None => {
            errs.push(format!("model.generator: required for {n} states"));
            vec![vec![0.0; n]; n]
        }
    };
    let model = ModelSpec {
        states: m.states.iter().map(|s| s.name.clone()).collect(),
        generator,
        regimes: m
            .states
            .iter()
            .map(|s| Regime {
                drift: s.drift,
                volatility: s.volatility,
                jump_rate: s.jump_rate,
                jump: s.jump.clone(),
            })
            .collect(),
        discount: m.states.iter().map(|s| s.discount).collect(),
        q_floor: m.q_floor.unwrap_or(DEFAULT_Q_FLOOR),
        beta: m.beta,
    };
    if errs.is_empty() {
        errs.extend(
            validate_model(&model)
                .failures()
                .into_iter()
                .map(|f| format!("model: {f}")),
        );
    }

    if let Err(e) = raw.clock.validate() {
        errs.push(format!("clock: {e}"));
    }

    let g = raw.grid;
    positive(&mut errs, "grid.x_max", g.x_max);
    positive(&mut errs, "grid.h", g.h);
    let n_nodes = count(&mut errs, "grid.n_nodes", g.n_nodes);
    if let Some(nn) = n_nodes {
        if nn < MIN_NODES {
            errs.push(format!(
                "grid.n_nodes: at least {MIN_NODES} nodes are required (got {nn})"
            ));
        }
    }
    if g.n_nodes.is_some() && g.h.is_some() {
        errs.push("grid: give either n_nodes or h, not both".into());
    }
    if let (Some(x), Some(h)) = (g.x_max, g.h) {
        if x > 0.0 && h > 0.0 && x / h < (MIN_NODES - 1) as f64 - 1e-9 {
            errs.push(format!(
                "grid.h: spacing {h} leaves fewer than {MIN_NODES} nodes on [0, {x}]"
            ));
        }
    }

    let mc = raw.mc;
    let n_paths = count(&mut errs, "mc.n_paths", Some(mc.n_paths)).unwrap_or(0);
    positive(&mut errs, "mc.dt", mc.dt);
    let horizon = count(&mut errs, "mc.horizon", mc.horizon);
    let horizon_ceiling = mc.horizon_ceiling.unwrap_or(0.01);
    if !(0.0..=1.0).contains(&horizon_ceiling) {
        errs.push(format!(
            "mc.horizon_ceiling: must lie in [0, 1] (got {horizon_ceiling})"
        ));
    }

    let s = raw.solver;
    let mut solver = SolverOptions::default();
    positive(&mut errs, "solver.eps_rel", s.eps_rel);
    positive(&mut errs, "solver.tol_d", s.tol_d);
    positive(&mut errs, "solver.gamma_tol_rel", s.gamma_tol_rel);
    if let Some(v) = s.eps_rel {
        solver.eps_rel = v;
    }
    if let Some(v) = s.tol_d {
        solver.tol_d = v;
    }
    if let Some(v) = s.gamma_tol_rel {
        solver.gamma_tol_rel = v;
    }
    if let Some(v) = count(&mut errs, "solver.max_iter", s.max_iter) {
        solver.max_iter = v;
    }

    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    Ok(RunConfig {
        model,
        clock: raw.clock,
        grid: GridSpec {
            x_max: g.x_max,
            n_nodes,
            h: g.h,
        },
        n_paths,
        seed: mc.seed,
        dt: mc.dt,
        horizon,
        horizon_ceiling,
        solver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
beta = 1.5
[[model.states]]
name = "s0"
drift = 1.0
discount = 0.1

[clock]
kind = "deterministic"
delta = 1.0

[mc]
n_paths = 100
seed = 3
"#;

    fn errors(doc: &str) -> Vec<String> {
        match parse(doc) {
            Err(CliError::Config(e)) => e,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_document_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.model.generator, vec![vec![0.0]]);
        assert_eq!(c.model.q_floor, DEFAULT_Q_FLOOR);
        assert_eq!(c.model.regimes[0].volatility, 0.0);
        assert_eq!(c.horizon_ceiling, 0.01);
        assert_eq!(c.solver, SolverOptions::default());
        let g = c.grid_params();
        assert!((g.h() - DEFAULT_H).abs() < 1e-12);
        assert_eq!(c.dt_for(&c.clock), 1.0 / 200.0);
    }

    #[test]
    fn negative_paths_names_the_field() {
        let e = errors(&MINIMAL.replace("n_paths = 100", "n_paths = -5"));
        assert!(e.iter().any(|m| m.contains("n_paths")), "{e:?}");
    }

    #[test]
    fn duplicate_states_are_rejected() {
        let doc = MINIMAL.replace(
            "[clock]",
            "[[model.states]]\nname = \"s0\"\ndrift = 0.0\ndiscount = 0.1\n\n[clock]",
        ) + "";
        let doc = doc.replace("beta = 1.5", "beta = 1.5\ngenerator = [[-1.0, 1.0], [1.0, -1.0]]");
        let e = errors(&doc);
        assert!(e.iter().any(|m| m.contains("duplicate state identifier")), "{e:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = errors(&MINIMAL.replace("seed = 3", "seed = 3\nthreads = 4"));
        assert!(e[0].contains("threads"), "{e:?}");
    }

    #[test]
    fn too_few_nodes() {
        let e = errors(&(MINIMAL.to_string() + "[grid]\nx_max = 4.0\nn_nodes = 8\n"));
        assert!(e.iter().any(|m| m.contains("grid.n_nodes")), "{e:?}");
    }

    #[test]
    fn model_failures_are_reported() {
        let e = errors(&MINIMAL.replace("beta = 1.5", "beta = 0.5"));
        assert!(e.iter().any(|m| m.contains("beta must exceed 1")), "{e:?}");
    }

    #[test]
    fn overrides() {
        let mut c = parse(MINIMAL).unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            paths: Some(50),
            dt: Some(0.02),
        })
        .unwrap();
        assert_eq!((c.seed, c.n_paths, c.dt), (9, 50, Some(0.02)));
        assert!(c
            .apply(&Overrides {
                paths: Some(0),
                ..Default::default()
            })
            .is_err());
    }
}
