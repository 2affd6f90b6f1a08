//! The subcommands. Each writes its CSV files into the output directory and
//! returns what it computed, so callers can inspect results without re-reading.

use std::path::Path;

use mmdiv_core::barriers::{check_xi_membership, XiVerdict};
use mmdiv_core::model::epoch_discount_factors;
use mmdiv_core::solver::{value_iterate, SolveResult, MIN_NODES};
use mmdiv_core::strategy::{estimate_npv, simulate_rules, ModelBound, StrategyRule};
use mmdiv_core::DividendClock;

use crate::config::RunConfig;
use crate::report::{self, fmt};
use crate::CliError;

fn solve_with_clock(
    cfg: &RunConfig,
    clock: &DividendClock,
    grid: mmdiv_core::solver::GridParams,
) -> Result<SolveResult, CliError> {
    if grid.n_nodes < MIN_NODES {
        return Err(CliError::Config(vec![format!(
            "grid: {} nodes, at least {MIN_NODES} are required",
            grid.n_nodes
        )]));
    }
    Ok(value_iterate(&cfg.model, clock, &grid, &cfg.mc(clock), &cfg.solver)?)
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<SolveResult, CliError> {
    let r = solve_with_clock(cfg, &cfg.clock, cfg.grid_params())?;
    report::write_values(out, &cfg.model, &r)?;
    report::write_barriers(out, &cfg.model, &r)?;
    report::write_convergence(out, &r)?;
    for (y, name) in cfg.model.states.iter().enumerate() {
        println!(
            "{name}: b_lower = {} b_upper = {} (se {:.3e})  V(0) = {:.6}",
            r.barriers.lower[y], r.barriers.upper[y], r.barrier_se[y], r.value.values[y][0]
        );
    }
    println!(
        "{} iterations, contraction {:.6}, grid error {:.3e}, max value se {:.3e}, class check {}",
        r.iterations,
        r.contraction_ratio,
        r.grid_error,
        r.max_value_se(),
        if r.gamma.passed() { "passed" } else { "failed" }
    );
    Ok(r)
}

/// Band membership of the `b_lower` column of a barrier file. `slack` defaults
/// to the configured grid spacing.
pub fn verify(cfg: &RunConfig, barriers: &Path, slack: Option<f64>, out: &Path) -> Result<XiVerdict, CliError> {
    let b = report::read_barriers(barriers, &cfg.model, "b_lower")?;
    let slack = slack.unwrap_or_else(|| cfg.grid_params().h());
    let v = check_xi_membership(&cfg.model, &cfg.clock, &b, &cfg.sim(), slack)?;
    report::write_verdicts(out, &cfg.model, &v)?;
    for s in &v.states {
        println!(
            "{}: b = {} rho1 = {:.6} ({:.1e}) rho2 = {:.6} ({:.1e}) -> {}{}",
            cfg.model.states[s.state],
            s.barrier,
            s.rho1.value,
            s.rho1.std_error,
            s.rho2.value,
            s.rho2.std_error,
            s.membership.as_str(),
            if s.null { " (null state)" } else { "" }
        );
    }
    let failing = v.failing();
    if !failing.is_empty() {
        let names: Vec<&str> = failing.iter().map(|y| cfg.model.states[*y].as_str()).collect();
        return Err(CliError::Failed(format!(
            "barrier fails band membership in state(s): {}",
            names.join(", ")
        )));
    }
    Ok(v)
}

pub const DEFAULT_X0: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];

pub const STRATEGIES: [&str; 4] = ["mmpcb", "mmpcb-upper", "never-pay", "pay-all-at-0-barrier"];

#[derive(Debug, Clone, PartialEq)]
pub struct NpvRow {
    pub state: usize,
    pub x0: f64,
    pub npv: f64,
    pub std_error: f64,
    pub bias_bound: f64,
    /// Solver reference `(value, se, grid error)` when one applies.
    pub reference: Option<(f64, f64, f64)>,
}

impl NpvRow {
    pub fn tolerance(&self) -> Option<f64> {
        self.reference
            .map(|(_, se, ge)| 3.0 * self.std_error.hypot(se) + ge + self.bias_bound)
    }

    pub fn within(&self) -> Option<bool> {
        let (v, _, _) = self.reference?;
        Some((self.npv - v).abs() <= self.tolerance()?)
    }
}

/// Simulates a named strategy from every state and each `x0`.
///
/// `mmpcb` uses the `b_lower` column of `barriers` or, without a file, the
/// solver's lower barrier; `mmpcb-upper` pays down to the upper barrier. When
/// the solver runs, its value (or `v0` for `never-pay`) is reported next to the
/// simulated NPV and a mismatch beyond the combined tolerance is a failure.
pub fn simulate(
    cfg: &RunConfig,
    strategy: &str,
    barriers: Option<&Path>,
    x0s: &[f64],
    samples: bool,
    out: &Path,
) -> Result<Vec<NpvRow>, CliError> {
    if !STRATEGIES.contains(&strategy) {
        return Err(CliError::Usage(format!(
            "unknown strategy `{strategy}` (expected one of {})",
            STRATEGIES.join(", ")
        )));
    }
    if x0s.is_empty() || x0s.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Usage("--x0 needs at least one finite value".into()));
    }
    let spec = &cfg.model;
    let needs_solver = matches!(strategy, "mmpcb" | "mmpcb-upper" | "never-pay") && barriers.is_none();
    let solved = if needs_solver {
        Some(solve_with_clock(cfg, &cfg.clock, cfg.grid_params())?)
    } else {
        None
    };
    let rule = match strategy {
        "mmpcb" | "mmpcb-upper" => {
            let b = match (barriers, &solved) {
                (Some(p), _) => {
                    let col = if strategy == "mmpcb" { "b_lower" } else { "b_upper" };
                    report::read_barriers(p, spec, col)?
                }
                (None, Some(r)) if strategy == "mmpcb" => r.barriers.lower.clone(),
                (None, Some(r)) => r.barriers.upper.clone(),
                (None, None) => unreachable!("solver runs when no barrier file is given"),
            };
            if b.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(CliError::Usage("barriers must be nonnegative".into()));
            }
            StrategyRule::barrier(b)
        }
        "never-pay" => StrategyRule::never(),
        _ => StrategyRule::pay_all(),
    };
    let params = cfg.sim();
    let bound = ModelBound::estimate(spec, &cfg.clock, params.dt, params.seed)?;
    let mut rows = Vec::new();
    let mut sample_rows = Vec::new();
    for y in 0..spec.n_states() {
        let sims = simulate_rules(spec, &cfg.clock, std::slice::from_ref(&rule), x0s, y, &params)?;
        for (s, &x) in sims[0].iter().zip(x0s) {
            let e = estimate_npv(s, x, &bound)?;
            let reference = solved.as_ref().map(|r| {
                if strategy == "never-pay" {
                    (r.v0.eval(y, x), r.v0_se_at(y, x), r.grid_error)
                } else {
                    (r.value_at(y, x), r.se_at(y, x), r.grid_error)
                }
            });
            rows.push(NpvRow {
                state: y,
                x0: x,
                npv: e.mean,
                std_error: e.std_error,
                bias_bound: e.bias_bound,
                reference,
            });
            if samples {
                for (i, (d, inj)) in s.dividends.iter().zip(&s.injections).enumerate() {
                    sample_rows.push(vec![
                        spec.states[y].clone(),
                        fmt(x),
                        i.to_string(),
                        fmt(*d),
                        fmt(*inj),
                        fmt(d - spec.beta * inj),
                    ]);
                }
            }
        }
    }

    let mut header: Vec<String> = [
        "state",
        "x0",
        "strategy",
        "npv",
        "se",
        "bias_bound",
        "n_paths",
        "horizon",
    ]
    .map(String::from)
    .to_vec();
    if solved.is_some() {
        header.extend(["solver_value", "solver_se", "grid_error", "diff", "tolerance", "within"].map(String::from));
    }
    let horizon = params.horizon_for(epoch_discount_factors(spec, &cfg.clock).into_iter().fold(0.0, f64::max));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                spec.states[r.state].clone(),
                fmt(r.x0),
                strategy.to_string(),
                fmt(r.npv),
                fmt(r.std_error),
                fmt(r.bias_bound),
                params.n_paths.to_string(),
                horizon.to_string(),
            ];
            if let Some((v, se, ge)) = r.reference {
                row.extend([
                    fmt(v),
                    fmt(se),
                    fmt(ge),
                    fmt(r.npv - v),
                    fmt(r.tolerance().unwrap_or(f64::NAN)),
                    r.within().unwrap_or(false).to_string(),
                ]);
            }
            row
        })
        .collect();
    report::write_table(out, "npv.csv", &header, &table)?;
    if samples {
        let h = ["state", "x0", "path", "dividends", "injections", "npv"].map(String::from);
        report::write_table(out, "samples.csv", &h, &sample_rows)?;
    }

    for r in &rows {
        print!(
            "{} x0 = {}: npv = {:.6} +- {:.2e}",
            spec.states[r.state], r.x0, r.npv, r.std_error
        );
        if let Some((v, _, _)) = r.reference {
            print!(
                "  solver {:.6} diff {:+.3e} tol {:.3e}",
                v,
                r.npv - v,
                r.tolerance().unwrap_or(f64::NAN)
            );
        }
        println!();
    }
    let worst = rows
        .iter()
        .filter(|r| r.within() == Some(false))
        .map(|r| (r.npv - r.reference.unwrap().0).abs())
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
    if let Some(d) = worst {
        return Err(CliError::Failed(format!(
            "simulated NPV departs from the solver value by up to {d:.3e}, beyond the combined tolerance"
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Deterministic clocks with spacing `2^-n`, `n = 0..=n_max`.
    Deterministic,
    /// Exponential clocks with rate `n`, `n = 1..=n_max`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub n: usize,
    pub state: usize,
    /// `None` for a barrier violation.
    pub x: Option<f64>,
    pub excess: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct SweepStep {
    pub n: usize,
    pub clock: DividendClock,
    pub result: SolveResult,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub steps: Vec<SweepStep>,
    pub violations: Vec<Violation>,
}

impl SweepResult {
    /// Lower barrier of the finest clock, reported as an estimate of the limit.
    pub fn limit_estimate(&self) -> Vec<f64> {
        self.steps
            .last()
            .map(|s| s.result.barriers.lower.clone())
            .unwrap_or_default()
    }
}

/// Probe points of `sweep.csv`.
pub const SWEEP_PROBES: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

fn clock_label(c: &DividendClock) -> String {
    match c {
        DividendClock::Deterministic { delta } => format!("deterministic({delta})"),
        DividendClock::Exponential { rate } => format!("exponential({rate})"),
        DividendClock::AtomMixture { .. } => "atom-mixture".into(),
    }
}

/// Checks that successive solves increase pointwise and that lower barriers do
/// not decrease, up to the declared tolerances.
pub fn monotonicity(kind: SweepKind, steps: &[SweepStep]) -> Vec<Violation> {
    let mut out = Vec::new();
    for w in steps.windows(2) {
        let (a, b) = (&w[0].result, &w[1].result);
        let h = a.grid().h;
        let ge = a.grid_error.max(b.grid_error);
        for y in 0..a.value.values.len() {
            for (i, x) in a.grid().nodes.iter().enumerate() {
                let tol = (3.0 * a.value_se[y][i].hypot(b.value_se[y][i])).max(ge);
                let excess = a.value.values[y][i] - b.value.values[y][i];
                if excess > tol {
                    out.push(Violation {
                        n: w[1].n,
                        state: y,
                        x: Some(*x),
                        excess,
                        tolerance: tol,
                    });
                }
            }
            let tol = match kind {
                SweepKind::Deterministic => h,
                SweepKind::Poisson => h + 3.0 * a.barrier_se[y].hypot(b.barrier_se[y]),
            } * (1.0 + 1e-9);
            let excess = a.barriers.lower[y] - b.barriers.lower[y];
            if excess > tol {
                out.push(Violation {
                    n: w[1].n,
                    state: y,
                    x: None,
                    excess,
                    tolerance: tol,
                });
            }
        }
    }
    out
}

pub fn sweep(cfg: &RunConfig, kind: SweepKind, n_max: usize, out: &Path) -> Result<SweepResult, CliError> {
    let ns: Vec<usize> = match kind {
        SweepKind::Deterministic => (0..=n_max).collect(),
        SweepKind::Poisson if n_max >= 1 => (1..=n_max).collect(),
        SweepKind::Poisson => return Err(CliError::Usage("--n-max must be at least 1".into())),
    };
    let clocks: Vec<DividendClock> = ns
        .iter()
        .map(|&n| match kind {
            SweepKind::Deterministic => DividendClock::Deterministic {
                delta: 0.5f64.powi(n as i32),
            },
            SweepKind::Poisson => DividendClock::Exponential { rate: n as f64 },
        })
        .collect();
    let grid = cfg.grid.resolve(&cfg.model, &clocks.iter().collect::<Vec<_>>());
    let mut steps = Vec::new();
    for (&n, clock) in ns.iter().zip(&clocks) {
        let result = solve_with_clock(cfg, clock, grid)?;
        println!(
            "n = {n} ({}): b_lower = {:?} b_upper = {:?}",
            clock_label(clock),
            result.barriers.lower,
            result.barriers.upper
        );
        steps.push(SweepStep {
            n,
            clock: clock.clone(),
            result,
        });
    }
    let violations = monotonicity(kind, &steps);
    let res = SweepResult {
        kind,
        steps,
        violations,
    };

    let probes: Vec<f64> = SWEEP_PROBES.iter().copied().filter(|x| *x <= grid.x_max).collect();
    let mut header: Vec<String> = ["n", "clock", "state", "b_lower", "b_upper", "epoch_discount"]
        .map(String::from)
        .to_vec();
    header.extend(probes.iter().map(|x| format!("V@{x}")));
    header.push("b_lower_limit_estimate".into());
    let limit = res.limit_estimate();
    let mut rows = Vec::new();
    for s in &res.steps {
        for (y, name) in cfg.model.states.iter().enumerate() {
            let mut row = vec![
                s.n.to_string(),
                clock_label(&s.clock),
                name.clone(),
                fmt(s.result.barriers.lower[y]),
                fmt(s.result.barriers.upper[y]),
                fmt(s.result.epoch_discount[y]),
            ];
            row.extend(probes.iter().map(|x| fmt(s.result.value_at(y, *x))));
            row.push(fmt(limit[y]));
            rows.push(row);
        }
    }
    report::write_table(out, "sweep.csv", &header, &rows)?;
    let vh = ["n", "state", "x", "quantity", "excess", "tolerance"].map(String::from);
    let vrows: Vec<Vec<String>> = res
        .violations
        .iter()
        .map(|v| {
            vec![
                v.n.to_string(),
                cfg.model.states[v.state].clone(),
                v.x.map(fmt).unwrap_or_default(),
                if v.x.is_some() { "value" } else { "b_lower" }.into(),
                fmt(v.excess),
                fmt(v.tolerance),
            ]
        })
        .collect();
    report::write_table(out, "sweep_violations.csv", &vh, &vrows)?;

    if let Some(v) = res.violations.first() {
        let at =
            v.x.map(|x| format!("x = {x}"))
                .unwrap_or_else(|| "lower barrier".into());
        return Err(CliError::Failed(format!(
            "monotonicity violated at n = {}, state {}, {at}: decrease {:.3e} exceeds tolerance {:.3e} ({} violation(s) in sweep_violations.csv)",
            v.n,
            cfg.model.states[v.state],
            v.excess,
            v.tolerance,
            res.violations.len()
        )));
    }
    Ok(res)
}
