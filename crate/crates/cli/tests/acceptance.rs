//! Acceptance run: prints one `[PASS]`/`[FAIL] criterion N` line per criterion
//! and exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use mmdiv_cli::commands::{self, SweepKind, DEFAULT_X0};
use mmdiv_cli::config;
use mmdiv_core::barriers::{
    check_xi_membership, density_crosscheck_with, estimate_rho, estimate_rho_p, estimate_varrho_p, mixing_profile,
    RhoEstimate, RhoVariant, TIE, Z,
};
use mmdiv_core::presets;
use mmdiv_core::sampling::SimParams;
use mmdiv_core::solver::{value_iterate, GridParams, McParams, SolveResult, SolverOptions};
use mmdiv_core::strategy::{estimate_npv, paired_difference, simulate_rules, ModelBound, StrategyRule};
use mmdiv_core::{DividendClock, ModelSpec};

const H: f64 = 0.025;
const PATHS: usize = 100_000;
const SOLVER_PATHS: usize = 100_000;

type Outcome = Result<String, String>;

struct Instance {
    name: &'static str,
    spec: ModelSpec,
    clock: DividendClock,
    solve: SolveResult,
    sim: SimParams,
}

impl Instance {
    fn new(name: &'static str, spec: ModelSpec, clock: DividendClock, solver_paths: usize, paths: usize) -> Self {
        let grid = GridParams::default_for(&spec, &clock, H);
        let mc = McParams {
            n_paths: solver_paths,
            dt: 0.01,
            seed: 7,
        };
        let solve = value_iterate(&spec, &clock, &grid, &mc, &SolverOptions::default()).expect("solve");
        Instance {
            name,
            spec,
            clock,
            solve,
            sim: SimParams::new(paths, 0.01, 11),
        }
    }

    fn lower(&self) -> Vec<f64> {
        self.solve.barriers.lower.clone()
    }

    fn shifted(&self, by: f64) -> Vec<f64> {
        self.lower().iter().map(|b| (b + by).max(0.0)).collect()
    }
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_1(up: &Instance) -> Outcome {
    let r = &up.solve;
    let tol = r.grid_error.max(1e-2);
    let (v0, v1) = (r.value_at(0, 0.0), r.value_at(0, 1.0));
    let detail = format!(
        "V(0) = {v0:.5}, V(1) = {v1:.5}, b = [{}, {}], tol {tol:.2e}",
        r.barriers.lower[0], r.barriers.upper[0]
    );
    if near(v0, 9.50833, tol) && near(v1, 10.41322, tol) && r.barriers.lower[0] == 0.0 && r.barriers.upper[0] == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2(down: &Instance) -> Outcome {
    let (lo, hi) = (down.solve.barriers.lower[0], down.solve.barriers.upper[0]);
    let h = down.solve.grid().h;
    let star = presets::drift_down_barrier();
    let p = SimParams::new(PATHS, 0.01, 11);
    let r1 = estimate_rho(&down.spec, &down.clock, &[star], 0, RhoVariant::One, &p).map_err(|e| e.to_string())?;
    let r2 = estimate_rho(&down.spec, &down.clock, &[star], 0, RhoVariant::Two, &p).map_err(|e| e.to_string())?;
    let ok_rho = |r: &RhoEstimate| r.std_error <= 0.005 && near(r.value, 1.0, Z * r.std_error + TIE);
    let detail = format!(
        "band [{lo}, {hi}] (h {h}), rho1 = {:.6} ({:.1e}), rho2 = {:.6} ({:.1e}) at {star:.6}",
        r1.value, r1.std_error, r2.value, r2.std_error
    );
    let brackets = lo - h <= star + 1e-12 && star <= hi + h + 1e-12 && h <= H + 1e-12;
    if brackets && ok_rho(&r1) && ok_rho(&r2) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(down: &Instance) -> Outcome {
    let v0 = &down.solve.v0;
    let (a, b) = (v0.eval(0, 0.0), v0.eval(0, 2.0));
    let detail = format!("v0(0) = {a:.5}, v0(2) = {b:.5}");
    if near(a, -7.5, 1e-2) && near(b, -5.02768, 1e-2) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let two = Instance::new(
        "INST-2STATE",
        presets::inst_two_state(),
        presets::two_state_clock(),
        20_000,
        2,
    );
    let r = &two.solve;
    let worst = r.records.iter().map(|x| x.projection).fold(0.0, f64::max);
    let all_gamma = r.records.iter().all(|x| x.gamma_passed);
    let detail = format!(
        "{} iterates, all in class: {all_gamma}, max projection {:.3}%, final {:.3}% (final class check {})",
        r.records.len(),
        100.0 * worst,
        100.0 * r.final_projection,
        r.gamma.passed()
    );
    if all_gamma && worst < 0.02 && r.gamma.passed() && r.final_projection < 0.005 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5(two: &Instance) -> Outcome {
    let r = &two.solve;
    let h = r.grid().h;
    let mut cell = 0.0f64;
    let mut sup = 0.0f64;
    for y in 0..two.spec.n_states() {
        cell = cell
            .max((r.barriers.lower[y] - r.dual_barriers.lower[y]).abs())
            .max((r.barriers.upper[y] - r.dual_barriers.upper[y]).abs());
        for (a, b) in r.value.derivs[y].iter().zip(&r.dual_derivs[y]) {
            sup = sup.max((a - b).abs());
        }
    }
    let tol = (5.0 * h).max(Z * r.max_deriv_se());
    let detail = format!("barrier gap {cell:.4} (cell {h}), derivative gap {sup:.4} (tol {tol:.4})");
    if cell <= h * (1.0 + 1e-9) && sup <= tol {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6(two: &Instance, bound: &ModelBound) -> Outcome {
    let r = &two.solve;
    let b = two.lower();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_se_share = 0.0f64;
    let mut lines = Vec::new();
    for y in 0..two.spec.n_states() {
        let s = simulate_rules(
            &two.spec,
            &two.clock,
            &[StrategyRule::barrier(b.clone())],
            &DEFAULT_X0,
            y,
            &two.sim,
        )
        .map_err(|e| e.to_string())?;
        for (j, x) in DEFAULT_X0.iter().enumerate() {
            let e = estimate_npv(&s[0][j], *x, bound).map_err(|e| e.to_string())?;
            let v = r.value_at(y, *x);
            let tol = Z * e.std_error.hypot(r.se_at(y, *x)) + r.grid_error + e.bias_bound;
            let gap = (e.mean - v).abs();
            worst = worst.max(gap - tol);
            worst_se_share = worst_se_share.max(e.std_error / r.scale());
            lines.push(format!(
                "{}@{x}: {:.4} vs {v:.4} (tol {tol:.4})",
                two.spec.states[y], e.mean
            ));
        }
    }
    let detail = format!(
        "{}; max MC SE {:.3}% of scale",
        lines.join(", "),
        100.0 * worst_se_share
    );
    if worst <= 0.0 && worst_se_share <= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perturbations(inst: &Instance) -> Vec<(&'static str, Vec<f64>)> {
    let h = inst.solve.grid().h;
    let up: Vec<f64> = inst.solve.barriers.upper.iter().map(|b| b + 2.0 * h).collect();
    let mut out = vec![("upper+2h", up)];
    if inst.solve.barriers.lower.iter().any(|b| *b > 0.0) {
        out.push(("lower-2h", inst.shifted(-2.0 * h)));
    }
    out
}

fn criterion_7(insts: &[&Instance]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for inst in insts {
        for (label, pert) in perturbations(inst) {
            let rules = [StrategyRule::barrier(inst.lower()), StrategyRule::barrier(pert)];
            let mut best: Option<(f64, f64, f64)> = None;
            for y in 0..inst.spec.n_states() {
                let s = simulate_rules(&inst.spec, &inst.clock, &rules, &DEFAULT_X0, y, &inst.sim)
                    .map_err(|e| e.to_string())?;
                for (j, x) in DEFAULT_X0.iter().enumerate() {
                    let (d, se) = paired_difference(&s[0][j], &s[1][j]);
                    let margin = d - Z * se;
                    if best.is_none_or(|b| margin > b.0 - Z * b.1) {
                        best = Some((d, se, *x));
                    }
                }
            }
            let (d, se, x) = best.expect("probes");
            let pass = d > Z * se;
            ok &= pass;
            lines.push(format!("{} {label}: gap {d:.5} (se {se:.1e}) at x = {x}", inst.name));
        }
    }
    if ok {
        Ok(lines.join(", "))
    } else {
        Err(lines.join(", "))
    }
}

fn criterion_8(insts: &[&Instance]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for inst in insts {
        let h = inst.solve.grid().h;
        let v = check_xi_membership(&inst.spec, &inst.clock, &inst.lower(), &inst.sim, h).map_err(|e| e.to_string())?;
        let verdicts: Vec<&str> = v.states.iter().map(|s| s.membership.as_str()).collect();
        ok &= v.hat_xi();
        lines.push(format!("{} solver: {verdicts:?}", inst.name));
        for (label, pert) in perturbations(inst) {
            let v = check_xi_membership(&inst.spec, &inst.clock, &pert, &inst.sim, h).map_err(|e| e.to_string())?;
            let verdicts: Vec<&str> = v.states.iter().map(|s| s.membership.as_str()).collect();
            ok &= !v.hat_xi();
            lines.push(format!("{} {label}: {verdicts:?}", inst.name));
        }
    }
    if ok {
        Ok(lines.join(", "))
    } else {
        Err(lines.join(", "))
    }
}

fn varrho(inst: &Instance, b: &[f64], p: &[f64]) -> Result<Vec<RhoEstimate>, String> {
    (0..inst.spec.n_states())
        .map(|y| estimate_varrho_p(&inst.spec, &inst.clock, b, p, y, &inst.sim).map_err(|e| e.to_string()))
        .collect()
}

/// `(rho_p - finite difference, allowance, passed)`.
fn signed_density(
    inst: &Instance,
    b: &[f64],
    p: &[f64],
    x: f64,
    y: usize,
    h_fd: f64,
) -> Result<(f64, f64, bool), String> {
    let d = density_crosscheck_with(&inst.spec, &inst.clock, b, p, x, y, h_fd, &inst.sim).map_err(|e| e.to_string())?;
    Ok((d.rho_p.value - d.finite_difference, d.allowance, d.passed()))
}

/// Identity checks at `b`. Where one misses, the barriers one cell either side
/// (with the mixing probabilities of `b`) must put it on opposite sides within
/// noise.
fn criterion_9_instance(inst: &Instance, b: &[f64], probes: [f64; 2], allow_bracket: bool) -> Outcome {
    let h = inst.solve.grid().h;
    let h_fd = 2.0 * h;
    let below: Vec<f64> = b.iter().map(|v| (v - h).max(0.0)).collect();
    let above: Vec<f64> = b.iter().map(|v| v + h).collect();
    let p = mixing_profile(&inst.spec, &inst.clock, b, &inst.sim).map_err(|e| e.to_string())?;
    let mut lines = vec![format!("p = {p:.4?}")];
    let mut ok = true;

    let at = varrho(inst, b, &p)?;
    let mut bracket: Option<(Vec<RhoEstimate>, Vec<RhoEstimate>)> = None;
    for (y, v) in at.iter().enumerate() {
        let direct = near(v.value, 1.0, Z * v.std_error + TIE);
        let mut line = format!("varrho[{}] = {:.4} ({:.1e})", inst.spec.states[y], v.value, v.std_error);
        if !direct {
            if !allow_bracket {
                ok = false;
            } else {
                if bracket.is_none() {
                    bracket = Some((varrho(inst, &below, &p)?, varrho(inst, &above, &p)?));
                }
                let (lo, hi) = bracket.as_ref().expect("computed");
                let crosses =
                    lo[y].value + Z * lo[y].std_error + TIE >= 1.0 && hi[y].value - Z * hi[y].std_error - TIE <= 1.0;
                ok &= crosses;
                line.push_str(&format!(
                    " bracketed by {:.4} / {:.4}: {crosses}",
                    lo[y].value, hi[y].value
                ));
            }
        }
        lines.push(line);
    }

    for y in 0..inst.spec.n_states() {
        for x in probes {
            let (s, allow, passed) = signed_density(inst, b, &p, x, y, h_fd)?;
            let mut line = format!("density[{}]@{x}: {s:+.4} (allowance {allow:.4})", inst.spec.states[y]);
            if !passed {
                if !allow_bracket {
                    ok = false;
                } else {
                    let (sl, al, _) = signed_density(inst, &below, &p, x, y, h_fd)?;
                    let (sa, aa, _) = signed_density(inst, &above, &p, x, y, h_fd)?;
                    let crosses = sl + al >= 0.0 && sa - aa <= 0.0;
                    ok &= crosses;
                    line.push_str(&format!(" bracketed by {sl:+.4} / {sa:+.4}: {crosses}"));
                }
            }
            lines.push(line);
        }

        let xs = [probes[0], 0.5 * (probes[0] + probes[1]), probes[1]];
        let rho: Vec<RhoEstimate> = xs
            .iter()
            .map(|x| estimate_rho_p(&inst.spec, &inst.clock, b, &p, *x, y, &inst.sim).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let monotone = rho
            .windows(2)
            .all(|w| w[1].value <= w[0].value + Z * w[0].std_error.hypot(w[1].std_error) + TIE);
        ok &= monotone;
        let vals: Vec<String> = rho.iter().map(|r| format!("{:.4}", r.value)).collect();
        lines.push(format!(
            "rho_p[{}] = {} (monotone {monotone})",
            inst.spec.states[y],
            vals.join(" ")
        ));
    }
    let detail = format!("{}: {}", inst.name, lines.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9(down: &Instance, two: &Instance) -> Outcome {
    let a = criterion_9_instance(down, &[presets::drift_down_barrier()], [0.5, 3.0], false);
    let b = criterion_9_instance(two, &two.lower(), [0.2, 2.0], true);
    match (a, b) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        (a, b) => Err(format!("{}; {}", a.unwrap_or_else(|e| e), b.unwrap_or_else(|e| e))),
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn criterion_10() -> Outcome {
    let cfg = config::load(&configs().join("inst-2state.toml")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, n_max) in [(SweepKind::Deterministic, 3), (SweepKind::Poisson, 4)] {
        match commands::sweep(&cfg, kind, n_max, dir.path()) {
            Ok(s) => {
                let first = &s.steps[0].result.barriers.lower;
                let last = s.limit_estimate();
                lines.push(format!("{kind:?}: exit 0, b_lower {first:?} -> {last:?}"));
            }
            Err(e) => {
                ok = false;
                lines.push(format!("{kind:?}: exit {} ({e})", e.exit_code()));
            }
        }
    }
    if ok {
        Ok(lines.join(", "))
    } else {
        Err(lines.join(", "))
    }
}

fn criterion_11(insts: &[&Instance]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for inst in insts {
        let r = &inst.solve;
        for y in 0..inst.spec.n_states() {
            let last = r.value.derivs[y].len() - 1;
            let d = r.value.derivs[y][last];
            let cap = r.epoch_discount[y] + Z * r.deriv_se[y][last] + 1e-9;
            ok &= d <= cap;
            lines.push(format!("{}[{}]: {d:.4} <= {cap:.4}", inst.name, inst.spec.states[y]));
        }
    }
    if ok {
        Ok(lines.join(", "))
    } else {
        Err(lines.join(", "))
    }
}

fn run_binary(threads: &str, out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_mmdiv"))
        .env("RAYON_NUM_THREADS", threads)
        .arg("--config")
        .arg(configs().join("inst-2state.toml"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0) | Some(1) => Ok(()),
        c => Err(format!("{args:?} exited {c:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

fn criterion_12() -> Outcome {
    let one = tempfile::tempdir().map_err(|e| e.to_string())?;
    let four = tempfile::tempdir().map_err(|e| e.to_string())?;
    let barrier_file = one.path().join("b.csv");
    std::fs::write(&barrier_file, "state,b_lower\ngood,0.35\nbad,1.475\n").map_err(|e| e.to_string())?;
    let bf = barrier_file.to_str().expect("utf-8 path");
    let runs: [&[&str]; 4] = [
        &["--paths", "4000", "solve"],
        &["--paths", "4000", "verify", "--barriers", bf],
        &["--paths", "4000", "simulate", "--barriers", bf, "--samples"],
        &["--paths", "2000", "sweep-poisson", "--n-max", "2"],
    ];
    for args in runs {
        run_binary("1", one.path(), args)?;
        run_binary("4", four.path(), args)?;
    }
    let files = [
        "values.csv",
        "barriers.csv",
        "convergence.csv",
        "verdicts.csv",
        "npv.csv",
        "samples.csv",
        "sweep.csv",
        "sweep_violations.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(one.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(four.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            differing.push(f);
        }
    }
    if differing.is_empty() {
        Ok(format!("{} files identical under 1 and 4 workers", files.len()))
    } else {
        Err(format!("differing: {differing:?}"))
    }
}

fn report(n: usize, started: Instant, outcome: Outcome, failed: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("[PASS] criterion {n}: {d} ({secs:.1} s)"),
        Err(d) => {
            *failed += 1;
            println!("[FAIL] criterion {n}: {d} ({secs:.1} s)");
        }
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;

    let t = Instant::now();
    let up = Instance::new(
        "INST-DRIFT+",
        presets::inst_drift_up(),
        presets::unit_clock(),
        1000,
        1000,
    );
    report(1, t, criterion_1(&up), &mut failed);

    let t = Instant::now();
    let down = Instance::new(
        "INST-DRIFT-",
        presets::inst_drift_down(),
        presets::unit_clock(),
        1000,
        10_000,
    );
    report(2, t, criterion_2(&down), &mut failed);

    let t = Instant::now();
    report(3, t, criterion_3(&down), &mut failed);

    let t = Instant::now();
    report(4, t, criterion_4(), &mut failed);

    let t = Instant::now();
    let two = Instance::new(
        "INST-2STATE",
        presets::inst_two_state(),
        presets::two_state_clock(),
        SOLVER_PATHS,
        PATHS,
    );
    let solve_secs = t.elapsed().as_secs_f64();
    println!("INST-2STATE reference solve at {SOLVER_PATHS} paths: {solve_secs:.1} s");
    let t = Instant::now();
    report(5, t, criterion_5(&two), &mut failed);

    let t = Instant::now();
    let outcome = ModelBound::estimate(&two.spec, &two.clock, 0.01, 3)
        .map_err(|e| e.to_string())
        .and_then(|bound| criterion_6(&two, &bound));
    report(6, t, outcome, &mut failed);

    let t = Instant::now();
    report(7, t, criterion_7(&[&down, &two]), &mut failed);

    let t = Instant::now();
    report(8, t, criterion_8(&[&down, &two]), &mut failed);

    let t = Instant::now();
    report(9, t, criterion_9(&down, &two), &mut failed);

    let t = Instant::now();
    report(10, t, criterion_10(), &mut failed);

    let t = Instant::now();
    let zero = Instance::new("INST-ZERO", presets::inst_zero(), presets::unit_clock(), 1000, 1000);
    report(11, t, criterion_11(&[&up, &down, &zero, &two]), &mut failed);

    let t = Instant::now();
    report(12, t, criterion_12(), &mut failed);

    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
