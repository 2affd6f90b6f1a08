use mmdiv_core::barriers::{check_xi_membership, Membership};
use mmdiv_core::presets;
use mmdiv_core::sampling::SimParams;
use mmdiv_core::solver::{value_iterate, GridParams, McParams, SolverOptions};
use mmdiv_core::strategy::{estimate_npv, simulate_rules, ModelBound, StrategyRule};

#[test]
fn drift_down_solve_verify_simulate() {
    let spec = presets::inst_drift_down();
    let clock = presets::unit_clock();
    let grid = GridParams::default_for(&spec, &clock, 0.025);
    let mc = McParams {
        n_paths: 16,
        dt: 0.01,
        seed: 1,
    };
    let r = value_iterate(&spec, &clock, &grid, &mc, &SolverOptions::default()).unwrap();
    let b = r.barriers.lower[0];
    assert!((b - presets::drift_down_barrier()).abs() <= 0.025 + 1e-12, "{b}");

    let p = SimParams::new(16, 0.01, 2);
    let v = check_xi_membership(&spec, &clock, &[b], &p, 0.025).unwrap();
    assert!(v.hat_xi());
    let far = check_xi_membership(&spec, &clock, &[b + 1.0], &p, 0.025).unwrap();
    assert_eq!(far.states[0].membership, Membership::No);

    let bound = ModelBound::estimate(&spec, &clock, 0.01, 3).unwrap();
    let xs = [0.0, 1.0, 3.0];
    let s = simulate_rules(&spec, &clock, &[StrategyRule::barrier(vec![b])], &xs, 0, &p).unwrap();
    for (j, x) in xs.iter().enumerate() {
        let e = estimate_npv(&s[0][j], *x, &bound).unwrap();
        let tol = 3.0 * e.std_error + r.grid_error + e.bias_bound + 1e-6;
        assert!(
            (e.mean - r.value_at(0, *x)).abs() <= tol,
            "x {x}: {} vs {}",
            e.mean,
            r.value_at(0, *x)
        );
    }
}

#[test]
fn never_pay_simulation_matches_v0_on_two_states() {
    let spec = presets::inst_two_state();
    let clock = presets::two_state_clock();
    let grid = GridParams::default_for(&spec, &clock, 0.05);
    let mc = McParams {
        n_paths: 4000,
        dt: 0.01,
        seed: 5,
    };
    let r = value_iterate(&spec, &clock, &grid, &mc, &SolverOptions::default()).unwrap();
    let bound = ModelBound::estimate(&spec, &clock, 0.01, 3).unwrap();
    let p = SimParams::new(4000, 0.01, 9);
    let xs = [0.0, 1.0];
    for y in 0..2 {
        let s = simulate_rules(&spec, &clock, &[StrategyRule::never()], &xs, y, &p).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let e = estimate_npv(&s[0][j], *x, &bound).unwrap();
            let v0 = r.v0.values[y][(x / r.grid().h).round() as usize];
            let tol = 3.0 * e.std_error.hypot(r.v0_se_at(y, *x)) + r.grid_error + e.bias_bound;
            assert!(
                (e.mean - v0).abs() <= tol,
                "y {y} x {x}: {} vs {v0} (tol {tol})",
                e.mean
            );
        }
    }
}
