//! Reference instances with closed-form answers, used by tests and examples.

use crate::model::{DividendClock, JumpLaw, ModelSpec, Regime, DEFAULT_Q_FLOOR};

fn single_state(drift: f64, volatility: f64) -> ModelSpec {
    ModelSpec {
        states: vec!["s0".into()],
        generator: vec![vec![0.0]],
        regimes: vec![Regime::drift_diffusion(drift, volatility)],
        discount: vec![0.1],
        q_floor: DEFAULT_Q_FLOOR,
        beta: 1.5,
    }
}

/// `mu = 1`, no noise, `q = 0.1`, `beta = 1.5`.
pub fn inst_drift_up() -> ModelSpec {
    single_state(1.0, 0.0)
}

/// `mu = -0.5`, no noise, `q = 0.1`, `beta = 1.5`.
pub fn inst_drift_down() -> ModelSpec {
    single_state(-0.5, 0.0)
}

/// Frozen surplus.
pub fn inst_zero() -> ModelSpec {
    single_state(0.0, 0.0)
}

/// Two regimes switching at rate 0.5: a profitable diffusion and a losing
/// jump-diffusion with Exp(1) claims.
pub fn inst_two_state() -> ModelSpec {
    ModelSpec {
        states: vec!["good".into(), "bad".into()],
        generator: vec![vec![-0.5, 0.5], vec![0.5, -0.5]],
        regimes: vec![
            Regime::drift_diffusion(1.0, 0.5),
            Regime::drift_diffusion(-0.5, 1.0).with_jumps(0.2, JumpLaw::ExponentialDown { mean: 1.0 }),
        ],
        discount: vec![0.08, 0.12],
        q_floor: DEFAULT_Q_FLOOR,
        beta: 1.3,
    }
}

pub fn unit_clock() -> DividendClock {
    DividendClock::Deterministic { delta: 1.0 }
}

pub fn two_state_clock() -> DividendClock {
    DividendClock::Exponential { rate: 2.0 }
}

/// `5 ln 1.5`, where `beta * exp(-2 q b) = 1` for the drift-down instance.
pub fn drift_down_barrier() -> f64 {
    5.0 * 1.5f64.ln()
}
