//! Markov-modulated Lévy surplus model and the dividend clock.
//!
//! The state space is finite. In state `y` the surplus moves with drift `mu_y`,
//! Brownian volatility `sigma_y` and compound-Poisson jumps of intensity
//! `lambda_y`; the modulator switches according to the generator `Q`. Discount
//! rates `q(y)` are state dependent and bounded below by `q_floor`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_rng, Domain};

pub const DEFAULT_Q_FLOOR: f64 = 1e-3;
pub const GENERATOR_ROW_TOL: f64 = 1e-12;
pub const CLOCK_WEIGHT_TOL: f64 = 1e-12;

/// Signed jump-size law of the compound-Poisson part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpLaw {
    /// Every jump has the same (signed) size.
    Constant { size: f64 },
    /// Downward jumps with exponentially distributed magnitude.
    ExponentialDown { mean: f64 },
    /// `low` with probability `p_low`, otherwise `high`.
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

impl JumpLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            JumpLaw::Constant { size } => size,
            JumpLaw::ExponentialDown { mean } => -mean,
            JumpLaw::TwoPoint { low, high, p_low } => p_low * low + (1.0 - p_low) * high,
        }
    }

    pub fn mean_abs(&self) -> f64 {
        match *self {
            JumpLaw::Constant { size } => size.abs(),
            JumpLaw::ExponentialDown { mean } => mean,
            JumpLaw::TwoPoint { low, high, p_low } => p_low * low.abs() + (1.0 - p_low) * high.abs(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match *self {
            JumpLaw::Constant { size } if !size.is_finite() => Err(format!("constant jump size {size} is not finite")),
            JumpLaw::ExponentialDown { mean } if !(mean.is_finite() && mean > 0.0) => {
                Err(format!("exponential jump mean {mean} must be finite and positive"))
            }
            JumpLaw::TwoPoint { low, high, p_low }
                if !(low.is_finite() && high.is_finite() && (0.0..=1.0).contains(&p_low)) =>
            {
                Err(format!(
                    "two-point jump law ({low}, {high}, p_low = {p_low}) is not a finite-mean law"
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Constant { size } => size,
            JumpLaw::ExponentialDown { mean } => {
                let e: f64 = Exp::new(1.0).expect("unit rate").sample(rng);
                -mean * e
            }
            JumpLaw::TwoPoint { low, high, p_low } => {
                if rng.random::<f64>() < p_low {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// Lévy triplet of one modulator state (finite-activity jumps only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub drift: f64,
    pub volatility: f64,
    pub jump_rate: f64,
    pub jump: Option<JumpLaw>,
}

impl Regime {
    pub fn drift_diffusion(drift: f64, volatility: f64) -> Self {
        Regime {
            drift,
            volatility,
            jump_rate: 0.0,
            jump: None,
        }
    }

    pub fn with_jumps(mut self, rate: f64, law: JumpLaw) -> Self {
        self.jump_rate = rate;
        self.jump = Some(law);
        self
    }

    /// Jump intensity actually used by the simulator.
    pub fn active_jump_rate(&self) -> f64 {
        if self.jump.is_some() {
            self.jump_rate
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub states: Vec<String>,
    /// Switching rates per unit time, rows summing to zero.
    pub generator: Vec<Vec<f64>>,
    pub regimes: Vec<Regime>,
    /// Discount rate `q(y)` per state.
    pub discount: Vec<f64>,
    pub q_floor: f64,
    /// Cost per unit of injected capital.
    pub beta: f64,
}

impl ModelSpec {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn exit_rate(&self, y: usize) -> f64 {
        (-self.generator[y][y]).max(0.0)
    }

    /// Picks the next state after leaving `y`, using a uniform draw `u` in [0, 1).
    pub fn jump_target(&self, y: usize, u: f64) -> usize {
        let rate = self.exit_rate(y);
        let mut acc = 0.0;
        let mut last = y;
        for (j, &g) in self.generator[y].iter().enumerate() {
            if j == y || g <= 0.0 {
                continue;
            }
            last = j;
            acc += g / rate;
            if u < acc {
                return j;
            }
        }
        last
    }

    pub fn is_constant_discount(&self) -> bool {
        self.discount.windows(2).all(|w| w[0] == w[1])
    }

    /// Returns the spec if it passes [`validate_model`], or the failing checks.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_model(self);
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidModel(report.failures().join("; ")))
        }
    }

    fn generator_matrix(&self) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, n, |i, j| self.generator[i][j])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn record(&mut self, name: &str, failures: Vec<String>) {
        let passed = failures.is_empty();
        let detail = if passed { "ok".to_string() } else { failures.join("; ") };
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs every structural check on a model. Failures are report entries, never errors.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.n_states();

    let mut dims = Vec::new();
    if n == 0 {
        dims.push("state space is empty".to_string());
    }
    for (i, a) in spec.states.iter().enumerate() {
        if spec.states[..i].contains(a) {
            dims.push(format!("duplicate state identifier `{a}`"));
        }
    }
    if spec.regimes.len() != n {
        dims.push(format!("{} regimes for {n} states", spec.regimes.len()));
    }
    if spec.discount.len() != n {
        dims.push(format!("{} discount rates for {n} states", spec.discount.len()));
    }
    if spec.generator.len() != n || spec.generator.iter().any(|r| r.len() != n) {
        dims.push(format!("generator is not {n}x{n}"));
    }
    let dims_ok = dims.is_empty();
    report.record("dimensions", dims);
    if !dims_ok {
        return report;
    }

    let mut gen = Vec::new();
    for (i, row) in spec.generator.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if !row.iter().all(|g| g.is_finite()) {
            gen.push(format!("row {i} has non-finite entries"));
            continue;
        }
        if sum.abs() > GENERATOR_ROW_TOL {
            gen.push(format!("generator row sum {sum} != 0 in row {i}"));
        }
        for (j, &g) in row.iter().enumerate() {
            if i != j && g < 0.0 {
                gen.push(format!("negative off-diagonal rate {g} at ({i}, {j})"));
            }
        }
    }
    report.record("generator row sum", gen);

    let mut disc = Vec::new();
    if !(spec.q_floor > 0.0 && spec.q_floor.is_finite()) {
        disc.push(format!("q_floor {} must be positive", spec.q_floor));
    }
    for (i, &q) in spec.discount.iter().enumerate() {
        if !(q.is_finite() && q >= spec.q_floor) {
            disc.push(format!(
                "discount rate {q} in state {i} is below q_floor {}",
                spec.q_floor
            ));
        }
    }
    report.record("discount floor", disc);

    let beta = if spec.beta > 1.0 && spec.beta.is_finite() {
        vec![]
    } else {
        vec![format!("beta must exceed 1 (got {})", spec.beta)]
    };
    report.record("beta", beta);

    let mut reg = Vec::new();
    for (i, r) in spec.regimes.iter().enumerate() {
        if !r.drift.is_finite() {
            reg.push(format!("drift in state {i} is not finite"));
        }
        if !(r.volatility.is_finite() && r.volatility >= 0.0) {
            reg.push(format!("volatility {} in state {i} must be >= 0", r.volatility));
        }
        if !(r.jump_rate.is_finite() && r.jump_rate >= 0.0) {
            reg.push(format!("jump rate {} in state {i} must be >= 0", r.jump_rate));
        }
        if let Some(law) = &r.jump {
            if let Err(e) = law.check() {
                reg.push(format!("state {i}: {e}"));
            }
        }
    }
    report.record("jump-law integrability", reg);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub time: f64,
    pub weight: f64,
}

/// Law of the interarrival times between dividend epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DividendClock {
    Deterministic { delta: f64 },
    Exponential { rate: f64 },
    AtomMixture { atoms: Vec<Atom> },
}

impl DividendClock {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            DividendClock::Deterministic { delta } if !(*delta > 0.0 && delta.is_finite()) => {
                bad(format!("deterministic interarrival {delta} must be positive"))
            }
            DividendClock::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => {
                bad(format!("exponential clock rate {rate} must be positive"))
            }
            DividendClock::AtomMixture { atoms } => {
                if atoms.is_empty() {
                    return bad("atom mixture has no atoms".into());
                }
                if atoms
                    .iter()
                    .any(|a| !(a.time > 0.0 && a.time.is_finite() && a.weight >= 0.0))
                {
                    return bad("atom times must be positive and weights nonnegative".into());
                }
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if (total - 1.0).abs() > CLOCK_WEIGHT_TOL {
                    return bad(format!("atom weights sum to {total}, not 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DividendClock::Deterministic { delta } => *delta,
            DividendClock::Exponential { rate } => 1.0 / rate,
            DividendClock::AtomMixture { atoms } => atoms.iter().map(|a| a.time * a.weight).sum(),
        }
    }

    /// `E[exp(-q T)]` for a constant rate `q`.
    pub fn laplace(&self, q: f64) -> f64 {
        match self {
            DividendClock::Deterministic { delta } => (-q * delta).exp(),
            DividendClock::Exponential { rate } => rate / (rate + q),
            DividendClock::AtomMixture { atoms } => atoms.iter().map(|a| a.weight * (-q * a.time).exp()).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DividendClock::Deterministic { delta } => *delta,
            DividendClock::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            DividendClock::AtomMixture { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.time;
                    }
                }
                atoms.last().expect("nonempty").time
            }
        }
    }

    /// `∫ exp(t A) ν(dt)` for a square matrix `A` whose spectrum lies in the left half-plane
    /// (or is zero, for the exponential and atom clocks).
    fn integrate_exponential(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        match self {
            DividendClock::Deterministic { delta } => (a * *delta).exp(),
            DividendClock::Exponential { rate } => {
                let m = DMatrix::<f64>::identity(n, n) * *rate - a;
                m.lu().try_inverse().expect("rate*I - A is nonsingular") * *rate
            }
            DividendClock::AtomMixture { atoms } => atoms
                .iter()
                .fold(DMatrix::zeros(n, n), |acc, at| acc + (a * at.time).exp() * at.weight),
        }
    }
}

/// `E_y[exp(-∫_0^T q(Y_s) ds)]`, the one-epoch discount factor `r(y)`.
///
/// Computed exactly through the Feynman-Kac matrix `∫ exp(t (Q - diag q)) ν(dt)`,
/// which reduces to the Laplace transform of the clock when `q` is constant.
pub fn epoch_discount_factor(spec: &ModelSpec, clock: &DividendClock, y: usize) -> f64 {
    epoch_discount_factors(spec, clock)[y]
}

pub fn epoch_discount_factors(spec: &ModelSpec, clock: &DividendClock) -> Vec<f64> {
    if spec.is_constant_discount() {
        let r = clock.laplace(spec.discount[0]);
        return vec![r; spec.n_states()];
    }
    let m = discounted_transition(spec, clock);
    (0..spec.n_states()).map(|i| m.row(i).sum()).collect()
}

/// `M[y][y'] = E_y[exp(-∫_0^T q(Y_s) ds); Y_T = y']`.
pub fn discounted_transition(spec: &ModelSpec, clock: &DividendClock) -> DMatrix<f64> {
    let n = spec.n_states();
    let a = spec.generator_matrix() - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spec.discount.clone()));
    let m = clock.integrate_exponential(&a);
    debug_assert_eq!(m.nrows(), n);
    m
}

/// Exact one-epoch law of the modulator, `P_y(Y_T = y')`.
pub fn epoch_state_mass_exact(spec: &ModelSpec, clock: &DividendClock, y: usize) -> Vec<f64> {
    let m = clock.integrate_exponential(&spec.generator_matrix());
    m.row(y).iter().map(|v| v.max(0.0)).collect()
}

/// Monte-Carlo estimate of the one-epoch modulator law `m_y`.
pub fn epoch_state_mass(
    spec: &ModelSpec,
    clock: &DividendClock,
    y: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    clock.validate()?;
    let mut counts = vec![0usize; spec.n_states()];
    for i in 0..n_paths {
        let mut rng = path_rng(seed, Domain::Modulator(y), i as u64);
        let t_end = clock.sample(&mut rng);
        counts[simulate_modulator(spec, y, t_end, &mut rng)] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / n_paths as f64).collect())
}

/// State of the modulator at time `t_end` when started from `y`.
pub fn simulate_modulator<R: Rng + ?Sized>(spec: &ModelSpec, mut y: usize, t_end: f64, rng: &mut R) -> usize {
    let mut t = 0.0;
    loop {
        let rate = spec.exit_rate(y);
        if rate <= 0.0 {
            return y;
        }
        let hold: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        t += hold;
        if t >= t_end {
            return y;
        }
        y = spec.jump_target(y, rng.random());
    }
}
