//! Monte-Carlo functionals that certify a barrier: the hitting-time transforms
//! `rho1`, `rho2`, the band membership built on them, the mixing probability and
//! the randomized ruin functional.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{epoch_discount_factors, epoch_state_mass, DividendClock, ModelSpec};
use crate::rng::{path_rng, Domain};
use crate::sampling::{first_passage_scan, PassageMode, SimParams};
use crate::stats::Moments;
use crate::strategy::{paired_difference, simulate_rules, RawPath, StrategyRule};

/// Absolute slack for exact ties such as `rho1 = rho2 = 1` on deterministic models.
pub const TIE: f64 = 1e-9;

/// Number of standard errors behind every verdict.
pub const Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoVariant {
    /// Weak epoch condition `X >= b`, strict ruin `X < 0`.
    One,
    /// Strict epoch condition `X > b`, weak ruin `X <= 0` (time zero included).
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: usize,
    /// Share of paths not stopped within the horizon.
    pub horizon_share: f64,
    /// Set when the share exceeds the configured ceiling.
    pub horizon_flag: bool,
    /// Upper bound on the mass dropped by truncation.
    pub residual_bound: f64,
}

impl RhoEstimate {
    /// A noiseless value, for feeding known quantities to [`mixing_probability`].
    pub fn exact(value: f64) -> Self {
        RhoEstimate {
            value,
            std_error: 0.0,
            n_paths: 0,
            horizon: 0,
            horizon_share: 0.0,
            horizon_flag: false,
            residual_bound: 0.0,
        }
    }
}

enum Outcome {
    Stopped(f64),
    /// Still running at the horizon, with the discount factor reached there.
    Running(f64),
}

fn check_barrier(spec: &ModelSpec, b: &[f64]) -> Result<()> {
    if b.len() != spec.n_states() {
        return Err(Error::InvalidArgument(format!(
            "barrier has {} entries for {} states",
            b.len(),
            spec.n_states()
        )));
    }
    if let Some(v) = b.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "barrier level {v} must be finite and nonnegative"
        )));
    }
    Ok(())
}

fn check_state(spec: &ModelSpec, y: usize) -> Result<()> {
    if y >= spec.n_states() {
        return Err(Error::InvalidArgument(format!("unknown state index {y}")));
    }
    Ok(())
}

fn run<F>(spec: &ModelSpec, clock: &DividendClock, params: &SimParams, path: F) -> Result<RhoEstimate>
where
    F: Fn(usize, usize) -> Outcome + Sync,
{
    spec.ensure_valid()?;
    clock.validate()?;
    params.validate()?;
    let r_max = epoch_discount_factors(spec, clock).into_iter().fold(0.0, f64::max);
    let horizon = params.horizon_for(r_max);
    let outcomes: Vec<Outcome> = (0..params.n_paths).into_par_iter().map(|i| path(i, horizon)).collect();
    let mut m = Moments::default();
    let (mut running, mut residual) = (0usize, 0.0);
    for o in &outcomes {
        match *o {
            Outcome::Stopped(v) => m.push(v),
            Outcome::Running(disc) => {
                m.push(0.0);
                running += 1;
                residual += disc;
            }
        }
    }
    let n = params.n_paths as f64;
    let share = running as f64 / n;
    Ok(RhoEstimate {
        value: m.mean(),
        std_error: m.std_error(),
        n_paths: params.n_paths,
        horizon,
        horizon_share: share,
        horizon_flag: share > params.horizon_ceiling,
        residual_bound: spec.beta * residual / n,
    })
}

/// `rho1` or `rho2` of the raw process started at `(b(y), y)`.
pub fn estimate_rho(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    y: usize,
    variant: RhoVariant,
    params: &SimParams,
) -> Result<RhoEstimate> {
    check_barrier(spec, b)?;
    check_state(spec, y)?;
    let mode = match variant {
        RhoVariant::One => PassageMode::BelowStrict,
        RhoVariant::Two => PassageMode::BelowWeak,
    };
    run(spec, clock, params, |i, horizon| {
        let mut raw = RawPath::new(params.seed, i, y);
        let mut x = b[y];
        for _ in 0..horizon {
            raw.next_segment(spec, clock, params.dt);
            if let Some(p) = first_passage_scan(&raw.seg, x, 0.0, mode) {
                return Outcome::Stopped(spec.beta * (-raw.d).exp() * p.discount);
            }
            x += raw.seg.xi_end;
            raw.commit();
            let hit = match variant {
                RhoVariant::One => x >= b[raw.y],
                RhoVariant::Two => x > b[raw.y],
            };
            if hit {
                return Outcome::Stopped((-raw.d).exp());
            }
        }
        Outcome::Running((-raw.d).exp())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Yes,
    No,
    Inconclusive,
}

impl Membership {
    pub fn as_str(self) -> &'static str {
        match self {
            Membership::Yes => "yes",
            Membership::No => "no",
            Membership::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVerdict {
    pub state: usize,
    pub barrier: f64,
    /// `rho1` at `b + slack`.
    pub rho1: RhoEstimate,
    /// `rho2` at `(b - slack) v 0`.
    pub rho2: RhoEstimate,
    pub membership: Membership,
    /// No state reaches this one within an epoch.
    pub null: bool,
    pub mixing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiVerdict {
    pub states: Vec<StateVerdict>,
    pub slack: f64,
}

impl XiVerdict {
    /// Every state passes.
    pub fn xi(&self) -> bool {
        self.states.iter().all(|s| s.membership == Membership::Yes)
    }

    /// Every state that carries one-epoch mass passes.
    pub fn hat_xi(&self) -> bool {
        self.states.iter().all(|s| s.null || s.membership == Membership::Yes)
    }

    /// States that block the `hat_xi` verdict.
    pub fn failing(&self) -> Vec<usize> {
        self.states
            .iter()
            .filter(|s| !s.null && s.membership != Membership::Yes)
            .map(|s| s.state)
            .collect()
    }
}

/// Verdict for one `(rho1, rho2)` pair at `Z` standard errors.
pub fn classify(rho1: &RhoEstimate, rho2: &RhoEstimate) -> Membership {
    let above = rho1.value - Z * rho1.std_error > 1.0 + TIE;
    let below = rho2.value + rho2.residual_bound + Z * rho2.std_error < 1.0 - TIE;
    if above || below {
        return Membership::No;
    }
    let ok1 = rho1.value <= 1.0 + Z * rho1.std_error + TIE;
    let ok2 = rho2.value >= 1.0 - Z * rho2.std_error - TIE;
    if ok1 && ok2 && !rho1.horizon_flag && !rho2.horizon_flag {
        Membership::Yes
    } else {
        Membership::Inconclusive
    }
}

/// Band membership of `b`, state by state.
///
/// `slack >= 0` widens the test to `rho1(b + slack) <= 1 <= rho2((b - slack) v 0)`,
/// which absorbs the resolution of a barrier read off a grid.
pub fn check_xi_membership(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    params: &SimParams,
    slack: f64,
) -> Result<XiVerdict> {
    check_barrier(spec, b)?;
    if !(slack >= 0.0 && slack.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "slack {slack} must be finite and nonnegative"
        )));
    }
    let n = spec.n_states();
    let mut reached = vec![false; n];
    for y in 0..n {
        for (z, m) in epoch_state_mass(spec, clock, y, params.n_paths, params.seed)?
            .into_iter()
            .enumerate()
        {
            reached[z] |= m > 0.0;
        }
    }
    let up: Vec<f64> = b.iter().map(|v| v + slack).collect();
    let down: Vec<f64> = b.iter().map(|v| (v - slack).max(0.0)).collect();
    let mut states = Vec::with_capacity(n);
    for y in 0..n {
        let rho1 = estimate_rho(spec, clock, &up, y, RhoVariant::One, params)?;
        let rho2 = estimate_rho(spec, clock, &down, y, RhoVariant::Two, params)?;
        let membership = classify(&rho1, &rho2);
        let mixing = (membership == Membership::Yes)
            .then(|| mixing_probability(&rho1, &rho2).ok())
            .flatten();
        states.push(StateVerdict {
            state: y,
            barrier: b[y],
            rho1,
            rho2,
            membership,
            null: !reached[y],
            mixing,
        });
    }
    Ok(XiVerdict { states, slack })
}

/// The weight `p` on `rho2` with `(1 - p) rho1 + p rho2 = 1`, taking the smallest
/// such `p` when the two transforms coincide.
///
/// Coinciding transforms (always the case for diffusive regimes) give `p = 0`
/// whenever `rho1` is within `Z` standard errors of one.
pub fn mixing_probability(rho1: &RhoEstimate, rho2: &RhoEstimate) -> Result<f64> {
    let (s1, s2) = (rho1.std_error, rho2.std_error);
    let (r1, r2) = (rho1.value, rho2.value);
    if r1 > 1.0 + Z * s1 + TIE || r2 < 1.0 - Z * s2 - TIE {
        return Err(Error::NotInXi { rho1: r1, rho2: r2 });
    }
    let den = r2 - r1;
    if den <= Z * s1.hypot(s2) + TIE {
        return if (r1 - 1.0).abs() <= Z * s1 + TIE {
            Ok(0.0)
        } else {
            Err(Error::Indeterminate { rho1: r1, rho2: r2 })
        };
    }
    Ok(((1.0 - r1) / den).clamp(0.0, 1.0))
}

/// Mixing probability of every state at the barrier itself.
pub fn mixing_profile(spec: &ModelSpec, clock: &DividendClock, b: &[f64], params: &SimParams) -> Result<Vec<f64>> {
    (0..spec.n_states())
        .map(|y| {
            let r1 = estimate_rho(spec, clock, b, y, RhoVariant::One, params)?;
            let r2 = estimate_rho(spec, clock, b, y, RhoVariant::Two, params)?;
            mixing_probability(&r1, &r2)
        })
        .collect()
}

fn check_mixing(spec: &ModelSpec, p: &[f64]) -> Result<()> {
    if p.len() != spec.n_states() || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "mixing probabilities must lie in [0, 1] on every state".into(),
        ));
    }
    Ok(())
}

/// Barrier-controlled path stopped at the randomized ruin time.
///
/// The flag is `weak` with probability `p(y)`: a weak flag accepts a touch of
/// zero, otherwise only a strict onset below zero stops the path. The flag is
/// redrawn whenever the path sits on the barrier after a payout, or after
/// reaching it exactly with a strict flag. With `started = false` the path runs
/// uncontrolled under the strict rule until the first epoch at or above the
/// barrier, where the flag is drawn.
#[allow(clippy::too_many_arguments)]
fn randomized_ruin(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    p: &[f64],
    params: &SimParams,
    i: usize,
    horizon: usize,
    x: f64,
    y: usize,
    mut started: bool,
) -> Outcome {
    let mut raw = RawPath::new(params.seed, i, y);
    let mut flags: ChaCha8Rng = path_rng(params.seed, Domain::Flags, i as u64);
    let mut draw = |y: usize| flags.random::<f64>() < p[y];
    let mut weak = started && draw(y);
    let mut u = x;
    for _ in 0..horizon {
        raw.next_segment(spec, clock, params.dt);
        let mode = if started && weak {
            PassageMode::BelowWeak
        } else {
            PassageMode::BelowStrict
        };
        if let Some(ps) = first_passage_scan(&raw.seg, u, 0.0, mode) {
            return Outcome::Stopped(spec.beta * (-raw.d).exp() * ps.discount);
        }
        let u_pre = u + raw.seg.xi_end;
        raw.commit();
        let by = b[raw.y];
        if !started {
            if u_pre >= by {
                started = true;
                u = by;
                weak = draw(raw.y);
            } else {
                u = u_pre;
            }
            continue;
        }
        let paid = u_pre > by;
        u = if paid { by } else { u_pre };
        if u == by && (paid || !weak) {
            weak = draw(raw.y);
        }
    }
    Outcome::Running((-raw.d).exp())
}

/// `beta E[e^{-D}]` at the randomized ruin time of the barrier strategy started
/// on the barrier in `y`.
pub fn estimate_varrho_p(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    p: &[f64],
    y: usize,
    params: &SimParams,
) -> Result<RhoEstimate> {
    check_barrier(spec, b)?;
    check_mixing(spec, p)?;
    check_state(spec, y)?;
    run(spec, clock, params, |i, horizon| {
        randomized_ruin(spec, clock, b, p, params, i, horizon, b[y], y, true)
    })
}

/// The same functional with a strict flag throughout, exposed for exploration
/// of the alternative band built from the plain first injection time.
pub fn estimate_kappa_zero(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    y: usize,
    params: &SimParams,
) -> Result<RhoEstimate> {
    estimate_varrho_p(spec, clock, b, &vec![0.0; spec.n_states()], y, params)
}

/// Right derivative in `x` of the barrier strategy's NPV, from `(x, y)`.
pub fn estimate_rho_p(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    p: &[f64],
    x: f64,
    y: usize,
    params: &SimParams,
) -> Result<RhoEstimate> {
    check_barrier(spec, b)?;
    check_mixing(spec, p)?;
    check_state(spec, y)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "x = {x} must be finite and nonnegative"
        )));
    }
    run(spec, clock, params, |i, horizon| {
        randomized_ruin(spec, clock, b, p, params, i, horizon, x, y, false)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck {
    pub mixing: Vec<f64>,
    pub rho_p: RhoEstimate,
    /// `[v(x + h) - v(x)] / h` from coupled NPV samples.
    pub finite_difference: f64,
    pub fd_std_error: f64,
    /// `|v(x + 2h) - 2 v(x + h) + v(x)| / h`, the first-order bias scale of the difference quotient.
    pub curvature: f64,
    pub discrepancy: f64,
    pub allowance: f64,
}

impl DensityCheck {
    pub fn passed(&self) -> bool {
        self.discrepancy <= self.allowance
    }
}

/// Compares `rho_p(x, y)` with a coupled difference quotient of the simulated
/// barrier-strategy NPV.
#[allow(clippy::too_many_arguments)]
pub fn density_crosscheck(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    x: f64,
    y: usize,
    h_fd: f64,
    params: &SimParams,
) -> Result<DensityCheck> {
    if !(h_fd > 0.0 && h_fd.is_finite()) {
        return Err(Error::InvalidArgument(format!("h_fd = {h_fd} must be positive")));
    }
    let mixing = mixing_profile(spec, clock, b, params)?;
    density_crosscheck_with(spec, clock, b, &mixing, x, y, h_fd, params)
}

/// [`density_crosscheck`] with precomputed mixing probabilities.
#[allow(clippy::too_many_arguments)]
pub fn density_crosscheck_with(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    mixing: &[f64],
    x: f64,
    y: usize,
    h_fd: f64,
    params: &SimParams,
) -> Result<DensityCheck> {
    let rho_p = estimate_rho_p(spec, clock, b, mixing, x, y, params)?;
    let xs = [x, x + h_fd, x + 2.0 * h_fd];
    let sims = simulate_rules(spec, clock, &[StrategyRule::barrier(b.to_vec())], &xs, y, params)?;
    let v = &sims[0];
    let (diff, diff_se) = paired_difference(&v[1], &v[0]);
    let mean = |s: &crate::strategy::StrategySamples| s.npv().sum::<f64>() / s.len() as f64;
    let curvature = (mean(&v[2]) - 2.0 * mean(&v[1]) + mean(&v[0])).abs() / h_fd;
    let finite_difference = diff / h_fd;
    let fd_std_error = diff_se / h_fd;
    Ok(DensityCheck {
        mixing: mixing.to_vec(),
        rho_p,
        finite_difference,
        fd_std_error,
        curvature,
        discrepancy: (rho_p.value - finite_difference).abs(),
        allowance: Z * rho_p.std_error.hypot(fd_std_error) + curvature + rho_p.residual_bound + TIE,
    })
}
