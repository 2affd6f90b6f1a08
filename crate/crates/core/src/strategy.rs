//! Controlled surplus processes: epoch payout rules on top of Skorokhod
//! injections at zero, and their discounted NPVs.
//!
//! Every rule and every starting capital passed to one call is driven by the
//! same raw path per index, so differences between them are paired samples.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{epoch_discount_factors, DividendClock, ModelSpec};
use crate::rng::{path_rng, Domain};
use crate::sampling::{
    evaluate_injection_functional, sample_epoch_bundle, sample_summary_into, SegmentSummary, SimParams,
};
use crate::stats::Moments;

/// Slack allowed when checking the payout bound, absorbing rounding in rules.
const PAYOUT_SLACK: f64 = 1e-12;

type PayoutFn = dyn Fn(f64, usize, usize) -> f64 + Send + Sync;

/// Epoch payout map `(U_pre, y, k) -> payout`, which must lie in `[0, U_pre v 0]`.
#[derive(Clone)]
pub struct StrategyRule {
    pub name: String,
    payout: Arc<PayoutFn>,
}

impl std::fmt::Debug for StrategyRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyRule").field("name", &self.name).finish()
    }
}

impl StrategyRule {
    pub fn custom<F>(name: impl Into<String>, payout: F) -> Self
    where
        F: Fn(f64, usize, usize) -> f64 + Send + Sync + 'static,
    {
        StrategyRule {
            name: name.into(),
            payout: Arc::new(payout),
        }
    }

    /// Pays the excess over `b(y)` at every epoch.
    pub fn barrier(b: Vec<f64>) -> Self {
        Self::custom("mmpcb", move |u, y, _| (u - b[y]).max(0.0))
    }

    pub fn never() -> Self {
        Self::custom("never-pay", |_, _, _| 0.0)
    }

    pub fn pay_all() -> Self {
        Self::custom("pay-all", |u, _, _| u.max(0.0))
    }

    pub fn payout(&self, u_pre: f64, y: usize, k: usize) -> f64 {
        (self.payout)(u_pre, y, k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpvEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: usize,
    pub bias_bound: f64,
}

/// Per-path discounted totals of one controlled process.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrategySamples {
    pub dividends: Vec<f64>,
    pub injections: Vec<f64>,
    pub beta: f64,
    pub horizon: usize,
}

impl StrategySamples {
    pub fn npv(&self) -> impl Iterator<Item = f64> + '_ {
        self.dividends
            .iter()
            .zip(&self.injections)
            .map(|(d, i)| d - self.beta * i)
    }

    pub fn len(&self) -> usize {
        self.dividends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dividends.is_empty()
    }
}

/// Constant of the dominating baseline: discounted dividends and injections of
/// any admissible strategy are at most `(x v 0) + B` and `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelBound {
    pub r_max: f64,
    pub b_bound: f64,
}

impl ModelBound {
    /// `max(M_L, M_R) / (1 - r)`, with `M_L`, `M_R` the largest one-epoch mean
    /// reflected endpoint and injection from zero capital.
    pub fn estimate(spec: &ModelSpec, clock: &DividendClock, dt: f64, seed: u64) -> Result<Self> {
        let r_max = epoch_discount_factors(spec, clock).into_iter().fold(0.0, f64::max);
        let mut m = 0.0f64;
        for y in 0..spec.n_states() {
            let b = sample_epoch_bundle(spec, clock, y, 4000, dt, seed ^ 0x5eed)?;
            let (mut ml, mut mr) = (Moments::default(), Moments::default());
            for seg in &b.segments {
                let o = evaluate_injection_functional(seg, 0.0);
                ml.push(o.reflected_endpoint);
                mr.push(o.discounted_injection);
            }
            m = m
                .max(ml.mean() + 3.0 * ml.std_error())
                .max(mr.mean() + 3.0 * mr.std_error());
        }
        Ok(ModelBound {
            r_max,
            b_bound: m / (1.0 - r_max),
        })
    }

    pub fn bias(&self, x0: f64, beta: f64, horizon: usize) -> f64 {
        self.r_max.powi(horizon as i32) * (x0.max(0.0) + (1.0 + beta) * self.b_bound)
    }
}

pub fn estimate_npv(samples: &StrategySamples, x0: f64, bound: &ModelBound) -> Result<NpvEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("at least two samples are required".into()));
    }
    let m: Moments = samples.npv().collect();
    Ok(NpvEstimate {
        mean: m.mean(),
        std_error: m.std_error(),
        n_paths: m.count(),
        horizon: samples.horizon,
        bias_bound: bound.bias(x0, samples.beta, samples.horizon),
    })
}

/// Paired difference `a - b` of two coupled sample sets: `(mean, standard error)`.
pub fn paired_difference(a: &StrategySamples, b: &StrategySamples) -> (f64, f64) {
    let m: Moments = a.npv().zip(b.npv()).map(|(x, y)| x - y).collect();
    (m.mean(), m.std_error())
}

/// State of one controlled process between epochs.
#[derive(Debug, Clone, Copy)]
struct Controlled {
    u: f64,
    dividends: f64,
    injections: f64,
}

impl Controlled {
    fn start(x0: f64, upfront: f64) -> Self {
        let inj = (-x0).max(0.0);
        let u = x0.max(0.0) - upfront;
        Controlled {
            u,
            dividends: upfront,
            injections: inj,
        }
    }

    /// Advances through one segment whose start is discounted by `e^{-d0}`.
    fn advance(&mut self, seg: &SegmentSummary, d0: f64) {
        let o = evaluate_injection_functional(seg, self.u);
        self.injections += (-d0).exp() * o.discounted_injection;
        self.u = o.reflected_endpoint;
    }

    fn pay(&mut self, rule: &StrategyRule, y: usize, k: usize, disc: f64) -> Result<f64> {
        let cap = self.u.max(0.0);
        let p = rule.payout(self.u, y, k);
        if !(p >= 0.0 && p <= cap + PAYOUT_SLACK * (1.0 + cap)) {
            return Err(Error::ContractViolation {
                rule: rule.name.clone(),
                epoch: k,
                payout: p,
                capital: self.u,
            });
        }
        let p = p.min(cap);
        self.dividends += disc * p;
        self.u -= p;
        Ok(p)
    }
}

/// Draws the raw path of index `i` epoch by epoch.
pub(crate) struct RawPath {
    rng: ChaCha8Rng,
    pub seg: SegmentSummary,
    pub y: usize,
    /// Accumulated discount rate at the start of the current segment.
    pub d: f64,
    pub t: f64,
}

impl RawPath {
    pub fn new(seed: u64, i: usize, y0: usize) -> Self {
        RawPath {
            rng: path_rng(seed, Domain::Raw, i as u64),
            seg: SegmentSummary::default(),
            y: y0,
            d: 0.0,
            t: 0.0,
        }
    }

    /// Samples the next segment; `y`, `d`, `t` still refer to its start.
    pub fn next_segment(&mut self, spec: &ModelSpec, clock: &DividendClock, dt: f64) {
        let len = clock.sample(&mut self.rng);
        sample_summary_into(spec, self.y, len, dt, &mut self.rng, &mut self.seg);
    }

    /// Moves to the end of the current segment.
    pub fn commit(&mut self) {
        self.d += self.seg.discount_end;
        self.t += self.seg.t_end;
        self.y = self.seg.y_end;
    }
}

/// Simulates every `(rule, x0)` pair on shared raw paths started in `y0`.
///
/// `upfront[j]` is paid at time zero for `x0s[j]` (used by the baseline).
/// Returns samples indexed `[rule][x0]`.
fn simulate_coupled(
    spec: &ModelSpec,
    clock: &DividendClock,
    rules: &[StrategyRule],
    x0s: &[f64],
    upfront: &[f64],
    y0: usize,
    params: &SimParams,
) -> Result<Vec<Vec<StrategySamples>>> {
    spec.ensure_valid()?;
    clock.validate()?;
    params.validate()?;
    if y0 >= spec.n_states() {
        return Err(Error::InvalidArgument(format!("unknown state index {y0}")));
    }
    let r_max = epoch_discount_factors(spec, clock).into_iter().fold(0.0, f64::max);
    let horizon = params.horizon_for(r_max);
    let per_path: Vec<Vec<Controlled>> = (0..params.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut raw = RawPath::new(params.seed, i, y0);
            let mut procs: Vec<Controlled> = rules
                .iter()
                .flat_map(|_| x0s.iter().zip(upfront).map(|(&x, &a)| Controlled::start(x, a)))
                .collect();
            for k in 1..=horizon {
                raw.next_segment(spec, clock, params.dt);
                for p in procs.iter_mut() {
                    p.advance(&raw.seg, raw.d);
                }
                raw.commit();
                let disc = (-raw.d).exp();
                for (j, p) in procs.iter_mut().enumerate() {
                    p.pay(&rules[j / x0s.len()], raw.y, k, disc)?;
                }
            }
            Ok(procs)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(rules.len());
    for r in 0..rules.len() {
        let mut row = Vec::with_capacity(x0s.len());
        for j in 0..x0s.len() {
            let idx = r * x0s.len() + j;
            row.push(StrategySamples {
                dividends: per_path.iter().map(|p| p[idx].dividends).collect(),
                injections: per_path.iter().map(|p| p[idx].injections).collect(),
                beta: spec.beta,
                horizon,
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Coupled simulation of several rules from several starting capitals.
pub fn simulate_rules(
    spec: &ModelSpec,
    clock: &DividendClock,
    rules: &[StrategyRule],
    x0s: &[f64],
    y0: usize,
    params: &SimParams,
) -> Result<Vec<Vec<StrategySamples>>> {
    simulate_coupled(spec, clock, rules, x0s, &vec![0.0; x0s.len()], y0, params)
}

pub fn simulate_epoch_rule(
    spec: &ModelSpec,
    clock: &DividendClock,
    rule: &StrategyRule,
    x0: f64,
    y0: usize,
    params: &SimParams,
    bound: &ModelBound,
) -> Result<(StrategySamples, NpvEstimate)> {
    let samples = simulate_rules(spec, clock, std::slice::from_ref(rule), &[x0], y0, params)?
        .pop()
        .and_then(|mut v| v.pop())
        .expect("one rule, one start");
    let est = estimate_npv(&samples, x0, bound)?;
    Ok((samples, est))
}

/// The barrier strategy paying `(U - b(Y))^+` at every epoch.
pub fn simulate_mmpcb(
    spec: &ModelSpec,
    clock: &DividendClock,
    b: &[f64],
    x0: f64,
    y0: usize,
    params: &SimParams,
    bound: &ModelBound,
) -> Result<(StrategySamples, NpvEstimate)> {
    if b.len() != spec.n_states() || b.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "barrier must be nonnegative on every state".into(),
        ));
    }
    simulate_epoch_rule(spec, clock, &StrategyRule::barrier(b.to_vec()), x0, y0, params, bound)
}

/// Dividend and injection NPVs of paying `x0 v 0` at once, then everything at
/// each epoch while reflecting at zero.
pub fn reflected_zero_baseline(
    spec: &ModelSpec,
    clock: &DividendClock,
    x0: f64,
    y0: usize,
    params: &SimParams,
) -> Result<(NpvEstimate, NpvEstimate)> {
    let bound = ModelBound::estimate(spec, clock, params.dt, params.seed)?;
    let s = simulate_coupled(
        spec,
        clock,
        &[StrategyRule::pay_all()],
        &[x0],
        &[x0.max(0.0)],
        y0,
        params,
    )?
    .pop()
    .and_then(|mut v| v.pop())
    .expect("one rule, one start");
    let est = |v: &[f64], x: f64| {
        let m: Moments = v.iter().copied().collect();
        NpvEstimate {
            mean: m.mean(),
            std_error: m.std_error(),
            n_paths: m.count(),
            horizon: s.horizon,
            bias_bound: bound.bias(x, 0.0, s.horizon),
        }
    };
    Ok((est(&s.dividends, x0), est(&s.injections, 0.0)))
}

/// Epoch-level record of one controlled path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlledPath {
    pub epoch_times: Vec<f64>,
    pub pre_payout: Vec<f64>,
    pub payouts: Vec<f64>,
    /// Cumulative discounted dividends after each epoch.
    pub dividends: Vec<f64>,
    /// Cumulative discounted injections after each epoch.
    pub injections: Vec<f64>,
    pub terminal_discount: f64,
    pub terminal: (f64, usize),
}

/// Replays path `index` of the coupled simulation for several rules.
#[allow(clippy::too_many_arguments)]
pub fn trace_paths(
    spec: &ModelSpec,
    clock: &DividendClock,
    rules: &[(StrategyRule, f64)],
    y0: usize,
    horizon: usize,
    dt: f64,
    seed: u64,
    index: usize,
) -> Result<Vec<ControlledPath>> {
    let mut raw = RawPath::new(seed, index, y0);
    let mut procs: Vec<Controlled> = rules.iter().map(|(_, x)| Controlled::start(*x, 0.0)).collect();
    let mut out = vec![ControlledPath::default(); rules.len()];
    for k in 1..=horizon {
        raw.next_segment(spec, clock, dt);
        for p in procs.iter_mut() {
            p.advance(&raw.seg, raw.d);
        }
        raw.commit();
        let disc = (-raw.d).exp();
        for ((p, (rule, _)), rec) in procs.iter_mut().zip(rules).zip(out.iter_mut()) {
            rec.epoch_times.push(raw.t);
            rec.pre_payout.push(p.u);
            rec.payouts.push(p.pay(rule, raw.y, k, disc)?);
            rec.dividends.push(p.dividends);
            rec.injections.push(p.injections);
        }
    }
    for (p, rec) in procs.iter().zip(out.iter_mut()) {
        rec.terminal_discount = (-raw.d).exp();
        rec.terminal = (p.u, raw.y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn params(n: usize) -> SimParams {
        SimParams::new(n, 0.01, 5)
    }

    fn bound(spec: &ModelSpec, clock: &DividendClock) -> ModelBound {
        ModelBound::estimate(spec, clock, 0.01, 1).unwrap()
    }

    #[test]
    fn constant_samples() {
        let s = StrategySamples {
            dividends: vec![5.0; 3],
            injections: vec![0.0; 3],
            beta: 1.5,
            horizon: 10,
        };
        let b = ModelBound {
            r_max: 0.5,
            b_bound: 1.0,
        };
        let e = estimate_npv(&s, 0.0, &b).unwrap();
        assert_eq!((e.mean, e.std_error), (5.0, 0.0));
        assert!((e.bias_bound - 0.5f64.powi(10) * 2.5).abs() < 1e-15);
    }

    #[test]
    fn drift_examples() {
        let clock = presets::unit_clock();
        let up = presets::inst_drift_up();
        let (_, e) = simulate_mmpcb(&up, &clock, &[0.0], 0.0, 0, &params(8), &bound(&up, &clock)).unwrap();
        let v = (-0.1f64).exp() / (1.0 - (-0.1f64).exp());
        assert!((e.mean - v).abs() <= e.bias_bound + 1e-9, "{e:?}");

        let down = presets::inst_drift_down();
        let (_, e) = simulate_mmpcb(&down, &clock, &[0.0], 0.0, 0, &params(8), &bound(&down, &clock)).unwrap();
        assert!((e.mean + 7.5).abs() <= e.bias_bound + 1e-9, "{e:?}");

        let zero = presets::inst_zero();
        let (_, e) = simulate_mmpcb(&zero, &clock, &[2.0], 1.0, 0, &params(8), &bound(&zero, &clock)).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn mmpcb_rule_reproduces_barrier_simulation() {
        let spec = presets::inst_two_state();
        let clock = presets::two_state_clock();
        let p = params(64).with_horizon(30);
        let b = bound(&spec, &clock);
        let (a, _) = simulate_mmpcb(&spec, &clock, &[0.4, 1.5], 1.0, 1, &p, &b).unwrap();
        let rule = StrategyRule::custom("same", |u, y, _| (u - [0.4, 1.5][y]).max(0.0));
        let (c, _) = simulate_epoch_rule(&spec, &clock, &rule, 1.0, 1, &p, &b).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn violating_rule_names_the_epoch() {
        let spec = presets::inst_drift_up();
        let clock = presets::unit_clock();
        let rule = StrategyRule::custom("greedy", |u, _, k| if k == 3 { u + 1.0 } else { 0.0 });
        let err = simulate_epoch_rule(&spec, &clock, &rule, 0.0, 0, &params(4), &bound(&spec, &clock));
        match err {
            Err(Error::ContractViolation { epoch, .. }) => assert_eq!(epoch, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let spec = presets::inst_drift_up();
        let clock = presets::unit_clock();
        let p = params(4).with_horizon(0);
        assert!(simulate_mmpcb(&spec, &clock, &[0.0], 0.0, 0, &p, &bound(&spec, &clock)).is_err());
    }

    #[test]
    fn baseline_examples() {
        let clock = presets::unit_clock();
        let (d, i) = reflected_zero_baseline(&presets::inst_drift_up(), &clock, 0.0, 0, &params(4)).unwrap();
        assert!((d.mean - 9.508_33).abs() < 1e-3 && i.mean == 0.0);
        let (d, i) = reflected_zero_baseline(&presets::inst_drift_down(), &clock, 0.0, 0, &params(4)).unwrap();
        assert!(d.mean == 0.0 && (i.mean - 5.0).abs() < 1e-3);
        let (d, i) = reflected_zero_baseline(&presets::inst_zero(), &clock, 3.0, 0, &params(4)).unwrap();
        assert!(d.mean == 3.0 && i.mean == 0.0);
    }

    #[test]
    fn traced_paths_stay_nonnegative() {
        let spec = presets::inst_two_state();
        let clock = presets::two_state_clock();
        let rules = [
            (StrategyRule::barrier(vec![0.4, 1.5]), 0.5),
            (StrategyRule::never(), 2.0),
        ];
        for i in 0..20 {
            for p in trace_paths(&spec, &clock, &rules, 1, 40, 0.01, 3, i).unwrap() {
                assert!(p.pre_payout.iter().all(|u| *u >= 0.0));
                assert!(p.terminal.0 >= 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn domination_by_reflected_baseline(index in 0usize..500, frac in 0.0f64..1.0, x in 0.0f64..3.0) {
            let spec = presets::inst_two_state();
            let clock = presets::two_state_clock();
            let rule = StrategyRule::custom("fraction", move |u, _, _| frac * u.max(0.0));
            let paths = trace_paths(&spec, &clock, &[(rule, x), (StrategyRule::pay_all(), 0.0)], 0, 30, 0.02, 11, index).unwrap();
            let (pi, zero) = (&paths[0], &paths[1]);
            for k in 0..30 {
                prop_assert!(pi.dividends[k] <= x + zero.dividends[k] + 1e-9);
                prop_assert!(pi.injections[k] <= zero.injections[k] + 1e-9);
            }
        }

        #[test]
        fn comparison_in_initial_capital(index in 0usize..500, x in 0.0f64..2.0, eps in 0.0f64..1.0) {
            let spec = presets::inst_two_state();
            let clock = presets::two_state_clock();
            let b = vec![0.4, 1.5];
            let rules = [(StrategyRule::barrier(b.clone()), x), (StrategyRule::barrier(b), x + eps)];
            let paths = trace_paths(&spec, &clock, &rules, 1, 30, 0.02, 11, index).unwrap();
            for k in 0..30 {
                let dl = paths[1].dividends[k] - paths[0].dividends[k];
                let dr = paths[0].injections[k] - paths[1].injections[k];
                prop_assert!(dl >= -1e-9 && dl <= eps + 1e-9);
                prop_assert!(dr >= -1e-9 && dr <= eps + 1e-9);
            }
        }
    }
}
