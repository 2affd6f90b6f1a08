//! Simulation of `(X, Y)` between two dividend epochs.
//!
//! Modulator holding times and jump times are drawn exactly. Drift and
//! diffusion advance by Euler steps no longer than `dt`, and the path is
//! taken to be linear between consecutive grid points (jumps are vertical).
//! Discounting is linear in time inside each holding interval, so every
//! functional below is an exact integral over that piecewise-linear path.
//!
//! A segment is compressed into its running-minimum records. They are enough
//! to evaluate the injection integral, the reflected endpoint and first passage
//! times for every starting capital at once.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DividendClock, ModelSpec};
use crate::rng::{path_rng, Domain};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub time: f64,
    /// Increment `X_t - X_0`.
    pub xi: f64,
    /// Accumulated discount rate `∫_0^t q(Y_s) ds`.
    pub discount: f64,
}

/// A new running minimum of the increment.
///
/// The minimum descends linearly from the previous record's value, starting at
/// `onset_time`, and reaches `value` at `time`. For a jump both times coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinRecord {
    pub time: f64,
    pub value: f64,
    pub discount: f64,
    pub onset_time: f64,
    pub onset_discount: f64,
}

const ORIGIN: MinRecord = MinRecord {
    time: 0.0,
    value: 0.0,
    discount: 0.0,
    onset_time: 0.0,
    onset_discount: 0.0,
};

/// Everything the estimators need from one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub t_end: f64,
    pub xi_end: f64,
    pub discount_end: f64,
    /// Strictly decreasing in value, starting with the origin `(0, 0, 0)`.
    pub min_records: Vec<MinRecord>,
    pub y_end: usize,
}

impl Default for SegmentSummary {
    fn default() -> Self {
        SegmentSummary {
            t_end: 0.0,
            xi_end: 0.0,
            discount_end: 0.0,
            min_records: vec![ORIGIN],
            y_end: 0,
        }
    }
}

impl SegmentSummary {
    /// `inf_{t <= T} xi_t`.
    pub fn running_min(&self) -> f64 {
        self.min_records.last().map_or(0.0, |r| r.value)
    }

    pub fn terminal_discount(&self) -> f64 {
        (-self.discount_end).exp()
    }
}

/// A fully recorded segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    /// `(time, new state)` for every modulator switch.
    pub switch_times: Vec<(f64, usize)>,
    pub grid: Vec<GridPoint>,
    pub summary: SegmentSummary,
}

trait PathSink {
    fn point(&mut self, p: GridPoint);
    fn switch(&mut self, _time: f64, _y: usize) {}
}

struct MinTracker<'a> {
    prev: GridPoint,
    records: &'a mut Vec<MinRecord>,
}

impl<'a> MinTracker<'a> {
    fn new(records: &'a mut Vec<MinRecord>) -> Self {
        records.clear();
        records.push(ORIGIN);
        MinTracker {
            prev: GridPoint {
                time: 0.0,
                xi: 0.0,
                discount: 0.0,
            },
            records,
        }
    }

    fn observe(&mut self, p: GridPoint) {
        let m = self.records.last().expect("origin").value;
        if p.xi < m {
            let prev = self.prev;
            let phi = (prev.xi - m) / (prev.xi - p.xi);
            self.records.push(MinRecord {
                time: p.time,
                value: p.xi,
                discount: p.discount,
                onset_time: prev.time + phi * (p.time - prev.time),
                onset_discount: prev.discount + phi * (p.discount - prev.discount),
            });
        }
        self.prev = p;
    }
}

impl PathSink for MinTracker<'_> {
    fn point(&mut self, p: GridPoint) {
        self.observe(p);
    }
}

struct FullRecorder<'a> {
    tracker: MinTracker<'a>,
    grid: Vec<GridPoint>,
    switches: Vec<(f64, usize)>,
}

impl PathSink for FullRecorder<'_> {
    fn point(&mut self, p: GridPoint) {
        self.tracker.observe(p);
        self.grid.push(p);
    }

    fn switch(&mut self, time: f64, y: usize) {
        self.switches.push((time, y));
    }
}

/// Core simulation loop. Returns `(xi_end, discount_end, y_end)`.
fn run_segment<R: Rng + ?Sized, S: PathSink>(
    spec: &ModelSpec,
    y0: usize,
    t_end: f64,
    dt: f64,
    rng: &mut R,
    sink: &mut S,
) -> (f64, f64, usize) {
    let mut y = y0;
    let mut t = 0.0;
    let mut xi = 0.0;
    let mut disc = 0.0;
    while t < t_end {
        let exit = spec.exit_rate(y);
        let hold_end = if exit > 0.0 {
            let h: f64 = Exp::new(exit).expect("positive rate").sample(rng);
            t + h
        } else {
            f64::INFINITY
        };
        let end = hold_end.min(t_end);
        let regime = &spec.regimes[y];
        let q = spec.discount[y];
        let (mu, sigma) = (regime.drift, regime.volatility);
        let lambda = regime.active_jump_rate();
        let (start, disc_start) = (t, disc);
        let disc_at = |s: f64| disc_start + q * (s - start);

        let mut cursor = t;
        loop {
            let next_jump = if lambda > 0.0 {
                let w: f64 = Exp::new(lambda).expect("positive rate").sample(rng);
                cursor + w
            } else {
                f64::INFINITY
            };
            let stop = next_jump.min(end);
            let len = stop - cursor;
            if len > 0.0 {
                let n = if sigma > 0.0 {
                    (len / dt).ceil().max(1.0) as usize
                } else {
                    1
                };
                let step = len / n as f64;
                let sd = sigma * step.sqrt();
                for k in 1..=n {
                    let z: f64 = if sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                    xi += mu * step + sd * z;
                    let tk = if k == n {
                        stop
                    } else {
                        cursor + len * k as f64 / n as f64
                    };
                    sink.point(GridPoint {
                        time: tk,
                        xi,
                        discount: disc_at(tk),
                    });
                }
            }
            cursor = stop;
            if next_jump < end {
                let law = regime.jump.as_ref().expect("active jump law");
                xi += law.sample(rng);
                sink.point(GridPoint {
                    time: cursor,
                    xi,
                    discount: disc_at(cursor),
                });
            } else {
                break;
            }
        }
        t = end;
        disc = disc_at(end);
        if end < t_end {
            y = spec.jump_target(y, rng.random());
            sink.switch(t, y);
        }
    }
    (xi, disc, y)
}

/// Simulates one segment of length `t_end`, keeping the full grid.
pub fn sample_segment<R: Rng + ?Sized>(
    spec: &ModelSpec,
    y0: usize,
    t_end: f64,
    dt: f64,
    rng: &mut R,
) -> Result<SegmentPath> {
    check_segment_args(t_end, dt)?;
    let mut records = Vec::new();
    let mut sink = FullRecorder {
        tracker: MinTracker::new(&mut records),
        grid: vec![GridPoint {
            time: 0.0,
            xi: 0.0,
            discount: 0.0,
        }],
        switches: Vec::new(),
    };
    let (xi_end, discount_end, y_end) = run_segment(spec, y0, t_end, dt, rng, &mut sink);
    let FullRecorder { grid, switches, .. } = sink;
    Ok(SegmentPath {
        switch_times: switches,
        grid,
        summary: SegmentSummary {
            t_end,
            xi_end,
            discount_end,
            min_records: records,
            y_end,
        },
    })
}

/// Simulates one segment into `out`, reusing its allocation.
pub fn sample_summary_into<R: Rng + ?Sized>(
    spec: &ModelSpec,
    y0: usize,
    t_end: f64,
    dt: f64,
    rng: &mut R,
    out: &mut SegmentSummary,
) {
    let mut tracker = MinTracker::new(&mut out.min_records);
    let (xi_end, discount_end, y_end) = run_segment(spec, y0, t_end, dt, rng, &mut tracker);
    out.t_end = t_end;
    out.xi_end = xi_end;
    out.discount_end = discount_end;
    out.y_end = y_end;
}

fn check_segment_args(t_end: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must be positive")));
    }
    Ok(())
}

/// `min(mean interarrival, 1) / 200`.
pub fn default_dt(clock: &DividendClock) -> f64 {
    clock.mean().min(1.0) / 200.0
}

/// Monte-Carlo settings shared by the multi-epoch estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Number of epochs simulated; `None` picks the smallest `N` with `r^N < 1e-4`.
    pub horizon: Option<usize>,
    /// Largest tolerated share of paths still running at the horizon.
    pub horizon_ceiling: f64,
}

impl SimParams {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        SimParams {
            n_paths,
            dt,
            seed,
            horizon: None,
            horizon_ceiling: 0.01,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be positive".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::InvalidArgument("horizon must be at least one epoch".into()));
        }
        check_segment_args(1.0, self.dt)
    }

    pub fn horizon_for(&self, r_max: f64) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(r_max))
    }
}

/// Smallest `N` with `r^N < 1e-4`.
pub fn default_horizon(r_max: f64) -> usize {
    ((1e-4f64).ln() / r_max.ln()).floor() as usize + 1
}

/// One-epoch samples from a fixed initial state, shared by every solver sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub y0: usize,
    pub clock_draws: Vec<f64>,
    pub segments: Vec<SegmentSummary>,
    pub seed: u64,
    pub dt: f64,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

pub fn sample_epoch_bundle(
    spec: &ModelSpec,
    clock: &DividendClock,
    y0: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<PathBundle> {
    clock.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    if y0 >= spec.n_states() {
        return Err(Error::InvalidArgument(format!("unknown state index {y0}")));
    }
    check_segment_args(1.0, dt)?;
    let pairs: Vec<(f64, SegmentSummary)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, Domain::Bundle(y0), i as u64);
            let t = clock.sample(&mut rng);
            let mut seg = SegmentSummary::default();
            sample_summary_into(spec, y0, t, dt, &mut rng, &mut seg);
            (t, seg)
        })
        .collect();
    let (clock_draws, segments) = pairs.into_iter().unzip();
    Ok(PathBundle {
        y0,
        clock_draws,
        segments,
        seed,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionOutcome {
    /// `∫_[0,T] e^{-𝔮(t)} dR_t` for the reflection `R` of `x + xi` at zero.
    pub discounted_injection: f64,
    /// `X^0_T` started from `x`.
    pub reflected_endpoint: f64,
    pub terminal_discount: f64,
}

/// `∫ e^{-D(l)} dl` over a linear descent of length `len` whose discount starts
/// at `d_u` and grows at rate `kappa` per unit of level.
fn descent_integral(d_u: f64, kappa: f64, len: f64) -> f64 {
    let k = kappa * len;
    if k < 1e-12 {
        len * (-d_u).exp()
    } else {
        (-d_u).exp() * (-(-k).exp_m1()) / kappa
    }
}

fn descent_slope(prev: &MinRecord, rec: &MinRecord) -> f64 {
    ((rec.discount - rec.onset_discount) / (prev.value - rec.value)).max(0.0)
}

/// Injection below the level `l` contributed by the descent `prev -> rec`.
fn partial_injection(prev: &MinRecord, rec: &MinRecord, l: f64) -> f64 {
    if rec.value >= l {
        return 0.0;
    }
    let a = prev.value;
    let kappa = descent_slope(prev, rec);
    let u = a.min(l);
    let d_u = rec.onset_discount + kappa * (a - u);
    descent_integral(d_u, kappa, u - rec.value)
}

pub fn evaluate_injection_functional(seg: &SegmentSummary, x: f64) -> InjectionOutcome {
    let upfront = (-x).max(0.0);
    let x = x.max(0.0);
    let level = -x;
    let injection: f64 = seg
        .min_records
        .windows(2)
        .map(|w| partial_injection(&w[0], &w[1], level))
        .sum();
    InjectionOutcome {
        discounted_injection: upfront + injection,
        reflected_endpoint: reflected_endpoint(seg, x),
        terminal_discount: seg.terminal_discount(),
    }
}

/// `(x + xi_T) - min(x + inf xi, 0)`.
pub fn reflected_endpoint(seg: &SegmentSummary, x: f64) -> f64 {
    let x = x.max(0.0);
    (x + seg.xi_end - (x + seg.running_min()).min(0.0)).max(0.0)
}

/// Discounted injection for several starting capitals at once.
///
/// `xs` must be nonnegative and ascending; the cost is linear in
/// `xs.len() + records`.
pub fn injection_curve(seg: &SegmentSummary, xs: &[f64], out: &mut [f64]) {
    let recs = &seg.min_records;
    let n = recs.len();
    // tail[k] = full contribution of descents k.. (descent k ends at record k)
    let mut tail = vec![0.0; n + 1];
    for k in (1..n).rev() {
        let (p, r) = (&recs[k - 1], &recs[k]);
        tail[k] = tail[k + 1] + descent_integral(r.onset_discount, descent_slope(p, r), p.value - r.value);
    }
    let mut k = 1;
    for (x, o) in xs.iter().zip(out.iter_mut()) {
        let level = -x;
        while k < n && recs[k].value >= level {
            k += 1;
        }
        *o = if k >= n {
            0.0
        } else {
            partial_injection(&recs[k - 1], &recs[k], level) + tail[k + 1]
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassageMode {
    /// First time with `x + xi < level`.
    BelowStrict,
    /// First time with `x + xi <= level`, including time zero.
    BelowWeak,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    pub time: f64,
    pub discount: f64,
}

fn crossing(prev: &MinRecord, rec: &MinRecord, v: f64) -> Passage {
    let phi = ((prev.value - v) / (prev.value - rec.value)).clamp(0.0, 1.0);
    let d = rec.onset_discount + phi * (rec.discount - rec.onset_discount);
    Passage {
        time: rec.onset_time + phi * (rec.time - rec.onset_time),
        discount: (-d).exp(),
    }
}

pub fn first_passage_scan(seg: &SegmentSummary, x: f64, level: f64, mode: PassageMode) -> Option<Passage> {
    let v = level - x;
    let immediate = match mode {
        PassageMode::BelowStrict => 0.0 < v,
        PassageMode::BelowWeak => 0.0 <= v,
    };
    if immediate {
        return Some(Passage {
            time: 0.0,
            discount: 1.0,
        });
    }
    seg.min_records.windows(2).find_map(|w| {
        let hit = match mode {
            PassageMode::BelowStrict => w[1].value < v,
            PassageMode::BelowWeak => w[1].value <= v,
        };
        hit.then(|| crossing(&w[0], &w[1], v))
    })
}

/// Strict first passage below zero for several ascending starting capitals.
pub fn ruin_curve(seg: &SegmentSummary, xs: &[f64], out: &mut [Option<Passage>]) {
    let recs = &seg.min_records;
    let mut k = 1;
    for (x, o) in xs.iter().zip(out.iter_mut()) {
        let v = -x;
        if 0.0 < v {
            *o = Some(Passage {
                time: 0.0,
                discount: 1.0,
            });
            continue;
        }
        while k < recs.len() && recs[k].value >= v {
            k += 1;
        }
        *o = (k < recs.len()).then(|| crossing(&recs[k - 1], &recs[k], v));
    }
}

/// Sample moments of `sup_{s <= 1} |X_s - X_0|` started in `y0`.
pub fn sup_abs_moment(spec: &ModelSpec, y0: usize, n_paths: usize, dt: f64, seed: u64) -> Result<Moments> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let sups: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, Domain::Modulator(y0), i as u64);
            let path = sample_segment(spec, y0, 1.0, dt, &mut rng).expect("valid arguments");
            path.grid.iter().fold(0.0f64, |m, p| m.max(p.xi.abs()))
        })
        .collect();
    Ok(sups.into_iter().collect())
}
