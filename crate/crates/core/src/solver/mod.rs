//! Value iteration for the periodic-dividend value function and its optimal
//! barrier band.
//!
//! Every sweep reuses one fixed bundle per initial state, so the discretised
//! operator is deterministic, monotone and maps concave functions with slopes in
//! `[0, beta]` to functions of the same kind. The fixed point of the derivative
//! recursion is computed alongside as an independent cross-check.

pub mod gamma;
pub mod grid;
pub mod kernel;

use crate::error::{Error, Result};
use crate::isotonic::project_nonincreasing;
use crate::model::{epoch_discount_factors, DividendClock, ModelSpec};
use crate::sampling::{sample_epoch_bundle, PathBundle};

pub use gamma::{gamma_check, BaselineBounds, GammaReport, GammaRule, GammaViolation};
pub use grid::{
    extract_barriers, integrate, make_grid, right_derivative, tilde_transform, BarrierProfile, Grid, ValueGrid,
};
pub use kernel::{apply_derivative_operator, apply_value_operator, fixed_point_errors, EpochKernel};

use kernel::{end_slopes, flatten, unflatten};

pub const MIN_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub x_max: f64,
    pub n_nodes: usize,
}

impl GridParams {
    /// Grid with spacing exactly `h` covering at least `x_max`.
    pub fn with_spacing(x_max: f64, h: f64) -> Self {
        let cells = (x_max / h - 1e-9).ceil().max(1.0) as usize;
        GridParams {
            x_max: cells as f64 * h,
            n_nodes: cells + 1,
        }
    }

    /// Default domain with spacing `h`; see [`default_x_max`].
    pub fn default_for(spec: &ModelSpec, clock: &DividendClock, h: f64) -> Self {
        Self::with_spacing(default_x_max(spec, clock), h)
    }

    pub fn h(&self) -> f64 {
        self.x_max / (self.n_nodes - 1) as f64
    }
}

/// Four times the deterministic-drift barrier `max_y ln(beta) mean|mu| / q(y)`
/// plus five one-epoch noise scales.
pub fn default_x_max(spec: &ModelSpec, clock: &DividendClock) -> f64 {
    let s = spec.n_states() as f64;
    let mean_abs_mu = spec.regimes.iter().map(|r| r.drift.abs()).sum::<f64>() / s;
    let det = spec
        .discount
        .iter()
        .map(|q| spec.beta.ln() * mean_abs_mu / q)
        .fold(0.0, f64::max);
    let et = clock.mean();
    let noise = spec
        .regimes
        .iter()
        .map(|r| {
            let jumps = match &r.jump {
                Some(j) if r.active_jump_rate() > 0.0 => j.mean_abs() * (r.jump_rate * et).max(1.0),
                _ => 0.0,
            };
            r.volatility * et.sqrt() + jumps
        })
        .fold(0.0, f64::max);
    (4.0 * det + 5.0 * noise).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McParams {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the sup change is below `eps_rel * scale * (1 - r)`.
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Dead zone around slope one when locating the band.
    pub tol_d: f64,
    /// Tolerance of the per-iteration class check, relative to the value scale.
    pub gamma_tol_rel: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_rel: 1e-9,
            max_iter: 50_000,
            tol_d: 1e-9,
            gamma_tol_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub sup_change: f64,
    /// Sup-norm size of the derivative projection, relative to the value scale.
    pub projection: f64,
    pub gamma_passed: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: ValueGrid,
    pub v0: ValueGrid,
    pub barriers: BarrierProfile,
    pub iterations: usize,
    pub v0_iterations: usize,
    pub history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// `max_y r(y)`.
    pub contraction_ratio: f64,
    /// Largest ratio of successive sup changes after burn-in.
    pub observed_ratio: f64,
    pub epoch_discount: Vec<f64>,
    pub gamma: GammaReport,
    pub bounds: BaselineBounds,
    pub value_se: Vec<Vec<f64>>,
    pub deriv_se: Vec<Vec<f64>>,
    pub v0_se: Vec<Vec<f64>>,
    pub barrier_se: Vec<f64>,
    pub grid_error: f64,
    pub dual_derivs: Vec<Vec<f64>>,
    pub dual_barriers: BarrierProfile,
    pub final_projection: f64,
}

impl SolveResult {
    pub fn grid(&self) -> &Grid {
        &self.value.grid
    }

    pub fn value_at(&self, y: usize, x: f64) -> f64 {
        self.value.eval(y, x)
    }

    /// Standard error at the nearest node.
    pub fn se_at(&self, y: usize, x: f64) -> f64 {
        self.value_se[y][self.value.grid.index_of(x.max(0.0))]
    }

    pub fn v0_se_at(&self, y: usize, x: f64) -> f64 {
        self.v0_se[y][self.value.grid.index_of(x.max(0.0))]
    }

    pub fn scale(&self) -> f64 {
        self.value.scale()
    }

    pub fn max_value_se(&self) -> f64 {
        self.value_se.iter().flatten().fold(0.0, |m: f64, v| m.max(*v))
    }

    pub fn max_deriv_se(&self) -> f64 {
        self.deriv_se.iter().flatten().fold(0.0, |m: f64, v| m.max(*v))
    }
}

/// Clamps slopes to `[0, beta]`, projects them onto nonincreasing sequences and
/// rebuilds the values from `f(0)`.
fn regularize(f: &ValueGrid) -> (ValueGrid, f64) {
    let mut moved = 0.0f64;
    let mut derivs = right_derivative(&f.values, f.grid.h, f.beta);
    let values: Vec<Vec<f64>> = f
        .values
        .iter()
        .zip(derivs.iter_mut())
        .map(|(v, d)| {
            project_nonincreasing(d);
            let rebuilt = integrate(v[0], d, f.grid.h);
            for (a, b) in rebuilt.iter().zip(v) {
                moved = moved.max((a - b).abs());
            }
            rebuilt
        })
        .collect();
    let out = ValueGrid {
        grid: f.grid.clone(),
        values,
        derivs,
        beta: f.beta,
    };
    (out, moved / f.scale())
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

fn scale_of(v: &[f64]) -> f64 {
    v.iter().fold(1.0f64, |m, x| m.max(x.abs()))
}

/// Fixed point of the no-dividend operator on a prepared kernel.
fn iterate_v0(kernel: &EpochKernel, r: f64, opts: &SolverOptions) -> Result<(ValueGrid, usize)> {
    let n = kernel.grid.len();
    let mut f = vec![0.0; kernel.dim()];
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let fg = ValueGrid {
            grid: kernel.grid.clone(),
            values: unflatten(&f, n),
            derivs: Vec::new(),
            beta: kernel.beta,
        };
        let next = kernel.apply_linear(&f, &end_slopes(&fg));
        let change = sup_diff(&next, &f);
        history.push(change);
        f = next;
        if change <= opts.eps_rel * scale_of(&f) * (1.0 - r) {
            return Ok((
                ValueGrid::from_values(kernel.grid.clone(), unflatten(&f, n), kernel.beta),
                it,
            ));
        }
    }
    Err(Error::Divergence {
        iterations: opts.max_iter,
        last_change: *history.last().unwrap_or(&f64::NAN),
        target: opts.eps_rel * scale_of(&f) * (1.0 - r),
        history,
    })
}

fn bundles_for(spec: &ModelSpec, clock: &DividendClock, mc: &McParams) -> Result<Vec<PathBundle>> {
    (0..spec.n_states())
        .map(|y| sample_epoch_bundle(spec, clock, y, mc.n_paths, mc.dt, mc.seed))
        .collect()
}

/// The never-pay value `v_0`, computed from fresh bundles.
pub fn compute_v0(
    spec: &ModelSpec,
    clock: &DividendClock,
    bundles: &[PathBundle],
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<ValueGrid> {
    spec.ensure_valid()?;
    let kernel = EpochKernel::build(grid, bundles, spec.beta)?;
    let r = epoch_discount_factors(spec, clock).into_iter().fold(0.0, f64::max);
    iterate_v0(&kernel, r, opts).map(|(v, _)| v)
}

pub fn value_iterate(
    spec: &ModelSpec,
    clock: &DividendClock,
    grid: &GridParams,
    mc: &McParams,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    spec.ensure_valid()?;
    clock.validate()?;
    let bundles = bundles_for(spec, clock, mc)?;
    solve_with_bundles(spec, clock, grid, &bundles, opts)
}

pub fn solve_with_bundles(
    spec: &ModelSpec,
    clock: &DividendClock,
    grid: &GridParams,
    bundles: &[PathBundle],
    opts: &SolverOptions,
) -> Result<SolveResult> {
    spec.ensure_valid()?;
    let grid = make_grid(grid.x_max, grid.n_nodes)?;
    let kernel = EpochKernel::build(&grid, bundles, spec.beta)?;
    let epoch_discount = epoch_discount_factors(spec, clock);
    let r = epoch_discount.iter().copied().fold(0.0, f64::max);
    let bounds = BaselineBounds::from_kernel(&kernel);
    let (v0, v0_iterations) = iterate_v0(&kernel, r, opts)?;
    let n = grid.len();

    let mut f = v0.clone();
    let mut history = Vec::new();
    let mut records = Vec::new();
    let mut gamma = gamma_check(&f, opts.gamma_tol_rel * f.scale(), Some(&bounds));
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (reg, projection) = regularize(&f);
        let barriers = extract_barriers(&reg.derivs, &grid, opts.tol_d);
        let ft = tilde_transform(&reg, &barriers);
        let next = kernel.apply_linear(&flatten(&ft.values), &end_slopes(&ft));
        let next = ValueGrid::from_values(grid.clone(), unflatten(&next, n), spec.beta);
        let change = sup_diff(&flatten(&next.values), &flatten(&f.values));
        gamma = gamma_check(&next, opts.gamma_tol_rel * next.scale(), Some(&bounds));
        history.push(change);
        records.push(IterationRecord {
            sup_change: change,
            projection,
            gamma_passed: gamma.passed(),
        });
        f = next;
        if change <= opts.eps_rel * f.scale() * (1.0 - r) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Divergence {
            iterations: opts.max_iter,
            last_change: *history.last().unwrap_or(&f64::NAN),
            target: opts.eps_rel * f.scale() * (1.0 - r),
            history,
        });
    }

    let (reg, final_projection) = regularize(&f);
    let barriers = extract_barriers(&reg.derivs, &grid, opts.tol_d);
    let capped = barriers.capped_states();
    if !capped.is_empty() {
        return Err(Error::GridCap {
            x_max: grid.x_max(),
            states: capped,
        });
    }
    let ft = tilde_transform(&reg, &barriers);
    let (sv, sd) = fixed_point_errors(&kernel, bundles, &ft);
    let value_se = unflatten(&sv, n);
    let deriv_se = unflatten(&sd, n);
    let v0_se = unflatten(&fixed_point_errors(&kernel, bundles, &v0).0, n);

    let mut d = flatten(&f.derivs);
    for _ in 0..opts.max_iter {
        let next = kernel.apply_derivative(&d);
        let change = sup_diff(&next, &d);
        d = next;
        if change <= 1e-13 * spec.beta {
            break;
        }
    }
    let dual_derivs = unflatten(&d, n);
    let dual_barriers = extract_barriers(&dual_derivs, &grid, opts.tol_d);

    let barrier_se = barriers
        .lower
        .iter()
        .enumerate()
        .map(|(y, &b)| {
            let k = grid.index_of(b);
            let se = deriv_se[y][k.min(n - 1)];
            // Rounding-level noise, or a band pinned at zero by a slope clearly below one.
            if se <= 1e-9 || (k == 0 && f.derivs[y][0] < 1.0 - 3.0 * se) {
                return 0.0;
            }
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let slope = (f.derivs[y][lo] - f.derivs[y][hi]) / ((hi - lo).max(1) as f64 * grid.h);
            if slope > 0.0 {
                (se / slope).min(grid.x_max())
            } else {
                grid.x_max()
            }
        })
        .collect();

    let curvature = f
        .values
        .iter()
        .flat_map(|v| v.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()))
        .fold(0.0, f64::max);
    let grid_error = curvature / 8.0 / (1.0 - r);

    let burn = 10.min(history.len());
    let floor = 1e-10 * f.scale();
    let observed_ratio = history[burn..]
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);

    Ok(SolveResult {
        value: f,
        v0,
        barriers,
        iterations: history.len(),
        v0_iterations,
        history,
        records,
        contraction_ratio: r,
        observed_ratio,
        epoch_discount,
        gamma,
        bounds,
        value_se,
        deriv_se,
        v0_se,
        barrier_se,
        grid_error,
        dual_derivs,
        dual_barriers,
        final_projection,
    })
}
