//! One-epoch operators assembled from fixed path bundles.
//!
//! With common random numbers the value operator is linear in the tilde
//! function, so each bundle is reduced once to dense averaging weights over
//! `(state, node)` pairs. Rows are accumulated in path order, which keeps the
//! result independent of the worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::{extract_barriers, tilde_transform, Grid, ValueGrid};
use crate::error::{Error, Result};
use crate::sampling::{
    evaluate_injection_functional, first_passage_scan, injection_curve, reflected_endpoint, ruin_curve, Passage,
    PassageMode, PathBundle, SegmentSummary,
};

const BLOCK: usize = 32;

/// Per-path quantities for a block of ascending starting capitals.
struct BlockEval {
    inj: Vec<f64>,
    ruin: Vec<Option<Passage>>,
    z: Vec<f64>,
}

impl BlockEval {
    fn new(len: usize) -> Self {
        BlockEval {
            inj: vec![0.0; len],
            ruin: vec![None; len],
            z: vec![0.0; len],
        }
    }

    fn fill(&mut self, seg: &SegmentSummary, xs: &[f64]) {
        injection_curve(seg, xs, &mut self.inj);
        ruin_curve(seg, xs, &mut self.ruin);
        for (z, &x) in self.z.iter_mut().zip(xs) {
            *z = reflected_endpoint(seg, x);
        }
    }
}

fn check_bundles(bundles: &[PathBundle], n_states: usize) -> Result<()> {
    if bundles.len() != n_states {
        return Err(Error::InvalidArgument(format!(
            "{} bundles for {n_states} states",
            bundles.len()
        )));
    }
    for (y, b) in bundles.iter().enumerate() {
        if b.y0 != y {
            return Err(Error::InvalidArgument(format!(
                "bundle at position {y} starts in state {}",
                b.y0
            )));
        }
        if b.is_empty() {
            return Err(Error::InvalidArgument(format!("bundle for state {y} is empty")));
        }
    }
    Ok(())
}

/// Row blocks `(state, first node, last node + 1)`.
fn row_blocks(s: usize, n: usize) -> Vec<(usize, usize, usize)> {
    (0..s)
        .flat_map(|y| (0..n).step_by(BLOCK).map(move |i0| (y, i0, (i0 + BLOCK).min(n))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EpochKernel {
    pub grid: Grid,
    pub n_states: usize,
    pub beta: f64,
    /// Mean discounted injection per `(state, node)`.
    pub injection: Vec<f64>,
    /// `E[disc * interpolation weight]`, `(S N) x (S N)` row-major.
    pub value_weights: Vec<f64>,
    /// `E[disc * (z - x_max)^+]` per row and terminal state.
    pub overflow: Vec<f64>,
    /// `E[e^{-D(tau)}; ruin within the epoch]`.
    pub ruin: Vec<f64>,
    /// `E[disc; no ruin, z in cell]`, cells beyond the grid folded into the last one.
    pub deriv_weights: Vec<f64>,
}

impl EpochKernel {
    pub fn build(grid: &Grid, bundles: &[PathBundle], beta: f64) -> Result<Self> {
        let s = bundles.len();
        check_bundles(bundles, s)?;
        let n = grid.len();
        let m = s * n;
        let x_max = grid.x_max();
        let blocks: Vec<_> = row_blocks(s, n)
            .into_par_iter()
            .map(|(y, i0, i1)| {
                let xs = &grid.nodes[i0..i1];
                let rows = i1 - i0;
                let mut inj = vec![0.0; rows];
                let mut ruin = vec![0.0; rows];
                let mut vw = vec![0.0; rows * m];
                let mut dw = vec![0.0; rows * m];
                let mut of = vec![0.0; rows * s];
                let mut ev = BlockEval::new(rows);
                for seg in &bundles[y].segments {
                    ev.fill(seg, xs);
                    let disc = seg.terminal_discount();
                    let base = seg.y_end * n;
                    for r in 0..rows {
                        inj[r] += ev.inj[r];
                        let z = ev.z[r];
                        let row = &mut vw[r * m..(r + 1) * m];
                        if z >= x_max {
                            row[base + n - 1] += disc;
                            of[r * s + seg.y_end] += disc * (z - x_max);
                        } else {
                            let j = grid.cell_of(z).min(n - 2);
                            let w = ((z - grid.nodes[j]) / grid.h).clamp(0.0, 1.0);
                            row[base + j] += disc * (1.0 - w);
                            row[base + j + 1] += disc * w;
                        }
                        match ev.ruin[r] {
                            Some(p) => ruin[r] += p.discount,
                            None => {
                                let j = grid.cell_of(z).min(n - 1);
                                dw[r * m + base + j] += disc;
                            }
                        }
                    }
                }
                let k = 1.0 / bundles[y].len() as f64;
                for v in inj
                    .iter_mut()
                    .chain(&mut ruin)
                    .chain(&mut vw)
                    .chain(&mut dw)
                    .chain(&mut of)
                {
                    *v *= k;
                }
                (inj, ruin, vw, dw, of)
            })
            .collect();
        let mut kernel = EpochKernel {
            grid: grid.clone(),
            n_states: s,
            beta,
            injection: Vec::with_capacity(m),
            value_weights: Vec::with_capacity(m * m),
            overflow: Vec::with_capacity(m * s),
            ruin: Vec::with_capacity(m),
            deriv_weights: Vec::with_capacity(m * m),
        };
        for (inj, ruin, vw, dw, of) in blocks {
            kernel.injection.extend(inj);
            kernel.ruin.extend(ruin);
            kernel.value_weights.extend(vw);
            kernel.deriv_weights.extend(dw);
            kernel.overflow.extend(of);
        }
        Ok(kernel)
    }

    pub fn dim(&self) -> usize {
        self.n_states * self.grid.len()
    }

    fn matvec(weights: &[f64], v: &[f64], out: &mut [f64]) {
        let m = v.len();
        out.par_iter_mut()
            .enumerate()
            .for_each(|(r, o)| *o = weights[r * m..(r + 1) * m].iter().zip(v).map(|(w, x)| w * x).sum());
    }

    /// `-beta A + W g + O slope` for a flattened function `g` extended above
    /// `x_max` with per-state slopes.
    pub fn apply_linear(&self, g: &[f64], slopes: &[f64]) -> Vec<f64> {
        let s = self.n_states;
        let mut out = vec![0.0; self.dim()];
        Self::matvec(&self.value_weights, g, &mut out);
        for (r, o) in out.iter_mut().enumerate() {
            let of: f64 = (0..s).map(|y| self.overflow[r * s + y] * slopes[y]).sum();
            *o += of - self.beta * self.injection[r];
        }
        out
    }

    /// `beta E[e^{-D(tau)}; ruin] + M max(d, 1)` on flattened derivatives.
    pub fn apply_derivative(&self, d: &[f64]) -> Vec<f64> {
        let dt: Vec<f64> = d.iter().map(|v| v.max(1.0)).collect();
        let mut out = vec![0.0; self.dim()];
        Self::matvec(&self.deriv_weights, &dt, &mut out);
        for (o, r) in out.iter_mut().zip(&self.ruin) {
            *o += self.beta * r;
        }
        out
    }

    /// Per-state `S x S` matrix of `E[disc; Y_T = y']` from node zero, and
    /// the mean discounted reflected endpoint and injection from node zero.
    pub fn node_zero_moments(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let (s, n) = (self.n_states, self.grid.len());
        let m = self.dim();
        let mut p = vec![vec![0.0; s]; s];
        let mut u = vec![0.0; s];
        let mut c = vec![0.0; s];
        for y in 0..s {
            let r = y * n;
            let row = &self.value_weights[r * m..(r + 1) * m];
            for yp in 0..s {
                let cols = &row[yp * n..(yp + 1) * n];
                p[y][yp] = cols.iter().sum();
                u[y] += cols.iter().zip(&self.grid.nodes).map(|(w, x)| w * x).sum::<f64>();
                u[y] += self.overflow[r * s + yp];
            }
            c[y] = self.injection[r];
        }
        (p, u, c)
    }
}

pub(crate) fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

pub(crate) fn unflatten(v: &[f64], n: usize) -> Vec<Vec<f64>> {
    v.chunks(n).map(|c| c.to_vec()).collect()
}

/// Last-cell slope of each state, used to extend a grid function above `x_max`.
pub(crate) fn end_slopes(f: &ValueGrid) -> Vec<f64> {
    f.values
        .iter()
        .map(|v| (v[v.len() - 1] - v[v.len() - 2]) / f.grid.h)
        .collect()
}

pub const SE_BATCHES: usize = 20;

/// Standard errors of the fixed point and of its derivative.
///
/// Paths are split into contiguous batches; each batch's one-step residual at
/// `f_tilde` is propagated through `(I - W)^{-1}` (resp. `(I - M)^{-1}`), and the
/// spread of the propagated residuals gives the standard error of the full-bundle
/// solution to first order.
pub fn fixed_point_errors(kernel: &EpochKernel, bundles: &[PathBundle], f_tilde: &ValueGrid) -> (Vec<f64>, Vec<f64>) {
    let grid = &kernel.grid;
    let (s, n) = (kernel.n_states, grid.len());
    let m = s * n;
    let k = SE_BATCHES;
    let beta = kernel.beta;
    let x_max = grid.x_max();
    // per row: batch sums of value and derivative summands, and batch sizes
    let blocks: Vec<_> = row_blocks(s, n)
        .into_par_iter()
        .map(|(y, i0, i1)| {
            let xs = &grid.nodes[i0..i1];
            let rows = i1 - i0;
            let mut sv = vec![0.0; rows * k];
            let mut sd = vec![0.0; rows * k];
            let mut ev = BlockEval::new(rows);
            let segs = &bundles[y].segments;
            for (p, seg) in segs.iter().enumerate() {
                let b = p * k / segs.len();
                ev.fill(seg, xs);
                let disc = seg.terminal_discount();
                let d = &f_tilde.derivs[seg.y_end];
                for r in 0..rows {
                    let z = ev.z[r];
                    sv[r * k + b] += -beta * ev.inj[r] + disc * f_tilde.eval(seg.y_end, z);
                    sd[r * k + b] += match ev.ruin[r] {
                        Some(pass) => beta * pass.discount,
                        None => {
                            let j = if z >= x_max { n - 1 } else { grid.cell_of(z).min(n - 1) };
                            disc * d[j].max(1.0)
                        }
                    };
                }
            }
            let sizes: Vec<f64> = (0..k)
                .map(|b| ((b + 1) * segs.len()).div_ceil(k) as f64 - (b * segs.len()).div_ceil(k) as f64)
                .collect();
            (sv, sd, sizes)
        })
        .collect();
    let mut rv = DMatrix::<f64>::zeros(m, k);
    let mut rd = DMatrix::<f64>::zeros(m, k);
    let mut row = 0;
    for (sv, sd, sizes) in blocks {
        for r in 0..sv.len() / k {
            let total: f64 = sizes.iter().sum();
            let (mv, md) = (
                sv[r * k..(r + 1) * k].iter().sum::<f64>() / total,
                sd[r * k..(r + 1) * k].iter().sum::<f64>() / total,
            );
            for b in 0..k {
                if sizes[b] > 0.0 {
                    rv[(row, b)] = sv[r * k + b] / sizes[b] - mv;
                    rd[(row, b)] = sd[r * k + b] / sizes[b] - md;
                }
            }
            row += 1;
        }
    }
    let propagate = |weights: &[f64], resid: DMatrix<f64>| -> Vec<f64> {
        let a = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - weights[i * m + j]);
        let e = a.lu().solve(&resid).expect("sub-stochastic system is nonsingular");
        let used = (0..k).filter(|&b| e.column(b).iter().any(|v| *v != 0.0)).count().max(2) as f64;
        (0..m)
            .map(|i| (e.row(i).iter().map(|v| v * v).sum::<f64>() / (used * (used - 1.0))).sqrt())
            .collect()
    };
    (
        propagate(&kernel.value_weights, rv),
        propagate(&kernel.deriv_weights, rd),
    )
}

/// Path-by-path evaluation of the value operator: barriers of `f` are
/// extracted with `tol_d`, `f` is replaced by its tilde function and the
/// one-epoch expectation is averaged over each bundle.
pub fn apply_value_operator(f: &ValueGrid, bundles: &[PathBundle], tol_d: f64) -> Result<ValueGrid> {
    check_bundles(bundles, f.n_states())?;
    let barriers = extract_barriers(&f.derivs, &f.grid, tol_d);
    let ft = tilde_transform(f, &barriers);
    let values = bundles
        .iter()
        .map(|b| {
            f.grid
                .nodes
                .iter()
                .map(|&x| {
                    let total: f64 = b
                        .segments
                        .iter()
                        .map(|seg| {
                            let o = evaluate_injection_functional(seg, x);
                            -f.beta * o.discounted_injection
                                + o.terminal_discount * ft.eval(seg.y_end, o.reflected_endpoint)
                        })
                        .sum();
                    total / b.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(ValueGrid::from_values(f.grid.clone(), values, f.beta))
}

/// Path-by-path evaluation of the derivative recursion.
pub fn apply_derivative_operator(
    d: &[Vec<f64>],
    bundles: &[PathBundle],
    grid: &Grid,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    check_bundles(bundles, d.len())?;
    let n = grid.len();
    Ok(bundles
        .iter()
        .map(|b| {
            grid.nodes
                .iter()
                .map(|&x| {
                    let total: f64 = b
                        .segments
                        .iter()
                        .map(|seg| match first_passage_scan(seg, x, 0.0, PassageMode::BelowStrict) {
                            Some(p) => beta * p.discount,
                            None => {
                                let z = x + seg.xi_end;
                                let j = if z >= grid.x_max() {
                                    n - 1
                                } else {
                                    grid.cell_of(z).min(n - 1)
                                };
                                seg.terminal_discount() * d[seg.y_end][j].max(1.0)
                            }
                        })
                        .sum();
                    total / b.len() as f64
                })
                .collect()
        })
        .collect())
}
