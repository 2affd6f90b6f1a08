//! Membership checks for the class of admissible value candidates: concave on
//! `[0, inf)`, right derivative in `[0, beta]`, and sandwiched by the
//! reflect-at-zero baselines.

use nalgebra::{DMatrix, DVector};

use super::grid::ValueGrid;
use super::kernel::EpochKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaRule {
    Concavity,
    DerivativeRange,
    UpperBound,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaViolation {
    pub rule: GammaRule,
    pub state: usize,
    pub node: usize,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GammaReport {
    pub violations: Vec<GammaViolation>,
}

impl GammaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self, rule: GammaRule) -> Option<&GammaViolation> {
        self.violations.iter().find(|v| v.rule == rule)
    }
}

/// Dividend and injection NPVs of the "pay everything, reflect at zero" strategy
/// started from zero capital.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBounds {
    pub dividend: Vec<f64>,
    pub injection: Vec<f64>,
}

impl BaselineBounds {
    /// Exact baselines for the bundle-averaged dynamics of `kernel`.
    pub fn from_kernel(kernel: &EpochKernel) -> Self {
        let (p, u, c) = kernel.node_zero_moments();
        let s = p.len();
        let a = DMatrix::from_fn(s, s, |i, j| if i == j { 1.0 } else { 0.0 } - p[i][j]);
        let lu = a.lu();
        let solve = |rhs: Vec<f64>| -> Vec<f64> {
            lu.solve(&DVector::from_vec(rhs))
                .expect("sub-stochastic system is nonsingular")
                .iter()
                .copied()
                .collect()
        };
        BaselineBounds {
            dividend: solve(u),
            injection: solve(c),
        }
    }
}

/// `tol` is absolute, in value units for the bounds and per unit of `h` for slopes.
pub fn gamma_check(f: &ValueGrid, tol: f64, bounds: Option<&BaselineBounds>) -> GammaReport {
    let mut report = GammaReport::default();
    let h = f.grid.h;
    for (y, v) in f.values.iter().enumerate() {
        let slopes: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        for (i, w) in slopes.windows(2).enumerate() {
            let excess = w[1] - w[0];
            if excess > tol {
                report.violations.push(GammaViolation {
                    rule: GammaRule::Concavity,
                    state: y,
                    node: i + 1,
                    excess,
                });
            }
        }
        for (i, &d) in slopes.iter().enumerate() {
            let excess = (-d).max(d - f.beta);
            if excess > tol {
                report.violations.push(GammaViolation {
                    rule: GammaRule::DerivativeRange,
                    state: y,
                    node: i,
                    excess,
                });
            }
        }
        if let Some(b) = bounds {
            for (i, (&fx, &x)) in v.iter().zip(&f.grid.nodes).enumerate() {
                let excess = fx - (x + b.dividend[y]);
                if excess > tol {
                    report.violations.push(GammaViolation {
                        rule: GammaRule::UpperBound,
                        state: y,
                        node: i,
                        excess,
                    });
                }
            }
            let excess = -f.beta * b.injection[y] - v[0];
            if excess > tol {
                report.violations.push(GammaViolation {
                    rule: GammaRule::LowerBound,
                    state: y,
                    node: 0,
                    excess,
                });
            }
        }
    }
    report
}
