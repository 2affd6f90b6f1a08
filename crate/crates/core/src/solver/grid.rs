//! Grid functions, right derivatives and barrier extraction.

use crate::error::{Error, Result};

/// Uniform grid `x_i = i h` on `[0, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    /// Index of the node at `x`, which must lie on the grid.
    pub fn index_of(&self, x: f64) -> usize {
        ((x / self.h).round().max(0.0) as usize).min(self.len() - 1)
    }

    /// Index of the cell `[x_j, x_{j+1})` containing `x`, robust to rounding at nodes.
    pub fn cell_of(&self, x: f64) -> usize {
        (x / self.h + 1e-9).floor().max(0.0) as usize
    }
}

pub fn make_grid(x_max: f64, n_nodes: usize) -> Result<Grid> {
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("x_max = {x_max} must be positive")));
    }
    if n_nodes < 2 {
        return Err(Error::InvalidArgument(format!("n_nodes = {n_nodes} is below 2")));
    }
    let h = x_max / (n_nodes - 1) as f64;
    let nodes = (0..n_nodes)
        .map(|i| if i == n_nodes - 1 { x_max } else { i as f64 * h })
        .collect();
    Ok(Grid { h, nodes })
}

/// A function on `[0, x_max] x E`, extended with slope `beta` below zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
    pub beta: f64,
}

impl ValueGrid {
    pub fn from_values(grid: Grid, values: Vec<Vec<f64>>, beta: f64) -> Self {
        let derivs = right_derivative(&values, grid.h, beta);
        ValueGrid {
            grid,
            values,
            derivs,
            beta,
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Linear interpolation, `beta` slope below zero and last-cell slope above `x_max`.
    pub fn eval(&self, y: usize, x: f64) -> f64 {
        let v = &self.values[y];
        if x <= 0.0 {
            return v[0] + self.beta * x;
        }
        let n = v.len();
        let x_max = self.grid.x_max();
        if x >= x_max {
            let slope = (v[n - 1] - v[n - 2]) / self.grid.h;
            return v[n - 1] + slope * (x - x_max);
        }
        let j = ((x / self.grid.h) as usize).min(n - 2);
        let w = (x - self.grid.nodes[j]) / self.grid.h;
        v[j] * (1.0 - w) + v[j + 1] * w
    }

    pub fn scale(&self) -> f64 {
        self.values.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()))
    }
}

/// Forward differences; the last node copies its predecessor; clamped to `[0, beta]`.
pub fn right_derivative(values: &[Vec<f64>], h: f64, beta: f64) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            let n = v.len();
            let mut d: Vec<f64> = (0..n)
                .map(|i| {
                    let j = i.min(n - 2);
                    ((v[j + 1] - v[j]) / h).clamp(0.0, beta)
                })
                .collect();
            if n >= 2 {
                d[n - 1] = d[n - 2];
            }
            d
        })
        .collect()
}

/// Rebuilds values from `f(0)` and cell slopes.
pub fn integrate(f0: f64, derivs: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(derivs.len());
    let mut acc = f0;
    out.push(acc);
    for d in &derivs[..derivs.len() - 1] {
        acc += h * d;
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProfile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// No derivative below one was found before `x_max`.
    pub upper_at_cap: Vec<bool>,
}

impl BarrierProfile {
    /// Degenerate band `[b(y), b(y)]`.
    pub fn from_levels(levels: Vec<f64>) -> Self {
        let n = levels.len();
        BarrierProfile {
            upper: levels.clone(),
            lower: levels,
            upper_at_cap: vec![false; n],
        }
    }

    pub fn constant(b: f64, n_states: usize) -> Self {
        Self::from_levels(vec![b; n_states])
    }

    pub fn n_states(&self) -> usize {
        self.lower.len()
    }

    pub fn capped_states(&self) -> Vec<usize> {
        self.upper_at_cap
            .iter()
            .enumerate()
            .filter_map(|(y, &c)| c.then_some(y))
            .collect()
    }
}

/// `derivs[y][i]` is the slope on the cell `[x_i, x_{i+1})`.
///
/// The lower barrier is the right end of the last cell with slope above
/// `1 + tol_d`, the upper barrier the first node whose slope is below `1 - tol_d`.
pub fn extract_barriers(derivs: &[Vec<f64>], grid: &Grid, tol_d: f64) -> BarrierProfile {
    let n = grid.len();
    let mut out = BarrierProfile {
        lower: Vec::new(),
        upper: Vec::new(),
        upper_at_cap: Vec::new(),
    };
    for d in derivs {
        let lower = d
            .iter()
            .rposition(|&v| v > 1.0 + tol_d)
            .map_or(0.0, |i| grid.nodes[(i + 1).min(n - 1)]);
        let first_below = d.iter().position(|&v| v < 1.0 - tol_d);
        let upper = first_below.map_or(grid.x_max(), |i| grid.nodes[i]).max(lower);
        out.lower.push(lower);
        out.upper.push(upper);
        out.upper_at_cap.push(first_below.is_none());
    }
    out
}

/// `f` up to the lower barrier, slope one above it.
pub fn tilde_transform(f: &ValueGrid, barriers: &BarrierProfile) -> ValueGrid {
    let values = f
        .values
        .iter()
        .zip(&barriers.lower)
        .map(|(v, &b)| tilde_values(v, f.grid.index_of(b), &f.grid))
        .collect();
    ValueGrid::from_values(f.grid.clone(), values, f.beta)
}

pub(crate) fn tilde_values(v: &[f64], k: usize, grid: &Grid) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &fi)| {
            if i <= k {
                fi
            } else {
                v[k] + grid.nodes[i] - grid.nodes[k]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = make_grid(10.0, 11).unwrap();
        assert_eq!(g.nodes, (0..=10).map(f64::from).collect::<Vec<_>>());
        let g = make_grid(2.0273 * 3.0, 256).unwrap();
        assert!((g.h - 0.023_850_6).abs() < 1e-6);
        assert_eq!(g.x_max(), 2.0273 * 3.0);
        assert!(make_grid(0.0, 10).is_err());
    }

    #[test]
    fn derivative_examples() {
        let g = make_grid(2.0, 5).unwrap();
        let lin: Vec<f64> = g.nodes.clone();
        assert!(right_derivative(&[lin], g.h, 1.5)[0]
            .iter()
            .all(|&d| (d - 1.0).abs() < 1e-12));
        let kinked: Vec<f64> = g.nodes.iter().map(|&x| (2.0 * x).min(x + 1.0)).collect();
        let d = &right_derivative(&[kinked], g.h, 2.5)[0];
        assert_eq!(d, &vec![2.0, 2.0, 1.0, 1.0, 1.0]);
        let steep: Vec<f64> = g.nodes.iter().map(|&x| 3.0 * x).collect();
        assert!(right_derivative(&[steep], g.h, 1.5)[0].iter().all(|&d| d == 1.5));
    }

    #[test]
    fn barrier_examples() {
        let g = make_grid(4.0, 5).unwrap();
        let b = extract_barriers(&[vec![0.9; 5]], &g, 1e-6);
        assert_eq!((b.lower[0], b.upper[0], b.upper_at_cap[0]), (0.0, 0.0, false));

        let b = extract_barriers(&[vec![2.0, 2.0, 1.0, 1.0, 0.5]], &g, 1e-6);
        assert_eq!((b.lower[0], b.upper[0], b.upper_at_cap[0]), (2.0, 4.0, false));
        let g6 = make_grid(5.0, 6).unwrap();
        let b = extract_barriers(&[vec![2.0, 2.0, 1.0, 1.0, 0.5, 0.5]], &g6, 1e-6);
        assert_eq!((b.lower[0], b.upper[0], b.upper_at_cap[0]), (2.0, 4.0, false));

        let b = extract_barriers(&[vec![1.2; 5]], &g, 1e-6);
        assert!(b.upper_at_cap[0]);
        assert_eq!(b.lower[0], 4.0);
    }

    #[test]
    fn tilde_examples() {
        let g = make_grid(4.0, 9).unwrap();
        let flat = ValueGrid::from_values(g.clone(), vec![g.nodes.iter().map(|x| 3.0 + 0.9 * x).collect()], 1.5);
        let b = extract_barriers(&flat.derivs, &g, 1e-9);
        let t = tilde_transform(&flat, &b);
        for (x, v) in g.nodes.iter().zip(&t.values[0]) {
            assert!((v - (3.0 + x)).abs() < 1e-12);
        }

        let steep = ValueGrid::from_values(g.clone(), vec![g.nodes.iter().map(|x| 1.2 * x).collect()], 1.5);
        let b = extract_barriers(&steep.derivs, &g, 1e-9);
        assert_eq!(tilde_transform(&steep, &b).values, steep.values);

        let kinked = ValueGrid::from_values(
            g.clone(),
            vec![g.nodes.iter().map(|&x| (2.0 * x).min(x + 1.0)).collect()],
            2.5,
        );
        let b = extract_barriers(&kinked.derivs, &g, 1e-9);
        assert_eq!(b.lower[0], 1.0);
        let t = tilde_transform(&kinked, &b);
        for (a, c) in t.values[0].iter().zip(&kinked.values[0]) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_and_interpolation() {
        let g = make_grid(2.0, 3).unwrap();
        let f = ValueGrid::from_values(g, vec![vec![1.0, 2.0, 2.5]], 1.5);
        assert!((f.eval(0, -0.5) - 0.25).abs() < 1e-12);
        assert!((f.eval(0, 0.5) - 1.5).abs() < 1e-12);
        assert!((f.eval(0, 3.0) - 3.0).abs() < 1e-12);
        assert_eq!(integrate(1.0, &f.derivs[0], 1.0), vec![1.0, 2.0, 2.5]);
    }
}
