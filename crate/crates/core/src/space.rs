//! Uniform spatial grids (1D/2D), grid-sampled fields, cubic interpolation,
//! and trapezoid quadrature.

use crate::error::{Error, Result};
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }
}

/// Uniform tensor grid of dimension 1 or 2. Linear index is row-major with
/// axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    axes: Vec<Axis>,
}

impl SpaceGrid {
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![Axis { lo, hi, n }])
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::new(vec![
            Axis { lo: lo[0], hi: hi[0], n: n[0] },
            Axis { lo: lo[1], hi: hi[1], n: n[1] },
        ])
    }

    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidInput(format!(
                "grid dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        for a in &axes {
            if !(a.lo.is_finite() && a.hi.is_finite()) || a.hi <= a.lo {
                return Err(Error::InvalidInput("axis needs finite lo < hi".into()));
            }
            if a.n < 4 {
                return Err(Error::InvalidInput(
                    "axis needs at least 4 points (cubic stencil)".into(),
                ));
            }
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of a linear index.
    pub fn point(&self, idx: usize) -> DVector<f64> {
        match self.axes.len() {
            1 => DVector::from_vec(vec![self.axes[0].coord(idx)]),
            _ => {
                let n1 = self.axes[1].n;
                DVector::from_vec(vec![
                    self.axes[0].coord(idx / n1),
                    self.axes[1].coord(idx % n1),
                ])
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(&xi, a)| xi >= a.lo && xi <= a.hi)
    }

    /// True when `x` is at least `cells` grid cells away from every boundary
    /// (full cubic stencils available).
    pub fn well_inside(&self, x: &[f64], cells: f64) -> bool {
        x.iter().zip(&self.axes).all(|(&xi, a)| {
            let pad = cells * a.dx();
            xi >= a.lo + pad && xi <= a.hi - pad
        })
    }

    /// Trapezoid quadrature of nodal values over the whole box.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let cell: f64 = self.axes.iter().map(Axis::dx).product();
        let mut acc = 0.0;
        match self.axes.len() {
            1 => {
                let n = self.axes[0].n;
                for (i, v) in values.iter().enumerate() {
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    acc += w * v;
                }
            }
            _ => {
                let (n0, n1) = (self.axes[0].n, self.axes[1].n);
                for i0 in 0..n0 {
                    let w0 = if i0 == 0 || i0 == n0 - 1 { 0.5 } else { 1.0 };
                    for i1 in 0..n1 {
                        let w1 = if i1 == 0 || i1 == n1 - 1 { 0.5 } else { 1.0 };
                        acc += w0 * w1 * values[i0 * n1 + i1];
                    }
                }
            }
        }
        acc * cell
    }

    /// Trapezoid weight (including the cell volume) of node `idx`.
    pub fn quad_weight(&self, idx: usize) -> f64 {
        let cell: f64 = self.axes.iter().map(Axis::dx).product();
        match self.axes.len() {
            1 => {
                let n = self.axes[0].n;
                cell * if idx == 0 || idx == n - 1 { 0.5 } else { 1.0 }
            }
            _ => {
                let (n0, n1) = (self.axes[0].n, self.axes[1].n);
                let (i0, i1) = (idx / n1, idx % n1);
                let w0 = if i0 == 0 || i0 == n0 - 1 { 0.5 } else { 1.0 };
                let w1 = if i1 == 0 || i1 == n1 - 1 { 0.5 } else { 1.0 };
                cell * w0 * w1
            }
        }
    }

    /// L1 distance between two nodal fields.
    pub fn l1_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        self.integrate(&diff)
    }
}

/// Behaviour of interpolation queries outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfDomain {
    /// Absorbing: out-of-box queries return 0 (kernel/forward solvers).
    Zero,
    /// Clamp to the nearest edge value (backward solver).
    Clamp,
}

// Keys cubic-convolution weights (a = -1/2, Catmull-Rom): exact at nodes,
// reproduces quadratics.
fn cubic_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        -0.5 * u3 + u2 - 0.5 * u,
        1.5 * u3 - 2.5 * u2 + 1.0,
        -1.5 * u3 + 2.0 * u2 + 0.5 * u,
        0.5 * u3 - 0.5 * u2,
    ]
}

fn stencil(axis: &Axis, x: f64) -> ([isize; 4], f64) {
    let s = (x - axis.lo) / axis.dx();
    let mut j = s.floor() as isize;
    if j < 0 {
        j = 0;
    }
    if j > axis.n as isize - 2 {
        j = axis.n as isize - 2;
    }
    let u = s - j as f64;
    ([j - 1, j, j + 1, j + 2], u)
}

// Value at a possibly-virtual index: one linearly-extrapolated ghost point
// past each end keeps the interpolant exact for linear data at the edges.
fn ghost(at: impl Fn(usize) -> f64, n: usize, i: isize) -> f64 {
    if i < 0 {
        2.0 * at(0) - at(1)
    } else if i >= n as isize {
        2.0 * at(n - 1) - at(n - 2)
    } else {
        at(i as usize)
    }
}

/// Cubic interpolation of nodal `values` at point `x` (1D or 2D).
pub fn interpolate(grid: &SpaceGrid, values: &[f64], x: &[f64], ood: OutOfDomain) -> f64 {
    debug_assert_eq!(values.len(), grid.len());
    debug_assert_eq!(x.len(), grid.dim());
    if !grid.contains(x) {
        match ood {
            OutOfDomain::Zero => return 0.0,
            OutOfDomain::Clamp => {
                let xc: Vec<f64> = x
                    .iter()
                    .zip(grid.axes())
                    .map(|(&xi, a)| xi.clamp(a.lo, a.hi))
                    .collect();
                return interpolate(grid, values, &xc, ood);
            }
        }
    }
    match grid.dim() {
        1 => {
            let n = grid.axes()[0].n;
            let (idx, u) = stencil(&grid.axes()[0], x[0]);
            let w = cubic_weights(u);
            (0..4)
                .map(|k| w[k] * ghost(|i| values[i], n, idx[k]))
                .sum()
        }
        _ => {
            let (n0, n1) = (grid.axes()[0].n, grid.axes()[1].n);
            let (i0, u0) = stencil(&grid.axes()[0], x[0]);
            let (i1, u1) = stencil(&grid.axes()[1], x[1]);
            let w0 = cubic_weights(u0);
            let w1 = cubic_weights(u1);
            let mut acc = 0.0;
            for a in 0..4 {
                let line = |row: usize| -> f64 {
                    (0..4)
                        .map(|b| w1[b] * ghost(|i| values[row * n1 + i], n1, i1[b]))
                        .sum()
                };
                acc += w0[a] * ghost(line, n0, i0[a]);
            }
            acc
        }
    }
}

/// Nodal first derivative along `axis`: central in the interior, one-sided
/// second-order at the edges.
pub fn derivative_grid(grid: &SpaceGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let a = &grid.axes()[axis];
    let dx = a.dx();
    let n = a.n;
    let stride = if grid.dim() == 1 {
        1
    } else if axis == 0 {
        grid.axes()[1].n
    } else {
        1
    };
    let lines = grid.len() / n;
    let mut out = vec![0.0; grid.len()];
    for line in 0..lines {
        // Base linear index of this 1D line.
        let base = if grid.dim() == 1 {
            0
        } else if axis == 0 {
            line
        } else {
            line * n
        };
        let at = |i: usize| values[base + i * stride];
        for i in 0..n {
            let d = if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dx)
            } else if i == n - 1 {
                (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * dx)
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * dx)
            };
            out[base + i * stride] = d;
        }
    }
    out
}

/// Nodal second derivative along one axis (3-point stencil, copied inward at
/// the edges) or mixed derivative (repeated first differences).
pub fn second_derivative_grid(
    grid: &SpaceGrid,
    values: &[f64],
    axis_a: usize,
    axis_b: usize,
) -> Vec<f64> {
    if axis_a != axis_b {
        let d = derivative_grid(grid, values, axis_a);
        return derivative_grid(grid, &d, axis_b);
    }
    let axis = axis_a;
    let a = &grid.axes()[axis];
    let dx2 = a.dx() * a.dx();
    let n = a.n;
    let stride = if grid.dim() == 1 {
        1
    } else if axis == 0 {
        grid.axes()[1].n
    } else {
        1
    };
    let lines = grid.len() / n;
    let mut out = vec![0.0; grid.len()];
    for line in 0..lines {
        let base = if grid.dim() == 1 {
            0
        } else if axis == 0 {
            line
        } else {
            line * n
        };
        let at = |i: usize| values[base + i * stride];
        for i in 0..n {
            let j = i.clamp(1, n - 2);
            out[base + i * stride] = (at(j + 1) - 2.0 * at(j) + at(j - 1)) / dx2;
        }
    }
    out
}

/// A grid-sampled field history: values `u(t_i, x_j)` over stored time nodes.
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: SpaceGrid,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
}

impl GridField {
    /// A single-slice field sampled from a closure at time `t0`.
    pub fn from_fn(grid: SpaceGrid, t0: f64, f: impl Fn(&DVector<f64>) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self {
            grid,
            times: vec![t0],
            slices: vec![values],
        }
    }

    pub fn initial(&self) -> &[f64] {
        &self.slices[0]
    }

    pub fn last(&self) -> &[f64] {
        self.slices.last().unwrap()
    }

    /// Index of the stored time closest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    pub fn sample(&self, time_index: usize, x: &[f64], ood: OutOfDomain) -> f64 {
        interpolate(&self.grid, &self.slices[time_index], x, ood)
    }
}
