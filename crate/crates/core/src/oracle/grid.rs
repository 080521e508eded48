use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::approx::{check_state, DerivativeBundle, ValueFunction};
use crate::error::{Error, Result};
use crate::problem::ControlProblem;

/// Minimum number of nodes per axis.
pub const MIN_NODES_PER_AXIS: usize = 16;

/// Uniform tensor grid on `[-R, R]^dim` (dim 1 or 2), boundary nodes included.
///
/// Nodes are ordered with the last axis fastest: node `(i, j)` has index `i·n + j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    n: usize,
    half_width: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("finite-difference grids support 1 or 2 dimensions, got {dim}")));
        }
        if n < MIN_NODES_PER_AXIS {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {MIN_NODES_PER_AXIS} nodes per axis, got {n}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid half-width must be positive, got {half_width}")));
        }
        Ok(Self { dim, n, half_width })
    }

    /// Grid covering the bounding box of the problem's domain.
    pub fn for_problem(problem: &ControlProblem, n: usize) -> Result<Self> {
        Self::new(problem.state_dim(), n, problem.domain().radius)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Per-axis indices of node `idx`.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mi = self.multi_index(idx);
        (0..self.dim).map(|k| self.coordinate(mi[k])).collect()
    }

    /// All node coordinates, row-major `len × dim`.
    pub fn nodes_flat(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.node(i)).collect()
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim).any(|k| mi[k] == 0 || mi[k] == self.n - 1)
    }

    /// Index of the neighbour shifted by `offset` along `axis`, if inside.
    pub fn neighbour(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let mi = self.multi_index(idx);
        let moved = mi[axis] as isize + offset;
        if moved < 0 || moved >= self.n as isize {
            return None;
        }
        let stride = if self.dim == 2 && axis == 0 { self.n } else { 1 };
        Some((idx as isize + offset * stride as isize) as usize)
    }

    /// Discrete `L²` norm `√(h^d Σ v²)`.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        (self.cell_volume() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.cell_volume() * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
    }

    /// Central-difference gradient (one-sided on the boundary), row-major `len × dim`.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let h = self.spacing();
        let mut out = vec![0.0; self.len() * self.dim];
        for idx in 0..self.len() {
            for axis in 0..self.dim {
                let g = match (self.neighbour(idx, axis, -1), self.neighbour(idx, axis, 1)) {
                    (Some(m), Some(p)) => (v[p] - v[m]) / (2.0 * h),
                    (None, Some(p)) => (v[p] - v[idx]) / h,
                    (Some(m), None) => (v[idx] - v[m]) / h,
                    (None, None) => 0.0,
                };
                out[idx * self.dim + axis] = g;
            }
        }
        out
    }

    /// Samples a function at every node.
    pub fn sample(&self, f: &dyn ValueFunction) -> Result<Vec<f64>> {
        f.values(&self.nodes_flat())
    }
}

/// Natural cubic spline through equally spaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline1d {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline1d {
    pub fn new(x0: f64, h: f64, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 3 || !(h > 0.0) {
            return Err(Error::InvalidArgument("spline needs at least 3 samples and positive spacing".into()));
        }
        // Tridiagonal system for interior second derivatives, natural ends.
        let mut m = vec![0.0; n];
        let inner = n - 2;
        let mut diag = vec![4.0; inner];
        let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h)).collect();
        for i in 1..inner {
            let l = 1.0 / diag[i - 1];
            diag[i] -= l;
            rhs[i] -= l * rhs[i - 1];
        }
        for i in (0..inner).rev() {
            let upper = if i + 1 < inner { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper) / diag[i];
        }
        Ok(Self { x0, h, y, m })
    }

    /// Value and first two derivatives; constant extrapolation outside.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.y.len();
        let xn = self.x0 + (n - 1) as f64 * self.h;
        if x <= self.x0 {
            return (self.y[0], 0.0, 0.0);
        }
        if x >= xn {
            return (self.y[n - 1], 0.0, 0.0);
        }
        let i = (((x - self.x0) / self.h).floor() as usize).min(n - 2);
        let h = self.h;
        let a = (self.x0 + (i + 1) as f64 * h - x) / h;
        let b = 1.0 - a;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) * h / 6.0 * m0 + (3.0 * b * b - 1.0) * h / 6.0 * m1;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }
}

/// Continuous surrogate of nodal grid values.
///
/// In 1D this is a natural cubic spline with exact derivatives. In 2D the
/// value, the central-difference gradient and the second differences are
/// interpolated bilinearly.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: SpatialGrid,
    values: Vec<f64>,
    spline: Option<CubicSpline1d>,
    gradient: Vec<f64>,
    /// Row-major `len × 3`: `∂11, ∂12, ∂22` second differences.
    hessian: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: values.len(), context: "nodal values" });
        }
        if grid.dim() == 1 {
            let spline = CubicSpline1d::new(grid.coordinate(0), grid.spacing(), values.clone())?;
            return Ok(Self { grid, values, spline: Some(spline), gradient: Vec::new(), hessian: Vec::new() });
        }
        let gradient = grid.gradient(&values);
        let hessian = second_differences_2d(&grid, &values);
        Ok(Self { grid, values, spline: None, gradient, hessian })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn nodal(&self) -> &[f64] {
        &self.values
    }

    fn bilinear(&self, x: &[f64], field: &[f64], stride: usize, comp: usize) -> f64 {
        let n = self.grid.nodes_per_axis();
        let h = self.grid.spacing();
        let locate = |c: f64| {
            let t = ((c + self.grid.half_width()) / h).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            (i, t - i as f64)
        };
        let (i, s) = locate(x[0]);
        let (j, t) = locate(x[1]);
        let at = |a: usize, b: usize| field[(a * n + b) * stride + comp];
        (1.0 - s) * (1.0 - t) * at(i, j) + s * (1.0 - t) * at(i + 1, j) + (1.0 - s) * t * at(i, j + 1) + s * t * at(i + 1, j + 1)
    }
}

fn second_differences_2d(grid: &SpatialGrid, v: &[f64]) -> Vec<f64> {
    let h = grid.spacing();
    let mut out = vec![0.0; grid.len() * 3];
    let nb = |idx: usize, axis: usize, off: isize| grid.neighbour(idx, axis, off);
    for idx in 0..grid.len() {
        for axis in 0..2 {
            if let (Some(m), Some(p)) = (nb(idx, axis, -1), nb(idx, axis, 1)) {
                out[idx * 3 + 2 * axis] = (v[p] - 2.0 * v[idx] + v[m]) / (h * h);
            }
        }
        let corner = |a: isize, b: isize| nb(idx, 0, a).and_then(|r| nb(r, 1, b));
        if let (Some(pp), Some(pm), Some(mp), Some(mm)) = (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1)) {
            out[idx * 3 + 1] = (v[pp] - v[pm] - v[mp] + v[mm]) / (4.0 * h * h);
        }
    }
    out
}

impl ValueFunction for GridFunction {
    fn state_dim(&self) -> usize {
        self.grid.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_state(x, self.grid.dim())?;
        Ok(match &self.spline {
            Some(s) => s.eval(x[0]).0,
            None => self.bilinear(x, &self.values, 1, 0),
        })
    }

    fn derivatives(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<DerivativeBundle> {
        check_state(x, self.grid.dim())?;
        if let Some(s) = &self.spline {
            let (v, d1, d2) = s.eval(x[0]);
            return Ok(DerivativeBundle { value: v, grad_x: vec![d1], sigma_hess_trace: sigma[(0, 0)] * d2 });
        }
        let value = self.bilinear(x, &self.values, 1, 0);
        let grad_x = (0..2).map(|k| self.bilinear(x, &self.gradient, 2, k)).collect();
        let h: Vec<f64> = (0..3).map(|k| self.bilinear(x, &self.hessian, 3, k)).collect();
        let trace = sigma[(0, 0)] * h[0] + 2.0 * sigma[(0, 1)] * h[1] + sigma[(1, 1)] * h[2];
        Ok(DerivativeBundle { value, grad_x, sigma_hess_trace: trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_layout() {
        let g = SpatialGrid::new(2, 16, 1.5).unwrap();
        assert_eq!(g.len(), 256);
        assert_relative_eq!(g.spacing(), 0.2);
        assert_eq!(g.node(17), vec![-1.3, -1.3]);
        assert_eq!(g.neighbour(17, 0, 1), Some(33));
        assert_eq!(g.neighbour(17, 1, -1), Some(16));
        assert_eq!(g.neighbour(0, 0, -1), None);
        assert!(g.is_boundary(15) && !g.is_boundary(17));
        assert!(SpatialGrid::new(1, 15, 1.0).is_err());
        assert!(SpatialGrid::new(3, 16, 1.0).is_err());
    }

    #[test]
    fn spline_reproduces_smooth_function() {
        let n = 201;
        let h = 4.0 / (n - 1) as f64;
        let f = |x: f64| (1.3 * x).sin();
        let y: Vec<f64> = (0..n).map(|i| f(-2.0 + i as f64 * h)).collect();
        let s = CubicSpline1d::new(-2.0, h, y).unwrap();
        for x in [-1.234, 0.0, 0.777, 1.5] {
            let (v, d1, d2) = s.eval(x);
            assert!((v - f(x)).abs() < 1e-7);
            assert!((d1 - 1.3 * (1.3 * x).cos()).abs() < 1e-5);
            assert!((d2 + 1.69 * f(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn bilinear_is_exact_for_bilinear_functions() {
        let g = SpatialGrid::new(2, 17, 1.0).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| {
            let x = g.node(i);
            1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]
        }).collect();
        let gf = GridFunction::new(g, vals).unwrap();
        let x = [0.3141, -0.271];
        assert_relative_eq!(gf.value(&x).unwrap(), 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1], max_relative = 1e-12);
        let b = gf.derivatives(&x, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(b.grad_x[0], 2.0 + 0.5 * x[1], max_relative = 1e-10);
        assert!(b.sigma_hess_trace.abs() < 1e-9);
    }
}
