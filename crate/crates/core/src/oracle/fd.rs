use serde::{Deserialize, Serialize};

use super::banded::BandMatrix;
use super::grid::{GridFunction, SpatialGrid};
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::quadrature::ControlGrid;
use crate::spi::{averaged_coefficients, hamiltonian_terms, log_softmax_density};

/// How the outermost nodes are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Every node is an unknown; neighbours outside the grid are zero. Exact
    /// when the coefficients vanish on the boundary (coefficient cutoff).
    Degenerate,
    /// Homogeneous Dirichlet data on boundary nodes.
    Dirichlet,
}

/// Coefficients of `ρv − b·∇v − ½tr(ΣD²v) = g` sampled at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearElliptic {
    pub rho: f64,
    /// Row-major `len × d`.
    pub drift: Vec<f64>,
    /// Row-major `len × d × d`.
    pub diffusion: Vec<f64>,
    pub source: Vec<f64>,
}

impl LinearElliptic {
    /// Samples coefficient closures at the nodes.
    pub fn sample(
        grid: &SpatialGrid,
        rho: f64,
        drift: impl Fn(&[f64], &mut [f64]),
        diffusion: impl Fn(&[f64], &mut [f64]),
        source: impl Fn(&[f64]) -> f64,
    ) -> Self {
        let d = grid.dim();
        let n = grid.len();
        let mut b = vec![0.0; n * d];
        let mut s = vec![0.0; n * d * d];
        let mut g = vec![0.0; n];
        for idx in 0..n {
            let x = grid.node(idx);
            drift(&x, &mut b[idx * d..(idx + 1) * d]);
            diffusion(&x, &mut s[idx * d * d..(idx + 1) * d * d]);
            g[idx] = source(&x);
        }
        Self { rho, drift: b, diffusion: s, source: g }
    }
}

/// Upwind/central finite-difference solve of a linear elliptic equation.
///
/// Drift terms are upwinded and diagonal diffusion uses central second
/// differences, which yields an M-matrix for `ρ > 0`. Mixed diffusion terms
/// use the four-corner stencil.
pub fn solve_linear_elliptic(grid: &SpatialGrid, eq: &LinearElliptic, boundary: Boundary) -> Result<Vec<f64>> {
    let d = grid.dim();
    let n = grid.len();
    if eq.drift.len() != n * d || eq.diffusion.len() != n * d * d || eq.source.len() != n {
        return Err(Error::Dimension { expected: n, got: eq.source.len(), context: "elliptic coefficients" });
    }
    if !(eq.rho > 0.0) {
        return Err(Error::InvalidArgument(format!("discount must be positive, got {}", eq.rho)));
    }
    let h = grid.spacing();
    let band = if d == 1 { 1 } else { grid.nodes_per_axis() + 1 };
    let mut a = BandMatrix::zeros(n, band, band);
    let mut rhs = eq.source.clone();
    for idx in 0..n {
        if boundary == Boundary::Dirichlet && grid.is_boundary(idx) {
            a.add(idx, idx, 1.0);
            rhs[idx] = 0.0;
            continue;
        }
        let mut diag = eq.rho;
        let couple = |j: Option<usize>, v: f64, a: &mut BandMatrix| {
            if let Some(j) = j {
                if !(boundary == Boundary::Dirichlet && grid.is_boundary(j)) {
                    a.add(idx, j, v);
                }
            }
        };
        for k in 0..d {
            let b = eq.drift[idx * d + k];
            let s = eq.diffusion[idx * d * d + k * d + k];
            let (bp, bm) = (b.max(0.0), b.min(0.0));
            diag += (bp - bm) / h + s / (h * h);
            couple(grid.neighbour(idx, k, 1), -bp / h - 0.5 * s / (h * h), &mut a);
            couple(grid.neighbour(idx, k, -1), bm / h - 0.5 * s / (h * h), &mut a);
        }
        if d == 2 {
            let s01 = 0.5 * (eq.diffusion[idx * 4 + 1] + eq.diffusion[idx * 4 + 2]);
            if s01 != 0.0 {
                let c = s01 / (4.0 * h * h);
                let corner = |p: isize, q: isize| grid.neighbour(idx, 0, p).and_then(|r| grid.neighbour(r, 1, q));
                couple(corner(1, 1), -c, &mut a);
                couple(corner(-1, -1), -c, &mut a);
                couple(corner(1, -1), c, &mut a);
                couple(corner(-1, 1), c, &mut a);
            }
        }
        a.add(idx, idx, diag);
    }
    a.solve(&rhs)
}

/// Nodal value function of a fixed policy, with the densities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
    /// Row-major `len × M` densities at the control nodes.
    pub policy: Vec<f64>,
    pub boundary: Boundary,
}

impl FdSolution {
    pub fn interpolant(&self) -> Result<GridFunction> {
        GridFunction::new(self.grid, self.values.clone())
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.l2_norm(&self.values)
    }
}

/// Boundary treatment implied by the problem.
pub fn boundary_for(problem: &ControlProblem) -> Boundary {
    if problem.cutoff_enabled() {
        Boundary::Degenerate
    } else {
        Boundary::Dirichlet
    }
}

/// Policy-averaged coefficients of the evaluation equation at every node,
/// from nodal log-densities (`len × M`, row-major).
pub fn policy_coefficients(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    log_policy: &[f64],
) -> Result<LinearElliptic> {
    let d = grid.dim();
    let n = grid.len();
    let m = controls.len();
    if d != problem.state_dim() {
        return Err(Error::Dimension { expected: problem.state_dim(), got: d, context: "grid dimension" });
    }
    if log_policy.len() != n * m {
        return Err(Error::Dimension { expected: n * m, got: log_policy.len(), context: "nodal policy" });
    }
    let mut drift = vec![0.0; n * d];
    let mut diffusion = vec![0.0; n * d * d];
    let mut source = vec![0.0; n];
    for idx in 0..n {
        let x = grid.node(idx);
        let (b, g) = averaged_coefficients(problem, controls, &x, &log_policy[idx * m..(idx + 1) * m])?;
        drift[idx * d..(idx + 1) * d].copy_from_slice(&b);
        source[idx] = g;
        let s = problem.big_sigma(&x);
        for r in 0..d {
            for c in 0..d {
                diffusion[idx * d * d + r * d + c] = s[(r, c)];
            }
        }
    }
    Ok(LinearElliptic { rho: problem.rho(), drift, diffusion, source })
}

/// Largest `|∇·b̄|` over interior nodes, by central differences.
pub fn drift_divergence_on_grid(grid: &SpatialGrid, drift: &[f64]) -> f64 {
    let d = grid.dim();
    let h = grid.spacing();
    (0..grid.len())
        .map(|idx| {
            (0..d)
                .map(|k| match (grid.neighbour(idx, k, -1), grid.neighbour(idx, k, 1)) {
                    (Some(m), Some(p)) => (drift[p * d + k] - drift[m * d + k]) / (2.0 * h),
                    _ => 0.0,
                })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Finite-difference policy evaluation for nodal densities (`len × M`, row-major).
pub fn fd_policy_evaluation(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    policy: &[f64],
) -> Result<FdSolution> {
    let m = controls.len();
    let mut log_policy = Vec::with_capacity(policy.len());
    for (i, p) in policy.iter().enumerate() {
        if !(*p > 0.0) {
            return Err(Error::NonPositiveDensity { node: i % m.max(1), value: *p });
        }
        log_policy.push(p.ln());
    }
    fd_policy_evaluation_log(problem, grid, controls, &log_policy)
}

/// [`fd_policy_evaluation`] from log-densities, which stay finite where
/// densities underflow.
pub fn fd_policy_evaluation_log(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    log_policy: &[f64],
) -> Result<FdSolution> {
    let eq = policy_coefficients(problem, grid, controls, log_policy)?;
    let b = drift_divergence_on_grid(grid, &eq.drift);
    if problem.rho() <= 0.5 * b {
        log::warn!("discount {} does not exceed half the drift divergence bound {b:.3}", problem.rho());
    }
    let boundary = boundary_for(problem);
    let values = solve_linear_elliptic(grid, &eq, boundary)?;
    let policy = log_policy.iter().map(|l| l.exp()).collect();
    Ok(FdSolution { grid: *grid, values, policy, boundary })
}

/// Softmax improvement at every node from central-difference gradients of
/// `v`, as log-densities.
pub fn nodal_softmax_log_policy(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    v: &[f64],
) -> Result<Vec<f64>> {
    let d = grid.dim();
    let grad = grid.gradient(v);
    let mut out = Vec::with_capacity(grid.len() * controls.len());
    for idx in 0..grid.len() {
        let x = grid.node(idx);
        let f = hamiltonian_terms(problem, controls, &x, &grad[idx * d..(idx + 1) * d])?;
        out.extend(log_softmax_density(&f, controls.weights(), problem.lambda())?);
    }
    Ok(out)
}

/// Softmax improvement at every node as densities.
pub fn nodal_softmax_policy(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    v: &[f64],
) -> Result<Vec<f64>> {
    Ok(nodal_softmax_log_policy(problem, grid, controls, v)?.into_iter().map(f64::exp).collect())
}

/// Iterates of exact soft policy iteration.
#[derive(Debug, Clone)]
pub struct ExactPiRun {
    /// `v^1, v^2, …` with the policies that produced them.
    pub solutions: Vec<FdSolution>,
    /// `‖v^{n+1} − v^n‖₂` for consecutive iterates, starting with `‖v^1 − v^0‖₂`.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl ExactPiRun {
    pub fn last(&self) -> &FdSolution {
        self.solutions.last().expect("at least one iteration")
    }
}

/// Alternates nodal softmax improvement and finite-difference evaluation
/// until `‖v^{n+1} − v^n‖₂ < tol` or `n_max` evaluations.
pub fn exact_policy_iteration(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    v0: &[f64],
    n_max: usize,
    tol: f64,
) -> Result<ExactPiRun> {
    if v0.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: v0.len(), context: "initial nodal values" });
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let mut solutions: Vec<FdSolution> = Vec::new();
    let mut increments = Vec::new();
    let mut current = v0.to_vec();
    for n in 1..=n_max {
        let log_policy = nodal_softmax_log_policy(problem, grid, controls, &current)?;
        let sol = fd_policy_evaluation_log(problem, grid, controls, &log_policy)?;
        let inc = grid.l2_distance(&sol.values, &current);
        log::debug!("exact PI iteration {n}: increment {inc:.3e}");
        increments.push(inc);
        current = sol.values.clone();
        solutions.push(sol);
        if inc < tol {
            return Ok(ExactPiRun { solutions, increments, converged: true });
        }
    }
    Ok(ExactPiRun { solutions, increments, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn manufactured_error_1d(n: usize) -> f64 {
        let r = 1.0;
        let a = PI / (2.0 * r);
        let s = 0.8;
        let grid = SpatialGrid::new(1, n, r).unwrap();
        let eq = LinearElliptic::sample(
            &grid,
            1.0,
            |_, b| b[0] = 0.0,
            |_, sig| sig[0] = s,
            |x| (1.0 + 0.5 * s * a * a) * (a * x[0]).cos(),
        );
        let v = solve_linear_elliptic(&grid, &eq, Boundary::Dirichlet).unwrap();
        (0..grid.len()).map(|i| (v[i] - (a * grid.node(i)[0]).cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn second_order_in_one_dimension() {
        let e1 = manufactured_error_1d(65);
        let e2 = manufactured_error_1d(129);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    fn manufactured_error_2d(n: usize) -> f64 {
        let a = PI / 2.0;
        let (s00, s01, s11) = (0.6, 0.2, 0.4);
        let grid = SpatialGrid::new(2, n, 1.0).unwrap();
        let eq = LinearElliptic::sample(
            &grid,
            1.0,
            |_, b| b.fill(0.0),
            |_, sig| sig.copy_from_slice(&[s00, s01, s01, s11]),
            |x| {
                let (cx, cy) = ((a * x[0]).cos(), (a * x[1]).cos());
                let (sx, sy) = ((a * x[0]).sin(), (a * x[1]).sin());
                let tr = -a * a * (s00 + s11) * cx * cy + 2.0 * s01 * a * a * sx * sy;
                cx * cy - 0.5 * tr
            },
        );
        let v = solve_linear_elliptic(&grid, &eq, Boundary::Dirichlet).unwrap();
        (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                (v[i] - (a * x[0]).cos() * (a * x[1]).cos()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_order_in_two_dimensions() {
        let ratio = manufactured_error_2d(33) / manufactured_error_2d(65);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn homogeneous_equation_has_zero_solution() {
        let grid = SpatialGrid::new(1, 32, 2.0).unwrap();
        let eq = LinearElliptic::sample(&grid, 1.0, |x, b| b[0] = -x[0], |_, s| s[0] = 0.3, |_| 0.0);
        for bc in [Boundary::Dirichlet, Boundary::Degenerate] {
            let v = solve_linear_elliptic(&grid, &eq, bc).unwrap();
            assert!(v.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn degenerate_closure_matches_constant_source() {
        // With vanishing diffusion and inward drift, ρv = g has v = g/ρ everywhere.
        let grid = SpatialGrid::new(1, 40, 1.0).unwrap();
        let eq = LinearElliptic::sample(&grid, 2.0, |x, b| b[0] = -x[0], |_, s| s[0] = 0.0, |_| 3.0);
        let v = solve_linear_elliptic(&grid, &eq, Boundary::Degenerate).unwrap();
        assert!(v.iter().all(|x| (x - 1.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = SpatialGrid::new(1, 20, 1.0).unwrap();
        let mut eq = LinearElliptic::sample(&grid, 0.0, |_, b| b[0] = 0.0, |_, s| s[0] = 1.0, |_| 1.0);
        assert!(solve_linear_elliptic(&grid, &eq, Boundary::Dirichlet).is_err());
        eq.rho = 1.0;
        eq.source.pop();
        assert!(solve_linear_elliptic(&grid, &eq, Boundary::Dirichlet).is_err());
    }
}
