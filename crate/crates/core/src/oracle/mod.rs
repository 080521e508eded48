//! Ground-truth solvers: finite differences on 1D/2D grids and the
//! discounted Riccati baseline for linear-quadratic problems.

mod banded;
mod fd;
mod grid;
mod riccati;

pub use banded::BandMatrix;
pub use fd::{
    boundary_for, drift_divergence_on_grid, exact_policy_iteration, fd_policy_evaluation, fd_policy_evaluation_log,
    nodal_softmax_log_policy, nodal_softmax_policy, policy_coefficients, solve_linear_elliptic, Boundary, ExactPiRun,
    FdSolution, LinearElliptic,
};
pub use grid::{CubicSpline1d, GridFunction, SpatialGrid, MIN_NODES_PER_AXIS};
pub use riccati::{
    entropy_offset, riccati_residual, solve_lyapunov, solve_riccati, solve_riccati_matrices, RiccatiSolution,
};

use crate::approx::{QuadraticValue, ValueFunction};
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::quadrature::{sample_collocation, CollocationSet};

/// Monte Carlo `‖v_a − v_b‖_{L²(X)}`: `√(Vol · mean (v_a − v_b)²)`.
pub fn l2_error(colloc: &CollocationSet, a: &dyn ValueFunction, b: &dyn ValueFunction) -> Result<f64> {
    let va = a.values(colloc.flat())?;
    let vb = b.values(colloc.flat())?;
    Ok(l2_from_samples(colloc.domain_volume(), &va, &vb))
}

/// `‖v − v_ref‖ / ‖v_ref‖` on a collocation set.
pub fn relative_l2_error(colloc: &CollocationSet, v: &dyn ValueFunction, reference: &dyn ValueFunction) -> Result<f64> {
    let va = v.values(colloc.flat())?;
    let vb = reference.values(colloc.flat())?;
    relative_from_samples(&va, &vb)
}

fn l2_from_samples(volume: f64, a: &[f64], b: &[f64]) -> f64 {
    let mean = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    (volume * mean).sqrt()
}

fn relative_from_samples(a: &[f64], reference: &[f64]) -> Result<f64> {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidArgument("reference function vanishes on the sample set".into()));
    }
    Ok((num / den).sqrt())
}

/// Relative discrete L² error of `v` against nodal reference values, over the
/// nodes whose sup-norm is at most `radius` (all nodes when `None`).
pub fn relative_l2_on_grid(
    grid: &SpatialGrid,
    reference: &[f64],
    v: &dyn ValueFunction,
    radius: Option<f64>,
) -> Result<f64> {
    if reference.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: reference.len(), context: "nodal reference" });
    }
    let mut xs = Vec::new();
    let mut refs = Vec::new();
    for idx in 0..grid.len() {
        let x = grid.node(idx);
        if radius.is_none_or(|r| x.iter().all(|c| c.abs() <= r + 1e-12)) {
            xs.extend_from_slice(&x);
            refs.push(reference[idx]);
        }
    }
    let vals = v.values(&xs)?;
    relative_from_samples(&vals, &refs)
}

/// Riccati value plus the entropy offset: the exact value of an LQR problem
/// whose control bound never binds.
pub fn riccati_reference(problem: &ControlProblem) -> Result<QuadraticValue> {
    let spec = problem
        .lqr_spec()
        .ok_or_else(|| Error::InvalidArgument("the Riccati reference needs an LQR problem".into()))?;
    let mut v = solve_riccati(spec, problem.rho())?.value_function();
    v.c += entropy_offset(&spec.r_cost, problem.lambda(), problem.rho());
    Ok(v)
}

/// Relative L² distance to [`riccati_reference`] over `n` uniform samples of
/// the domain shrunk by `fraction`.
pub fn riccati_band_error(problem: &ControlProblem, v: &dyn ValueFunction, fraction: f64, n: usize, seed: u64) -> Result<f64> {
    let reference = riccati_reference(problem)?;
    let inner = problem.domain().scaled(fraction);
    let colloc = sample_collocation(&inner, problem.state_dim(), n, seed)?;
    relative_l2_error(&colloc, v, &reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::QuadraticValue;
    use crate::problem::SpatialDomain;
    use crate::quadrature::sample_collocation;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn l2_error_of_constant_shift() {
        let dom = SpatialDomain::cube(1.5).unwrap();
        let colloc = sample_collocation(&dom, 2, 100, 3).unwrap();
        let p = DMatrix::identity(2, 2);
        let a = QuadraticValue::new(p.clone(), 0.0).unwrap();
        let b = QuadraticValue::new(p, 0.5).unwrap();
        assert_eq!(l2_error(&colloc, &a, &a).unwrap(), 0.0);
        assert_relative_eq!(l2_error(&colloc, &a, &b).unwrap(), 0.5 * 9f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn monte_carlo_matches_grid_quadrature() {
        let dom = SpatialDomain::cube(1.0).unwrap();
        let colloc = sample_collocation(&dom, 2, 100_000, 11).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let a = QuadraticValue::new(p, 0.2).unwrap();
        let zero = QuadraticValue::new(DMatrix::zeros(2, 2), 0.0).unwrap();
        let mc = l2_error(&colloc, &a, &zero).unwrap();
        let grid = SpatialGrid::new(2, 401, 1.0).unwrap();
        let nodal = grid.sample(&a).unwrap();
        // Trapezoid weights.
        let mut acc = 0.0;
        for idx in 0..grid.len() {
            let [i, j] = grid.multi_index(idx);
            let wi = if i == 0 || i == 400 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == 400 { 0.5 } else { 1.0 };
            acc += wi * wj * nodal[idx] * nodal[idx];
        }
        let quad = (acc * grid.cell_volume()).sqrt();
        assert_relative_eq!(mc, quad, max_relative = 0.01);
    }
}
