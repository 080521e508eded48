use nalgebra::DMatrix;
use soft_hjb::approx::ValueFunction;
use soft_hjb::config::RunConfig;
use soft_hjb::oracle::{
    exact_policy_iteration, fd_policy_evaluation_log, nodal_softmax_log_policy, riccati_reference, GridFunction,
    SpatialGrid,
};
use soft_hjb::problem::{make_lqr_problem, ControlProblem, LqrSpec, SpatialDomain};
use soft_hjb::quadrature::build_control_grid;

fn scalar(a: f64, q: f64, sigma: f64, bound: f64) -> LqrSpec {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    LqrSpec::new(m(a), m(1.0), m(q), m(1.0), sigma, bound).unwrap()
}

fn unconstrained_1d() -> ControlProblem {
    // The bound of 8 never binds where the comparison is made (|u| = |2px| ≤ 2).
    make_lqr_problem(scalar(-0.5, 1.0, 0.5, 8.0), 1.0, 1.0 / std::f64::consts::PI, SpatialDomain::cube(4.0).unwrap())
        .unwrap()
}

#[test]
fn fd_oracle_matches_riccati_when_the_bound_is_loose() {
    let problem = unconstrained_1d();
    let controls = build_control_grid(problem.control_set(), 321).unwrap();
    let grid = SpatialGrid::for_problem(&problem, 512).unwrap();
    let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], 40, 1e-9).unwrap();
    assert!(run.converged);
    let reference = riccati_reference(&problem).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.len() {
        let x = grid.node(i);
        if x[0].abs() <= 2.0 {
            let r = reference.value(&x).unwrap();
            num += (run.last().values[i] - r).powi(2);
            den += r * r;
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn converged_iterate_is_a_fixed_point() {
    let cfg = RunConfig::desk_1d();
    let problem = cfg.build_problem().unwrap();
    let controls = cfg.control_grid(&problem).unwrap();
    let grid = SpatialGrid::for_problem(&problem, 256).unwrap();
    let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], 30, 1e-11).unwrap();
    assert!(run.converged);
    let v = &run.last().values;
    let log_pi = nodal_softmax_log_policy(&problem, &grid, &controls, v).unwrap();
    let again = fd_policy_evaluation_log(&problem, &grid, &controls, &log_pi).unwrap();
    let gap = grid.l2_distance(&again.values, v) / grid.l2_norm(v);
    assert!(gap < 1e-9, "self-consistency {gap}");
}

#[test]
fn improvement_does_not_lower_the_value() {
    let cfg = RunConfig::desk_1d();
    let problem = cfg.build_problem().unwrap();
    let controls = cfg.control_grid(&problem).unwrap();
    let grid = SpatialGrid::for_problem(&problem, 256).unwrap();
    let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], 12, 1e-12).unwrap();
    // From the first evaluated policy on, every iterate dominates the previous
    // one up to the consistency error of central versus upwind gradients.
    let scale = run.last().values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for pair in run.solutions.windows(2) {
        let worst = pair[0].values.iter().zip(&pair[1].values).map(|(a, b)| a - b).fold(f64::MIN, f64::max);
        assert!(worst <= 1e-3 * scale, "value dropped by {worst}");
    }
    for w in run.increments.windows(2).skip(1) {
        assert!(w[1] <= w[0] * 1.01 + 1e-12, "increments {:?}", run.increments);
    }
}

#[test]
fn two_dimensional_oracle_is_grid_converged() {
    let cfg = RunConfig::desk_2d();
    let problem = cfg.build_problem().unwrap();
    let controls = cfg.control_grid(&problem).unwrap();
    let solve = |n: usize| {
        let grid = SpatialGrid::for_problem(&problem, n).unwrap();
        let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], 30, 1e-8).unwrap();
        (grid, run.last().interpolant().unwrap())
    };
    let change = |coarse: &(SpatialGrid, GridFunction), fine: &(SpatialGrid, GridFunction)| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..coarse.0.len() {
            let x = coarse.0.node(i);
            let f = fine.1.value(&x).unwrap();
            num += (coarse.1.value(&x).unwrap() - f).powi(2);
            den += f * f;
        }
        (num / den).sqrt()
    };
    let levels: Vec<_> = [32, 64, 128].into_iter().map(solve).collect();
    let first = change(&levels[0], &levels[1]);
    let second = change(&levels[1], &levels[2]);
    // Upwinding is first order, so each refinement should roughly halve the change.
    assert!(second < 0.7 * first, "changes {first} then {second}");
    assert!(second < 0.05, "grid refinement changes the oracle by {second}");
}
