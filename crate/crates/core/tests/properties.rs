use nalgebra::DMatrix;
use proptest::prelude::*;
use soft_hjb::approx::{MlpValueNet, PolicyDensity, PolicyNet, QuadraticValue, UniformPolicy, ValueFunction};
use soft_hjb::config::RunConfig;
use soft_hjb::diagnostics::pinsker_check;
use soft_hjb::optim::{train_to_budget, FnObjective, TrainBudget};
use soft_hjb::oracle::solve_riccati;
use soft_hjb::problem::{
    make_cartpole_problem, make_lqr_problem, make_pendulum_problem, spectral_abscissa, CartpoleParams, ControlProblem,
    LqrSpec, PendulumParams, SpatialDomain,
};
use soft_hjb::quadrature::{build_control_grid, quad_integrate, ControlGrid};
use soft_hjb::spi::{kl_divergence, pde_residual, softmax_density, softmax_from_costate};

fn builtin_problems() -> Vec<ControlProblem> {
    let lqr = LqrSpec::random_stable(3, 2, 1, 1.0, 0.1, 10.0).unwrap();
    let dom = || SpatialDomain::cube(3.0).unwrap().with_cutoff(0.5).unwrap();
    vec![
        make_lqr_problem(lqr, 1.0, 0.5, dom()).unwrap(),
        make_pendulum_problem(PendulumParams::default(), 1.0, 0.5, dom()).unwrap(),
        make_cartpole_problem(CartpoleParams::default(), 1.0, 0.5, dom()).unwrap(),
    ]
    .into_iter()
    .map(|p| p.apply_cutoff().unwrap())
    .collect()
}

fn density_strategy(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, m)
}

fn normalise(grid: &ControlGrid, raw: &[f64]) -> Vec<f64> {
    let z = quad_integrate(grid, raw).unwrap();
    raw.iter().map(|v| v / z).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hamiltonian_is_affine_in_the_costate(
        xs in prop::collection::vec(-2.0f64..2.0, 4),
        us in prop::collection::vec(-1.0f64..1.0, 2),
        ps in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        for problem in builtin_problems() {
            let d = problem.state_dim();
            let m = problem.control_dim();
            let (x, u, p) = (&xs[..d], &us[..m], &ps[..d]);
            let mut b = vec![0.0; d];
            problem.drift(x, u, &mut b);
            let lhs = problem.eval_f(x, u, p).unwrap() - problem.eval_f(x, u, &vec![0.0; d]).unwrap();
            let rhs: f64 = b.iter().zip(p).map(|(a, c)| a * c).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn cutoff_freezes_coefficients_outside(
        dir in prop::collection::vec(-1.0f64..1.0, 4),
        stretch in 1.0f64..3.0,
        us in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        for problem in builtin_problems() {
            let d = problem.state_dim();
            let dir = &dir[..d];
            let norm = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assume!(norm > 1e-3);
            let x: Vec<f64> = dir.iter().map(|v| v / norm * 3.0 * stretch).collect();
            let u = &us[..problem.control_dim()];
            let mut b = vec![1.0; d];
            problem.drift(&x, u, &mut b);
            prop_assert!(b.iter().all(|v| *v == 0.0));
            prop_assert!(problem.sigma(&x).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn midpoint_rule_is_exact_for_affine_integrands(
        coef in prop::collection::vec(-3.0f64..3.0, 3),
        per_dim in 2usize..9,
        bound in 0.5f64..10.0,
    ) {
        let set = soft_hjb::problem::BoxControlSet::symmetric(2, bound).unwrap();
        let grid = build_control_grid(&set, per_dim).unwrap();
        let vals: Vec<f64> = grid.points().map(|u| coef[0] + coef[1] * u[0] + coef[2] * u[1]).collect();
        let exact = coef[0] * (2.0 * bound).powi(2);
        prop_assert!((quad_integrate(&grid, &vals).unwrap() - exact).abs() <= 1e-12 * exact.abs().max(1.0) * 10.0);
    }

    #[test]
    fn softmax_is_a_density_and_shift_invariant(
        f in prop::collection::vec(-50.0f64..50.0, 9),
        shift in -1e3f64..1e3,
        lambda in 0.05f64..5.0,
    ) {
        let set = soft_hjb::problem::BoxControlSet::symmetric(1, 2.0).unwrap();
        let grid = build_control_grid(&set, 9).unwrap();
        let p = softmax_density(&f, grid.weights(), lambda).unwrap();
        prop_assert!((quad_integrate(&grid, &p).unwrap() - 1.0).abs() < 1e-10);
        let shifted: Vec<f64> = f.iter().map(|v| v + shift).collect();
        let q = softmax_density(&shifted, grid.weights(), lambda).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
        // Two-sided bounds from the oscillation of the exponent.
        let osc = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - f.iter().cloned().fold(f64::INFINITY, f64::min);
        let vol = grid.total_weight();
        for a in &p {
            prop_assert!(*a >= (-osc / lambda).exp() / vol * (1.0 - 1e-12));
            prop_assert!(*a <= (osc / lambda).exp() / vol * (1.0 + 1e-12));
        }
    }

    #[test]
    fn kl_is_nonnegative_and_pinsker_holds(raw_p in density_strategy(6), raw_q in density_strategy(6)) {
        let set = soft_hjb::problem::BoxControlSet::symmetric(1, 1.5).unwrap();
        let grid = build_control_grid(&set, 6).unwrap();
        let p = normalise(&grid, &raw_p);
        let q = normalise(&grid, &raw_q);
        let kl = kl_divergence(grid.weights(), &p, &q).unwrap();
        prop_assert!(kl >= -1e-15);
        prop_assert!(kl_divergence(grid.weights(), &p, &p).unwrap().abs() < 1e-15);
        let check = pinsker_check(&grid, &p, &q).unwrap();
        prop_assert!(check.holds, "{} > {}", check.lhs, check.rhs);
    }

    #[test]
    fn residual_is_affine_in_the_value(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, x in -1.5f64..1.5) {
        let cfg = RunConfig::desk_1d();
        let problem = cfg.build_problem().unwrap();
        let grid = cfg.control_grid(&problem).unwrap();
        let pol = UniformPolicy::new(1, &grid);
        let quad = |a: f64| QuadraticValue::new(DMatrix::from_element(1, 1, a), 0.3 * a).unwrap();
        let r = |v: &dyn ValueFunction| pde_residual(&problem, &grid, v, &pol, &[x]).unwrap();
        let lhs = r(&quad(c1 + c2)) + r(&quad(0.0));
        let rhs = r(&quad(c1)) + r(&quad(c2));
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn policy_net_densities_are_positive(seed in 0u64..500, x in prop::collection::vec(-4.0f64..4.0, 2)) {
        let set = soft_hjb::problem::BoxControlSet::symmetric(1, 3.0).unwrap();
        let grid = build_control_grid(&set, 15).unwrap();
        let net = PolicyNet::init(2, &[8, 8], &grid, seed, false).unwrap();
        let p = net.density(&x).unwrap();
        prop_assert!(p.iter().all(|v| *v > 0.0));
        prop_assert!((quad_integrate(&grid, &p).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn riccati_gains_stabilise(seed in 0u64..200, d in 1usize..5, m in 1usize..3, rho in 0.0f64..2.0) {
        let spec = LqrSpec::random_stable(d, m, seed, 1.0, 0.1, 10.0).unwrap();
        let sol = solve_riccati(&spec, rho).unwrap();
        // The discounted problem stabilises the shifted closed loop A − ρ/2 − BK.
        let closed = &spec.a - DMatrix::identity(d, d) * (0.5 * rho) - &spec.b * &sol.k;
        prop_assert!(spectral_abscissa(&closed) < 0.0);
        prop_assert!(sol.residual < 1e-10 * sol.p.norm().max(1.0));
        prop_assert!(sol.p.symmetric_eigenvalues().min() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_never_returns_a_worse_iterate(seed in 0u64..1000, lr in 1e-3f64..0.5) {
        let target: Vec<f64> = (0..5).map(|i| (seed as f64 + i as f64).sin()).collect();
        let mut obj = FnObjective::new(1, |p: &[f64], _rows: &[usize]| {
            // Non-convex enough for large steps to overshoot.
            let loss: f64 = p.iter().zip(&target).map(|(a, b)| (a - b).powi(2) + 0.3 * (5.0 * a).sin()).sum();
            let grad = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) + 1.5 * (5.0 * a).cos()).collect();
            Ok((loss, grad))
        });
        let start = vec![0.0; 5];
        let (initial, _) = soft_hjb::optim::Objective::loss_grad(&mut obj, &start, &[0]).unwrap();
        let out = train_to_budget(&mut obj, &start, &TrainBudget::new(50, lr)).unwrap();
        prop_assert!(out.best_loss <= initial);
    }

    #[test]
    fn nets_survive_a_json_roundtrip_bit_for_bit(seed in 0u64..1000, x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let v = MlpValueNet::init(2, &[6, 5], seed, false).unwrap().with_scales(2.0, 7.5).unwrap();
        let back: MlpValueNet = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        prop_assert_eq!(v.value(&x).unwrap().to_bits(), back.value(&x).unwrap().to_bits());
    }

    #[test]
    fn costate_softmax_peaks_at_the_quadratic_vertex(p in -0.8f64..0.8) {
        // b = u, r = −x² − u²: the exponent u·p − u² peaks at u = p/2.
        let spec = LqrSpec::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            0.5,
            1.0,
        ).unwrap();
        let problem = make_lqr_problem(spec, 1.0, 0.05, SpatialDomain::cube(2.0).unwrap()).unwrap();
        let grid = build_control_grid(problem.control_set(), 401).unwrap();
        let dens = softmax_from_costate(&problem, &grid, &[0.3], &[p]).unwrap();
        let (j, _) = dens.iter().enumerate().fold((0, f64::MIN), |acc, (j, v)| if *v > acc.1 { (j, *v) } else { acc });
        prop_assert!((grid.point(j)[0] - p / 2.0).abs() <= 0.5 * 2.0 / 401.0 + 1e-12);
    }
}
