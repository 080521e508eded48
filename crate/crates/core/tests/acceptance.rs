//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p soft-hjb --test acceptance`.

use std::cell::OnceCell;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soft_hjb::approx::{MlpValueNet, PolicyNet, UniformPolicy, ValueFunction};
use soft_hjb::config::{RolloutSection, RunConfig};
use soft_hjb::diagnostics::{fit_convergence_rate, plateau_ratio, run_check, LemmaId, LemmaReport};
use soft_hjb::optim::Objective;
use soft_hjb::oracle::{exact_policy_iteration, relative_l2_on_grid, riccati_band_error, SpatialGrid};
use soft_hjb::problem::{BoxControlSet, ControlProblem, FnDynamics, SpatialDomain};
use soft_hjb::quadrature::{build_control_grid, sample_collocation};
use soft_hjb::rollout::{evaluate_policy, ControlMode, InitialState, SdeConfig};
use soft_hjb::spi::{pinn_spi_run, IterationExtras, ValueObjective};

type Outcome = Result<(bool, String), String>;

struct Suite {
    failures: usize,
    only: Option<Vec<usize>>,
}

impl Suite {
    fn check(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        if self.only.as_ref().is_some_and(|ids| !ids.contains(&id)) {
            println!("SKIP [{id:>2}] {name}");
            return;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        if let Some(limit) = limit {
            if elapsed > limit {
                pass = false;
                detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
            }
        }
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {detail} ({:.1}s)", elapsed.as_secs_f64());
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Fourth-order central first derivative of `f` at 0.
fn d1(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative of `f` at 0.
fn d2(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
}

fn random_net(rng: &mut ChaCha8Rng, d: usize) -> MlpValueNet {
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(4..=16)).collect();
    MlpValueNet::init(d, &hidden, rng.random(), false)
        .unwrap()
        .with_scales(rng.random_range(0.5..3.0), rng.random_range(0.5..4.0))
        .unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.8..0.8));
    let sigma = &s * s.transpose() + DMatrix::identity(d, d) * 0.05;
    let chol = sigma.clone().cholesky().expect("spd").l();
    (sigma, chol)
}

/// A nonlinear problem with state-dependent, non-diagonal noise.
fn gradient_problem(d: usize) -> ControlProblem {
    let dynamics = FnDynamics::new(
        d,
        1,
        move |x, u, out| {
            for i in 0..d {
                out[i] = -0.5 * x[i] + (x[(i + 1) % d]).tanh() + if i == 0 { u[0] } else { 0.1 * u[0] };
            }
        },
        |x, u| -x.iter().map(|v| v * v).sum::<f64>() - u[0] * u[0],
        move |x| DMatrix::from_fn(d, d, |i, j| if i == j { 0.5 + 0.1 * x[i].sin() } else if j < i { 0.1 } else { 0.0 }),
    );
    let set = BoxControlSet::symmetric(1, 1.0).unwrap();
    ControlProblem::new(Arc::new(dynamics), 1.0, 0.3, set, SpatialDomain::cube(1.5).unwrap()).unwrap()
}

fn autodiff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_grad, mut worst_trace, mut worst_param) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..50 {
        let d = 1 + trial % 5;
        let net = random_net(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (sigma, chol) = random_spd(&mut rng, d);
        let b = net.derivatives(&x, &sigma).map_err(err)?;
        let along = |dir: Vec<f64>| {
            let net = &net;
            let x = x.clone();
            move |t: f64| {
                let y: Vec<f64> = x.iter().zip(&dir).map(|(a, c)| a + t * c).collect();
                net.value(&y).unwrap()
            }
        };
        let mut grad_fd = vec![0.0; d];
        for (i, g) in grad_fd.iter_mut().enumerate() {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            *g = d1(&along(e), 1e-3);
        }
        let num: f64 = b.grad_x.iter().zip(&grad_fd).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let den: f64 = grad_fd.iter().map(|c| c * c).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(num / den.max(1e-8));
        // tr(ΣD²v) = Σ_k l_kᵀ D²v l_k over the Cholesky columns.
        let trace_fd: f64 = (0..d).map(|k| d2(&along(chol.column(k).iter().copied().collect()), 1e-2)).sum();
        worst_trace = worst_trace.max(rel(b.sigma_hess_trace, trace_fd, 1e-3 * sigma.norm() * b.value.abs().max(1.0)));

        // Parameter gradient of the value loss under a random frozen policy.
        let problem = gradient_problem(d);
        let controls = build_control_grid(problem.control_set(), 7).map_err(err)?;
        let colloc = sample_collocation(problem.domain(), d, 16, trial as u64).map_err(err)?;
        let policy = PolicyNet::init(d, &[6], &controls, trial as u64 + 7, false).map_err(err)?;
        let xs = Array2::from_shape_vec((colloc.len(), d), colloc.flat().to_vec()).map_err(err)?;
        let log_pi = policy.log_density_batch(xs.view());
        let mut obj = ValueObjective::new(&problem, &controls, &colloc, net.clone(), &log_pi).map_err(err)?;
        let rows: Vec<usize> = (0..colloc.len()).collect();
        let params = net.params.clone();
        let (_, grad) = obj.loss_grad(&params, &rows).map_err(err)?;
        let dir: Vec<f64> = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut loss_at = |t: f64| {
            let p: Vec<f64> = params.iter().zip(&dir).map(|(a, c)| a + t * c).collect();
            obj.loss_grad(&p, &rows).unwrap().0
        };
        let h = 1e-4;
        let fd = (-loss_at(2.0 * h) + 8.0 * loss_at(h) - 8.0 * loss_at(-h) + loss_at(-2.0 * h)) / (12.0 * h);
        let analytic: f64 = grad.iter().zip(&dir).map(|(a, c)| a * c).sum();
        worst_param = worst_param.max(rel(analytic, fd, 1e-8));
    }
    let pass = worst_grad < 1e-5 && worst_trace < 1e-5 && worst_param < 1e-4;
    Ok((
        pass,
        format!(
            "50 nets, worst relative error: input gradient {worst_grad:.1e}, Σ-trace {worst_trace:.1e}, parameter gradient {worst_param:.1e}"
        ),
    ))
}

fn asserted(reports: &[LemmaReport]) -> impl Iterator<Item = &LemmaReport> {
    reports.iter().filter(|r| !r.id.ends_with("_printed"))
}

fn lemma(id: LemmaId, trials: usize) -> Outcome {
    let reports = run_check(id, trials, 0).map_err(err)?;
    let mut parts = Vec::new();
    let mut pass = true;
    for r in &reports {
        let informational = r.id.ends_with("_printed");
        if !informational && r.violations > 0 {
            pass = false;
        }
        let note = if informational { " (informational)" } else { "" };
        parts.push(format!("{} {}/{} violations, worst slack {:.3e}{note}", r.id, r.violations, r.trials, r.worst_slack));
        if let Some(ratio) = r.params.get("max_gap_ratio") {
            parts.push(format!("largest value gap per unit policy perturbation {ratio:.3}"));
        }
    }
    if asserted(&reports).count() == 0 {
        return Err("no asserted report".into());
    }
    Ok((pass, parts.join("; ")))
}

fn exact_pi() -> Outcome {
    let cfg = RunConfig::desk_1d();
    let problem = cfg.build_problem().map_err(err)?;
    let controls = cfg.control_grid(&problem).map_err(err)?;
    let grid = SpatialGrid::for_problem(&problem, 512).map_err(err)?;
    let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], 15, 1e-12).map_err(err)?;
    let inc = &run.increments;
    if inc.len() < 8 {
        return Ok((false, format!("only {} iterations", inc.len())));
    }
    let (kappa, r2) = fit_convergence_rate(&inc[..8]).map_err(err)?;
    let consistency = inc.last().unwrap() / grid.l2_norm(&run.last().values);
    let pass = kappa < 0.9 && r2 > 0.95 && consistency < 1e-6;
    Ok((pass, format!("{} iterations, κ = {kappa:.4}, r² = {r2:.4}, final self-consistency {consistency:.1e}", inc.len())))
}

/// PINN soft policy iteration on an FD-backed preset; returns the oracle
/// error after every iteration.
fn pinn_errors(cfg: &RunConfig) -> Result<Vec<f64>, String> {
    let problem = cfg.build_problem().map_err(err)?;
    let controls = cfg.control_grid(&problem).map_err(err)?;
    let o = cfg.oracle.clone().ok_or("preset has no oracle section")?;
    let grid = SpatialGrid::for_problem(&problem, o.grid_n).map_err(err)?;
    let run = exact_policy_iteration(&problem, &grid, &controls, &vec![0.0; grid.len()], o.pi_iters, o.tol).map_err(err)?;
    let reference = run.last().values.clone();
    let mut errors = Vec::new();
    let outcome = pinn_spi_run(&problem, &controls, &cfg.spi_config(), &mut |view| {
        let e = relative_l2_on_grid(&grid, &reference, view.value, None)?;
        errors.push(e);
        Ok(IterationExtras { oracle_l2: Some(e), reward: None })
    })
    .map_err(err)?;
    if errors.is_empty() {
        return Err(format!("no iteration completed ({:?})", outcome.termination));
    }
    Ok(errors)
}

fn fmt_series(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn lqr5() -> Outcome {
    let cfg = RunConfig::desk_lqr5();
    let problem = cfg.build_problem().map_err(err)?;
    let controls = cfg.control_grid(&problem).map_err(err)?;
    let sde = cfg.sde_config(&problem).ok_or("preset has no rollout section")?;
    let mut rewards: Vec<(f64, f64)> = Vec::new();
    let outcome = pinn_spi_run(&problem, &controls, &cfg.spi_config(), &mut |view| {
        let report = evaluate_policy(&problem, &controls, view.policy, &sde)?;
        rewards.push((report.mean, report.stderr));
        Ok(IterationExtras { oracle_l2: None, reward: Some((report.mean, report.stderr)) })
    })
    .map_err(err)?;
    let mut monotone = true;
    for w in rewards.windows(2) {
        let pooled = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        if w[1].0 < w[0].0 - pooled {
            monotone = false;
        }
    }
    let band = riccati_band_error(&problem, &outcome.value, 0.5, 4096, cfg.seed).map_err(err)?;
    let means: Vec<f64> = rewards.iter().map(|r| r.0).collect();
    let se = rewards.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((
        monotone && band < 0.10,
        format!(
            "rewards [{}] (max se {se:.3}), monotone within 1 pooled se: {monotone}; Riccati band error {band:.4}",
            fmt_series(&means)
        ),
    ))
}

fn closed_form_rollout() -> Outcome {
    let dynamics = FnDynamics::new(1, 1, |_, _, o| o[0] = 0.0, |_, _| 1.0, |_| DMatrix::zeros(1, 1));
    let set = BoxControlSet::symmetric(1, 1.0).unwrap();
    let problem = ControlProblem::new(Arc::new(dynamics), 1.0, 1.0, set, SpatialDomain::cube(1.0).unwrap()).map_err(err)?;
    let controls = build_control_grid(problem.control_set(), 16).map_err(err)?;
    let mut sde = SdeConfig::for_problem(&problem, 5);
    sde.paths = 256;
    sde.horizon = 40.0;
    sde.mode = ControlMode::Sampled;
    sde.initial = InitialState::Uniform { fraction: 0.5 };
    let report = evaluate_policy(&problem, &controls, &UniformPolicy::new(1, &controls), &sde).map_err(err)?;
    let exact = 1.0 + 2f64.ln();
    let gap = (report.mean - exact).abs();
    // The integrand is constant, so the estimator is exact up to the truncated tail.
    let allowed = 3.0 * report.stderr + report.tail_bound + 1e-12;
    Ok((gap <= allowed, format!("mean {:.12} vs {exact:.12}, se {:.1e}, tail bound {:.1e}", report.mean, report.stderr, report.tail_bound)))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::desk_1d();
    cfg.spi.max_iters = 3;
    cfg.opt.epochs_value = 60;
    cfg.opt.epochs_policy = 30;
    cfg.colloc.n = 128;
    cfg.oracle = Some(soft_hjb::config::OracleSection { grid_n: 128, pi_iters: 20, tol: 1e-8 });
    cfg.rollout = Some(RolloutSection {
        every: 1,
        paths: 32,
        dt: 0.01,
        horizon: Some(2.0),
        mode: ControlMode::Sampled,
        initial: InitialState::default(),
        seed: Some(3),
    });
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).map_err(err)?).map_err(err)?;
    let bin = env!("CARGO_BIN_EXE_soft-hjb");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).env("SOFT_HJB_LOG", "warn").args(args).output().map_err(err)?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let path = |p: &std::path::Path| p.to_str().unwrap().to_string();
    run(&["solve", "--config", &path(&config), "--deterministic", "--out", &path(&first)])?;
    run(&["solve", "--manifest", &path(&first.join("manifest.json")), "--out", &path(&second)])?;
    let a = std::fs::read(first.join("ledger.csv")).map_err(err)?;
    let b = std::fs::read(second.join("ledger.csv")).map_err(err)?;
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    Ok((a == b, format!("{rows} ledger rows, {} bytes, identical: {}", a.len(), a == b)))
}

fn main() -> ExitCode {
    // ACCEPTANCE_ONLY=6,7 restricts the run to the listed criteria.
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut suite = Suite { failures: 0, only };
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));

    suite.check(1, "autodiff correctness", minutes(1), autodiff);
    suite.check(2, "energy estimate", minutes(1), || lemma(LemmaId::Lemma1, 20));
    suite.check(3, "softmax targets bounded above and below", None, || lemma(LemmaId::Prop1, 1000));
    suite.check(4, "Lipschitz estimate of the softmax map", None, || lemma(LemmaId::Lemma2, 10_000));
    suite.check(5, "local stability under perturbation halving", None, || lemma(LemmaId::Lemma3, 20));
    suite.check(6, "exponential convergence of exact PI", minutes(2), exact_pi);

    // Criteria 7 (1D) and 8 share one 20-iteration run.
    let one_d: OnceCell<(Result<Vec<f64>, String>, Duration)> = OnceCell::new();
    let shared = || {
        one_d.get_or_init(|| {
            let start = Instant::now();
            (pinn_errors(&RunConfig::desk_1d()), start.elapsed())
        })
    };
    suite.check(7, "PINN accuracy, 1D", None, || {
        let (errors, one_d_time) = shared();
        let (errors, one_d_time) = (errors.clone()?, *one_d_time);
        let last = *errors.last().unwrap();
        let fits = one_d_time <= Duration::from_secs(15 * 60);
        Ok((
            last < 0.05 && fits,
            format!("final relative L² {last:.4} after {} iterations in {:.0}s", errors.len(), one_d_time.as_secs_f64()),
        ))
    });
    suite.check(7, "PINN accuracy, 2D", minutes(15), || {
        let errors = pinn_errors(&RunConfig::desk_2d())?;
        let last = *errors.last().unwrap();
        Ok((last < 0.05, format!("final relative L² {last:.4} after {} iterations", errors.len())))
    });
    suite.check(8, "no error accumulation over 20 iterations", None, || {
        let errors = shared().0.clone()?;
        if errors.len() < 20 {
            return Ok((false, format!("only {} iterations", errors.len())));
        }
        let ratio = plateau_ratio(&errors, 5).map_err(err)?;
        Ok((ratio <= 2.0, format!("max/min after iteration 5 = {ratio:.3}; errors [{}]", fmt_series(&errors))))
    });
    suite.check(9, "5D LQR rewards and Riccati band", minutes(60), lqr5);
    suite.check(10, "rollout closed form", None, closed_form_rollout);
    suite.check(11, "Pinsker suite", None, || lemma(LemmaId::Pinsker, 10_000));
    suite.check(12, "manifest rerun reproduces the ledger", None, determinism);

    if suite.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", suite.failures);
        ExitCode::FAILURE
    }
}
