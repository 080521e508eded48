use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::report::LemmaReport;
use crate::approx::{check_grid, MlpValueNet, PolicyDensity, ValueFunction};
use crate::error::{Error, Result};
use crate::oracle::{drift_divergence_on_grid, fd_policy_evaluation, solve_linear_elliptic, Boundary, LinearElliptic, SpatialGrid};
use crate::problem::ControlProblem;
use crate::quadrature::{sample_point, CollocationSet, ControlGrid};
use crate::spi::{hamiltonian_terms, kl_divergence, softmax_density, softmax_from_costate, value_loss};

/// Monte Carlo `‖q_n‖_{L²(X)} = √(Vol · mean R²)`.
pub fn residual_q_norm(
    problem: &ControlProblem,
    grid: &ControlGrid,
    colloc: &CollocationSet,
    vnet: &dyn ValueFunction,
    pnet: &dyn PolicyDensity,
) -> Result<f64> {
    Ok((colloc.domain_volume() * value_loss(problem, grid, colloc, vnet, pnet)?).sqrt())
}

/// Monte Carlo `L²(X)` norm of `x ↦ ‖π_ω(x,·) − π̂(x,·)‖_{L²(U)}`.
pub fn policy_gap_r(
    grid: &ControlGrid,
    colloc: &CollocationSet,
    pnet: &dyn PolicyDensity,
    targets: &[Vec<f64>],
) -> Result<f64> {
    check_grid(pnet, grid)?;
    if targets.len() != colloc.len() {
        return Err(Error::Dimension { expected: colloc.len(), got: targets.len(), context: "policy targets" });
    }
    let mut acc = 0.0;
    for (x, target) in colloc.points().zip(targets) {
        if target.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: target.len(), context: "policy target" });
        }
        let p = pnet.density(x)?;
        acc += grid.weights().iter().zip(&p).zip(target).map(|((w, a), b)| w * (a - b).powi(2)).sum::<f64>();
    }
    Ok((colloc.domain_volume() * acc / colloc.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinskerCheck {
    /// `‖p − q‖_{L¹(U)}`.
    pub lhs: f64,
    /// `√(2 KL(p‖q))`.
    pub rhs: f64,
    pub holds: bool,
}

fn check_density(grid: &ControlGrid, p: &[f64]) -> Result<()> {
    if p.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: p.len(), context: "density" });
    }
    if let Some((j, v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveDensity { node: j, value: *v });
    }
    let mass: f64 = grid.weights().iter().zip(p).map(|(w, v)| w * v).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("density integrates to {mass}, not 1")));
    }
    Ok(())
}

/// Pinsker's inequality `‖p − q‖₁ ≤ √(2 KL(p‖q))` under the quadrature rule.
pub fn pinsker_check(grid: &ControlGrid, p: &[f64], q: &[f64]) -> Result<PinskerCheck> {
    check_density(grid, p)?;
    check_density(grid, q)?;
    let lhs: f64 = grid.weights().iter().zip(p).zip(q).map(|((w, a), b)| w * (a - b).abs()).sum();
    let kl = kl_divergence(grid.weights(), p, q)?.max(0.0);
    let rhs = (2.0 * kl).sqrt();
    Ok(PinskerCheck { lhs, rhs, holds: lhs <= rhs + 1e-12 })
}

/// Pinsker over random grids and density pairs of varying closeness.
pub fn pinsker_suite(trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport::new("pinsker");
    for t in 0..trials {
        let m = rng.random_range(2..=24);
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let grid = ControlGrid::from_nodes(1, (0..m).map(|j| j as f64).collect(), weights)?;
        let spread = rng.random_range(0.01..3.0);
        let draw = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..m).map(|_| (spread * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
            let mass: f64 = grid.weights().iter().zip(&raw).map(|(w, v)| w * v).sum();
            raw.into_iter().map(|v| v / mass).collect::<Vec<f64>>()
        };
        let p = draw(&mut rng);
        let q = if t % 10 == 0 { p.clone() } else { draw(&mut rng) };
        let c = pinsker_check(&grid, &p, &q)?;
        report.record(t, c.lhs, c.rhs, 1e-12, || json!({ "weights": grid.weights(), "p": p, "q": q }));
    }
    Ok(report)
}

/// `(|ln(π̂_j |U|)|_max, osc f / λ)` at one state: the softmax target lies in
/// `[e^{-osc/λ}/|U|, e^{osc/λ}/|U|]` iff the first does not exceed the second.
fn proposition1_instance(
    problem: &ControlProblem,
    grid: &ControlGrid,
    vnet: &dyn ValueFunction,
    x: &[f64],
) -> Result<(f64, f64, f64, f64)> {
    let d = problem.state_dim();
    let g = vnet.derivatives(x, &DMatrix::zeros(d, d))?.grad_x;
    let f = hamiltonian_terms(problem, grid, x, &g)?;
    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let osc = hi - lo;
    let density = softmax_density(&f, grid.weights(), problem.lambda())?;
    let volume = grid.total_weight();
    let worst = density.iter().map(|p| (p * volume).ln().abs()).fold(0.0, f64::max);
    let (pmin, pmax) = density.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok((worst, osc / problem.lambda(), pmin, pmax))
}

fn record_proposition1(
    report: &mut LemmaReport,
    trial: usize,
    (worst, bound, pmin, pmax): (f64, f64, f64, f64),
    x: &[f64],
    bounds: &mut (f64, f64, f64, f64),
    volume: f64,
) {
    report.record(trial, worst, bound, 1e-9 * (1.0 + bound), || json!({ "x": x }));
    bounds.0 = bounds.0.min((-bound).exp() / volume);
    bounds.1 = bounds.1.max(bound.exp() / volume);
    bounds.2 = bounds.2.min(pmin);
    bounds.3 = bounds.3.max(pmax);
}

fn finish_proposition1(report: &mut LemmaReport, problem: &ControlProblem, volume: f64, b: (f64, f64, f64, f64)) {
    report.param("lambda", problem.lambda());
    report.param("control_volume", volume);
    report.param("m_lower", b.0);
    report.param("m_upper", b.1);
    report.param("min_density", b.2);
    report.param("max_density", b.3);
}

/// Upper and lower density bounds of the softmax target at every collocation point.
pub fn proposition1_check(
    problem: &ControlProblem,
    grid: &ControlGrid,
    vnet: &dyn ValueFunction,
    colloc: &CollocationSet,
) -> Result<LemmaReport> {
    let mut report = LemmaReport::new("prop1");
    let volume = grid.total_weight();
    let mut bounds = (f64::INFINITY, 0.0, f64::INFINITY, 0.0);
    for (i, x) in colloc.points().enumerate() {
        let inst = proposition1_instance(problem, grid, vnet, x)?;
        record_proposition1(&mut report, i, inst, x, &mut bounds, volume);
    }
    finish_proposition1(&mut report, problem, volume, bounds);
    Ok(report)
}

/// Proposition 1 over random value nets (random weights and output scale) and random states.
pub fn proposition1_suite(problem: &ControlProblem, grid: &ControlGrid, trials: usize, seed: u64) -> Result<LemmaReport> {
    let d = problem.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport::new("prop1");
    let volume = grid.total_weight();
    let mut bounds = (f64::INFINITY, 0.0, f64::INFINITY, 0.0);
    for t in 0..trials {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let net = MlpValueNet::init(d, &[16, 16], seed.wrapping_add(t as u64), false)?
            .with_scales(problem.domain().radius, scale)?;
        let x = sample_point(problem.domain(), d, &mut rng);
        let inst = proposition1_instance(problem, grid, &net, &x)?;
        record_proposition1(&mut report, t, inst, &x, &mut bounds, volume);
    }
    finish_proposition1(&mut report, problem, volume, bounds);
    Ok(report)
}

/// Reports for the softmax Lipschitz estimate with both constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Reports {
    /// `L' = 2 supΦ ‖b‖_∞ √d |U|^{1/2} / λ`.
    pub conservative: LemmaReport,
    /// `L = 2 supΦ √d |U|^{1/2} / λ`; informational.
    pub printed: LemmaReport,
}

const SUP_SAMPLES: usize = 10_000;

fn ball_point(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|v| v * r / norm).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Lipschitz continuity of `p ↦ Φ(p) = softmax(f(x,·,p)/λ)` in `L²(U)` on `|p| ≤ p_bound`.
pub fn lemma2_lipschitz_check(
    problem: &ControlProblem,
    grid: &ControlGrid,
    x: &[f64],
    trials: usize,
    p_bound: f64,
    seed: u64,
) -> Result<Lemma2Reports> {
    let d = problem.state_dim();
    if !(p_bound > 0.0) {
        return Err(Error::InvalidArgument(format!("p_bound must be positive, got {p_bound}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = |p: &[f64]| softmax_from_costate(problem, grid, x, p);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..trials).map(|_| (ball_point(&mut rng, d, p_bound), ball_point(&mut rng, d, p_bound))).collect();

    let mut probes: Vec<Vec<f64>> = (0..SUP_SAMPLES).map(|_| ball_point(&mut rng, d, p_bound)).collect();
    for k in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; d];
            e[k] = s * p_bound;
            probes.push(e);
        }
    }
    let mut sup_phi: f64 = 0.0;
    for p in probes.iter().chain(pairs.iter().flat_map(|(p, q)| [p, q])) {
        sup_phi = sup_phi.max(phi(p)?.into_iter().fold(0.0, f64::max));
    }
    let mut b = vec![0.0; d];
    let b_inf = grid
        .points()
        .map(|u| {
            problem.drift(x, u, &mut b);
            b.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    let volume = grid.total_weight();
    let base = 2.0 * sup_phi * (d as f64).sqrt() * volume.sqrt() / problem.lambda();
    let (l_cons, l_print) = (base * b_inf, base);

    let mut conservative = LemmaReport::new("lemma2");
    let mut printed = LemmaReport::new("lemma2_printed");
    let mut worst_ratio: f64 = 0.0;
    for (t, (p, q)) in pairs.iter().enumerate() {
        let (fp, fq) = (phi(p)?, phi(q)?);
        let dist = grid.weights().iter().zip(&fp).zip(&fq).map(|((w, a), b)| w * (a - b).powi(2)).sum::<f64>().sqrt();
        let gap = euclid(p, q);
        if gap > 0.0 {
            worst_ratio = worst_ratio.max(dist / gap);
        }
        let witness = || json!({ "x": x, "p": p, "q": q });
        conservative.record(t, dist, l_cons * gap, 1e-12, witness);
        printed.record(t, dist, l_print * gap, 1e-12, witness);
    }
    for r in [&mut conservative, &mut printed] {
        r.param("sup_phi", sup_phi);
        r.param("sup_phi_samples", probes.len() as f64);
        r.param("b_inf", b_inf);
        r.param("lipschitz_conservative", l_cons);
        r.param("lipschitz_printed", l_print);
        r.param("empirical_max_ratio", worst_ratio);
        r.param("p_bound", p_bound);
        r.param("lambda", problem.lambda());
    }
    Ok(Lemma2Reports { conservative, printed })
}

fn min_eigenvalue(s: &[f64], d: usize) -> f64 {
    match d {
        1 => s[0],
        _ => {
            let (a, b, c) = (s[0], 0.5 * (s[1] + s[2]), s[3]);
            0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt()
        }
    }
}

/// Discrete `‖∇v‖₂` from forward differences, with zero values beyond the grid.
pub fn discrete_gradient_norm(grid: &SpatialGrid, v: &[f64]) -> f64 {
    let h = grid.spacing();
    let mut acc = 0.0;
    for axis in 0..grid.dim() {
        for idx in 0..grid.len() {
            let next = grid.neighbour(idx, axis, 1).map_or(0.0, |j| v[j]);
            acc += ((next - v[idx]) / h).powi(2);
            if grid.neighbour(idx, axis, -1).is_none() {
                acc += (v[idx] / h).powi(2);
            }
        }
    }
    (acc * grid.cell_volume()).sqrt()
}

/// Energy estimate: `‖v‖ ≤ ‖r̃‖/(ρ − B/2)` and `‖∇v‖ ≤ √(C0/(ρ − B/2)) ‖r̃‖`
/// for finite-difference solutions, with 2% discretisation slack.
///
/// Each case contributes two rows under the same trial index: the value
/// bound, then the gradient bound.
pub fn lemma1_energy_check(grid: &SpatialGrid, cases: &[LinearElliptic], boundary: Boundary) -> Result<LemmaReport> {
    const SLACK: f64 = 0.02;
    let d = grid.dim();
    let mut report = LemmaReport::new("lemma1");
    let (mut worst_value, mut worst_grad): (f64, f64) = (0.0, 0.0);
    for (t, eq) in cases.iter().enumerate() {
        let b = drift_divergence_on_grid(grid, &eq.drift);
        if eq.rho <= 0.5 * b {
            return Err(Error::InvalidArgument(format!("case {t}: rho = {} does not exceed B/2 = {}", eq.rho, 0.5 * b)));
        }
        let ellipticity = eq.diffusion.chunks_exact(d * d).map(|s| min_eigenvalue(s, d)).fold(f64::INFINITY, f64::min);
        if !(ellipticity > 0.0) {
            return Err(Error::InvalidArgument(format!("case {t}: diffusion is not uniformly elliptic")));
        }
        let c0 = 1.0 / ellipticity;
        let gap = eq.rho - 0.5 * b;
        let v = solve_linear_elliptic(grid, eq, boundary)?;
        let (nv, ng, nr) = (grid.l2_norm(&v), discrete_gradient_norm(grid, &v), grid.l2_norm(&eq.source));
        let value_bound = nr / gap;
        let grad_bound = (c0 / gap).sqrt() * nr;
        let witness = || json!({ "case": t, "rho": eq.rho, "B": b, "C0": c0 });
        report.record(t, nv, value_bound, SLACK * value_bound, witness);
        report.record(t, ng, grad_bound, SLACK * grad_bound, witness);
        if nr > 0.0 {
            worst_value = worst_value.max(nv / value_bound);
            worst_grad = worst_grad.max(ng / grad_bound);
        }
    }
    report.param("cases", cases.len() as f64);
    report.param("max_value_ratio", worst_value);
    report.param("max_gradient_ratio", worst_grad);
    report.param("slack", SLACK);
    Ok(report)
}

/// Smooth random base policy and a mass-preserving perturbation direction.
struct PolicyPair {
    base: Vec<f64>,
    delta: Vec<f64>,
}

fn random_policy_pair(problem: &ControlProblem, grid: &SpatialGrid, controls: &ControlGrid, rng: &mut ChaCha8Rng) -> Result<PolicyPair> {
    const EPS: f64 = 0.05;
    let d = grid.dim();
    let radius = problem.domain().radius;
    let bounds = problem.control_set().upper().to_vec();
    let unit: Vec<f64> = controls
        .points()
        .map(|u| u.iter().zip(&bounds).map(|(v, b)| v / b).sum::<f64>() / u.len() as f64)
        .collect();
    let coeffs = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (c1, c2) = (coeffs(rng), coeffs(rng));
    let (a1, a2) = (rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0));
    let (k1, k2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let (ph1, ph2, beta) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(-0.5..0.5));
    let m = controls.len();
    let mut base = Vec::with_capacity(grid.len() * m);
    let mut delta = Vec::with_capacity(grid.len() * m);
    for idx in 0..grid.len() {
        let x = grid.node(idx);
        let s1: f64 = x.iter().zip(&c1).map(|(a, b)| a * b).sum::<f64>() / radius;
        let s2: f64 = x.iter().zip(&c2).map(|(a, b)| a * b).sum::<f64>() / radius;
        let logits: Vec<f64> = unit.iter().map(|u| a1 * (k1 * s1 + ph1).sin() * u + a2 * u * u).collect();
        let pi = softmax_density(&logits, controls.weights(), 1.0)?;
        let g: Vec<f64> = unit.iter().map(|u| (k2 * s2 + ph2).cos() * u + beta * u * u).collect();
        let gbar: f64 = controls.weights().iter().zip(&pi).zip(&g).map(|((w, p), v)| w * p * v).sum();
        delta.extend(pi.iter().zip(&g).map(|(p, v)| EPS * p * (v - gbar)));
        base.extend(pi);
    }
    Ok(PolicyPair { base, delta })
}

fn scaled_gap(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    pair: &PolicyPair,
    v: &[f64],
    s: f64,
) -> Result<f64> {
    let perturbed: Vec<f64> = pair.base.iter().zip(&pair.delta).map(|(p, d)| p + s * d).collect();
    let sol = fd_policy_evaluation(problem, grid, controls, &perturbed)?;
    Ok(grid.l2_distance(&sol.values, v))
}

fn policy_l2(grid: &SpatialGrid, controls: &ControlGrid, delta: &[f64]) -> f64 {
    let m = controls.len();
    let acc: f64 = delta
        .chunks_exact(m)
        .map(|row| row.iter().zip(controls.weights()).map(|(d, w)| w * d * d).sum::<f64>())
        .sum();
    (acc * grid.cell_volume()).sqrt()
}

/// Local stability of policy evaluation: value gaps scale linearly with the
/// policy perturbation (halving it halves the gap within 10%).
pub fn lemma3_stability_check(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    controls: &ControlGrid,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    const TOL: f64 = 0.10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LemmaReport::new("lemma3");
    let mut max_ratio: f64 = 0.0;
    for t in 0..trials {
        let pair = random_policy_pair(problem, grid, controls, &mut rng)?;
        let v = fd_policy_evaluation(problem, grid, controls, &pair.base)?.values;
        let g1 = scaled_gap(problem, grid, controls, &pair, &v, 1.0)?;
        let mut deviation: f64 = 0.0;
        for s in [0.5, 0.25] {
            let gs = scaled_gap(problem, grid, controls, &pair, &v, s)?;
            deviation = deviation.max(if g1 > 0.0 { (gs / (s * g1) - 1.0).abs() } else { gs });
        }
        let norm = policy_l2(grid, controls, &pair.delta);
        if norm > 0.0 {
            let ratio = g1 / norm;
            max_ratio = max_ratio.max(ratio);
            if t == 0 {
                let doubled = problem.with_rho(2.0 * problem.rho())?;
                let v2 = fd_policy_evaluation(&doubled, grid, controls, &pair.base)?.values;
                let ratio2 = scaled_gap(&doubled, grid, controls, &pair, &v2, 1.0)? / norm;
                report.param("gap_ratio", ratio);
                report.param("gap_ratio_double_rho", ratio2);
                report.param("rho_monotone", if ratio2 < ratio { 1.0 } else { 0.0 });
            }
        }
        report.record(t, deviation, TOL, 0.0, || json!({ "trial": t, "seed": seed }));
    }
    report.param("max_gap_ratio", max_ratio);
    report.param("rho", problem.rho());
    Ok(report)
}

/// Least-squares fit of `ln s_n = a + n ln κ`; returns `(κ, r²)`.
pub fn fit_convergence_rate(series: &[f64]) -> Result<(f64, f64)> {
    if series.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", series.len())));
    }
    if let Some(v) = series.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("series entries must be positive, found {v}")));
    }
    let n = series.len() as f64;
    let ys: Vec<f64> = series.iter().map(|v| v.ln()).collect();
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy <= 1e-300 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope.exp(), r2))
}

/// `max / min` of `series[skip..]`: stays small when errors plateau instead of accumulating.
pub fn plateau_ratio(series: &[f64], skip: usize) -> Result<f64> {
    let tail = series.get(skip..).filter(|t| !t.is_empty()).ok_or_else(|| {
        Error::InvalidArgument(format!("series of length {} has nothing after {skip} entries", series.len()))
    })?;
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(lo > 0.0) {
        return Err(Error::InvalidArgument("series must be positive".into()));
    }
    Ok(hi / lo)
}
