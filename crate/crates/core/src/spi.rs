//! Physics-informed soft policy iteration.
//!
//! Each iteration trains the value net on the squared residual of the linear
//! evaluation equation with the policy frozen, then refits the policy net to
//! the softmax of `f(x, u, ∇v)/λ` by minimising the average KL divergence.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::approx::mlp::gather_blocks;
use crate::approx::{
    check_grid, weighted_log_softmax, DirectionPlan, MlpValueNet, PolicyDensity, PolicyNet, QuadraticValue,
    ValueFunction,
};
use crate::diagnostics::{ErrorLedger, LedgerRow};
use crate::error::{Error, Result};
use crate::optim::{train_to_budget, Objective, TrainBudget};
use crate::oracle::solve_riccati;
use crate::problem::ControlProblem;
use crate::quadrature::{sample_collocation, CollocationSet, ControlGrid};

/// Collocation point with its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Quadrature-normalised softmax of `f_j/λ`: `π_j = e^{f_j/λ} / Σ w e^{f/λ}`.
pub fn softmax_density(f: &[f64], weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
    Ok(log_softmax_density(f, weights, lambda)?.into_iter().map(f64::exp).collect())
}

/// Logarithm of [`softmax_density`].
pub fn log_softmax_density(f: &[f64], weights: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if f.len() != weights.len() {
        return Err(Error::Dimension { expected: weights.len(), got: f.len(), context: "softmax exponents" });
    }
    if let Some(v) = f.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("exponent f = {v}")));
    }
    let scaled: Vec<f64> = f.iter().map(|v| v / lambda).collect();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut out = vec![0.0; f.len()];
    weighted_log_softmax(&scaled, &log_w, &mut out);
    Ok(out)
}

/// `f(x, u_j, p)` for every control node.
pub fn hamiltonian_terms(problem: &ControlProblem, grid: &ControlGrid, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    if grid.dim() != problem.control_dim() {
        return Err(Error::Dimension { expected: problem.control_dim(), got: grid.dim(), context: "control grid" });
    }
    grid.points().map(|u| problem.eval_f(x, u, p)).collect()
}

/// Target density `π̂(x, ·)` obtained from the costate `p = ∇v(x)`.
pub fn softmax_from_costate(problem: &ControlProblem, grid: &ControlGrid, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    softmax_density(&hamiltonian_terms(problem, grid, x, p)?, grid.weights(), problem.lambda())
}

/// Policy improvement at one state: softmax of `f(x, u, ∇v(x))/λ`.
pub fn softmax_policy_target(
    problem: &ControlProblem,
    grid: &ControlGrid,
    vnet: &dyn ValueFunction,
    x: &[f64],
) -> Result<Vec<f64>> {
    let d = problem.state_dim();
    let bundle = vnet.derivatives(x, &DMatrix::zeros(d, d))?;
    softmax_from_costate(problem, grid, x, &bundle.grad_x)
}

/// Policy-averaged drift `b̄ = Σ w π b` and source `Σ w π (r − λ ln π)` at `x`.
pub fn averaged_coefficients(
    problem: &ControlProblem,
    grid: &ControlGrid,
    x: &[f64],
    log_pi: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let d = problem.state_dim();
    let lambda = problem.lambda();
    let mut bbar = vec![0.0; d];
    let mut source = 0.0;
    let mut b = vec![0.0; d];
    for (j, u) in grid.points().enumerate() {
        let lp = log_pi[j];
        if !lp.is_finite() {
            return Err(Error::NonPositiveDensity { node: j, value: lp.exp() });
        }
        let pi = lp.exp();
        let wp = grid.weights()[j] * pi;
        problem.drift(x, u, &mut b);
        bbar.iter_mut().zip(&b).for_each(|(a, bi)| *a += wp * bi);
        source += wp * (problem.reward(x, u) - lambda * lp);
    }
    Ok((bbar, source))
}

/// `R = ρv − ½tr(ΣD²v) − Σ_j w_j [f(x,u_j,∇v) − λ ln π_j] π_j`.
pub fn pde_residual(
    problem: &ControlProblem,
    grid: &ControlGrid,
    vnet: &dyn ValueFunction,
    pnet: &dyn PolicyDensity,
    x: &[f64],
) -> Result<f64> {
    check_grid(pnet, grid)?;
    let sigma = problem.big_sigma(x);
    let bundle = vnet.derivatives(x, &sigma)?;
    let log_pi = pnet.log_density(x)?;
    let (bbar, source) = averaged_coefficients(problem, grid, x, &log_pi)?;
    let drift: f64 = bbar.iter().zip(&bundle.grad_x).map(|(a, b)| a * b).sum();
    let r = problem.rho() * bundle.value - 0.5 * bundle.sigma_hess_trace - drift - source;
    if !r.is_finite() {
        return Err(Error::NonFinite(format!("residual at {x:?}")));
    }
    Ok(r)
}

/// Residuals at every collocation point.
pub fn residual_samples(
    problem: &ControlProblem,
    grid: &ControlGrid,
    colloc: &CollocationSet,
    vnet: &dyn ValueFunction,
    pnet: &dyn PolicyDensity,
) -> Result<Vec<ResidualSample>> {
    colloc
        .points()
        .map(|x| Ok(ResidualSample { x: x.to_vec(), residual: pde_residual(problem, grid, vnet, pnet, x)? }))
        .collect()
}

/// `L_value = (1/N) Σ R(x_i)²`.
pub fn value_loss(
    problem: &ControlProblem,
    grid: &ControlGrid,
    colloc: &CollocationSet,
    vnet: &dyn ValueFunction,
    pnet: &dyn PolicyDensity,
) -> Result<f64> {
    let samples = residual_samples(problem, grid, colloc, vnet, pnet)?;
    Ok(samples.iter().map(|s| s.residual * s.residual).sum::<f64>() / samples.len() as f64)
}

/// Quadrature KL divergence `Σ_j w_j p_j ln(p_j/q_j)` between densities.
pub fn kl_divergence(weights: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (j, ((w, a), b)) in weights.iter().zip(p).zip(q).enumerate() {
        if !(*b > 0.0) {
            return Err(Error::NonPositiveDensity { node: j, value: *b });
        }
        if !(*a >= 0.0) {
            return Err(Error::NonPositiveDensity { node: j, value: *a });
        }
        if *a > 0.0 {
            acc += w * a * (a / b).ln();
        }
    }
    Ok(acc)
}

/// `(1/N) Σ_i Σ_j w_j π_ω ln(π_ω/π̂)` with `targets` the `N × M` densities `π̂`.
pub fn policy_kl_loss(
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
        acc += kl_divergence(grid.weights(), &pnet.density(x)?, target)?;
    }
    Ok(acc / colloc.len() as f64)
}

/// Step-8 metric `(1/N) Σ |v_new(x_i) − v_old(x_i)|²`.
pub fn convergence_metric(
    colloc: &CollocationSet,
    vnet_new: &dyn ValueFunction,
    vnet_old: &dyn ValueFunction,
) -> Result<f64> {
    let a = vnet_new.values(colloc.flat())?;
    let b = vnet_old.values(colloc.flat())?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Softmax policy of a value function, evaluated on demand.
pub struct SoftmaxPolicy<'a> {
    problem: &'a ControlProblem,
    grid: &'a ControlGrid,
    value: &'a dyn ValueFunction,
}

impl<'a> SoftmaxPolicy<'a> {
    pub fn new(problem: &'a ControlProblem, grid: &'a ControlGrid, value: &'a dyn ValueFunction) -> Self {
        Self { problem, grid, value }
    }
}

impl PolicyDensity for SoftmaxPolicy<'_> {
    fn state_dim(&self) -> usize {
        self.problem.state_dim()
    }
    fn num_nodes(&self) -> usize {
        self.grid.len()
    }
    fn log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.problem.state_dim();
        let g = self.value.derivatives(x, &DMatrix::zeros(d, d))?.grad_x;
        log_softmax_density(&hamiltonian_terms(self.problem, self.grid, x, &g)?, self.grid.weights(), self.problem.lambda())
    }
}

fn points_view(colloc: &CollocationSet) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((colloc.len(), colloc.dim()), colloc.flat()).expect("collocation layout")
}

fn select_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

/// Squared-residual objective with the policy frozen. With `π` fixed the
/// residual is affine in `(v, ∇v, tr ΣD²v)`:
/// `R_i = ρ v_i − ½ tr_i − b̄_i·∇v_i − c_i`.
pub struct ValueObjective<'a> {
    net: MlpValueNet,
    xs: ArrayView2<'a, f64>,
    plan: DirectionPlan,
    bbar: Array2<f64>,
    source: Vec<f64>,
    rho: f64,
}

impl<'a> ValueObjective<'a> {
    pub fn new(
        problem: &ControlProblem,
        grid: &ControlGrid,
        colloc: &'a CollocationSet,
        net: MlpValueNet,
        log_pi: &Array2<f64>,
    ) -> Result<Self> {
        let n = colloc.len();
        let d = colloc.dim();
        let sigmas: Vec<DMatrix<f64>> = colloc.points().map(|x| problem.big_sigma(x)).collect();
        let plan = DirectionPlan::new(&sigmas, d);
        let mut bbar = Array2::zeros((n, d));
        let mut source = vec![0.0; n];
        for (i, x) in colloc.points().enumerate() {
            let (b, c) = averaged_coefficients(problem, grid, x, &log_pi.row(i).to_vec())?;
            bbar.row_mut(i).iter_mut().zip(&b).for_each(|(a, v)| *a = *v);
            source[i] = c;
        }
        Ok(Self { net, xs: points_view(colloc), plan, bbar, source, rho: problem.rho() })
    }

    pub fn net(&self) -> &MlpValueNet {
        &self.net
    }

    /// Residuals of the current parameters at every collocation point.
    pub fn residuals(&mut self, params: &[f64]) -> Result<Vec<f64>> {
        self.net.params.copy_from_slice(params);
        let jets = self.net.jets(self.xs, &self.plan)?;
        Ok(self.assemble(&jets.values, &jets.grads, &jets.traces, &self.bbar, &self.source))
    }

    fn assemble(&self, v: &[f64], g: &Array2<f64>, tr: &[f64], bbar: &Array2<f64>, c: &[f64]) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let drift: f64 = g.row(i).iter().zip(bbar.row(i)).map(|(a, b)| a * b).sum();
                self.rho * v[i] - 0.5 * tr[i] - drift - c[i]
            })
            .collect()
    }
}

impl Objective for ValueObjective<'_> {
    fn num_samples(&self) -> usize {
        self.xs.nrows()
    }

    fn loss_grad(&mut self, params: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.net.params.copy_from_slice(params);
        let full = rows.len() == self.xs.nrows();
        let (xs, plan, bbar, source);
        let (xs_ref, plan_ref, bbar_ref, source_ref) = if full {
            (self.xs.to_owned(), &self.plan, &self.bbar, &self.source[..])
        } else {
            xs = self.xs.select(Axis(0), rows);
            plan = DirectionPlan {
                d: self.plan.d,
                k: self.plan.k,
                dirs: gather_blocks(&self.plan.dirs, rows, self.plan.k),
                trace_weights: select_rows(&self.plan.trace_weights, rows),
            };
            bbar = select_rows(&self.bbar, rows);
            source = rows.iter().map(|&i| self.source[i]).collect::<Vec<f64>>();
            (xs, &plan, &bbar, &source[..])
        };
        let jets = self.net.jets(xs_ref.view(), plan_ref)?;
        let r = self.assemble(&jets.values, &jets.grads, &jets.traces, bbar_ref, source_ref);
        let n = r.len() as f64;
        let loss = r.iter().map(|v| v * v).sum::<f64>() / n;
        if !loss.is_finite() {
            return Ok((loss, vec![0.0; params.len()]));
        }
        let alpha: Vec<f64> = r.iter().map(|ri| 2.0 * ri * self.rho / n).collect();
        let mut beta = bbar_ref.clone();
        for (i, mut row) in beta.rows_mut().into_iter().enumerate() {
            let s = -2.0 * r[i] / n;
            row.iter_mut().for_each(|b| *b *= s);
        }
        let gamma: Vec<f64> = r.iter().map(|ri| -ri / n).collect();
        let grad = self.net.jets_backward(&jets, plan_ref, &alpha, beta.view(), &gamma)?;
        Ok((loss, grad))
    }
}

/// Average KL divergence of the policy net from fixed target log-densities.
pub struct PolicyObjective<'a> {
    net: PolicyNet,
    xs: ArrayView2<'a, f64>,
    log_targets: Array2<f64>,
}

impl<'a> PolicyObjective<'a> {
    pub fn new(colloc: &'a CollocationSet, net: PolicyNet, log_targets: Array2<f64>) -> Result<Self> {
        if log_targets.nrows() != colloc.len() || log_targets.ncols() != net.num_nodes() {
            return Err(Error::Dimension { expected: colloc.len(), got: log_targets.nrows(), context: "policy targets" });
        }
        Ok(Self { net, xs: points_view(colloc), log_targets })
    }
}

impl Objective for PolicyObjective<'_> {
    fn num_samples(&self) -> usize {
        self.xs.nrows()
    }

    fn loss_grad(&mut self, params: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.net.params.copy_from_slice(params);
        let xs = self.xs.select(Axis(0), rows);
        let log_pi = self.net.log_density_batch(xs.view());
        let log_w = self.net.log_weights().to_vec();
        let n = rows.len() as f64;
        let mut adj = Array2::zeros(log_pi.raw_dim());
        let mut loss = 0.0;
        for (r, &i) in rows.iter().enumerate() {
            let lp = log_pi.row(r);
            let lt = self.log_targets.row(i);
            let p: Vec<f64> = lp.iter().zip(&log_w).map(|(a, w)| (a + w).exp()).collect();
            let kl: f64 = p.iter().zip(lp.iter().zip(lt.iter())).map(|(pj, (a, b))| pj * (a - b)).sum();
            loss += kl;
            for j in 0..p.len() {
                adj[(r, j)] = p[j] * (lp[j] - lt[j] - kl) / n;
            }
        }
        let grad = self.net.logits_backward(xs.view(), &adj)?;
        Ok((loss / n, grad))
    }
}

/// Log target densities `ln π̂(x_i, u_j)` from the value net's gradients.
pub fn log_targets_batch(
    problem: &ControlProblem,
    grid: &ControlGrid,
    colloc: &CollocationSet,
    vnet: &MlpValueNet,
) -> Result<Array2<f64>> {
    let d = colloc.dim();
    let plan = DirectionPlan::new(&vec![DMatrix::zeros(d, d); colloc.len()], d);
    let jets = vnet.jets(points_view(colloc), &plan)?;
    let mut out = Array2::zeros((colloc.len(), grid.len()));
    for (i, x) in colloc.points().enumerate() {
        let g = jets.grads.row(i).to_vec();
        let f = hamiltonian_terms(problem, grid, x, &g)?;
        let lp = log_softmax_density(&f, grid.weights(), problem.lambda())?;
        out.row_mut(i).iter_mut().zip(&lp).for_each(|(o, v)| *o = *v);
    }
    Ok(out)
}

/// Initial value function `v⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ValueInit {
    /// The zero function (zero output layer).
    Zero,
    /// `xᵀPx + c` fitted by regression; `p` row-major `d × d`.
    Quadratic { p: Vec<Vec<f64>>, c: f64 },
    /// Unconstrained Riccati value of the problem's LQR data, fitted by regression.
    Riccati,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiConfig {
    pub value_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    /// Fixed output scale of the value net.
    #[serde(default = "one")]
    pub value_output_scale: f64,
    pub n_colloc: usize,
    pub colloc_seed: u64,
    /// Draw a fresh collocation set every iteration (seed `colloc_seed + n`).
    #[serde(default = "yes")]
    pub resample: bool,
    pub value_budget: TrainBudget,
    pub policy_budget: TrainBudget,
    /// Budget for fitting `v⁰` and the first policy.
    pub init_budget: TrainBudget,
    pub eps: f64,
    pub max_iters: usize,
    pub init: ValueInit,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl SpiConfig {
    /// Desk-scale defaults for a problem of state dimension `d`.
    pub fn desk(d: usize) -> Self {
        let width = if d <= 5 { 64 } else { 128 };
        Self {
            value_hidden: vec![width; 3],
            policy_hidden: vec![width; 2],
            value_output_scale: 1.0,
            n_colloc: 512,
            colloc_seed: 0,
            resample: true,
            value_budget: TrainBudget::new(1000, 1e-3),
            policy_budget: TrainBudget::new(500, 1e-3),
            init_budget: TrainBudget::new(500, 1e-3),
            eps: 1e-6,
            max_iters: 50,
            init: ValueInit::Zero,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_colloc == 0 {
            return Err(Error::Config("colloc.N must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be non-negative, got {}", self.eps)));
        }
        if !(self.value_output_scale > 0.0) {
            return Err(Error::Config("value output scale must be positive".into()));
        }
        for b in [&self.value_budget, &self.policy_budget, &self.init_budget] {
            b.validate(self.n_colloc).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// What the caller may add to a ledger row after each iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IterationExtras {
    pub oracle_l2: Option<f64>,
    pub reward: Option<(f64, f64)>,
}

/// Snapshot passed to the per-iteration observer.
pub struct IterationView<'a> {
    pub n: usize,
    pub value: &'a MlpValueNet,
    pub policy: &'a PolicyNet,
    pub colloc: &'a CollocationSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Training produced a non-finite loss; the ledger holds the completed iterations.
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct SpiOutcome {
    pub value: MlpValueNet,
    pub policy: PolicyNet,
    pub ledger: ErrorLedger,
    pub termination: Termination,
    /// Value-training loss history of every iteration.
    pub value_histories: Vec<Vec<(usize, f64)>>,
    pub policy_histories: Vec<Vec<(usize, f64)>>,
}

fn derived_budget(b: &TrainBudget, seed: u64) -> TrainBudget {
    let mut out = b.clone();
    out.seed = out.seed.wrapping_add(seed);
    out
}

/// Fits the value net to `target` by least squares on the collocation set.
fn fit_value(net: &mut MlpValueNet, colloc: &CollocationSet, target: &dyn ValueFunction, budget: &TrainBudget) -> Result<()> {
    let y = target.values(colloc.flat())?;
    let xs = points_view(colloc);
    let mut work = net.clone();
    let mut objective = crate::optim::FnObjective::new(colloc.len(), |params: &[f64], rows: &[usize]| {
        work.params.copy_from_slice(params);
        let sub = xs.select(Axis(0), rows);
        let n = rows.len() as f64;
        let v = work.values_batch(sub.view());
        let resid: Vec<f64> = v.iter().zip(rows).map(|(a, &i)| a - y[i]).collect();
        let alpha: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
        let (_, g) = work.values_backward(sub.view(), &alpha)?;
        Ok((resid.iter().map(|r| r * r).sum::<f64>() / n, g))
    });
    let out = train_to_budget(&mut objective, &net.params, budget)?;
    net.params = out.params;
    Ok(())
}

fn initial_target(problem: &ControlProblem, init: &ValueInit) -> Result<Option<QuadraticValue>> {
    let d = problem.state_dim();
    match init {
        ValueInit::Zero => Ok(None),
        ValueInit::Quadratic { p, c } => {
            if p.len() != d || p.iter().any(|r| r.len() != d) {
                return Err(Error::Config(format!("initial quadratic must be {d}x{d}")));
            }
            let flat: Vec<f64> = p.iter().flatten().copied().collect();
            Ok(Some(QuadraticValue::new(DMatrix::from_row_slice(d, d, &flat), *c)?))
        }
        ValueInit::Riccati => {
            let spec = problem
                .lqr_spec()
                .ok_or_else(|| Error::Config("riccati initialisation needs an LQR problem".into()))?;
            let sol = solve_riccati(spec, problem.rho())?;
            Ok(Some(sol.value_function()))
        }
    }
}

/// Runs PINN soft policy iteration.
///
/// `observer` is called after every iteration and may attach an oracle
/// error and a reward estimate to the ledger row.
pub fn pinn_spi_run(
    problem: &ControlProblem,
    grid: &ControlGrid,
    config: &SpiConfig,
    observer: &mut dyn FnMut(&IterationView<'_>) -> Result<IterationExtras>,
) -> Result<SpiOutcome> {
    config.validate()?;
    let d = problem.state_dim();
    let scale = problem.domain().radius;
    let colloc_at = |n: usize| {
        let seed = if config.resample { config.colloc_seed.wrapping_add(n as u64) } else { config.colloc_seed };
        sample_collocation(problem.domain(), d, config.n_colloc, seed)
    };

    let init_target = initial_target(problem, &config.init)?;
    let mut value = MlpValueNet::init(d, &config.value_hidden, config.seed, init_target.is_none())?
        .with_scales(scale, config.value_output_scale)?;
    let mut policy = PolicyNet::init(d, &config.policy_hidden, grid, config.seed.wrapping_add(1), true)?
        .with_input_scale(scale)?;
    let colloc0 = colloc_at(0)?;
    if let Some(target) = &init_target {
        fit_value(&mut value, &colloc0, target, &derived_budget(&config.init_budget, config.seed))?;
    }
    // ω_0 fits the softmax policy of v⁰.
    let targets = log_targets_batch(problem, grid, &colloc0, &value)?;
    let mut objective = PolicyObjective::new(&colloc0, policy.clone(), targets)?;
    policy.params = train_to_budget(&mut objective, &policy.params, &derived_budget(&config.init_budget, config.seed))?.params;

    let mut ledger = ErrorLedger::default();
    let mut value_histories = Vec::new();
    let mut policy_histories = Vec::new();
    let vol = problem.domain().volume(d);
    for n in 1..=config.max_iters {
        let colloc = colloc_at(n)?;
        // Policy evaluation with ω frozen.
        let log_pi = policy.log_density_batch(points_view(&colloc));
        let mut vobj = ValueObjective::new(problem, grid, &colloc, value.clone(), &log_pi)?;
        let budget = derived_budget(&config.value_budget, config.seed.wrapping_add(n as u64));
        let trained = match train_to_budget(&mut vobj, &value.params, &budget) {
            Ok(t) => t,
            Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => {
                return Ok(diverged(value, policy, ledger, value_histories, policy_histories, e));
            }
            Err(e) => return Err(e),
        };
        let l_value = trained.best_loss;
        value_histories.push(trained.history);
        let old_value = std::mem::replace(&mut value, vobj.net().clone());
        value.params = trained.params;

        // Policy improvement.
        let targets = log_targets_batch(problem, grid, &colloc, &value)?;
        let mut pobj = PolicyObjective::new(&colloc, policy.clone(), targets.clone())?;
        let budget = derived_budget(&config.policy_budget, config.seed.wrapping_add(1000 + n as u64));
        let trained = match train_to_budget(&mut pobj, &policy.params, &budget) {
            Ok(t) => t,
            Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => {
                return Ok(diverged(value, policy, ledger, value_histories, policy_histories, e));
            }
            Err(e) => return Err(e),
        };
        let l_policy = trained.best_loss;
        policy_histories.push(trained.history);
        policy.params = trained.params;

        let step8 = convergence_metric(&colloc, &value, &old_value)?;
        let r_norm = policy_gap_from_logs(grid, &policy, &colloc, &targets, vol);
        let extras = observer(&IterationView { n, value: &value, policy: &policy, colloc: &colloc })?;
        ledger.push(LedgerRow {
            n,
            l_value,
            l_policy,
            q_norm: (vol * l_value).sqrt(),
            r_norm,
            step8_metric: step8,
            oracle_l2: extras.oracle_l2,
            reward_estimate: extras.reward.map(|r| r.0),
            reward_stderr: extras.reward.map(|r| r.1),
        })?;
        log::info!("iteration {n}: L_value {l_value:.3e}, L_policy {l_policy:.3e}, step8 {step8:.3e}");
        if step8 < config.eps {
            return Ok(SpiOutcome { value, policy, ledger, termination: Termination::Converged, value_histories, policy_histories });
        }
    }
    Ok(SpiOutcome { value, policy, ledger, termination: Termination::MaxIterations, value_histories, policy_histories })
}

fn diverged(
    value: MlpValueNet,
    policy: PolicyNet,
    ledger: ErrorLedger,
    value_histories: Vec<Vec<(usize, f64)>>,
    policy_histories: Vec<Vec<(usize, f64)>>,
    err: Error,
) -> SpiOutcome {
    log::error!("training diverged: {err}");
    SpiOutcome { value, policy, ledger, termination: Termination::Diverged(err.to_string()), value_histories, policy_histories }
}

fn policy_gap_from_logs(grid: &ControlGrid, policy: &PolicyNet, colloc: &CollocationSet, log_targets: &Array2<f64>, vol: f64) -> f64 {
    let log_pi = policy.log_density_batch(points_view(colloc));
    let mean_sq: f64 = (0..colloc.len())
        .map(|i| {
            grid.weights()
                .iter()
                .enumerate()
                .map(|(j, w)| w * (log_pi[(i, j)].exp() - log_targets[(i, j)].exp()).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / colloc.len() as f64;
    (vol * mean_sq).sqrt()
}
