//! Euler–Maruyama simulation of the relaxed-control SDE and Monte Carlo
//! estimates of the entropy-regularized discounted reward.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{check_grid, check_state, PolicyDensity};
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::quadrature::{sample_point, ControlGrid};

pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_PATHS: usize = 256;

/// How the policy enters the drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// `b̄(x) = Σ_j w_j π_j b(x, u_j)`.
    #[default]
    Relaxed,
    /// `b(x, u)` with `u` drawn from `π(x, ·)` at every step.
    Sampled,
}

/// Distribution of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Fixed { x: Vec<f64> },
    /// Uniform over the domain shrunk by `fraction`.
    Uniform { fraction: f64 },
}

impl Default for InitialState {
    fn default() -> Self {
        Self::Uniform { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub rho: f64,
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default)]
    pub initial: InitialState,
}

impl SdeConfig {
    /// Defaults: `dt = 1e-2`, `T = 10/ρ`, 256 paths, relaxed drift, inner half-domain starts.
    pub fn for_problem(problem: &ControlProblem, seed: u64) -> Self {
        let rho = problem.rho();
        Self {
            dt: DEFAULT_DT,
            horizon: 10.0 / rho,
            paths: DEFAULT_PATHS,
            seed,
            rho,
            mode: ControlMode::Relaxed,
            initial: InitialState::default(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.rho > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need dt, horizon and rho positive, got {}, {}, {}",
                self.dt, self.horizon, self.rho
            )));
        }
        if self.dt >= 1.0 / self.rho {
            return Err(Error::InvalidArgument(format!("dt = {} must be below 1/rho", self.dt)));
        }
        let steps = self.steps();
        if steps == 0 || (steps as f64 * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidArgument(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if self.paths == 0 {
            return Err(Error::InvalidArgument("at least one path is required".into()));
        }
        if let InitialState::Uniform { fraction } = self.initial {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!("initial fraction {fraction} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One Euler–Maruyama step `x + drift·dt + σ(x)·√dt·noise`.
pub fn em_step(problem: &ControlProblem, x: &[f64], drift: &[f64], dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let d = problem.state_dim();
    check_state(x, d)?;
    if drift.len() != d || noise.len() != d {
        return Err(Error::Dimension { expected: d, got: drift.len().min(noise.len()), context: "drift/noise" });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let sigma = problem.sigma(x);
    let sq = dt.sqrt();
    Ok((0..d)
        .map(|i| {
            let diffusion: f64 = (0..d).map(|k| sigma[(i, k)] * noise[k]).sum();
            x[i] + drift[i] * dt + sq * diffusion
        })
        .collect())
}

/// Policy-averaged drift `Σ_j w_j π_j b(x, u_j)`.
pub fn relaxed_drift(problem: &ControlProblem, grid: &ControlGrid, x: &[f64], density: &[f64]) -> Vec<f64> {
    let d = problem.state_dim();
    let mut out = vec![0.0; d];
    let mut b = vec![0.0; d];
    for ((u, w), p) in grid.points().zip(grid.weights()).zip(density) {
        problem.drift(x, u, &mut b);
        out.iter_mut().zip(&b).for_each(|(o, bi)| *o += w * p * bi);
    }
    out
}

/// `Σ_j w_j π_j (r(x,u_j) − λ ln π_j)`.
pub fn entropy_reward(problem: &ControlProblem, grid: &ControlGrid, x: &[f64], log_pi: &[f64]) -> f64 {
    let lambda = problem.lambda();
    grid.points()
        .zip(grid.weights())
        .zip(log_pi)
        .map(|((u, w), lp)| w * lp.exp() * (problem.reward(x, u) - lambda * lp))
        .sum()
}

/// Result of a single simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub reward: f64,
    /// The path left the domain and was stopped.
    pub truncated: bool,
    /// Largest `|integrand|` seen along the path.
    pub max_integrand: f64,
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn simulate(
    problem: &ControlProblem,
    grid: &ControlGrid,
    policy: &dyn PolicyDensity,
    x0: &[f64],
    config: &SdeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PathOutcome> {
    let d = problem.state_dim();
    check_state(x0, d)?;
    check_grid(policy, grid)?;
    let (dt, rho) = (config.dt, config.rho);
    // Exact integral of e^{-ρt} over each step, so a piecewise-constant
    // integrand is integrated without time-discretisation bias.
    let step_weight = -(-rho * dt).exp_m1() / rho;
    let decay = (-rho * dt).exp();
    let mut discount = 1.0;
    let mut total = 0.0;
    let mut max_integrand: f64 = 0.0;
    let mut x = x0.to_vec();
    let mut noise = vec![0.0; d];
    let mut b = vec![0.0; d];
    for _ in 0..config.steps() {
        if !problem.domain().contains(&x) {
            return Ok(PathOutcome { reward: total, truncated: true, max_integrand });
        }
        let log_pi = policy.log_density(&x)?;
        let g = entropy_reward(problem, grid, &x, &log_pi);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("reward integrand at {x:?}")));
        }
        max_integrand = max_integrand.max(g.abs());
        total += discount * step_weight * g;
        discount *= decay;
        let density: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
        let drift = match config.mode {
            ControlMode::Relaxed => relaxed_drift(problem, grid, &x, &density),
            ControlMode::Sampled => {
                let probs: Vec<f64> = density.iter().zip(grid.weights()).map(|(p, w)| p * w).collect();
                let pick = WeightedIndex::new(&probs)
                    .map_err(|e| Error::InvalidArgument(format!("cannot sample the policy: {e}")))?;
                problem.drift(&x, grid.point(pick.sample(rng)), &mut b);
                b.clone()
            }
        };
        noise.iter_mut().for_each(|n| *n = StandardNormal.sample(rng));
        x = em_step(problem, &x, &drift, dt, &noise)?;
    }
    Ok(PathOutcome { reward: total, truncated: false, max_integrand })
}

/// Discounted entropy-regularized reward of one path from `x0`, using the
/// noise stream `path` of the master seed.
pub fn discounted_reward_path(
    problem: &ControlProblem,
    grid: &ControlGrid,
    policy: &dyn PolicyDensity,
    x0: &[f64],
    config: &SdeConfig,
    path: u64,
) -> Result<PathOutcome> {
    config.validate()?;
    simulate(problem, grid, policy, x0, config, &mut path_rng(config.seed, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    /// Sample standard deviation over `√paths`.
    pub stderr: f64,
    pub rewards: Vec<f64>,
    pub truncated_paths: usize,
    /// `e^{-ρT}·r_max/ρ` with `r_max` the largest integrand magnitude observed.
    pub tail_bound: f64,
}

/// Monte Carlo estimate over independent paths. Every path owns its RNG
/// stream, so the report does not depend on thread scheduling.
pub fn evaluate_policy(
    problem: &ControlProblem,
    grid: &ControlGrid,
    policy: &dyn PolicyDensity,
    config: &SdeConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if config.paths < 2 {
        return Err(Error::InvalidArgument("at least two paths are needed for a standard error".into()));
    }
    let d = problem.state_dim();
    let outcomes: Vec<Result<PathOutcome>> = (0..config.paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(config.seed, path);
            let x0 = match &config.initial {
                InitialState::Fixed { x } => x.clone(),
                InitialState::Uniform { fraction } => sample_point(&problem.domain().scaled(*fraction), d, &mut rng),
            };
            simulate(problem, grid, policy, &x0, config, &mut rng)
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    let rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
    // Shifted sums keep identical samples at exactly zero variance.
    let shift = rewards[0];
    let dev_mean = rewards.iter().map(|r| r - shift).sum::<f64>() / n;
    let mean = shift + dev_mean;
    let var = rewards.iter().map(|r| (r - shift - dev_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let truncated_paths = outcomes.iter().filter(|o| o.truncated).count();
    if truncated_paths == outcomes.len() {
        log::warn!("all {} paths left the domain before the horizon", outcomes.len());
    }
    let r_max = outcomes.iter().map(|o| o.max_integrand).fold(0.0, f64::max);
    let tail_bound = (-config.rho * config.horizon).exp() * r_max / config.rho;
    Ok(EvalReport { mean, stderr: (var / n).sqrt(), rewards, truncated_paths, tail_bound })
}
