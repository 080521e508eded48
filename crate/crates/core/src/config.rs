//! JSON run configuration. Unknown keys are rejected everywhere.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{LrSchedule, TrainBudget};
use crate::problem::{
    make_cartpole_problem, make_lqr_problem, make_pendulum_problem, CartpoleParams, ControlProblem, DomainKind,
    LqrSpec, PendulumParams, ProblemKind, SpatialDomain,
};
use crate::quadrature::{build_control_grid_with_limit, ControlGrid, DEFAULT_MAX_CONTROL_NODES};
use crate::rollout::{ControlMode, InitialState, SdeConfig, DEFAULT_DT, DEFAULT_PATHS};
use crate::spi::{SpiConfig, ValueInit};

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    50
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_init() -> ValueInit {
    ValueInit::Zero
}
fn default_pi_iters() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-8
}
fn default_every() -> usize {
    1
}
fn default_paths() -> usize {
    DEFAULT_PATHS
}
fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Multiply drift and diffusion by the smooth domain cutoff. Off unless set.
    #[serde(default)]
    pub cutoff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLqr {
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub r_scale: f64,
}

/// LQR data as row-major nested arrays, or a seeded random stable instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSection {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    /// Noise scale: `σ = sigma·I`.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomLqr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: DomainKind,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(default)]
    pub cutoff_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    pub per_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub resample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub value_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    #[serde(default = "one")]
    pub value_output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSection {
    pub lr_value: f64,
    pub lr_policy: f64,
    pub epochs_value: usize,
    pub epochs_policy: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Epochs for fitting `v⁰` and the first policy; defaults to `epochs_policy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_init: Option<usize>,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiSection {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_init")]
    pub init: ValueInit,
}

/// Reward evaluation attached to the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    /// Evaluate every `every` iterations; 0 disables.
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to `10/ρ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default)]
    pub initial: InitialState,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub grid_n: usize,
    #[serde(default = "default_pi_iters")]
    pub pi_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<CartpoleParams>,
    pub rho: f64,
    pub lambda: f64,
    pub domain: DomainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    pub quad: QuadSection,
    pub colloc: CollocSection,
    pub net: NetSection,
    pub opt: OptSection,
    pub spi: SpiSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

fn matrix(name: &str, rows: &Option<Vec<Vec<f64>>>) -> Result<DMatrix<f64>> {
    let rows = rows.as_ref().ok_or_else(|| Error::Config(format!("lqr.{name} is required")))?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("lqr.{name} must be a non-empty rectangular array")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.build_problem()?;
        self.spi_config().validate()?;
        if let Some(o) = &self.oracle {
            if !(o.tol > 0.0) || o.pi_iters == 0 {
                return Err(Error::Config("oracle.tol must be positive and oracle.pi_iters at least 1".into()));
            }
        }
        Ok(())
    }

    fn control_bound(&self) -> Option<f64> {
        self.control.as_ref().map(|c| c.bound)
    }

    pub fn lqr_spec(&self) -> Result<LqrSpec> {
        let sec = self.lqr.as_ref().ok_or_else(|| Error::Config("problem.kind = lqr needs an lqr section".into()))?;
        let bound = self.control_bound().ok_or_else(|| Error::Config("lqr problems need control.bound".into()))?;
        let spec = match &sec.random {
            Some(r) => {
                if sec.a.is_some() || sec.b.is_some() || sec.q.is_some() || sec.r.is_some() {
                    return Err(Error::Config("lqr.random excludes explicit A/B/Q/R".into()));
                }
                LqrSpec::random_stable(r.d, r.m, r.seed, r.r_scale, sec.sigma, bound)
            }
            None => LqrSpec::new(
                matrix("A", &sec.a)?,
                matrix("B", &sec.b)?,
                matrix("Q", &sec.q)?,
                matrix("R", &sec.r)?,
                sec.sigma,
                bound,
            ),
        };
        spec.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        SpatialDomain::new(self.domain.kind, self.domain.radius, self.domain.cutoff_width)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_problem(&self) -> Result<ControlProblem> {
        let domain = self.domain()?;
        let problem = match self.problem.kind {
            ProblemKind::Lqr => make_lqr_problem(self.lqr_spec()?, self.rho, self.lambda, domain),
            ProblemKind::Pendulum => {
                let mut p = self.pendulum.clone().unwrap_or_default();
                if let Some(b) = self.control_bound() {
                    p.max_torque = b;
                }
                make_pendulum_problem(p, self.rho, self.lambda, domain)
            }
            ProblemKind::Cartpole => {
                let mut p = self.cartpole.clone().unwrap_or_default();
                if let Some(b) = self.control_bound() {
                    p.max_force = b;
                }
                make_cartpole_problem(p, self.rho, self.lambda, domain)
            }
            ProblemKind::Custom => return Err(Error::Config("custom problems cannot be built from a config".into())),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        if self.problem.cutoff {
            problem.apply_cutoff().map_err(|e| Error::Config(e.to_string()))
        } else {
            Ok(problem)
        }
    }

    pub fn control_grid(&self, problem: &ControlProblem) -> Result<ControlGrid> {
        let limit = self.quad.max_nodes.unwrap_or(DEFAULT_MAX_CONTROL_NODES);
        build_control_grid_with_limit(problem.control_set(), self.quad.per_dim, limit)
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn budget(&self, epochs: usize, lr: f64) -> TrainBudget {
        TrainBudget {
            max_epochs: epochs,
            lr,
            batch: self.opt.batch,
            target_loss: 0.0,
            schedule: self.opt.schedule,
            seed: self.seed,
        }
    }

    pub fn spi_config(&self) -> SpiConfig {
        let init_epochs = self.opt.epochs_init.unwrap_or(self.opt.epochs_policy);
        SpiConfig {
            value_hidden: self.net.value_hidden.clone(),
            policy_hidden: self.net.policy_hidden.clone(),
            value_output_scale: self.net.value_output_scale,
            n_colloc: self.colloc.n,
            colloc_seed: self.colloc.seed,
            resample: self.colloc.resample,
            value_budget: self.budget(self.opt.epochs_value, self.opt.lr_value),
            policy_budget: self.budget(self.opt.epochs_policy, self.opt.lr_policy),
            init_budget: self.budget(init_epochs, self.opt.lr_policy),
            eps: self.spi.eps,
            max_iters: self.spi.max_iters,
            init: self.spi.init.clone(),
            seed: self.seed,
        }
    }

    pub fn sde_config(&self, problem: &ControlProblem) -> Option<SdeConfig> {
        let r = self.rollout.as_ref()?;
        Some(SdeConfig {
            dt: r.dt,
            horizon: r.horizon.unwrap_or(10.0 / problem.rho()),
            paths: r.paths,
            seed: r.seed.unwrap_or(self.seed),
            rho: problem.rho(),
            mode: r.mode,
            initial: r.initial.clone(),
        })
    }

    /// Scalar constrained LQR on `[-2, 2]` with a cutoff layer; FD oracle available.
    pub fn desk_1d() -> Self {
        Self {
            problem: ProblemSection { kind: ProblemKind::Lqr, cutoff: true },
            lqr: Some(LqrSection {
                a: Some(vec![vec![-0.1]]),
                b: Some(vec![vec![1.0]]),
                q: Some(vec![vec![10.0]]),
                r: Some(vec![vec![1.0]]),
                sigma: 0.5,
                random: None,
            }),
            pendulum: None,
            cartpole: None,
            rho: 1.0,
            lambda: 0.1,
            domain: DomainSection { kind: DomainKind::Box, radius: 2.0, cutoff_width: 0.5 },
            control: Some(ControlSection { bound: 0.5 }),
            quad: QuadSection { per_dim: 41, max_nodes: None },
            colloc: CollocSection { n: 512, seed: 7, resample: true },
            net: NetSection { value_hidden: vec![32, 32], policy_hidden: vec![32, 32], value_output_scale: 10.0 },
            opt: OptSection {
                lr_value: 2e-3,
                lr_policy: 2e-3,
                epochs_value: 1000,
                epochs_policy: 300,
                batch: None,
                epochs_init: None,
                schedule: LrSchedule::Cosine { final_factor: 0.05 },
            },
            spi: SpiSection { eps: 1e-7, max_iters: 20, init: ValueInit::Zero },
            seed: 0,
            rollout: None,
            oracle: Some(OracleSection { grid_n: 512, pi_iters: 50, tol: 1e-8 }),
        }
    }

    /// Slowly rotating, weakly damped oscillator with scalar control on
    /// `[-2, 2]²`; FD oracle available.
    ///
    /// Slow drift keeps the cutoff layer mild, which a smooth network resolves.
    pub fn desk_2d() -> Self {
        let mut cfg = Self::desk_1d();
        cfg.lqr = Some(LqrSection {
            a: Some(vec![vec![-0.1, 0.2], vec![-0.2, -0.1]]),
            b: Some(vec![vec![0.0], vec![1.0]]),
            q: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            r: Some(vec![vec![1.0]]),
            sigma: 0.5,
            random: None,
        });
        cfg.control = Some(ControlSection { bound: 0.5 });
        cfg.net.value_output_scale = 1.0;
        cfg.quad.per_dim = 41;
        cfg.colloc.n = 1024;
        cfg.oracle = Some(OracleSection { grid_n: 128, pi_iters: 50, tol: 1e-8 });
        cfg
    }

    /// Random stable 5D LQR, `σ = 0.1·I`, control bound 10, on the ball of radius 2.
    ///
    /// `λ = R/π` makes the entropy offset of the unconstrained value vanish,
    /// so the Riccati value is the exact reference away from the constraint.
    pub fn desk_lqr5() -> Self {
        let mut cfg = Self::desk_1d();
        cfg.problem.cutoff = false;
        cfg.lqr = Some(LqrSection {
            a: None,
            b: None,
            q: None,
            r: None,
            sigma: 0.1,
            random: Some(RandomLqr { d: 5, m: 1, seed: 5, r_scale: 1.0 }),
        });
        cfg.lambda = 1.0 / std::f64::consts::PI;
        cfg.domain = DomainSection { kind: DomainKind::Ball, radius: 2.0, cutoff_width: 0.0 };
        cfg.control = Some(ControlSection { bound: 10.0 });
        cfg.quad.per_dim = 201;
        cfg.colloc.n = 512;
        // Values are O(1) here, and a wider net pins the origin region down
        // better: only 1/32 of the uniform samples fall in the inner half-ball.
        cfg.net.value_hidden = vec![64, 64];
        cfg.net.value_output_scale = 1.0;
        cfg.opt.epochs_value = 1500;
        cfg.spi = SpiSection { eps: 1e-7, max_iters: 10, init: ValueInit::Zero };
        cfg.rollout = Some(RolloutSection {
            every: 1,
            paths: 256,
            dt: DEFAULT_DT,
            horizon: None,
            mode: ControlMode::Relaxed,
            initial: InitialState::default(),
            seed: Some(11),
        });
        cfg.oracle = None;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for cfg in [RunConfig::desk_1d(), RunConfig::desk_2d(), RunConfig::desk_lqr5()] {
            cfg.validate().unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn shipped_config_files_match_the_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (name, cfg) in [
            ("desk_1d", RunConfig::desk_1d()),
            ("desk_2d", RunConfig::desk_2d()),
            ("desk_lqr5", RunConfig::desk_lqr5()),
        ] {
            assert_eq!(RunConfig::load(&dir.join(format!("{name}.json"))).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = RunConfig::desk_1d().to_json();
        v["opt"]["lr_vlaue"] = serde_json::json!(1e-3);
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.json"));
    }
}
