use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checks::{
    lemma1_energy_check, lemma2_lipschitz_check, lemma3_stability_check, pinsker_suite, proposition1_suite,
};
use super::report::LemmaReport;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::oracle::{Boundary, LinearElliptic, SpatialGrid};

/// Selectable inequality checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LemmaId {
    Lemma1,
    Lemma2,
    Lemma3,
    Prop1,
    Pinsker,
}

impl LemmaId {
    pub const ALL: [LemmaId; 5] = [LemmaId::Lemma1, LemmaId::Lemma2, LemmaId::Lemma3, LemmaId::Prop1, LemmaId::Pinsker];

    pub fn as_str(&self) -> &'static str {
        match self {
            LemmaId::Lemma1 => "1",
            LemmaId::Lemma2 => "2",
            LemmaId::Lemma3 => "3",
            LemmaId::Prop1 => "prop1",
            LemmaId::Pinsker => "pinsker",
        }
    }

    /// Trial count used when none is requested.
    pub fn default_trials(&self) -> usize {
        match self {
            LemmaId::Lemma1 | LemmaId::Lemma3 => 20,
            LemmaId::Prop1 => 1000,
            LemmaId::Lemma2 | LemmaId::Pinsker => 10_000,
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown check '{s}' (expected 1, 2, 3, prop1, pinsker)")))
    }
}

/// Random linear equations on `[-6, 6]` with constant diffusion, drift
/// `−κ x e^{-x²/2}` (so `B = κ`) and Gaussian-bump sources. Every fifth case
/// has no drift.
pub fn lemma1_cases(grid: &SpatialGrid, count: usize, seed: u64) -> Vec<LinearElliptic> {
    const RHOS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|t| {
            let rho = RHOS[t % RHOS.len()];
            let kappa = if t % 5 == 0 { 0.0 } else { rng.random_range(0.0..0.9) };
            let s = rng.random_range(0.2..1.5);
            let (c, w, a) = (rng.random_range(-1.5..1.5), rng.random_range(0.2..0.8), rng.random_range(0.5..2.0));
            LinearElliptic::sample(
                grid,
                rho,
                |x, b| b[0] = -kappa * x[0] * (-0.5 * x[0] * x[0]).exp(),
                |_, sig| sig[0] = s,
                |x| a * (-(x[0] - c).powi(2) / (2.0 * w * w)).exp(),
            )
        })
        .collect()
}

/// Runs one check with the default setup. Lemma 2 yields two reports (the
/// conservative constant, then the printed one).
pub fn run_check(id: LemmaId, trials: usize, seed: u64) -> Result<Vec<LemmaReport>> {
    let desk = RunConfig::desk_1d();
    let problem = desk.build_problem()?;
    let controls = desk.control_grid(&problem)?;
    match id {
        LemmaId::Pinsker => Ok(vec![pinsker_suite(trials, seed)?]),
        LemmaId::Prop1 => Ok(vec![proposition1_suite(&problem, &controls, trials, seed)?]),
        LemmaId::Lemma1 => {
            let grid = SpatialGrid::new(1, 512, 6.0)?;
            Ok(vec![lemma1_energy_check(&grid, &lemma1_cases(&grid, trials, seed), Boundary::Degenerate)?])
        }
        LemmaId::Lemma2 => {
            let mut cfg = desk.clone();
            cfg.lambda = 1.0;
            let problem = cfg.build_problem()?;
            let x = [0.5 * problem.domain().radius];
            let r = lemma2_lipschitz_check(&problem, &controls, &x, trials, 5.0, seed)?;
            Ok(vec![r.conservative, r.printed])
        }
        LemmaId::Lemma3 => {
            let grid = SpatialGrid::new(1, 256, problem.domain().radius)?;
            Ok(vec![lemma3_stability_check(&problem, &grid, &controls, trials, seed)?])
        }
    }
}
