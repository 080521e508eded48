//! Adam and a budgeted best-iterate training loop.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place with learning rate `self.lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        self.step_with_lr(params, grad, self.lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grad.len() },
                context: "optimizer state",
            });
        }
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {g}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of a single Adam step, returning new parameters.
pub fn adam_step(state: &mut AdamState, params: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step(&mut out, grad)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to `lr·final_factor` over the epoch budget.
    Cosine { final_factor: f64 },
}

impl LrSchedule {
    fn factor(&self, epoch: usize, max_epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { final_factor } => {
                let t = epoch as f64 / max_epochs.max(1) as f64;
                final_factor + (1.0 - final_factor) * 0.5 * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub lr: f64,
    /// Mini-batch size over samples; `None` means full batch.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Training stops once the full loss drops below this value.
    #[serde(default)]
    pub target_loss: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
    /// Seed for mini-batch shuffling.
    #[serde(default)]
    pub seed: u64,
}

fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}

impl TrainBudget {
    pub fn new(max_epochs: usize, lr: f64) -> Self {
        Self { max_epochs, lr, batch: None, target_loss: 0.0, schedule: LrSchedule::Constant, seed: 0 }
    }

    pub fn validate(&self, num_samples: usize) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("training budget needs max_epochs >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(b) = self.batch {
            if b == 0 || b > num_samples {
                return Err(Error::InvalidArgument(format!("batch size {b} must lie in 1..={num_samples}")));
            }
        }
        if let LrSchedule::Cosine { final_factor } = self.schedule {
            if !(0.0..=1.0).contains(&final_factor) {
                return Err(Error::InvalidArgument(format!("cosine final factor {final_factor} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A differentiable loss over a sample set.
pub trait Objective {
    fn num_samples(&self) -> usize;

    /// Loss and parameter gradient restricted to `rows` (mean over those samples).
    fn loss_grad(&mut self, params: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)>;
}

/// Wraps a closure as an [`Objective`].
pub struct FnObjective<F> {
    n: usize,
    f: F,
}

impl<F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>> FnObjective<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>> Objective for FnObjective<F> {
    fn num_samples(&self) -> usize {
        self.n
    }
    fn loss_grad(&mut self, params: &[f64], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        (self.f)(params, rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the smallest recorded full loss.
    pub params: Vec<f64>,
    /// `(epoch, full loss)` at the start of each epoch plus the final state.
    pub history: Vec<(usize, f64)>,
    pub best_loss: f64,
    pub best_epoch: usize,
}

/// Runs Adam until the epoch budget or the target loss is reached and
/// returns the best iterate.
///
/// The history holds the full loss before the first step and after every
/// epoch, so it has at most `max_epochs + 1` records.
pub fn train_to_budget(objective: &mut dyn Objective, params: &[f64], budget: &TrainBudget) -> Result<TrainOutcome> {
    let n = objective.num_samples();
    budget.validate(n)?;
    let all: Vec<usize> = (0..n).collect();
    let mut current = params.to_vec();
    let mut adam = AdamState::new(params.len(), budget.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut order = all.clone();
    let mut history = Vec::with_capacity(budget.max_epochs + 1);
    let mut best = (f64::INFINITY, 0usize, current.clone());

    let (mut loss, mut grad) = objective.loss_grad(&current, &all)?;
    for epoch in 0..=budget.max_epochs {
        if !loss.is_finite() {
            if epoch == 0 {
                return Err(Error::NonFinite(format!("initial loss is {loss}")));
            }
            return Err(Error::Divergence { epoch, loss });
        }
        history.push((epoch, loss));
        if loss < best.0 {
            best = (loss, epoch, current.clone());
        }
        if loss <= budget.target_loss || epoch == budget.max_epochs {
            break;
        }
        let lr = budget.lr * budget.schedule.factor(epoch, budget.max_epochs);
        match budget.batch {
            None => adam.step_with_lr(&mut current, &grad, lr)?,
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    let (batch_loss, g) = objective.loss_grad(&current, chunk)?;
                    if !batch_loss.is_finite() {
                        return Err(Error::Divergence { epoch, loss: batch_loss });
                    }
                    adam.step_with_lr(&mut current, &g, lr)?;
                }
            }
        }
        (loss, grad) = objective.loss_grad(&current, &all)?;
    }
    Ok(TrainOutcome { params: best.2, history, best_loss: best.0, best_epoch: best.1 })
}
