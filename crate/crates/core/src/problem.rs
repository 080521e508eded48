//! Control problem abstraction and the benchmark instances.
//!
//! A [`ControlProblem`] bundles the model coefficients `b(x,u)`, `r(x,u)`,
//! `σ(x)` with the discount `ρ`, the entropy temperature `λ`, a box control
//! set `U` and a bounded spatial domain. Coefficients can optionally be
//! multiplied by a smooth cutoff `χ(x)` that vanishes on the domain
//! boundary, which is what makes the policy-evaluation PDE well posed on a
//! bounded domain without boundary data.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `U = Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxControlSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxControlSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidProblem(format!(
                "control box bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidProblem(format!(
                    "control box axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-bound, bound]^m`.
    pub fn symmetric(m: usize, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidProblem(format!("control bound must be positive, got {bound}")));
        }
        Self::new(vec![-bound; m], vec![bound; m])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Lebesgue measure `|U|`.
    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&ui, (&lo, &hi))| {
                let slack = 1e-12 * (hi - lo);
                ui >= lo - slack && ui <= hi + slack
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Box,
    Ball,
}

/// Bounded computational domain: a ball `B_R(0)` or a cube `[-R, R]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub kind: DomainKind,
    pub radius: f64,
    /// Width of the transition layer of the coefficient cutoff; 0 disables it.
    pub cutoff_width: f64,
}

impl SpatialDomain {
    pub fn new(kind: DomainKind, radius: f64, cutoff_width: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidProblem(format!("domain radius must be positive, got {radius}")));
        }
        if !(cutoff_width >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "cutoff width must be non-negative, got {cutoff_width}"
            )));
        }
        Ok(Self { kind, radius, cutoff_width })
    }

    pub fn ball(radius: f64) -> Result<Self> {
        Self::new(DomainKind::Ball, radius, 0.0)
    }

    pub fn cube(radius: f64) -> Result<Self> {
        Self::new(DomainKind::Box, radius, 0.0)
    }

    pub fn with_cutoff(mut self, width: f64) -> Result<Self> {
        self.cutoff_width = width;
        Self::new(self.kind, self.radius, width)
    }

    /// The norm that defines the domain: Euclidean for balls, sup-norm for boxes.
    pub fn norm(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Ball => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            DomainKind::Box => x.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.norm(x) <= self.radius
    }

    /// Lebesgue measure of the domain in dimension `d`.
    pub fn volume(&self, d: usize) -> f64 {
        match self.kind {
            DomainKind::Box => (2.0 * self.radius).powi(d as i32),
            DomainKind::Ball => unit_ball_volume(d) * self.radius.powi(d as i32),
        }
    }

    /// The same domain shrunk by `factor` (used for "inner half-domain" errors).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { kind: self.kind, radius: self.radius * factor, cutoff_width: 0.0 }
    }

    /// Smooth cutoff `χ(x)`: 1 on the inner region, 0 outside the domain.
    ///
    /// For balls the profile is radial in `|x|`; for boxes it is the product
    /// of 1D profiles so that it is smooth and vanishes on every face.
    pub fn cutoff_factor(&self, x: &[f64]) -> f64 {
        if self.cutoff_width <= 0.0 {
            return if self.contains(x) { 1.0 } else { 0.0 };
        }
        let inner = self.radius - self.cutoff_width;
        let profile = |r: f64| smooth_step_down((r - inner) / self.cutoff_width);
        match self.kind {
            DomainKind::Ball => profile(self.norm(x)),
            DomainKind::Box => x.iter().map(|xi| profile(xi.abs())).product(),
        }
    }
}

/// `V_d = π^{d/2} / Γ(d/2 + 1)` via the two-step recursion `V_d = 2π/d · V_{d-2}`.
fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// C^∞ transition from 1 (t ≤ 0) to 0 (t ≥ 1) built from `exp(-1/t)`.
pub(crate) fn smooth_step_down(t: f64) -> f64 {
    fn g(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp()
        }
    }
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let a = g(1.0 - t);
        a / (a + g(t))
    }
}

/// Model coefficients of a controlled diffusion.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Writes `b(x,u)` into `out`.
    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn reward(&self, x: &[f64], u: &[f64]) -> f64;
    /// `σ(x)` as a `d×d` matrix.
    fn diffusion(&self, x: &[f64]) -> DMatrix<f64>;
}

type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type RewardFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type DiffusionFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Dynamics assembled from closures; handy for manufactured test problems.
pub struct FnDynamics {
    state_dim: usize,
    control_dim: usize,
    drift: Box<DriftFn>,
    reward: Box<RewardFn>,
    diffusion: Box<DiffusionFn>,
}

impl FnDynamics {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            drift: Box::new(drift),
            reward: Box::new(reward),
            diffusion: Box::new(diffusion),
        }
    }
}

impl fmt::Debug for FnDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDynamics")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .finish_non_exhaustive()
    }
}

impl Dynamics for FnDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(x, u, out)
    }
    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.reward)(x, u)
    }
    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(x)
    }
}

/// Linear dynamics `Ax + Bu`, reward `-xᵀQx - uᵀRu`, noise `sigma_scale·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r_cost: DMatrix<f64>,
    pub sigma_scale: f64,
    pub u_bound: f64,
}

impl LqrSpec {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        sigma_scale: f64,
        u_bound: f64,
    ) -> Result<Self> {
        let spec = Self { a, b, q, r_cost, sigma_scale, u_bound };
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.nrows();
        let m = self.b.ncols();
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if d == 0 || m == 0 {
            return bad("LQR dimensions must be positive".into());
        }
        if self.a.ncols() != d || self.b.nrows() != d || self.q.shape() != (d, d) || self.r_cost.shape() != (m, m) {
            return bad(format!(
                "LQR shape mismatch: A {:?}, B {:?}, Q {:?}, R {:?}",
                self.a.shape(),
                self.b.shape(),
                self.q.shape(),
                self.r_cost.shape()
            ));
        }
        if !is_symmetric(&self.q, 1e-10) || min_sym_eigenvalue(&self.q) < -1e-10 * self.q.norm().max(1.0) {
            return bad("Q must be symmetric positive semidefinite".into());
        }
        if !is_symmetric(&self.r_cost, 1e-10) || self.r_cost.clone().cholesky().is_none() {
            return bad("R must be symmetric positive definite".into());
        }
        if spectral_abscissa(&self.a) >= 0.0 {
            return bad("A must be Hurwitz (all eigenvalues with negative real part)".into());
        }
        if !(self.sigma_scale >= 0.0) || !(self.u_bound > 0.0) {
            return bad(format!(
                "need sigma_scale >= 0 and u_bound > 0, got {} and {}",
                self.sigma_scale, self.u_bound
            ));
        }
        Ok(())
    }

    /// Random stable instance: `A = G - (α(G) + margin)·I`, `Q = HHᵀ/d + q_floor·I`,
    /// `R = r_scale·I`, all drawn from a seeded stream.
    pub fn random_stable(d: usize, m: usize, seed: u64, r_scale: f64, sigma_scale: f64, u_bound: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, scale: f64| {
            DMatrix::from_fn(rows, cols, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
        };
        let g = draw(d, d, 0.5);
        let shift = spectral_abscissa(&g) + 0.5;
        let a = &g - DMatrix::identity(d, d) * shift;
        let b = draw(d, m, 1.0);
        let h = draw(d, d, 1.0);
        let q = (&h * h.transpose()) / d as f64 + DMatrix::identity(d, d) * 0.5;
        let q = (&q + q.transpose()) * 0.5;
        let r_cost = DMatrix::identity(m, m) * r_scale;
        Self::new(a, b, q, r_cost, sigma_scale, u_bound)
    }
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub(crate) fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone)]
struct LqrDynamics {
    spec: LqrSpec,
}

impl Dynamics for LqrDynamics {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.spec.control_dim()
    }
    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (a, b) = (&self.spec.a, &self.spec.b);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += b[(i, j)] * uj;
            }
            *o = acc;
        }
    }
    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        -quad_form(&self.spec.q, x) - quad_form(&self.spec.r_cost, u)
    }
    fn diffusion(&self, _x: &[f64]) -> DMatrix<f64> {
        let d = self.spec.state_dim();
        DMatrix::identity(d, d) * self.spec.sigma_scale
    }
}

fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[(i, j)] * v[j];
        }
    }
    acc
}

/// Inverted pendulum; `θ = 0` is upright. Defaults follow the common gym values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub max_torque: f64,
    pub sigma_scale: f64,
    /// Diagonal of `Q_env` over `(θ, θ̇)`.
    pub state_weights: [f64; 2],
    pub control_cost: f64,
    pub goal: [f64; 2],
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            max_torque: 2.0,
            sigma_scale: 0.1,
            state_weights: [1.0, 0.1],
            control_cost: 0.001,
            goal: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone)]
struct PendulumDynamics {
    p: PendulumParams,
}

impl Dynamics for PendulumDynamics {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.p;
        out[0] = x[1];
        out[1] = p.gravity / p.length * x[0].sin() + u[0] / (p.mass * p.length * p.length);
    }
    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        let p = &self.p;
        let e0 = x[0] - p.goal[0];
        let e1 = x[1] - p.goal[1];
        -(p.state_weights[0] * e0 * e0 + p.state_weights[1] * e1 * e1) - p.control_cost * u[0] * u[0]
    }
    fn diffusion(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.p.sigma_scale
    }
}

/// Cart-pole with state `(x, ẋ, θ, θ̇)`, `θ = 0` upright, force input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub max_force: f64,
    pub sigma_scale: f64,
    pub state_weights: [f64; 4],
    pub control_cost: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            max_force: 10.0,
            sigma_scale: 0.1,
            state_weights: [1.0, 0.1, 1.0, 0.1],
            control_cost: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
struct CartpoleDynamics {
    p: CartpoleParams,
}

impl Dynamics for CartpoleDynamics {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.p;
        let total = p.cart_mass + p.pole_mass;
        let (sin, cos) = x[2].sin_cos();
        let temp = (u[0] + p.pole_mass * p.half_length * x[3] * x[3] * sin) / total;
        let theta_acc =
            (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
        let x_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total;
        out[0] = x[1];
        out[1] = x_acc;
        out[2] = x[3];
        out[3] = theta_acc;
    }
    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        let w = &self.p.state_weights;
        -(0..4).map(|i| w[i] * x[i] * x[i]).sum::<f64>() - self.p.control_cost * u[0] * u[0]
    }
    fn diffusion(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(4, 4) * self.p.sigma_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lqr,
    Pendulum,
    Cartpole,
    Custom,
}

/// An entropy-regularized stochastic control problem. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    kind: ProblemKind,
    dynamics: Arc<dyn Dynamics>,
    rho: f64,
    lambda: f64,
    control_set: BoxControlSet,
    domain: SpatialDomain,
    cutoff: bool,
    ellipticity: Option<f64>,
    lqr: Option<LqrSpec>,
}

impl ControlProblem {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        rho: f64,
        lambda: f64,
        control_set: BoxControlSet,
        domain: SpatialDomain,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidProblem(format!("discount rho must be positive, got {rho}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidProblem(format!("temperature lambda must be positive, got {lambda}")));
        }
        if control_set.dim() != dynamics.control_dim() {
            return Err(Error::Dimension {
                expected: dynamics.control_dim(),
                got: control_set.dim(),
                context: "control set dimension",
            });
        }
        Ok(Self {
            kind: ProblemKind::Custom,
            dynamics,
            rho,
            lambda,
            control_set,
            domain,
            cutoff: false,
            ellipticity: None,
            lqr: None,
        })
    }

    /// The same problem with a different discount.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidProblem(format!("discount rho must be positive, got {rho}")));
        }
        let mut out = self.clone();
        out.rho = rho;
        Ok(out)
    }

    /// Declares the ellipticity constant `C0` with `Σ(x) ⪰ I/C0`.
    pub fn with_ellipticity(mut self, c0: f64) -> Self {
        self.ellipticity = Some(c0);
        self
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }
    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn control_set(&self) -> &BoxControlSet {
        &self.control_set
    }
    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }
    pub fn cutoff_enabled(&self) -> bool {
        self.cutoff
    }
    /// `C0` when uniform ellipticity holds (lost once the cutoff is applied).
    pub fn ellipticity(&self) -> Option<f64> {
        if self.cutoff {
            None
        } else {
            self.ellipticity
        }
    }
    pub fn lqr_spec(&self) -> Option<&LqrSpec> {
        self.lqr.as_ref()
    }

    fn chi(&self, x: &[f64]) -> f64 {
        if self.cutoff {
            self.domain.cutoff_factor(x)
        } else {
            1.0
        }
    }

    /// `b(x,u)` including the cutoff factor when enabled.
    pub fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.dynamics.drift(x, u, out);
        if self.cutoff {
            let chi = self.chi(x);
            out.iter_mut().for_each(|v| *v *= chi);
        }
    }

    pub fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        self.dynamics.reward(x, u)
    }

    /// `σ(x)` including the cutoff factor when enabled.
    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let s = self.dynamics.diffusion(x);
        if self.cutoff {
            s * self.chi(x)
        } else {
            s
        }
    }

    /// `Σ(x) = σ(x)σ(x)ᵀ`.
    pub fn big_sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(x);
        &s * s.transpose()
    }

    /// `f(x,u,p) = b(x,u)·p + r(x,u)`, rejecting controls outside `U`.
    pub fn eval_f(&self, x: &[f64], u: &[f64], p: &[f64]) -> Result<f64> {
        let d = self.state_dim();
        for (len, context) in [(x.len(), "state"), (p.len(), "costate p")] {
            if len != d {
                return Err(Error::Dimension { expected: d, got: len, context });
            }
        }
        if !self.control_set.contains(u) {
            return Err(Error::ControlOutOfBox(u.to_vec()));
        }
        Ok(self.f_unchecked(x, u, p))
    }

    pub(crate) fn f_unchecked(&self, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        let mut b = vec![0.0; self.state_dim()];
        self.drift(x, u, &mut b);
        b.iter().zip(p).map(|(bi, pi)| bi * pi).sum::<f64>() + self.reward(x, u)
    }

    /// Multiplies `b` and `σ` by the smooth cutoff of the domain.
    pub fn apply_cutoff(&self) -> Result<Self> {
        let w = self.domain.cutoff_width;
        if !(w > 0.0) {
            return Err(Error::InvalidProblem("cutoff requires domain.cutoff_width > 0".into()));
        }
        if w >= self.domain.radius {
            return Err(Error::InvalidProblem(format!(
                "cutoff width {w} must be smaller than the domain radius {}",
                self.domain.radius
            )));
        }
        let mut out = self.clone();
        out.cutoff = true;
        Ok(out)
    }

    /// Estimate of `B = sup_u ‖∇·b(·,u)‖_∞` over the given states and controls.
    pub fn drift_divergence_bound(&self, states: &[Vec<f64>], controls: &[Vec<f64>]) -> f64 {
        let d = self.state_dim();
        let h = 1e-5 * self.domain.radius.max(1.0);
        let mut bp = vec![0.0; d];
        let mut bm = vec![0.0; d];
        let mut worst: f64 = 0.0;
        for x in states {
            for u in controls {
                let mut div = 0.0;
                let mut xp = x.clone();
                let mut xm = x.clone();
                for k in 0..d {
                    xp[k] = x[k] + h;
                    xm[k] = x[k] - h;
                    self.drift(&xp, u, &mut bp);
                    self.drift(&xm, u, &mut bm);
                    div += (bp[k] - bm[k]) / (2.0 * h);
                    xp[k] = x[k];
                    xm[k] = x[k];
                }
                worst = worst.max(div.abs());
            }
        }
        worst
    }
}

/// Box-constrained LQR: `b = Ax + Bu`, `r = -xᵀQx - uᵀRu`, `σ = sigma_scale·I`.
pub fn make_lqr_problem(spec: LqrSpec, rho: f64, lambda: f64, domain: SpatialDomain) -> Result<ControlProblem> {
    spec.validate()?;
    let control_set = BoxControlSet::symmetric(spec.control_dim(), spec.u_bound)?;
    let sigma = spec.sigma_scale;
    let mut problem = ControlProblem::new(
        Arc::new(LqrDynamics { spec: spec.clone() }),
        rho,
        lambda,
        control_set,
        domain,
    )?;
    problem.kind = ProblemKind::Lqr;
    if sigma > 0.0 {
        problem.ellipticity = Some(1.0 / (sigma * sigma));
    }
    problem.lqr = Some(spec);
    Ok(problem)
}

pub fn make_pendulum_problem(
    params: PendulumParams,
    rho: f64,
    lambda: f64,
    domain: SpatialDomain,
) -> Result<ControlProblem> {
    let p = &params;
    if !(p.mass > 0.0 && p.length > 0.0 && p.gravity > 0.0 && p.max_torque > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "pendulum parameters must be positive: m={}, l={}, g={}, torque={}",
            p.mass, p.length, p.gravity, p.max_torque
        )));
    }
    let control_set = BoxControlSet::symmetric(1, p.max_torque)?;
    let sigma = p.sigma_scale;
    let mut problem = ControlProblem::new(Arc::new(PendulumDynamics { p: params }), rho, lambda, control_set, domain)?;
    problem.kind = ProblemKind::Pendulum;
    if sigma > 0.0 {
        problem.ellipticity = Some(1.0 / (sigma * sigma));
    }
    Ok(problem)
}

pub fn make_cartpole_problem(
    params: CartpoleParams,
    rho: f64,
    lambda: f64,
    domain: SpatialDomain,
) -> Result<ControlProblem> {
    let p = &params;
    if !(p.cart_mass > 0.0 && p.pole_mass > 0.0 && p.half_length > 0.0 && p.gravity > 0.0 && p.max_force > 0.0) {
        return Err(Error::InvalidProblem("cartpole parameters must be positive".into()));
    }
    let control_set = BoxControlSet::symmetric(1, p.max_force)?;
    let sigma = p.sigma_scale;
    let mut problem = ControlProblem::new(Arc::new(CartpoleDynamics { p: params }), rho, lambda, control_set, domain)?;
    problem.kind = ProblemKind::Cartpole;
    if sigma > 0.0 {
        problem.ellipticity = Some(1.0 / (sigma * sigma));
    }
    Ok(problem)
}
