use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{forward_batch, forward_generic, JetEngine, JetForward, MlpShape};
use crate::autodiff::{hessian_trace_hvp, Real};
use crate::error::{Error, Result};

/// Value, input gradient and `tr(Σ D²v)` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub sigma_hess_trace: f64,
}

/// A twice differentiable scalar field on the state space.
pub trait ValueFunction: Send + Sync {
    fn state_dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn derivatives(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<DerivativeBundle>;

    /// Values at the rows of a flat `N × d` array.
    fn values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.chunks_exact(self.state_dim()).map(|x| self.value(x)).collect()
    }
}

pub(crate) fn check_state(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::Dimension { expected: d, got: x.len(), context: "state" });
    }
    Ok(())
}

fn check_sigma(sigma: &DMatrix<f64>, d: usize) -> Result<()> {
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Dimension { expected: d, got: sigma.nrows(), context: "diffusion matrix" });
    }
    Ok(())
}

/// `v(x) = xᵀPx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub p: DMatrix<f64>,
    pub c: f64,
}

impl QuadraticValue {
    pub fn new(p: DMatrix<f64>, c: f64) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::InvalidArgument(format!("P must be square, got {}x{}", p.nrows(), p.ncols())));
        }
        let sym = (&p + p.transpose()) * 0.5;
        if (&sym - &p).amax() > 1e-12 * p.amax().max(1.0) {
            return Err(Error::InvalidArgument("P must be symmetric".into()));
        }
        Ok(Self { p: sym, c })
    }
}

impl ValueFunction for QuadraticValue {
    fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_state(x, self.state_dim())?;
        let d = self.state_dim();
        let mut acc = self.c;
        for i in 0..d {
            for j in 0..d {
                acc += x[i] * self.p[(i, j)] * x[j];
            }
        }
        Ok(acc)
    }

    fn derivatives(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<DerivativeBundle> {
        let d = self.state_dim();
        check_sigma(sigma, d)?;
        let value = self.value(x)?;
        let grad_x = (0..d).map(|i| 2.0 * (0..d).map(|j| self.p[(i, j)] * x[j]).sum::<f64>()).collect();
        let sigma_hess_trace = 2.0 * (sigma * &self.p).trace();
        Ok(DerivativeBundle { value, grad_x, sigma_hess_trace })
    }
}

/// Directions along which second-order jets are propagated for a batch of
/// states, and how to contract them into `tr(Σ D²v)`.
///
/// The first `d` directions are always the unit vectors, so first-order jets
/// along them are the input gradient. When every `Σ(x_i)` is diagonal their
/// second-order jets already give the trace (weights `Σ_kk`); otherwise `d`
/// more directions along the columns of a factor `L` with `LLᵀ = Σ` follow.
#[derive(Debug, Clone)]
pub struct DirectionPlan {
    pub(crate) d: usize,
    pub(crate) k: usize,
    /// `(N·K) × d`.
    pub(crate) dirs: Array2<f64>,
    /// `N × K`.
    pub(crate) trace_weights: Array2<f64>,
}

impl DirectionPlan {
    pub fn new(sigmas: &[DMatrix<f64>], d: usize) -> Self {
        let diagonal = sigmas.iter().all(|s| {
            (0..d).all(|i| (0..d).all(|j| i == j || s[(i, j)] == 0.0))
        });
        let n = sigmas.len();
        let k = if diagonal { d } else { 2 * d };
        let mut dirs = Array2::zeros((n * k, d));
        let mut trace_weights = Array2::zeros((n, k));
        for (i, s) in sigmas.iter().enumerate() {
            for e in 0..d {
                dirs[(i * k + e, e)] = 1.0;
                if diagonal {
                    trace_weights[(i, e)] = s[(e, e)];
                }
            }
            if !diagonal {
                let factor = sym_factor(s);
                for c in 0..d {
                    for r in 0..d {
                        dirs[(i * k + d + c, r)] = factor[(r, c)];
                    }
                    trace_weights[(i, d + c)] = 1.0;
                }
            }
        }
        Self { d, k, dirs, trace_weights }
    }

    pub fn directions_per_point(&self) -> usize {
        self.k
    }

    pub fn num_points(&self) -> usize {
        self.trace_weights.nrows()
    }
}

/// `L` with `LLᵀ = S` for symmetric PSD `S`, from the eigendecomposition.
pub(crate) fn sym_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let mut l = eig.eigenvectors.clone();
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let scale = lam.max(0.0).sqrt();
        l.column_mut(c).iter_mut().for_each(|v| *v *= scale);
    }
    l
}

/// Batched value jets: values, gradients and `tr(Σ D²v)` for `N` states.
pub struct ValueJets {
    pub values: Vec<f64>,
    /// `N × d`.
    pub grads: Array2<f64>,
    pub traces: Vec<f64>,
    pub(crate) forward: JetForward,
}

/// Tanh multilayer perceptron `v(x) = s_out · net(x / s_in)`.
///
/// The fixed scales keep inputs and outputs of order one; they are part of
/// the architecture, not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpValueNet {
    pub shape: MlpShape,
    pub params: Vec<f64>,
    pub input_scale: f64,
    pub output_scale: f64,
}

impl MlpValueNet {
    pub fn new(shape: MlpShape, params: Vec<f64>, input_scale: f64, output_scale: f64) -> Result<Self> {
        if shape.output() != 1 {
            return Err(Error::InvalidArgument(format!("value net needs one output, got {}", shape.output())));
        }
        if params.len() != shape.num_params() {
            return Err(Error::Dimension { expected: shape.num_params(), got: params.len(), context: "value net parameters" });
        }
        if !(input_scale > 0.0 && output_scale > 0.0) {
            return Err(Error::InvalidArgument("network scales must be positive".into()));
        }
        Ok(Self { shape, params, input_scale, output_scale })
    }

    /// Fan-in initialised net; `zero_output` makes it the zero function.
    pub fn init(d: usize, hidden: &[usize], seed: u64, zero_output: bool) -> Result<Self> {
        let shape = MlpShape::with_hidden(d, hidden, 1)?;
        let params = shape.init_params(seed, zero_output);
        Self::new(shape, params, 1.0, 1.0)
    }

    pub fn with_scales(mut self, input_scale: f64, output_scale: f64) -> Result<Self> {
        self.input_scale = input_scale;
        self.output_scale = output_scale;
        Self::new(self.shape, self.params, input_scale, output_scale)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn scaled_inputs(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        xs.mapv(|v| v / self.input_scale)
    }

    /// Values at the rows of `xs` (`N × d`).
    pub fn values_batch(&self, xs: ArrayView2<'_, f64>) -> Vec<f64> {
        let out = forward_batch(&self.shape, &self.params, self.scaled_inputs(xs).view());
        out.column(0).iter().map(|v| v * self.output_scale).collect()
    }

    /// Value, gradient and Hessian-trace jets for a batch.
    pub fn jets(&self, xs: ArrayView2<'_, f64>, plan: &DirectionPlan) -> Result<ValueJets> {
        let n = xs.nrows();
        let d = self.shape.input();
        if xs.ncols() != d || plan.d != d || plan.num_points() != n {
            return Err(Error::Dimension { expected: d, got: xs.ncols(), context: "jet batch" });
        }
        let engine = JetEngine::new(&self.shape, &self.params)?;
        let dirs = plan.dirs.mapv(|v| v / self.input_scale);
        let forward = engine.forward(self.scaled_inputs(xs).view(), dirs.view());
        let so = self.output_scale;
        let k = plan.k;
        let values = forward.values.column(0).iter().map(|v| v * so).collect();
        let mut grads = Array2::zeros((n, d));
        let mut traces = vec![0.0; n];
        for i in 0..n {
            for e in 0..d {
                grads[(i, e)] = so * forward.first[(i * k + e, 0)];
            }
            traces[i] = so * (0..k).map(|kk| plan.trace_weights[(i, kk)] * forward.second[(i * k + kk, 0)]).sum::<f64>();
        }
        Ok(ValueJets { values, grads, traces, forward })
    }

    /// Parameter gradient of `Σ_i α_i v_i + Σ_i β_i·∇v_i + Σ_i γ_i tr_i` for
    /// jets previously computed with [`Self::jets`].
    pub fn jets_backward(
        &self,
        jets: &ValueJets,
        plan: &DirectionPlan,
        alpha: &[f64],
        beta: ArrayView2<'_, f64>,
        gamma: &[f64],
    ) -> Result<Vec<f64>> {
        let n = alpha.len();
        let (d, k) = (plan.d, plan.k);
        let so = self.output_scale;
        let mut av = Array2::zeros((n, 1));
        let mut a1 = Array2::zeros((n * k, 1));
        let mut a2 = Array2::zeros((n * k, 1));
        for i in 0..n {
            av[(i, 0)] = so * alpha[i];
            for e in 0..d {
                a1[(i * k + e, 0)] = so * beta[(i, e)];
            }
            for kk in 0..k {
                a2[(i * k + kk, 0)] = so * gamma[i] * plan.trace_weights[(i, kk)];
            }
        }
        let engine = JetEngine::new(&self.shape, &self.params)?;
        Ok(engine.backward(&jets.forward, &av, &a1, &a2))
    }

    /// Parameter gradient of `Σ_i α_i v(x_i)` (plain regression losses).
    pub fn values_backward(&self, xs: ArrayView2<'_, f64>, alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let engine = JetEngine::new(&self.shape, &self.params)?;
        let empty = Array2::zeros((0, xs.ncols()));
        let fwd = engine.forward(self.scaled_inputs(xs).view(), empty.view());
        let values = fwd.values.column(0).iter().map(|v| v * self.output_scale).collect();
        let av = Array2::from_shape_vec((alpha.len(), 1), alpha.iter().map(|a| a * self.output_scale).collect())
            .expect("one adjoint per point");
        let none = Array2::zeros((0, 1));
        Ok((values, engine.backward(&fwd, &av, &none, &none)))
    }

    /// Generic-scalar evaluation used by cross-checks against the tape.
    pub fn eval_generic<T: Real>(&self, params: &[T], x: &[T]) -> T {
        let xs: Vec<T> = x.iter().map(|&v| v.scale(1.0 / self.input_scale)).collect();
        forward_generic(&self.shape, params, &xs)[0].scale(self.output_scale)
    }

    /// `tr(Σ D²v)` through `d` forward-over-reverse Hessian-vector products.
    pub fn sigma_hess_trace_hvp(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
        check_state(x, self.shape.input())?;
        check_sigma(sigma, self.shape.input())?;
        let factor = sym_factor(sigma);
        Ok(hessian_trace_hvp(
            |xv| {
                let p: Vec<_> = self.params.iter().map(|&w| xv[0].constant(w)).collect();
                self.eval_generic(&p, xv)
            },
            x,
            &factor,
        ))
    }
}

impl ValueFunction for MlpValueNet {
    fn state_dim(&self) -> usize {
        self.shape.input()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_state(x, self.state_dim())?;
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("single row");
        Ok(self.values_batch(xs)[0])
    }

    fn values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        if !xs.len().is_multiple_of(d) {
            return Err(Error::Dimension { expected: d, got: xs.len() % d, context: "state batch" });
        }
        let view = ArrayView2::from_shape((xs.len() / d, d), xs).expect("checked shape");
        Ok(self.values_batch(view))
    }

    fn derivatives(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<DerivativeBundle> {
        let d = self.state_dim();
        check_state(x, d)?;
        check_sigma(sigma, d)?;
        let plan = DirectionPlan::new(std::slice::from_ref(sigma), d);
        let xs = ArrayView2::from_shape((1, d), x).expect("single row");
        let jets = self.jets(xs, &plan)?;
        Ok(DerivativeBundle {
            value: jets.values[0],
            grad_x: jets.grads.row(0).to_vec(),
            sigma_hess_trace: jets.traces[0],
        })
    }
}

/// Adapter turning a closure with analytic derivatives into a [`ValueFunction`].
pub struct FnValue<F> {
    d: usize,
    f: F,
}

impl<F> FnValue<F>
where
    F: Fn(&[f64], &DMatrix<f64>) -> DerivativeBundle + Send + Sync,
{
    pub fn new(d: usize, f: F) -> Self {
        Self { d, f }
    }
}

impl<F> ValueFunction for FnValue<F>
where
    F: Fn(&[f64], &DMatrix<f64>) -> DerivativeBundle + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_state(x, self.d)?;
        Ok((self.f)(x, &DMatrix::zeros(self.d, self.d)).value)
    }

    fn derivatives(&self, x: &[f64], sigma: &DMatrix<f64>) -> Result<DerivativeBundle> {
        check_state(x, self.d)?;
        check_sigma(sigma, self.d)?;
        Ok((self.f)(x, sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_examples() {
        let q = QuadraticValue::new(DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(q.value(&[1.0, 1.0]).unwrap(), 2.0);
        let q3 = QuadraticValue::new(DMatrix::identity(3, 3), 0.0).unwrap();
        let b = q3.derivatives(&[1.0, -2.0, 0.5], &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(b.grad_x, vec![2.0, -4.0, 1.0]);
        assert_eq!(b.sigma_hess_trace, 6.0);
        assert!(QuadraticValue::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), 0.0).is_err());
        assert!(q.value(&[1.0]).is_err());
    }

    #[test]
    fn zero_net_and_determinism() {
        let net = MlpValueNet::init(3, &[8, 8], 2, true).unwrap();
        assert_eq!(net.value(&[0.3, 1.0, -2.0]).unwrap(), 0.0);
        let net = MlpValueNet::init(3, &[8, 8], 2, false).unwrap().with_scales(2.0, 3.0).unwrap();
        let x = [0.3, 1.0, -2.0];
        assert_eq!(net.value(&x).unwrap().to_bits(), net.value(&x).unwrap().to_bits());
        assert!(net.value(&[1.0]).is_err());
    }

    #[test]
    fn jets_match_finite_differences_with_full_sigma() {
        let net = MlpValueNet::init(2, &[10, 10], 5, false).unwrap().with_scales(1.5, 2.0).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, 0.4]);
        let x = [0.25, -0.6];
        let b = net.derivatives(&x, &sigma).unwrap();
        let h = 1e-4;
        let v = |a: f64, c: f64| net.value(&[a, c]).unwrap();
        let gx = (v(x[0] + h, x[1]) - v(x[0] - h, x[1])) / (2.0 * h);
        let gy = (v(x[0], x[1] + h) - v(x[0], x[1] - h)) / (2.0 * h);
        let hxx = (v(x[0] + h, x[1]) - 2.0 * b.value + v(x[0] - h, x[1])) / (h * h);
        let hyy = (v(x[0], x[1] + h) - 2.0 * b.value + v(x[0], x[1] - h)) / (h * h);
        let hxy = (v(x[0] + h, x[1] + h) - v(x[0] + h, x[1] - h) - v(x[0] - h, x[1] + h) + v(x[0] - h, x[1] - h))
            / (4.0 * h * h);
        let tr = sigma[(0, 0)] * hxx + 2.0 * sigma[(0, 1)] * hxy + sigma[(1, 1)] * hyy;
        assert_relative_eq!(b.grad_x[0], gx, max_relative = 1e-7);
        assert_relative_eq!(b.grad_x[1], gy, max_relative = 1e-7);
        assert_relative_eq!(b.sigma_hess_trace, tr, max_relative = 1e-5);
        let hvp = net.sigma_hess_trace_hvp(&x, &sigma).unwrap();
        assert_relative_eq!(b.sigma_hess_trace, hvp, max_relative = 1e-10);
    }
}
