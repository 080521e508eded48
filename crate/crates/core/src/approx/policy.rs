use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{forward_batch, JetEngine, MlpShape};
use super::value::check_state;
use crate::error::{Error, Result};
use crate::quadrature::ControlGrid;

/// A state-dependent density over the nodes of a fixed control grid.
pub trait PolicyDensity: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Number of grid nodes the density is defined on.
    fn num_nodes(&self) -> usize;

    /// `ln π(x, u_j)` for every node.
    fn log_density(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn density(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_density(x)?.into_iter().map(f64::exp).collect())
    }
}

pub(crate) fn check_grid(policy: &dyn PolicyDensity, grid: &ControlGrid) -> Result<()> {
    if policy.num_nodes() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: policy.num_nodes(), context: "policy grid nodes" });
    }
    Ok(())
}

/// `ln π_j = l_j − ln Σ_j' w_j' exp(l_j')`, with max subtraction.
pub fn weighted_log_softmax(logits: &[f64], log_weights: &[f64], out: &mut [f64]) {
    let shift = logits
        .iter()
        .zip(log_weights)
        .map(|(l, lw)| l + lw)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logits.iter().zip(log_weights).map(|(l, lw)| (l + lw - shift).exp()).sum();
    let log_norm = shift + norm.ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - log_norm;
    }
}

/// Constant density `1/|U|`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPolicy {
    d: usize,
    nodes: usize,
    log_value: f64,
}

impl UniformPolicy {
    pub fn new(d: usize, grid: &ControlGrid) -> Self {
        Self { d, nodes: grid.len(), log_value: -grid.total_weight().ln() }
    }
}

impl PolicyDensity for UniformPolicy {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn num_nodes(&self) -> usize {
        self.nodes
    }
    fn log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_state(x, self.d)?;
        Ok(vec![self.log_value; self.nodes])
    }
}

/// Network producing one logit per control node; the density is the
/// quadrature-weighted softmax so that `Σ_j w_j π_j = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub shape: MlpShape,
    pub params: Vec<f64>,
    pub input_scale: f64,
    pub grid_fingerprint: String,
    log_weights: Vec<f64>,
}

impl PolicyNet {
    pub fn new(shape: MlpShape, params: Vec<f64>, input_scale: f64, grid: &ControlGrid) -> Result<Self> {
        if shape.output() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: shape.output(), context: "policy logits" });
        }
        if params.len() != shape.num_params() {
            return Err(Error::Dimension {
                expected: shape.num_params(),
                got: params.len(),
                context: "policy net parameters",
            });
        }
        if !(input_scale > 0.0) {
            return Err(Error::InvalidArgument("input scale must be positive".into()));
        }
        Ok(Self {
            shape,
            params,
            input_scale,
            grid_fingerprint: grid.fingerprint(),
            log_weights: grid.weights().iter().map(|w| w.ln()).collect(),
        })
    }

    /// Fan-in initialised net; `zero_output` gives the uniform density.
    pub fn init(d: usize, hidden: &[usize], grid: &ControlGrid, seed: u64, zero_output: bool) -> Result<Self> {
        let shape = MlpShape::with_hidden(d, hidden, grid.len())?;
        let params = shape.init_params(seed, zero_output);
        Self::new(shape, params, 1.0, grid)
    }

    pub fn with_input_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("input scale must be positive".into()));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Errors unless `grid` is the grid the net was built for.
    pub fn check_grid(&self, grid: &ControlGrid) -> Result<()> {
        if grid.fingerprint() != self.grid_fingerprint {
            return Err(Error::InvalidArgument(format!(
                "policy was built for grid {} but got {}",
                self.grid_fingerprint,
                grid.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn logits_batch(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        forward_batch(&self.shape, &self.params, xs.mapv(|v| v / self.input_scale).view())
    }

    /// `N × M` log densities.
    pub fn log_density_batch(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut logits = self.logits_batch(xs).as_standard_layout().into_owned();
        let mut row_in = vec![0.0; logits.ncols()];
        let mut row_out = vec![0.0; logits.ncols()];
        for mut row in logits.rows_mut() {
            row_in.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
            weighted_log_softmax(&row_in, &self.log_weights, &mut row_out);
            row.iter_mut().zip(&row_out).for_each(|(r, o)| *r = *o);
        }
        logits
    }

    /// Parameter gradient of `Σ_ij G_ij l_ij` where `l` are the raw logits.
    pub fn logits_backward(&self, xs: ArrayView2<'_, f64>, adj_logits: &Array2<f64>) -> Result<Vec<f64>> {
        let engine = JetEngine::new(&self.shape, &self.params)?;
        let empty = Array2::zeros((0, xs.ncols()));
        let fwd = engine.forward(xs.mapv(|v| v / self.input_scale).view(), empty.view());
        let none = Array2::zeros((0, self.shape.output()));
        Ok(engine.backward(&fwd, adj_logits, &none, &none))
    }
}

impl PolicyDensity for PolicyNet {
    fn state_dim(&self) -> usize {
        self.shape.input()
    }

    fn num_nodes(&self) -> usize {
        self.shape.output()
    }

    fn log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_state(x, self.state_dim())?;
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("single row");
        Ok(self.log_density_batch(xs).row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BoxControlSet;
    use crate::quadrature::{build_control_grid, quad_integrate};
    use approx::assert_relative_eq;

    #[test]
    fn softmax_arithmetic() {
        let mut out = [0.0; 2];
        weighted_log_softmax(&[3f64.ln(), 0.0], &[0.0, 0.0], &mut out);
        assert_relative_eq!(out[0].exp(), 0.75, max_relative = 1e-15);
        assert_relative_eq!(out[1].exp(), 0.25, max_relative = 1e-15);
        // Huge logits do not overflow.
        weighted_log_softmax(&[1000.0, 999.0], &[0.0, 0.0], &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_logits_are_uniform() {
        let grid = build_control_grid(&BoxControlSet::symmetric(2, 1.5).unwrap(), 6).unwrap();
        let net = PolicyNet::init(3, &[8], &grid, 1, true).unwrap();
        let dens = net.density(&[0.1, 0.2, 0.3]).unwrap();
        for p in &dens {
            assert_relative_eq!(*p, 1.0 / 9.0, max_relative = 1e-12);
        }
        let uni = UniformPolicy::new(3, &grid);
        assert_relative_eq!(uni.density(&[0.0; 3]).unwrap()[0], 1.0 / 9.0, max_relative = 1e-15);
        let net = PolicyNet::init(3, &[8], &grid, 1, false).unwrap();
        let dens = net.density(&[0.1, -2.0, 0.3]).unwrap();
        assert_relative_eq!(quad_integrate(&grid, &dens).unwrap(), 1.0, max_relative = 1e-12);
        let other = build_control_grid(&BoxControlSet::symmetric(2, 1.5).unwrap(), 5).unwrap();
        assert!(net.check_grid(&other).is_err());
        assert!(net.check_grid(&grid).is_ok());
    }
}
