//! Control-set quadrature and spatial collocation sampling.
//!
//! Every integral over `U` in the solver goes through [`ControlGrid`]: a
//! tensor-product midpoint rule with equal weights `|U|/M`, fixed for the
//! whole run so densities from different iterations compare node by node.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problem::{BoxControlSet, SpatialDomain};

/// Upper bound on the number of control nodes unless a caller raises it.
pub const DEFAULT_MAX_CONTROL_NODES: usize = 1 << 16;

/// Quadrature nodes `u_j ∈ U` with positive weights `w_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    dim: usize,
    /// Row-major `M × dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ControlGrid {
    /// Builds a grid from explicit nodes; weights must be positive.
    pub fn from_nodes(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() || weights.is_empty() {
            return Err(Error::Quadrature(format!(
                "{} coordinates do not form {} nodes of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Quadrature(format!("weights must be positive and finite, found {w}")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_j w_j`, which equals `|U|` for grids built from a box.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Content hash of nodes and weights, used to pair checkpoints with grids.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        for v in self.points.iter().chain(&self.weights) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

/// Tensor-product midpoint rule with `per_dim` cells per axis.
pub fn build_control_grid(control_set: &BoxControlSet, per_dim: usize) -> Result<ControlGrid> {
    build_control_grid_with_limit(control_set, per_dim, DEFAULT_MAX_CONTROL_NODES)
}

pub fn build_control_grid_with_limit(
    control_set: &BoxControlSet,
    per_dim: usize,
    max_nodes: usize,
) -> Result<ControlGrid> {
    if per_dim < 2 {
        return Err(Error::Quadrature(format!("per_dim must be at least 2, got {per_dim}")));
    }
    let m = control_set.dim();
    let total = (per_dim as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if total > max_nodes as u128 {
        return Err(Error::Quadrature(format!(
            "{per_dim}^{m} control nodes exceed the budget of {max_nodes}"
        )));
    }
    let total = total as usize;
    let axes: Vec<Vec<f64>> = control_set
        .lower()
        .iter()
        .zip(control_set.upper())
        .map(|(&lo, &hi)| {
            let h = (hi - lo) / per_dim as f64;
            (0..per_dim).map(|i| lo + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let weight = control_set.volume() / total as f64;
    let mut points = Vec::with_capacity(total * m);
    let mut index = vec![0usize; m];
    for _ in 0..total {
        points.extend(index.iter().zip(&axes).map(|(&i, axis)| axis[i]));
        // Odometer increment, last axis fastest.
        for k in (0..m).rev() {
            index[k] += 1;
            if index[k] < per_dim {
                break;
            }
            index[k] = 0;
        }
    }
    ControlGrid::from_nodes(m, points, vec![weight; total])
}

/// `Σ_j w_j values_j`.
pub fn quad_integrate(grid: &ControlGrid, values: &[f64]) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: values.len(), context: "quadrature values" });
    }
    Ok(dot(grid.weights(), values))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random interior points used as the mesh-free training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    dim: usize,
    /// Row-major `N × dim`.
    points: Vec<f64>,
    domain_volume: f64,
}

impl CollocationSet {
    pub fn new(dim: usize, points: Vec<f64>, domain_volume: f64) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not form a non-empty set of {dim}-dimensional points",
                points.len()
            )));
        }
        Ok(Self { dim, points, domain_volume })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    pub fn domain_volume(&self) -> f64 {
        self.domain_volume
    }

    /// Subset with the given row indices (order preserved).
    pub fn select(&self, rows: &[usize]) -> Self {
        let points = rows.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Self { dim: self.dim, points, domain_volume: self.domain_volume }
    }

    /// Writes one CSV row per point with header `x0,...,x{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `n` i.i.d. uniform points in the domain, deterministic in `seed`.
pub fn sample_collocation(domain: &SpatialDomain, dim: usize, n: usize, seed: u64) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("collocation set needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n * dim);
    for _ in 0..n {
        points.extend(sample_point(domain, dim, &mut rng));
    }
    CollocationSet::new(dim, points, domain.volume(dim))
}

/// One uniform point in the domain, by rejection from the bounding cube.
pub fn sample_point<R: Rng + ?Sized>(domain: &SpatialDomain, dim: usize, rng: &mut R) -> Vec<f64> {
    let r = domain.radius;
    let mut candidate = vec![0.0; dim];
    loop {
        candidate.iter_mut().for_each(|c| *c = r * (2.0 * rng.random::<f64>() - 1.0));
        if domain.contains(&candidate) {
            return candidate;
        }
    }
}
