//! Fully connected tanh networks.
//!
//! Two evaluation paths share one parameter layout:
//!
//! * [`forward_generic`] works on any [`Real`] scalar and is used for
//!   cross-checks through duals and the tape.
//! * [`JetEngine`] is the batched production path. It propagates, for every
//!   input point and every direction `s_k`, the triple
//!   `(v, sᵀ∇v, sᵀ∇²v s)` through the layers (second-order forward mode) and
//!   has a hand-derived reverse pass so losses built from value, gradient
//!   and Hessian quadratic forms can be differentiated w.r.t. parameters.
//!
//! Parameter layout: for each layer, the `out × in` weight matrix in
//! row-major order followed by the `out` biases.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl MlpShape {
    /// `sizes = [input, hidden..., output]`.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input(&self) -> usize {
        self.sizes[0]
    }

    pub fn output(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn slots(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot { w: offset, b: offset + w[0] * w[1], rows: w[1], cols: w[0] };
                offset += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }

    /// Fan-in scaled Gaussian weights, zero biases. With `zero_output` the
    /// last layer starts at zero so the network is identically zero.
    pub fn init_params(&self, seed: u64, zero_output: bool) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.num_params()];
        let slots = self.slots();
        for (l, slot) in slots.iter().enumerate() {
            if zero_output && l + 1 == slots.len() {
                continue;
            }
            let normal = Normal::new(0.0, 1.0 / (slot.cols as f64).sqrt()).unwrap();
            for p in &mut params[slot.w..slot.w + slot.rows * slot.cols] {
                *p = normal.sample(&mut rng);
            }
        }
        params
    }
}

/// Scalar-generic forward pass.
pub fn forward_generic<T: Real>(shape: &MlpShape, params: &[T], x: &[T]) -> Vec<T> {
    let slots = shape.slots();
    let mut h: Vec<T> = x.to_vec();
    for (l, slot) in slots.iter().enumerate() {
        let mut z = Vec::with_capacity(slot.rows);
        for r in 0..slot.rows {
            let mut acc = params[slot.b + r];
            for c in 0..slot.cols {
                acc = acc + params[slot.w + r * slot.cols + c] * h[c];
            }
            z.push(acc);
        }
        h = if l + 1 < slots.len() { z.into_iter().map(Real::tanh).collect() } else { z };
    }
    h
}

/// Plain batched forward pass, rows of `xs` are points.
pub fn forward_batch(shape: &MlpShape, params: &[f64], xs: ArrayView2<'_, f64>) -> Array2<f64> {
    let slots = shape.slots();
    let mut h = xs.to_owned();
    for (l, slot) in slots.iter().enumerate() {
        let (w, b) = layer_view(params, slot);
        let mut z = h.dot(&w.t());
        z += &b;
        if l + 1 < slots.len() {
            z.mapv_inplace(f64::tanh);
        }
        h = z;
    }
    h
}

fn layer_view<'a>(params: &'a [f64], slot: &LayerSlot) -> (ArrayView2<'a, f64>, ndarray::ArrayView1<'a, f64>) {
    let w = ArrayView2::from_shape((slot.rows, slot.cols), &params[slot.w..slot.w + slot.rows * slot.cols])
        .expect("layer slice has the declared shape");
    let b = ndarray::ArrayView1::from(&params[slot.b..slot.b + slot.rows]);
    (w, b)
}

/// Cached intermediate arrays of one layer.
struct LayerCache {
    h_in: Array2<f64>,
    t_in: Array2<f64>,
    a_in: Array2<f64>,
    /// Post-activation value for hidden layers (empty for the output layer).
    act: Array2<f64>,
    tz: Array2<f64>,
    az: Array2<f64>,
}

/// Output of [`JetEngine::forward`].
pub struct JetForward {
    /// `N × out` values.
    pub values: Array2<f64>,
    /// `(N·K) × out` first directional derivatives; row `i·K + k` is point `i`, direction `k`.
    pub first: Array2<f64>,
    /// `(N·K) × out` second directional derivatives `s_kᵀ∇²v s_k`.
    pub second: Array2<f64>,
    caches: Vec<LayerCache>,
    k: usize,
}

/// Batched second-order forward mode with a matching reverse pass.
pub struct JetEngine<'a> {
    shape: &'a MlpShape,
    params: &'a [f64],
}

impl<'a> JetEngine<'a> {
    pub fn new(shape: &'a MlpShape, params: &'a [f64]) -> Result<Self> {
        if params.len() != shape.num_params() {
            return Err(Error::Dimension {
                expected: shape.num_params(),
                got: params.len(),
                context: "network parameters",
            });
        }
        Ok(Self { shape, params })
    }

    /// `xs` is `N × d`; `dirs` is `(N·K) × d` with `K = dirs.nrows() / N`.
    pub fn forward(&self, xs: ArrayView2<'_, f64>, dirs: ArrayView2<'_, f64>) -> JetForward {
        let n = xs.nrows();
        let k = if n == 0 { 0 } else { dirs.nrows() / n };
        debug_assert_eq!(dirs.nrows(), n * k);
        let slots = self.shape.slots();
        let mut h = xs.to_owned();
        let mut t = dirs.to_owned();
        let mut a = Array2::<f64>::zeros(dirs.raw_dim());
        let mut caches = Vec::with_capacity(slots.len());
        for (l, slot) in slots.iter().enumerate() {
            let (w, b) = layer_view(self.params, slot);
            let mut z = h.dot(&w.t());
            z += &b;
            let (tz, az) = if k > 0 {
                let az = if l == 0 { Array2::zeros((n * k, slot.rows)) } else { a.dot(&w.t()) };
                (t.dot(&w.t()), az)
            } else {
                (Array2::zeros((0, slot.rows)), Array2::zeros((0, slot.rows)))
            };
            let hidden = l + 1 < slots.len();
            if hidden {
                z.mapv_inplace(f64::tanh);
                let act = z;
                let mut t_out = tz.clone();
                let mut a_out = az.clone();
                for i in 0..n {
                    let phi = act.row(i);
                    for kk in 0..k {
                        let r = i * k + kk;
                        let mut tr = t_out.row_mut(r);
                        let mut ar = a_out.row_mut(r);
                        for c in 0..slot.rows {
                            let p = phi[c];
                            let d1 = 1.0 - p * p;
                            let d2 = -2.0 * p * d1;
                            let tzc = tz[(r, c)];
                            tr[c] = d1 * tzc;
                            ar[c] = d1 * az[(r, c)] + d2 * tzc * tzc;
                        }
                    }
                }
                caches.push(LayerCache { h_in: h, t_in: t, a_in: a, act: act.clone(), tz, az });
                h = act;
                t = t_out;
                a = a_out;
            } else {
                caches.push(LayerCache {
                    h_in: h,
                    t_in: t,
                    a_in: a,
                    act: Array2::zeros((0, 0)),
                    tz: Array2::zeros((0, 0)),
                    az: Array2::zeros((0, 0)),
                });
                return JetForward { values: z, first: tz, second: az, caches, k };
            }
        }
        unreachable!("a network has at least one layer")
    }

    /// Parameter gradient of `Σ adj_values·values + Σ adj_first·first + Σ adj_second·second`.
    pub fn backward(
        &self,
        fwd: &JetForward,
        adj_values: &Array2<f64>,
        adj_first: &Array2<f64>,
        adj_second: &Array2<f64>,
    ) -> Vec<f64> {
        let slots = self.shape.slots();
        let k = fwd.k;
        let mut grad = vec![0.0; self.shape.num_params()];
        let mut zbar = adj_values.clone();
        let mut tzbar = adj_first.clone();
        let mut azbar = adj_second.clone();
        for l in (0..slots.len()).rev() {
            let slot = &slots[l];
            let cache = &fwd.caches[l];
            let mut wbar = zbar.t().dot(&cache.h_in);
            if k > 0 {
                wbar += &tzbar.t().dot(&cache.t_in);
                if l > 0 {
                    wbar += &azbar.t().dot(&cache.a_in);
                }
            }
            grad[slot.w..slot.w + slot.rows * slot.cols]
                .copy_from_slice(wbar.as_standard_layout().as_slice().expect("contiguous"));
            let bbar: Array1<f64> = zbar.sum_axis(Axis(0));
            grad[slot.b..slot.b + slot.rows].copy_from_slice(bbar.as_slice().expect("contiguous"));
            if l == 0 {
                break;
            }
            let (w, _) = layer_view(self.params, slot);
            let hbar = zbar.dot(&w);
            let (tbar, abar) = if k > 0 { (tzbar.dot(&w), azbar.dot(&w)) } else { (tzbar.clone(), azbar.clone()) };
            // Pull back through the activation of layer l-1.
            let prev = &fwd.caches[l - 1];
            let n = hbar.nrows();
            let cols = hbar.ncols();
            let mut zb = Array2::<f64>::zeros((n, cols));
            let mut tzb = Array2::<f64>::zeros((n * k, cols));
            let mut azb = Array2::<f64>::zeros((n * k, cols));
            for i in 0..n {
                for c in 0..cols {
                    let p = prev.act[(i, c)];
                    let d1 = 1.0 - p * p;
                    let d2 = -2.0 * p * d1;
                    let d3 = -2.0 * d1 * d1 + 4.0 * p * p * d1;
                    let mut acc = d1 * hbar[(i, c)];
                    for kk in 0..k {
                        let r = i * k + kk;
                        let tz = prev.tz[(r, c)];
                        let az = prev.az[(r, c)];
                        let tb = tbar[(r, c)];
                        let ab = abar[(r, c)];
                        acc += d2 * tz * tb + (d2 * az + d3 * tz * tz) * ab;
                        tzb[(r, c)] = d1 * tb + 2.0 * d2 * tz * ab;
                        azb[(r, c)] = d1 * ab;
                    }
                    zb[(i, c)] = acc;
                }
            }
            zbar = zb;
            tzbar = tzb;
            azbar = azb;
        }
        grad
    }
}

/// Gathers rows `[i·K, (i+1)·K)` for a list of points (mini-batch helper).
pub(crate) fn gather_blocks(a: &Array2<f64>, rows: &[usize], k: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len() * k, a.ncols()));
    for (o, &i) in rows.iter().enumerate() {
        out.slice_mut(s![o * k..(o + 1) * k, ..]).assign(&a.slice(s![i * k..(i + 1) * k, ..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{loss_param_grad, second_directional, Dual};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    #[test]
    fn layout_and_init() {
        let shape = MlpShape::with_hidden(3, &[4, 5], 2).unwrap();
        assert_eq!(shape.num_params(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        let p = shape.init_params(1, true);
        let x = Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5]).unwrap();
        assert!(forward_batch(&shape, &p, x.view()).iter().all(|&v| v == 0.0));
        assert_eq!(shape.init_params(1, false), shape.init_params(1, false));
        assert!(MlpShape::new(vec![3]).is_err());
        assert!(MlpShape::new(vec![3, 0, 1]).is_err());
    }

    #[test]
    fn jets_match_nested_duals() {
        let shape = MlpShape::with_hidden(3, &[7, 6], 1).unwrap();
        let params = shape.init_params(9, false);
        let x = [0.4, -0.3, 0.9];
        let dirs = [[1.0, 0.0, 0.0], [0.3, -0.5, 0.8]];
        let xs = Array2::from_shape_vec((1, 3), x.to_vec()).unwrap();
        let ds = Array2::from_shape_vec((2, 3), dirs.concat()).unwrap();
        let engine = JetEngine::new(&shape, &params).unwrap();
        let fwd = engine.forward(xs.view(), ds.view());
        for (k, s) in dirs.iter().enumerate() {
            let (v, d1, d2) = second_directional(
                |xd| {
                    let p: Vec<Dual<Dual<f64>>> = params.iter().map(|&w| xd[0].constant(w)).collect();
                    forward_generic(&shape, &p, xd)[0]
                },
                &x,
                s,
            );
            assert_relative_eq!(fwd.values[(0, 0)], v, max_relative = 1e-13);
            assert_relative_eq!(fwd.first[(k, 0)], d1, max_relative = 1e-12);
            assert_relative_eq!(fwd.second[(k, 0)], d2, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn reverse_pass_matches_tape() {
        // Loss = Σ_i [α v_i + β Σ_k c_ik d1_ik + γ Σ_k e_ik d2_ik]² over two points, two directions.
        let shape = MlpShape::with_hidden(2, &[5, 4], 1).unwrap();
        let params = shape.init_params(4, false);
        let pts = [[0.2, -0.4], [-0.7, 0.5]];
        let dirs = [[1.0, 0.0], [0.0, 1.0]];
        let c = [[0.3, -1.1], [0.8, 0.2]];
        let e = [[0.5, 0.25], [-0.4, 1.5]];
        let xs = Array2::from_shape_vec((2, 2), pts.concat()).unwrap();
        let ds = Array2::from_shape_vec((4, 2), [dirs.concat(), dirs.concat()].concat()).unwrap();
        let engine = JetEngine::new(&shape, &params).unwrap();
        let fwd = engine.forward(xs.view(), ds.view());
        let mut av = Array2::zeros((2, 1));
        let mut a1 = Array2::zeros((4, 1));
        let mut a2 = Array2::zeros((4, 1));
        for i in 0..2 {
            let mut s = 0.7 * fwd.values[(i, 0)];
            for k in 0..2 {
                s += c[i][k] * fwd.first[(i * 2 + k, 0)] + e[i][k] * fwd.second[(i * 2 + k, 0)];
            }
            av[(i, 0)] = 2.0 * s * 0.7;
            for k in 0..2 {
                a1[(i * 2 + k, 0)] = 2.0 * s * c[i][k];
                a2[(i * 2 + k, 0)] = 2.0 * s * e[i][k];
            }
        }
        let fused = engine.backward(&fwd, &av, &a1, &a2);
        let (_, taped) = loss_param_grad(
            |p| {
                let mut loss = p[0].constant(0.0);
                for i in 0..2 {
                    let mut s = p[0].constant(0.0);
                    for k in 0..2 {
                        let xd: Vec<Dual<Dual<_>>> = (0..2)
                            .map(|j| {
                                let z = p[0].constant(0.0);
                                Dual::new(
                                    Dual::new(p[0].constant(pts[i][j]), p[0].constant(dirs[k][j])),
                                    Dual::new(p[0].constant(dirs[k][j]), z),
                                )
                            })
                            .collect();
                        let pd: Vec<Dual<Dual<_>>> = p.iter().map(|&w| {
                            let z = w.constant(0.0);
                            Dual::new(Dual::new(w, z), Dual::new(z, z))
                        }).collect();
                        let y = forward_generic(&shape, &pd, &xd)[0];
                        if k == 0 {
                            s = s + y.re.re.scale(0.7);
                        }
                        s = s + y.re.eps.scale(c[i][k]) + y.eps.eps.scale(e[i][k]);
                    }
                    loss = loss + s * s;
                }
                loss
            },
            &params,
        )
        .unwrap();
        for (f, t) in fused.iter().zip(&taped) {
            assert_relative_eq!(*f, *t, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}
