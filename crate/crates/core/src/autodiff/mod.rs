//! Self-contained automatic differentiation.
//!
//! * [`Dual`] is forward mode; nesting `Dual<Dual<f64>>` yields second
//!   directional derivatives.
//! * [`Tape`]/[`Var`] is reverse mode over any [`Field`] scalar, so a tape of
//!   duals gives forward-over-reverse Hessian-vector products.
//!
//! Code written against [`Real`] runs unchanged on `f64`, duals and tape
//! variables. The batched network engine in [`crate::approx::mlp`] is a
//! layer-level specialisation of the same derivative rules.

mod dual;
mod real;
mod tape;

pub use dual::Dual;
pub use real::{Field, Real};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Value and reverse-mode gradient of a scalar loss of the parameters.
pub fn loss_param_grad<F>(loss: F, params: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|&p| tape.var(p)).collect();
    let out = loss(&vars);
    let value = out.value();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value}")));
    }
    let grad = tape.gradient(&out, &vars);
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {g}")));
    }
    Ok((value, grad))
}

/// Forward-over-reverse: returns `(f(x), ∇f(x), ∇²f(x)·s)`.
pub fn hessian_vector_product<F>(f: F, x: &[f64], s: &[f64]) -> (f64, Vec<f64>, Vec<f64>)
where
    F: for<'t> Fn(&[Var<'t, Dual<f64>>]) -> Var<'t, Dual<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = x.iter().zip(s).map(|(&xi, &si)| tape.var(Dual::new(xi, si))).collect();
    let out = f(&vars);
    let adjoints = tape.gradient(&out, &vars);
    let grad = adjoints.iter().map(|a| a.re).collect();
    let hv = adjoints.iter().map(|a| a.eps).collect();
    (out.value(), grad, hv)
}

/// `tr(Σ ∇²f(x))` from `d` Hessian-vector products along the columns of a
/// factor `L` with `Σ = LLᵀ`.
pub fn hessian_trace_hvp<F>(f: F, x: &[f64], factor: &nalgebra::DMatrix<f64>) -> f64
where
    F: for<'t> Fn(&[Var<'t, Dual<f64>>]) -> Var<'t, Dual<f64>>,
{
    (0..factor.ncols())
        .map(|k| {
            let s: Vec<f64> = factor.column(k).iter().copied().collect();
            let (_, _, hv) = hessian_vector_product(&f, x, &s);
            s.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

/// Second directional derivative `sᵀ∇²f(x)s` by nested forward mode.
pub fn second_directional<F>(f: F, x: &[f64], s: &[f64]) -> (f64, f64, f64)
where
    F: Fn(&[Dual<Dual<f64>>]) -> Dual<Dual<f64>>,
{
    let xs: Vec<_> = x
        .iter()
        .zip(s)
        .map(|(&xi, &si)| Dual::new(Dual::new(xi, si), Dual::new(si, 0.0)))
        .collect();
    let y = f(&xs);
    (y.re.re, y.re.eps, y.eps.eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rosen<T: Real>(x: &[T]) -> T {
        let one = x[0].constant(1.0);
        let a = one - x[0];
        let b = x[1] - x[0] * x[0];
        a * a + b * b.scale(100.0)
    }

    #[test]
    fn quadratic_loss_gradient_is_identity() {
        let theta = [0.5, -1.25, 3.0];
        let (val, grad) = loss_param_grad(
            |p| {
                let mut acc = p[0].constant(0.0);
                for &v in p {
                    acc = acc + v * v;
                }
                acc.scale(0.5)
            },
            &theta,
        )
        .unwrap();
        assert_relative_eq!(val, 0.5 * (0.25 + 1.5625 + 9.0));
        assert_eq!(grad, theta.to_vec());
        let (_, zero) = loss_param_grad(|p| p[0].constant(4.0), &theta).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
    }

    #[test]
    fn hvp_matches_analytic_hessian() {
        let x = [0.3, -0.7];
        let s = [1.0, 2.0];
        let (v, g, hv) = hessian_vector_product(|p| rosen(p), &x, &s);
        // ∇² = [[2 - 400(y - 3x²), -400x], [-400x, 200]].
        let h00 = 2.0 - 400.0 * (x[1] - 3.0 * x[0] * x[0]);
        let h01 = -400.0 * x[0];
        assert_relative_eq!(v, rosen(&x), max_relative = 1e-14);
        assert_relative_eq!(g[1], 200.0 * (x[1] - x[0] * x[0]), max_relative = 1e-14);
        assert_relative_eq!(hv[0], h00 * s[0] + h01 * s[1], max_relative = 1e-12);
        assert_relative_eq!(hv[1], h01 * s[0] + 200.0 * s[1], max_relative = 1e-12);
        let (_, d1, d2) = second_directional(rosen, &x, &s);
        assert_relative_eq!(d1, g[0] * s[0] + g[1] * s[1], max_relative = 1e-12);
        assert_relative_eq!(d2, s[0] * hv[0] + s[1] * hv[1], max_relative = 1e-12);
    }

    #[test]
    fn transcendental_rules() {
        let f = |p: &[Dual<f64>]| (p[0].tanh() * p[0].exp() + p[0].ln() / p[0].sqrt()).powi(2);
        let x = 0.8;
        let h = 1e-6;
        let plain = |x: f64| ((x.tanh() * x.exp()) + x.ln() / x.sqrt()).powi(2);
        let fd = (plain(x + h) - plain(x - h)) / (2.0 * h);
        let d = f(&[Dual::new(x, 1.0)]);
        assert_relative_eq!(d.re, plain(x), max_relative = 1e-14);
        assert_relative_eq!(d.eps, fd, max_relative = 1e-8);
        let (_, g) = loss_param_grad(|p| (p[0].tanh() * p[0].exp() + p[0].ln() / p[0].sqrt()).powi(2), &[x]).unwrap();
        assert_relative_eq!(g[0], d.eps, max_relative = 1e-13);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        assert!(loss_param_grad(|p| p[0].ln(), &[-1.0]).is_err());
    }
}
