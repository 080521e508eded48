use nalgebra::{DMatrix, DVector};

use crate::approx::QuadraticValue;
use crate::error::{Error, Result};
use crate::problem::{spectral_abscissa, LqrSpec};

const MAX_KLEINMAN_ITERS: usize = 200;

/// Solution of `ρP = Q + AᵀP + PA − PBR⁻¹BᵀP`.
///
/// The value of the unconstrained, entropy-free problem with reward
/// `−xᵀQx − uᵀRu` is `V(x) = −xᵀPx + c` with `ρc = −tr(σσᵀP)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub c: f64,
    /// Feedback gain `K = R⁻¹BᵀP`; the optimal control is `u = −Kx`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl RiccatiSolution {
    pub fn value_function(&self) -> QuadraticValue {
        QuadraticValue { p: -self.p.clone(), c: self.c }
    }
}

/// Solves `XᵀP + PX = −C` through the Kronecker form (fine for `d ≲ 30`).
pub fn solve_lyapunov(x: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = x.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let xt = x.transpose();
    let op = eye.kronecker(&xt) + xt.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, c.iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let p = DMatrix::from_column_slice(d, d, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Riccati residual `Q + ÃᵀP + PÃ − PBR⁻¹BᵀP` with `Ã = A − ρ/2·I`.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    rho: f64,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::Singular("R is singular".into()))?;
    let shifted = a - DMatrix::identity(a.nrows(), a.ncols()) * (0.5 * rho);
    Ok(q + shifted.transpose() * p + p * &shifted - p * b * r_inv * b.transpose() * p)
}

/// Stabilising initial gain for `(A, B)`: zero when `A` is already Hurwitz,
/// otherwise the Bass gain `BᵀZ⁻¹` with `(A+βI)Z + Z(A+βI)ᵀ = 2BBᵀ`.
fn initial_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, m) = b.shape();
    if spectral_abscissa(a) < 0.0 {
        return Ok(DMatrix::zeros(m, d));
    }
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::identity(d, d) * beta;
    let z = solve_lyapunov(&(-shifted.transpose()), &(b * b.transpose() * 2.0))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Singular("(A, B) is not controllable; no stabilising start".into()))?;
    Ok(b.transpose() * z_inv)
}

/// Kleinman iteration on gains for the discounted Riccati equation.
pub fn solve_riccati_matrices(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    sigma_scale: f64,
    rho: f64,
) -> Result<RiccatiSolution> {
    let d = a.nrows();
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("discount must be non-negative, got {rho}")));
    }
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::Singular("R is singular".into()))?;
    let shifted = a - DMatrix::identity(d, d) * (0.5 * rho);
    let mut k = initial_gain(&shifted, b)?;
    let mut p = DMatrix::zeros(d, d);
    let mut iterations = 0;
    for it in 1..=MAX_KLEINMAN_ITERS {
        iterations = it;
        let closed = &shifted - b * &k;
        let cost = q + k.transpose() * r * &k;
        let next = solve_lyapunov(&closed, &cost)?;
        let change = (&next - &p).norm();
        p = next;
        k = &r_inv * b.transpose() * &p;
        if change <= 1e-14 * p.norm().max(1.0) {
            break;
        }
    }
    let residual = riccati_residual(a, b, q, r, rho, &p)?.norm();
    if !(residual < 1e-10 * p.norm().max(1.0)) {
        return Err(Error::NoConvergence(format!(
            "Riccati residual {residual:e} after {iterations} Kleinman iterations"
        )));
    }
    let noise = sigma_scale * sigma_scale * p.trace();
    let c = if noise == 0.0 {
        0.0
    } else if rho > 0.0 {
        -noise / rho
    } else {
        return Err(Error::InvalidArgument("the noise offset needs a positive discount".into()));
    };
    Ok(RiccatiSolution { p, c, k, iterations, residual })
}

/// Riccati baseline for an LQR specification (constraints and entropy ignored).
pub fn solve_riccati(spec: &LqrSpec, rho: f64) -> Result<RiccatiSolution> {
    solve_riccati_matrices(&spec.a, &spec.b, &spec.q, &spec.r_cost, spec.sigma_scale, rho)
}

/// Constant by which the entropy-regularised, unconstrained LQR value exceeds
/// the Riccati value: `(λ/2ρ) ln det(πλR⁻¹)`.
pub fn entropy_offset(r: &DMatrix<f64>, lambda: f64, rho: f64) -> f64 {
    let m = r.nrows();
    let det = r.determinant();
    0.5 * lambda / rho * ((std::f64::consts::PI * lambda).ln() * m as f64 - det.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_examples() {
        let sol = solve_riccati_matrices(&s(0.0), &s(1.0), &s(1.0), &s(1.0), 0.0, 0.0).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], 1.0, max_relative = 1e-12);
        assert_eq!(sol.c, 0.0);
        let sol = solve_riccati_matrices(&s(0.0), &s(1.0), &s(1.0), &s(1.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], (5f64.sqrt() - 1.0) / 2.0, max_relative = 1e-12);
        let sol = solve_riccati_matrices(&s(0.0), &s(1.0), &s(1.0), &s(1.0), 0.5, 1.0).unwrap();
        assert_relative_eq!(sol.c, -0.25 * sol.p[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn random_stable_specs() {
        for seed in 0..5 {
            let spec = LqrSpec::random_stable(5, 2, seed, 1.0, 0.1, 10.0).unwrap();
            let sol = solve_riccati(&spec, 1.0).unwrap();
            assert!(sol.residual < 1e-10);
            let closed = &spec.a - &spec.b * &sol.k;
            assert!(spectral_abscissa(&closed) < 0.0);
            assert!(sol.p.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn lyapunov_identity() {
        let x = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = solve_lyapunov(&x, &c).unwrap();
        let res = x.transpose() * &p + &p * &x + &c;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn entropy_offset_vanishes_at_matched_temperature() {
        let r = s(2.0);
        assert!(entropy_offset(&r, 2.0 / std::f64::consts::PI, 1.0).abs() < 1e-15);
    }
}
