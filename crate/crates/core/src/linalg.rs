//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && lambda_min(m) > 0.0
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    lambda_max(&(m.transpose() * m)).max(0.0).sqrt()
}

/// `xᵀ M x`
pub fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Upper Cholesky-type factor `F` with `Fᵀ F = M`, so that `‖x‖²_M = ‖F x‖²`.
pub fn weight_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Model("weight matrix is not positive definite".into()))?;
    Ok(chol.l().transpose())
}

/// Solves the discrete Lyapunov equation `AᵀPA − P + Q = 0` through the
/// Kronecker form. Intended for the small state dimensions used here.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::Dimension {
            context: "dlyap",
            expected: n,
            got: q.nrows(),
        });
    }
    let at = a.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Synthesis("Lyapunov equation is singular".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Stabilizing solution of the discrete algebraic Riccati equation by fixed-point
/// iteration on the Riccati difference equation.
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut x = q.clone();
    for _ in 0..200_000 {
        let s = r + &bt * &x * b;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("singular R + BᵀXB".into()))?;
        let next = symmetrize(&(&at * &x * a - &at * &x * b * s_inv * &bt * &x * a + q));
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e14 {
            return Err(Error::Synthesis("Riccati iteration diverged (pair not stabilizable)".into()));
        }
        let delta = (&next - &x).amax();
        x = next;
        if delta <= 1e-13 * (1.0 + x.amax()) {
            return Ok(x);
        }
    }
    Err(Error::Synthesis("Riccati iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dlyap_scalar() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let p = dlyap(&a, &q).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0 / 0.75, epsilon = 1e-14);
    }

    #[test]
    fn dlyap_residual_is_small() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, -0.2, 0.7, 0.3, 0.0, 0.05, 0.5]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let p = dlyap(&a, &q).unwrap();
        let res = a.transpose() * &p * &a - &p + &q;
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn dare_scalar_matches_closed_form() {
        // x = a²x − a²x²b²/(r + b²x) + q with a = b = q = r = 1: x² − x − 1 = 0
        let one = DMatrix::from_element(1, 1, 1.0);
        let x = dare(&one, &one, &one, &one).unwrap();
        assert_relative_eq!(x[(0, 0)], (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn dare_rejects_unstabilizable() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::zeros(1, 1);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(dare(&a, &b, &one, &one).is_err());
    }

    #[test]
    fn weight_factor_reproduces_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = weight_factor(&m).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert_relative_eq!((&f * &x).norm_squared(), quad_form(&x, &m), epsilon = 1e-14);
    }
}
