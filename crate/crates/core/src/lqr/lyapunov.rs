use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve_checked, symmetrize};

/// Largest dimension handled by the vectorized direct solve.
const DIRECT_MAX_DIM: usize = 30;
const ITERATION_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 1_000_000;

/// Solves `X = C + gamma M X M^T` for symmetric `C`.
///
/// Uses `(I - gamma M (x) M) vec X = vec C` up to `n = 30` and plain
/// fixed-point iteration above. The caller is responsible for
/// `sqrt(gamma) * rho(M) < 1`.
pub fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() || c.shape() != (n, n) {
        return Err(Error::InvalidArgument(format!(
            "Lyapunov shapes {:?} and {:?} do not match",
            m.shape(),
            c.shape()
        )));
    }
    let x = if n <= DIRECT_MAX_DIM {
        direct(m, c, gamma)?
    } else {
        iterate(m, c, gamma)?
    };
    Ok(symmetrize(&x))
}

fn direct(m: &DMatrix<f64>, c: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    // Column-major vec: vec(M X M^T) = (M kron M) vec X.
    let system = DMatrix::identity(n * n, n * n) - m.kronecker(m) * gamma;
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = solve_checked(&system, &rhs, "Lyapunov equation")?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

fn iterate(m: &DMatrix<f64>, c: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let mut x = c.clone();
    for _ in 0..MAX_ITERATIONS {
        let next = c + m * &x * m.transpose() * gamma;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let change = (&next - &x).amax();
        x = next;
        if change <= ITERATION_TOL * x.amax().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::SingularSystem {
        context: "Lyapunov fixed-point iteration",
    })
}
