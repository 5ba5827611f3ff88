//! LQR versions of the hybrid estimators: discounted critic quantities
//! (`G_gamma`, `grad J_gamma`) combined with the stationary state moment
//! `S_mu`. Kept apart from the correct API on purpose.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::Setup;

use super::{gradient, solve, LqrGains, LqrProblem};

/// Stationary second moment `S_mu`; needs `A_K` stable without discounting.
fn stationary_moment(problem: &LqrProblem, gains: &LqrGains) -> Result<DMatrix<f64>> {
    Ok(solve(problem, gains, Setup::Average)?.s_mat)
}

fn inverse(s: DMatrix<f64>) -> Result<DMatrix<f64>> {
    s.try_inverse().ok_or(Error::SingularCovariance)
}

/// `2 G_gamma S_mu`.
pub fn hybrid_gradient(problem: &LqrProblem, gains: &LqrGains, gamma: f64) -> Result<DMatrix<f64>> {
    let discounted = solve(problem, gains, Setup::discounted(gamma)?)?;
    Ok(&discounted.g_mat * stationary_moment(problem, gains)? * 2.0)
}

/// `grad * S_mu^{-1}`: the stationary curvature used to precondition `grad`.
pub fn hybrid_natural_gradient(grad: &DMatrix<f64>, problem: &LqrProblem, gains: &LqrGains) -> Result<DMatrix<f64>> {
    Ok(grad * inverse(stationary_moment(problem, gains)?)?)
}

/// `grad J_gamma * S_mu^{-1}`.
pub fn hybrid_npg(problem: &LqrProblem, gains: &LqrGains, gamma: f64) -> Result<DMatrix<f64>> {
    let grad = gradient(problem, gains, Setup::discounted(gamma)?)?;
    hybrid_natural_gradient(&grad, problem, gains)
}

/// `hybrid_gradient * S_mu^{-1}`, which reduces to `2 G_gamma`.
pub fn hybrid_npg_hybrid_grad(problem: &LqrProblem, gains: &LqrGains, gamma: f64) -> Result<DMatrix<f64>> {
    let grad = hybrid_gradient(problem, gains, gamma)?;
    hybrid_natural_gradient(&grad, problem, gains)
}
