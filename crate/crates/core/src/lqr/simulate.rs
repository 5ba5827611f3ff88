use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::rng::stream_rng;

use super::{LqrGains, LqrProblem};

/// Closed-loop sample path. Column `k` of `states` is `x_k`; there are
/// `horizon + 1` states and `horizon` actions and costs.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrTrajectory {
    pub states: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub costs: Vec<f64>,
    pub seed: u64,
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `x_{k+1} = A x_k + B a_k + w_k`, `a_k = -K x_k`, `w_k ~ N(0, W)`, `x_0 ~ N(0, W)`.
pub fn simulate(problem: &LqrProblem, gains: &LqrGains, horizon: usize, seed: u64) -> Result<LqrTrajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = problem.state_dim();
    let m = problem.input_dim();
    if gains.k_mat.shape() != (m, n) {
        return Err(Error::InvalidArgument(format!("gain shape {:?} does not match ({m}, {n})", gains.k_mat.shape())));
    }
    let noise = psd_sqrt(&problem.w_cov);
    let a_k = problem.closed_loop(gains);
    let mut rng = stream_rng(seed, 0);
    let mut draw = || noise.clone() * DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));

    let mut states = DMatrix::zeros(n, horizon + 1);
    let mut actions = DMatrix::zeros(m, horizon);
    let mut costs = Vec::with_capacity(horizon);
    let mut x: DVector<f64> = draw();
    states.set_column(0, &x);
    for k in 0..horizon {
        let a = -(&gains.k_mat * &x);
        costs.push(x.dot(&(&problem.q_cost * &x)) + a.dot(&(&problem.r_cost * &a)));
        actions.set_column(k, &a);
        x = &a_k * x + draw();
        states.set_column(k + 1, &x);
    }
    Ok(LqrTrajectory {
        states,
        actions,
        costs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_stays_at_origin() {
        let mut p = LqrProblem::two_state_example(1.0);
        p.w_cov = DMatrix::zeros(2, 2);
        let t = simulate(&p, &LqrGains::from_row_slice(1, 2, &[0.1, 0.8]), 50, 1).unwrap();
        assert!(t.states.amax() == 0.0 && t.actions.amax() == 0.0);
        assert!(t.costs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let p = LqrProblem::two_state_example(1.0);
        let k = LqrGains::from_row_slice(1, 2, &[0.1, 0.8]);
        assert_eq!(simulate(&p, &k, 100, 7).unwrap(), simulate(&p, &k, 100, 7).unwrap());
        assert_ne!(simulate(&p, &k, 100, 7).unwrap(), simulate(&p, &k, 100, 8).unwrap());
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let p = LqrProblem::two_state_example(1.0);
        assert!(simulate(&p, &LqrGains::zeros(1, 2), 0, 0).is_err());
    }
}
