//! Discrete-time LQR with linear gains `a = -K s`, in closed form.
//!
//! For gains `K` with closed loop `A_K = A - B K`:
//!
//! * `P = Q + K^T R K + gamma A_K^T P A_K` (value matrix),
//! * `S = W + gamma A_K S A_K^T` (state covariance equation),
//! * `U = R + gamma B^T P B`, `G = U K - gamma B^T P A`.
//!
//! The average setup is the same with `gamma = 1`. The initial state is drawn
//! from `N(0, W)`, so the discounted cost is `tr(P W) / (1 - gamma)` and the
//! discounted occupancy measure has second moment `S / (1 - gamma)`; that
//! moment is what enters the gradient, curvature and performance difference.

pub mod incorrect;
mod lyapunov;
mod simulate;

pub use lyapunov::solve_lyapunov;
pub use simulate::{simulate, LqrTrajectory};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, symmetrize};
use crate::mdp::Setup;

const STABILITY_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub w_cov: DMatrix<f64>,
    pub q_cost: DMatrix<f64>,
    pub r_cost: DMatrix<f64>,
}

/// JSON layout: row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqrProblemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

fn to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidArgument(format!("matrix {name} is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument(format!("matrix {name}: row {i} has inconsistent length")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl LqrProblem {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        w_cov: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a_mat.nrows();
        let m = b_mat.ncols();
        let shape_ok = a_mat.is_square()
            && b_mat.nrows() == n
            && w_cov.shape() == (n, n)
            && q_cost.shape() == (n, n)
            && r_cost.shape() == (m, m);
        if !shape_ok {
            return Err(Error::InvalidArgument(format!(
                "inconsistent LQR dimensions: A {:?}, B {:?}, W {:?}, Q {:?}, R {:?}",
                a_mat.shape(),
                b_mat.shape(),
                w_cov.shape(),
                q_cost.shape(),
                r_cost.shape()
            )));
        }
        for (name, mat, floor) in [("W", &w_cov, -1e-10), ("Q", &q_cost, -1e-10), ("R", &r_cost, 1e-12)] {
            if (mat - mat.transpose()).amax() > 1e-10 {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            let min_eig = symmetrize(mat).symmetric_eigenvalues().min();
            let ok = if floor > 0.0 { min_eig > floor } else { min_eig >= floor };
            if !ok {
                let what = if floor > 0.0 { "positive definite" } else { "positive semidefinite" };
                return Err(Error::InvalidArgument(format!("{name} is not {what} (min eigenvalue {min_eig})")));
            }
        }
        Ok(LqrProblem {
            a_mat,
            b_mat,
            w_cov,
            q_cost,
            r_cost,
        })
    }

    /// `A = alpha [0.9 0.1; 0 1.1]`, `B = [0; 1]`, `W = Q = I`, `R = 1`.
    pub fn two_state_example(alpha: f64) -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.1]) * alpha,
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .expect("fixed system is valid")
    }

    pub fn from_file(file: &LqrProblemFile) -> Result<Self> {
        Self::new(
            to_matrix("a", &file.a)?,
            to_matrix("b", &file.b)?,
            to_matrix("w", &file.w)?,
            to_matrix("q", &file.q)?,
            to_matrix("r", &file.r)?,
        )
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }

    pub fn to_file(&self) -> LqrProblemFile {
        LqrProblemFile {
            a: from_matrix(&self.a_mat),
            b: from_matrix(&self.b_mat),
            w: from_matrix(&self.w_cov),
            q: from_matrix(&self.q_cost),
            r: from_matrix(&self.r_cost),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn closed_loop(&self, gains: &LqrGains) -> DMatrix<f64> {
        &self.a_mat - &self.b_mat * &gains.k_mat
    }
}

/// Linear gain `K` (m x n).
#[derive(Debug, Clone, PartialEq)]
pub struct LqrGains {
    pub k_mat: DMatrix<f64>,
}

impl LqrGains {
    pub fn new(k_mat: DMatrix<f64>) -> Result<Self> {
        if k_mat.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("gain matrix has non-finite entries".into()));
        }
        Ok(LqrGains { k_mat })
    }

    pub fn from_row_slice(m: usize, n: usize, values: &[f64]) -> Self {
        LqrGains {
            k_mat: DMatrix::from_row_slice(m, n, values),
        }
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        LqrGains {
            k_mat: DMatrix::zeros(m, n),
        }
    }

    pub fn offset(&self, delta: &DMatrix<f64>) -> Self {
        LqrGains {
            k_mat: &self.k_mat + delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p_mat: DMatrix<f64>,
    pub s_mat: DMatrix<f64>,
    pub u_mat: DMatrix<f64>,
    pub g_mat: DMatrix<f64>,
    pub objective: f64,
    pub setup: Setup,
}

impl LqrSolution {
    /// Total mass of the averaging measure: `1 / (1 - gamma)` or 1.
    pub fn measure_mass(&self) -> f64 {
        match self.setup {
            Setup::Discounted { gamma } => 1.0 / (1.0 - gamma),
            Setup::Average => 1.0,
        }
    }

    /// Second moment of the state under the averaging measure.
    pub fn state_moment(&self) -> DMatrix<f64> {
        &self.s_mat * self.measure_mass()
    }
}

/// Which `U`/`G` expressions to use. Only the mutation check in the
/// verification suite selects [`Correction::Literal`].
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correction {
    #[default]
    Discounted,
    /// `U = R + B^T P B`, `G = U K - B^T P A` regardless of gamma.
    Literal,
}

fn discount(setup: Setup) -> Result<f64> {
    match setup {
        Setup::Discounted { gamma } if gamma > 0.0 && gamma < 1.0 => Ok(gamma),
        Setup::Discounted { gamma } => Err(Error::InvalidSetup(format!(
            "LQR discounted setup needs gamma in (0, 1), got {gamma}"
        ))),
        Setup::Average => Ok(1.0),
    }
}

/// Spectral radius of `sqrt(gamma) A_K` (average: of `A_K`).
pub fn scaled_spectral_radius(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> f64 {
    let scale = setup.gamma().unwrap_or(1.0).sqrt();
    spectral_radius(&problem.closed_loop(gains)) * scale
}

pub fn is_stable(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> bool {
    scaled_spectral_radius(problem, gains, setup) < 1.0 - STABILITY_MARGIN
}

fn check_stable(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<()> {
    let radius = scaled_spectral_radius(problem, gains, setup);
    if !(radius < 1.0 - STABILITY_MARGIN) {
        return Err(Error::UnstableGains {
            spectral_radius: radius,
            iterate: None,
        });
    }
    Ok(())
}

pub fn solve(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<LqrSolution> {
    solve_with(problem, gains, setup, Correction::Discounted)
}

#[doc(hidden)]
pub fn solve_with(problem: &LqrProblem, gains: &LqrGains, setup: Setup, correction: Correction) -> Result<LqrSolution> {
    let gamma = discount(setup)?;
    if gains.k_mat.shape() != (problem.input_dim(), problem.state_dim()) {
        return Err(Error::InvalidArgument(format!(
            "gain shape {:?} does not match (m, n) = ({}, {})",
            gains.k_mat.shape(),
            problem.input_dim(),
            problem.state_dim()
        )));
    }
    check_stable(problem, gains, setup)?;
    let k = &gains.k_mat;
    let a_k = problem.closed_loop(gains);
    let stage = &problem.q_cost + k.transpose() * &problem.r_cost * k;
    let p_mat = solve_lyapunov(&a_k.transpose(), &stage, gamma)?;
    let s_mat = solve_lyapunov(&a_k, &problem.w_cov, gamma)?;
    let bt_p = problem.b_mat.transpose() * &p_mat;
    let g_factor = match correction {
        Correction::Discounted => gamma,
        Correction::Literal => 1.0,
    };
    let u_mat = &problem.r_cost + &bt_p * &problem.b_mat * g_factor;
    let g_mat = &u_mat * k - &bt_p * &problem.a_mat * g_factor;
    let noise_cost = (&p_mat * &problem.w_cov).trace();
    let objective = match setup {
        Setup::Discounted { .. } => noise_cost + gamma / (1.0 - gamma) * noise_cost,
        Setup::Average => noise_cost,
    };
    Ok(LqrSolution {
        p_mat,
        s_mat,
        u_mat,
        g_mat,
        objective,
        setup,
    })
}

/// Cost of the gains, or `+inf` when they are unstable for the setup.
pub fn cost_or_inf(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> f64 {
    solve(problem, gains, setup).map_or(f64::INFINITY, |s| s.objective)
}

/// `dJ/dK = 2 G X` with `X` the state second moment under the averaging measure.
pub fn gradient(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<DMatrix<f64>> {
    let sol = solve(problem, gains, setup)?;
    Ok(&sol.g_mat * sol.state_moment() * 2.0)
}

/// Policy curvature: the state second moment under the averaging measure,
/// which is the exact Hessian scale of the Euclidean action metric
/// `M(K', K) = tr(delta X delta^T)`.
pub fn curvature(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<DMatrix<f64>> {
    Ok(solve(problem, gains, setup)?.state_moment())
}

/// Euclidean action metric `int nu ||K' s - K s||^2 = tr(delta X delta^T)`, `X` at the old gains.
pub fn euclidean_metric(problem: &LqrProblem, k_old: &LqrGains, k_new: &LqrGains, setup: Setup) -> Result<f64> {
    let x = curvature(problem, k_old, setup)?;
    let delta = &k_new.k_mat - &k_old.k_mat;
    Ok((&delta * x * delta.transpose()).trace())
}

/// `gradient * curvature^{-1} = 2 G`.
pub fn natural_gradient(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<DMatrix<f64>> {
    let grad = gradient(problem, gains, setup)?;
    let x = curvature(problem, gains, setup)?;
    let x_inv = x.clone().try_inverse().ok_or(Error::SingularCovariance)?;
    if symmetrize(&x).symmetric_eigenvalues().min() <= 1e-12 * x.amax() {
        return Err(Error::SingularCovariance);
    }
    Ok(grad * x_inv)
}

/// Exact improvement `K' = U^{-1} gamma B^T P A` (the `G = 0` solution at fixed `P`).
pub fn policy_improvement(problem: &LqrProblem, gains: &LqrGains, setup: Setup) -> Result<LqrGains> {
    let gamma = discount(setup)?;
    let sol = solve(problem, gains, setup)?;
    let rhs = problem.b_mat.transpose() * &sol.p_mat * &problem.a_mat * gamma;
    let k = sol
        .u_mat
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem { context: "LQR policy improvement" })?;
    LqrGains::new(k)
}

/// Policy iteration from `k0`; returns every iterate with its cost.
/// Stops when `|K_{t+1} - K_t| < 1e-12` (max-norm).
pub fn riccati_iterates(problem: &LqrProblem, setup: Setup, k0: &LqrGains) -> Result<Vec<(LqrGains, f64)>> {
    let mut current = k0.clone();
    let mut history = vec![(current.clone(), solve(problem, &current, setup)?.objective)];
    for iterate in 1..=10_000 {
        let next = policy_improvement(problem, &current, setup)?;
        let cost = solve(problem, &next, setup)
            .map_err(|e| match e {
                Error::UnstableGains { spectral_radius, .. } => Error::UnstableGains {
                    spectral_radius,
                    iterate: Some(iterate),
                },
                other => other,
            })?
            .objective;
        let change = (&next.k_mat - &current.k_mat).amax();
        history.push((next.clone(), cost));
        current = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(history)
}

pub fn riccati_fixed_point(problem: &LqrProblem, setup: Setup, k0: &LqrGains) -> Result<LqrGains> {
    Ok(riccati_iterates(problem, setup, k0)?.pop().expect("nonempty").0)
}

/// KKT step for `min 2 tr(delta^T G X)` subject to `tr(delta X delta^T) <= 2 rho`:
/// `delta = -lambda 2 G`, `lambda = sqrt(2 rho / tr(4 G X G^T))`. When `G`
/// vanishes (a stationary point) the step is zero.
pub fn deterministic_trust_region_step(problem: &LqrProblem, gains: &LqrGains, setup: Setup, rho: f64) -> Result<LqrGains> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let sol = solve(problem, gains, setup)?;
    let x = sol.state_moment();
    let two_g = &sol.g_mat * 2.0;
    if two_g.amax() <= 1e-12 * (1.0 + gains.k_mat.amax()) {
        return Ok(gains.clone());
    }
    let quad = (&two_g * &x * two_g.transpose()).trace();
    let lambda = (2.0 * rho / quad).sqrt();
    Ok(gains.offset(&(two_g * -lambda)))
}

/// Linear and quadratic parts of `J(K') - J(K)`, with the second moment taken at the NEW gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceDifference {
    pub linear_term: f64,
    pub quadratic_term: f64,
    pub total: f64,
}

pub fn performance_difference_lqr(problem: &LqrProblem, k_old: &LqrGains, k_new: &LqrGains, setup: Setup) -> Result<PerformanceDifference> {
    performance_difference_with(problem, k_old, k_new, setup, Correction::Discounted)
}

#[doc(hidden)]
pub fn performance_difference_with(
    problem: &LqrProblem,
    k_old: &LqrGains,
    k_new: &LqrGains,
    setup: Setup,
    correction: Correction,
) -> Result<PerformanceDifference> {
    let old = solve_with(problem, k_old, setup, correction)?;
    let new = solve(problem, k_new, setup)?;
    let x_new = new.state_moment();
    let delta = &k_new.k_mat - &k_old.k_mat;
    let linear_term = 2.0 * (delta.transpose() * &old.g_mat * &x_new).trace();
    let quadratic_term = (delta.transpose() * &old.u_mat * &delta * &x_new).trace();
    Ok(PerformanceDifference {
        linear_term,
        quadratic_term,
        total: linear_term + quadratic_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> LqrProblem {
        let one = || DMatrix::identity(1, 1);
        LqrProblem::new(DMatrix::zeros(1, 1), one(), one(), one(), one()).unwrap()
    }

    #[test]
    fn scalar_closed_forms() {
        let sol = solve(&scalar(), &LqrGains::zeros(1, 1), Setup::Discounted { gamma: 0.5 }).unwrap();
        assert!((sol.p_mat[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((sol.s_mat[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((sol.u_mat[(0, 0)] - 1.5).abs() < 1e-14);
        assert!(sol.g_mat[(0, 0)].abs() < 1e-14);
        assert!((sol.objective - 2.0).abs() < 1e-14);
        // Discounted occupancy of N(0, 1) states with mass 1 / (1 - 0.5).
        assert!((sol.state_moment()[(0, 0)] - 2.0).abs() < 1e-14);
        let g = gradient(&scalar(), &LqrGains::zeros(1, 1), Setup::Discounted { gamma: 0.5 }).unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn open_loop_stability_of_two_state_example() {
        let p = LqrProblem::two_state_example(1.0);
        let k0 = LqrGains::zeros(1, 2);
        assert!(!is_stable(&p, &k0, Setup::Average));
        assert!(is_stable(&p, &k0, Setup::Discounted { gamma: 0.7 }));
        assert!((scaled_spectral_radius(&p, &k0, Setup::Discounted { gamma: 0.7 }) - 1.1 * 0.7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn deadbeat_gains_are_stable() {
        // B = I makes K = A a nilpotent (zero) closed loop.
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 2.0]);
        let p = LqrProblem::new(
            a.clone(),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let k = LqrGains::new(a).unwrap();
        for setup in [Setup::Average, Setup::Discounted { gamma: 0.3 }, Setup::Discounted { gamma: 0.99 }] {
            assert!(is_stable(&p, &k, setup));
        }
    }

    #[test]
    fn unstable_gains_are_rejected() {
        let p = LqrProblem::two_state_example(1.0);
        let err = solve(&p, &LqrGains::zeros(1, 2), Setup::Average).unwrap_err();
        assert!(matches!(err, Error::UnstableGains { .. }));
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        let one = DMatrix::identity(1, 1);
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert!(LqrProblem::new(one.clone(), one.clone(), neg.clone(), one.clone(), one.clone()).is_err());
        assert!(LqrProblem::new(one.clone(), one.clone(), one.clone(), one.clone(), DMatrix::zeros(1, 1)).is_err());
        assert!(LqrProblem::new(one.clone(), DMatrix::identity(2, 2), one.clone(), one.clone(), one).is_err());
    }

    #[test]
    fn problem_json_round_trip() {
        let p = LqrProblem::two_state_example(0.5);
        let text = serde_json::to_string(&p.to_file()).unwrap();
        assert_eq!(LqrProblem::from_json_str(&text).unwrap(), p);
    }

    #[test]
    fn natural_gradient_is_two_g() {
        let p = LqrProblem::two_state_example(1.0);
        let k = LqrGains::from_row_slice(1, 2, &[0.1, 0.8]);
        for setup in [Setup::Average, Setup::Discounted { gamma: 0.7 }] {
            let sol = solve(&p, &k, setup).unwrap();
            let ng = natural_gradient(&p, &k, setup).unwrap();
            assert!((ng - &sol.g_mat * 2.0).amax() < 1e-10);
        }
    }

    #[test]
    fn singular_noise_has_no_natural_gradient() {
        let mut p = LqrProblem::two_state_example(0.5);
        p.w_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        // A_K upper triangular with zero noise on the second state: S is singular.
        let k = LqrGains::zeros(1, 2);
        assert_eq!(natural_gradient(&p, &k, Setup::Average).unwrap_err(), Error::SingularCovariance);
    }

    #[test]
    fn scalar_riccati_fixed_point_is_zero() {
        for setup in [Setup::Average, Setup::Discounted { gamma: 0.5 }] {
            let k = riccati_fixed_point(&scalar(), setup, &LqrGains::from_row_slice(1, 1, &[0.4])).unwrap();
            assert!(k.k_mat[(0, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn trust_region_step_at_optimum_is_zero() {
        let p = LqrProblem::two_state_example(1.0);
        let setup = Setup::Discounted { gamma: 0.7 };
        let k_star = riccati_fixed_point(&p, setup, &LqrGains::from_row_slice(1, 2, &[0.1, 0.8])).unwrap();
        let next = deterministic_trust_region_step(&p, &k_star, setup, 1e-4).unwrap();
        assert_eq!(next, k_star);
    }

    #[test]
    fn identical_gains_have_zero_difference() {
        let p = LqrProblem::two_state_example(1.0);
        let k = LqrGains::from_row_slice(1, 2, &[0.1, 0.8]);
        let d = performance_difference_lqr(&p, &k, &k, Setup::Average).unwrap();
        assert_eq!((d.linear_term, d.quadratic_term, d.total), (0.0, 0.0, 0.0));
    }
}
