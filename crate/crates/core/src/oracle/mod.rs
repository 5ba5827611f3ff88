//! Independent checks: finite differences, exhaustive enumeration, truncated
//! series and statistical bias studies. Nothing here calls the code paths it
//! is meant to verify, except to fetch the exact targets being compared.

mod bias;

pub use bias::{estimator_bias_study, BiasReport, BiasStudy, Verdict};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{objective, DeterministicTablePolicy, Policy, Setup, TabularMdp};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
/// `h` defaults to `1e-5 * max(1, |theta|_inf)`.
pub fn finite_difference(f: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>, h: Option<f64>) -> Result<DVector<f64>> {
    let h = h.unwrap_or_else(|| 1e-5 * theta.amax().max(1.0));
    let mut grad = DVector::zeros(theta.len());
    let mut x = theta.clone();
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = f(&x);
        x[i] = theta[i] - h;
        let down = f(&x);
        x[i] = theta[i];
        for value in [up, down] {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { index: i, value });
            }
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `sum_{k < terms} gamma^k P^k r`, by repeated multiplication.
pub fn neumann_series(chain: &DMatrix<f64>, reward: &DVector<f64>, gamma: f64, terms: usize) -> DVector<f64> {
    let mut total = DVector::zeros(reward.len());
    let mut term = reward.clone();
    for _ in 0..terms {
        total += &term;
        term = chain * term * gamma;
    }
    total
}

/// `sum_{k < terms} gamma^k (P^T)^k rho0`.
pub fn truncated_occupancy(chain: &DMatrix<f64>, rho0: &DVector<f64>, gamma: f64, terms: usize) -> DVector<f64> {
    neumann_series(&chain.transpose(), rho0, gamma, terms)
}

/// `P^power` by repeated squaring.
pub fn matrix_power(chain: &DMatrix<f64>, mut power: u64) -> DMatrix<f64> {
    let n = chain.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = chain.clone();
    while power > 0 {
        if power & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        power >>= 1;
    }
    result
}

/// All deterministic policies in lexicographic order (state 0 most significant).
pub fn deterministic_policies(n_states: usize, n_actions: usize) -> Result<impl Iterator<Item = DeterministicTablePolicy>> {
    let count = (n_actions as u128).checked_pow(n_states as u32).unwrap_or(u128::MAX);
    if count > 4096 {
        return Err(Error::TooLarge(count));
    }
    Ok((0..count as usize).map(move |mut code| {
        let mut actions = vec![0; n_states];
        for s in (0..n_states).rev() {
            actions[s] = code % n_actions;
            code /= n_actions;
        }
        DeterministicTablePolicy::new(actions, n_actions).expect("in range")
    }))
}

/// Best deterministic policy by exhaustive evaluation; ties go to the
/// lexicographically smallest. In the average setup, policies whose chain is
/// not ergodic are skipped.
pub fn enumerate_deterministic_optimum(mdp: &TabularMdp, setup: Setup) -> Result<(DeterministicTablePolicy, f64)> {
    let mut best: Option<(DeterministicTablePolicy, f64)> = None;
    for policy in deterministic_policies(mdp.n_states(), mdp.n_actions())? {
        let value = match objective(mdp, &policy, setup) {
            Ok(v) => v,
            Err(Error::NonErgodicChain) => continue,
            Err(e) => return Err(e),
        };
        let improves = match &best {
            None => true,
            Some((_, b)) => value > b + 1e-12 * b.abs().max(1.0),
        };
        if improves {
            best = Some((policy, value));
        }
    }
    best.ok_or(Error::NonErgodicChain)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbelRow {
    pub gamma: f64,
    pub scaled_discounted: f64,
    pub average: f64,
    pub gap: f64,
}

pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.9, 0.99, 0.999, 0.9999];

/// `(gamma, (1 - gamma) J_gamma, J_mu, |gap|)` per grid point.
pub fn abel_limit_study(mdp: &TabularMdp, policy: &dyn Policy, gamma_grid: &[f64]) -> Result<Vec<AbelRow>> {
    let average = objective(mdp, policy, Setup::Average)?;
    gamma_grid
        .iter()
        .map(|&gamma| {
            let scaled = (1.0 - gamma) * objective(mdp, policy, Setup::discounted(gamma)?)?;
            Ok(AbelRow {
                gamma,
                scaled_discounted: scaled,
                average,
                gap: (scaled - average).abs(),
            })
        })
        .collect()
}

pub fn abel_rows_csv(rows: &[AbelRow]) -> String {
    let mut out = String::from("gamma,scaled_discounted,average,gap\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.gamma, r.scaled_discounted, r.average, r.gap));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::SoftmaxPolicy;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn linear_function_is_exact() {
        let c = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let g = finite_difference(|x| c.dot(x), &DVector::from_vec(vec![0.3, 0.1, -4.0]), None).unwrap();
        assert!((g - &c).amax() < 1e-9);
    }

    #[test]
    fn stationary_point_of_square_norm() {
        let g = finite_difference(|x| x.norm_squared(), &DVector::zeros(4), None).unwrap();
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let err = finite_difference(|x| if x[1] > 0.0 { f64::NAN } else { 0.0 }, &DVector::zeros(2), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { index: 1, .. }));
    }

    #[test]
    fn richardson_error_ratio_is_four() {
        // Quartic-free cubic-dominated function: truncation error is h^2 f'''/6.
        let mut rng = stream_rng(19, 0);
        let mut normal = || <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let a: Vec<f64> = (0..3).map(|_| normal()).collect();
        let x0 = DVector::from_vec((0..3).map(|_| normal()).collect());
        let f = |x: &DVector<f64>| x.iter().zip(&a).map(|(xi, ai)| ai * xi.powi(3) + xi * xi).sum::<f64>();
        let exact = DVector::from_vec(x0.iter().zip(&a).map(|(xi, ai)| 3.0 * ai * xi * xi + 2.0 * xi).collect());
        let e1 = (finite_difference(f, &x0, Some(1e-2)).unwrap() - &exact).amax();
        let e2 = (finite_difference(f, &x0, Some(5e-3)).unwrap() - &exact).amax();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn bandit_enumeration() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let (pi, value) = enumerate_deterministic_optimum(&mdp, Setup::Discounted { gamma: 0.9 }).unwrap();
        assert_eq!(pi.actions(), &[0]);
        assert!((value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_ties_pick_first() {
        let mut mdp = TabularMdp::random(3, 2, 4).to_file();
        mdp.reward = vec![vec![1.0; 2]; 3];
        let mdp = TabularMdp::from_file(mdp).unwrap();
        let (pi, _) = enumerate_deterministic_optimum(&mdp, Setup::Discounted { gamma: 0.9 }).unwrap();
        assert_eq!(pi.actions(), &[0, 0, 0]);
    }

    #[test]
    fn too_large_to_enumerate() {
        let mdp = TabularMdp::random(13, 2, 0);
        assert!(matches!(enumerate_deterministic_optimum(&mdp, Setup::Average), Err(Error::TooLarge(8192))));
    }

    #[test]
    fn constant_reward_has_no_abel_gap() {
        let mut mdp = TabularMdp::random(3, 2, 4).to_file();
        mdp.reward = vec![vec![0.5; 2]; 3];
        let mdp = TabularMdp::from_file(mdp).unwrap();
        let rows = abel_limit_study(&mdp, &SoftmaxPolicy::uniform(3, 2), &DEFAULT_GAMMA_GRID).unwrap();
        assert!(rows.iter().all(|r| r.gap < 1e-10));
    }

    #[test]
    fn swap_chain_abel_average() {
        // rho0-averaged discounted value of the (0, 2) swap chain is 1/(1-gamma).
        let mdp = TabularMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![0.0], vec![2.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let rows = abel_limit_study(&mdp, &SoftmaxPolicy::uniform(2, 1), &DEFAULT_GAMMA_GRID).unwrap();
        for r in rows {
            assert!((r.scaled_discounted - 1.0).abs() < 1e-9, "{r:?}");
            assert!(r.gap < 1e-9);
        }
    }
}
