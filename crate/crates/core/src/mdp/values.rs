use nalgebra::{DMatrix, DVector};

use super::{Policy, Setup, TabularMdp};
use crate::error::{Error, Result};
use crate::linalg::solve_checked;
use crate::measures::stationary_from_chain;

/// State values, action values, advantages and the scalar objective of one
/// policy under one setup.
///
/// In the average setup `v` is the bias (relative value) normalized so that
/// its stationary expectation is zero, and `objective` is the gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    pub adv: DMatrix<f64>,
    pub objective: f64,
    pub setup: Setup,
}

/// Lazy-chain positivity test: `((P + I) / 2)^(4n)` strictly positive.
pub fn is_ergodic(chain: &DMatrix<f64>) -> bool {
    let n = chain.nrows();
    let lazy = (chain + DMatrix::identity(n, n)) * 0.5;
    let mut power = DMatrix::identity(n, n);
    let mut base = lazy;
    let mut e = 4 * n;
    while e > 0 {
        if e & 1 == 1 {
            power = &power * &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    power.iter().all(|x| *x > 1e-12)
}

pub fn value_functions(mdp: &TabularMdp, policy: &dyn Policy, setup: Setup) -> Result<ValueBundle> {
    check_shapes(mdp, policy)?;
    let pi = policy.table();
    let (p, r) = mdp.induced(&pi);
    let n = mdp.n_states();
    let (v, objective, shift) = match setup {
        Setup::Discounted { gamma } => {
            if gamma == 1.0 && mdp.terminal().is_none() {
                return Err(Error::InvalidSetup(
                    "gamma = 1 requires an absorbing terminal state (use terminalize)".into(),
                ));
            }
            let mut m = DMatrix::identity(n, n) - &p * gamma;
            let mut rhs = r.clone();
            if let Some(t) = mdp.terminal() {
                m.row_mut(t).fill(0.0);
                m[(t, t)] = 1.0;
                rhs[t] = 0.0;
            }
            let v = solve_checked(&m, &rhs, "discounted policy evaluation")?;
            let objective = mdp.rho0().dot(&v);
            (v, objective, 0.0)
        }
        Setup::Average => {
            if !is_ergodic(&p) {
                return Err(Error::NonErgodicChain);
            }
            let nu = stationary_from_chain(&p)?;
            let mut m = DMatrix::zeros(n + 1, n + 1);
            m.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) - &p));
            m.view_mut((0, n), (n, 1)).fill(1.0);
            m.view_mut((n, 0), (1, n)).copy_from(&nu.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&r);
            let x = solve_checked(&m, &rhs, "average-reward policy evaluation")?;
            let gain = x[n];
            (x.rows(0, n).into_owned(), gain, gain)
        }
    };
    let beta = setup.continuation();
    let mut q = DMatrix::zeros(n, mdp.n_actions());
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp.row(s, a).iter().zip(v.iter()).map(|(pr, vv)| pr * vv).sum();
            q[(s, a)] = mdp.reward()[(s, a)] - shift + beta * next;
        }
    }
    let adv = DMatrix::from_fn(n, mdp.n_actions(), |s, a| q[(s, a)] - v[s]);
    Ok(ValueBundle {
        v,
        q,
        adv,
        objective,
        setup,
    })
}

pub fn objective(mdp: &TabularMdp, policy: &dyn Policy, setup: Setup) -> Result<f64> {
    Ok(value_functions(mdp, policy, setup)?.objective)
}

/// Max-norm residual of the Bellman equation the bundle was solved from.
pub fn bellman_residual(mdp: &TabularMdp, policy: &dyn Policy, bundle: &ValueBundle) -> f64 {
    let (p, r) = mdp.induced(&policy.table());
    let lhs = match bundle.setup {
        Setup::Discounted { gamma } => &bundle.v - (&r + &p * &bundle.v * gamma),
        Setup::Average => bundle.v.add_scalar(bundle.objective) - (&r + &p * &bundle.v),
    };
    lhs.amax()
}

fn check_shapes(mdp: &TabularMdp, policy: &dyn Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidArgument(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{DeterministicTablePolicy, SoftmaxPolicy};

    fn one_state(reward: f64) -> TabularMdp {
        TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![reward]], vec![1.0]).unwrap()
    }

    #[test]
    fn single_state_discounted_is_geometric() {
        let mdp = one_state(1.0);
        let b = value_functions(&mdp, &SoftmaxPolicy::uniform(1, 1), Setup::Discounted { gamma: 0.9 }).unwrap();
        assert!((b.objective - 10.0).abs() < 1e-12);
        assert!((b.v[0] - 10.0).abs() < 1e-12);
        assert!(b.adv[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn single_state_average_is_reward() {
        let mdp = one_state(1.0);
        let b = value_functions(&mdp, &SoftmaxPolicy::uniform(1, 1), Setup::Average).unwrap();
        assert!((b.objective - 1.0).abs() < 1e-12);
        assert!(b.v[0].abs() < 1e-12);
    }

    #[test]
    fn two_state_cycle_gain() {
        let mdp = TabularMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![0.0], vec![2.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let pi = DeterministicTablePolicy::new(vec![0, 0], 1).unwrap();
        let b = value_functions(&mdp, &pi, Setup::Average).unwrap();
        assert!((b.objective - 1.0).abs() < 1e-12);
        assert!(bellman_residual(&mdp, &pi, &b) < 1e-12);
    }

    #[test]
    fn point_mass_objective_is_state_value() {
        let mdp = TabularMdp::random(4, 2, 5);
        let pi = SoftmaxPolicy::random(4, 2, 1.0, 5);
        let setup = Setup::Discounted { gamma: 0.8 };
        let v = value_functions(&mdp, &pi, setup).unwrap().v;
        let start = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let pointed = mdp.with_rho0(start).unwrap();
        assert!((objective(&pointed, &pi, setup).unwrap() - v[2]).abs() < 1e-12);
    }

    #[test]
    fn gamma_one_without_terminal_is_rejected() {
        let mdp = TabularMdp::random(3, 2, 1);
        let err = value_functions(&mdp, &SoftmaxPolicy::uniform(3, 2), Setup::Discounted { gamma: 1.0 }).unwrap_err();
        assert!(matches!(err, Error::InvalidSetup(_)));
    }

    #[test]
    fn reducible_chain_is_not_ergodic() {
        // Two absorbing states.
        let mdp = TabularMdp::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![1.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let err = value_functions(&mdp, &SoftmaxPolicy::uniform(2, 1), Setup::Average).unwrap_err();
        assert_eq!(err, Error::NonErgodicChain);
    }

    #[test]
    fn policy_shape_mismatch() {
        let mdp = TabularMdp::random(3, 2, 1);
        assert!(value_functions(&mdp, &SoftmaxPolicy::uniform(2, 2), Setup::Average).is_err());
    }

    #[test]
    fn three_state_chain_total_reward() {
        // s0 -> s1 -> s2 (terminal), reward 1 per step.
        let mdp = TabularMdp::new(
            vec![
                vec![vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0]],
                vec![vec![0.0, 0.0, 1.0]],
            ],
            vec![vec![1.0], vec![1.0], vec![1.0]],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap()
        .terminalize(2)
        .unwrap();
        let pi = SoftmaxPolicy::uniform(3, 1);
        let b = value_functions(&mdp, &pi, Setup::Discounted { gamma: 1.0 }).unwrap();
        assert!((b.objective - 2.0).abs() < 1e-12);
        assert!(bellman_residual(&mdp, &pi, &b) < 1e-12);
    }
}
