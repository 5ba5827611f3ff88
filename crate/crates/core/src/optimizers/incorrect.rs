//! Deliberately wrong estimators that mix the stationary measure with
//! discounted quantities. They exist to measure the bias they introduce.

use nalgebra::DVector;

use super::{curvature_with_measure, score_weighted_samples, GradientReport, Method};
use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::mdp::{value_functions, Policy, Setup, SoftmaxPolicy, TabularMdp, ValueBundle};
use crate::measures::{space_average_vec, stationary_measure, weighted_visits, BatchEstimate, Trajectory};

fn require_discounted(values: &ValueBundle) -> Result<()> {
    match values.setup {
        Setup::Discounted { .. } => Ok(()),
        Setup::Average => Err(Error::InvalidArgument("hybrid estimators take discounted values".into())),
    }
}

/// Per-path hybrid estimates: `(1/len) sum_k grad log pi(a_k|s_k) Q_gamma(s_k, a_k)`,
/// i.e. the discounted integrand aggregated with the average-setup rule (no `gamma^k`).
pub fn hybrid_gradient_samples(visits_average: &[nalgebra::DMatrix<f64>], policy: &SoftmaxPolicy, values_gamma: &ValueBundle) -> Result<Vec<DVector<f64>>> {
    require_discounted(values_gamma)?;
    Ok(score_weighted_samples(visits_average, policy, &values_gamma.q))
}

/// Mean of [`hybrid_gradient_samples`] over stored paths.
pub fn hybrid_gradient(trajectories: &[Trajectory], policy: &SoftmaxPolicy, values_gamma: &ValueBundle) -> Result<GradientReport> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let visits: Vec<_> = trajectories
        .iter()
        .map(|t| weighted_visits(t, policy.n_states(), policy.n_actions(), Setup::Average))
        .collect();
    let samples = hybrid_gradient_samples(&visits, policy, values_gamma)?;
    Ok(GradientReport {
        grad: BatchEstimate::from_samples(&samples)?.mean,
        curvature: None,
        setup: values_gamma.setup,
        method: Method::MonteCarloHybrid,
    })
}

/// The limit of [`hybrid_gradient`]: `sum_s nu_mu(s) sum_a pi(a|s) grad log pi(a|s) Q_gamma(s, a)`.
pub fn mixed_gradient_exact(mdp: &TabularMdp, policy: &SoftmaxPolicy, gamma: f64) -> Result<DVector<f64>> {
    let values = value_functions(mdp, policy, Setup::discounted(gamma)?)?;
    let nu_mu = stationary_measure(mdp, policy)?;
    Ok(space_average_vec(&nu_mu, policy, policy.n_params(), |s, a| {
        policy.grad_log_pi(s, a) * values.q[(s, a)]
    }))
}

/// `W_mu^+ grad`: the stationary-measure curvature applied to whatever
/// gradient the caller supplies (the correct discounted gradient, or a hybrid one).
pub fn hybrid_natural_gradient(grad: &DVector<f64>, mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<DVector<f64>> {
    let nu_mu = stationary_measure(mdp, policy)?;
    Ok(pinv(&curvature_with_measure(policy, &nu_mu.weights)) * grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{angle_degrees, cosine};
    use crate::mdp::DeterministicTablePolicy;
    use crate::optimizers::{natural_gradient_step, policy_curvature, policy_gradient, TrustRegionConfig};

    fn one_state_bandit() -> TabularMdp {
        TabularMdp::new(vec![vec![vec![1.0], vec![1.0], vec![1.0]]], vec![vec![1.0, 0.3, -0.2]], vec![1.0]).unwrap()
    }

    #[test]
    fn degenerate_chain_hybrid_is_proportional() {
        let mdp = one_state_bandit();
        let pi = SoftmaxPolicy::random(1, 3, 1.0, 4);
        let gamma = 0.8;
        let mixed = mixed_gradient_exact(&mdp, &pi, gamma).unwrap();
        let exact = policy_gradient(&mdp, &pi, Setup::Discounted { gamma }).unwrap().grad;
        assert!((exact - &mixed / (1.0 - gamma)).amax() < 1e-12);
    }

    #[test]
    fn degenerate_chain_hybrid_natural_matches_correct() {
        let mdp = one_state_bandit();
        let pi = SoftmaxPolicy::random(1, 3, 1.0, 4);
        let setup = Setup::Discounted { gamma: 0.8 };
        let report = policy_curvature(&mdp, &pi, setup).unwrap();
        let cfg = TrustRegionConfig {
            damping: 0.0,
            eta: 1.0,
            ..Default::default()
        };
        let correct = natural_gradient_step(&report, &cfg).unwrap();
        let hybrid = hybrid_natural_gradient(&report.grad, &mdp, &pi).unwrap();
        assert!(cosine(correct.as_slice(), hybrid.as_slice()) > 1.0 - 1e-12);
    }

    #[test]
    fn hybrid_natural_direction_differs_on_random_mdp() {
        let mdp = TabularMdp::random(5, 3, 16);
        let pi = SoftmaxPolicy::random(5, 3, 1.0, 16);
        let setup = Setup::Discounted { gamma: 0.9 };
        let report = policy_curvature(&mdp, &pi, setup).unwrap();
        let cfg = TrustRegionConfig {
            damping: 0.0,
            eta: 1.0,
            ..Default::default()
        };
        let correct = natural_gradient_step(&report, &cfg).unwrap();
        let hybrid = hybrid_natural_gradient(&report.grad, &mdp, &pi).unwrap();
        let angle = angle_degrees(correct.as_slice(), hybrid.as_slice());
        assert!(angle > 1.0, "angle {angle}");
    }

    #[test]
    fn hybrid_natural_does_not_vanish_at_average_stationary_point() {
        // Two 2-cycles with the same average reward: J_mu is flat in the
        // policy, but the discounted objective prefers the early reward.
        let mdp = TabularMdp::new(
            vec![
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
                vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            ],
            vec![vec![2.0, 0.0], vec![0.0, 0.0], vec![2.0, 2.0]],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let pi = SoftmaxPolicy::random(3, 2, 0.5, 16);
        let grad_mu = policy_gradient(&mdp, &pi, Setup::Average).unwrap().grad;
        assert!(grad_mu.amax() < 1e-12);
        let grad_gamma = policy_gradient(&mdp, &pi, Setup::Discounted { gamma: 0.9 }).unwrap().grad;
        let hybrid = hybrid_natural_gradient(&grad_gamma, &mdp, &pi).unwrap();
        assert!(hybrid.amax() > 1e-3, "{hybrid}");
    }

    #[test]
    fn hybrid_aligns_with_average_gradient_near_gamma_one() {
        let mdp = TabularMdp::random(5, 3, 15);
        let pi = SoftmaxPolicy::random(5, 3, 1.0, 15);
        let mixed = mixed_gradient_exact(&mdp, &pi, 0.9999).unwrap();
        let grad_mu = policy_gradient(&mdp, &pi, Setup::Average).unwrap().grad;
        assert!(cosine(mixed.as_slice(), grad_mu.as_slice()) > 0.99);
    }

    #[test]
    fn average_values_are_rejected() {
        let mdp = TabularMdp::random(2, 2, 0);
        let pi = SoftmaxPolicy::uniform(2, 2);
        let values = value_functions(&mdp, &pi, Setup::Average).unwrap();
        assert!(hybrid_gradient_samples(&[], &pi, &values).is_err());
        let _ = DeterministicTablePolicy::new(vec![0, 0], 2).unwrap();
    }
}
