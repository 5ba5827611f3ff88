//! Policy-improvement rules for tabular policies.
//!
//! Every gradient and curvature here pairs a measure with values of the same
//! setup: `nu_gamma` with `Q_gamma`, `nu_mu` with `Q_mu`. The deliberately
//! mismatched estimators live in [`incorrect`] and are not used by anything
//! in this module.

pub mod incorrect;
mod ppo;

pub use ppo::{ppo_clip_surrogate, ppo_optimize, ppo_surrogate_gradient, PpoConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::mdp::{
    objective, value_functions, DeterministicTablePolicy, Policy, Setup, SoftmaxPolicy, TabularMdp, ValueBundle,
};
use crate::measures::{measure_for, space_average, weighted_visits, BatchEstimate, Trajectory};

/// How a [`GradientReport`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarloCorrect,
    MonteCarloHybrid,
    HybridNatural,
    HybridNaturalHybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// Flat, row-major over `(s, a)`.
    pub grad: DVector<f64>,
    pub curvature: Option<DMatrix<f64>>,
    pub setup: Setup,
    pub method: Method,
}

impl Serialize for GradientReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            method: Method,
            setup: &'a Setup,
            grad: Vec<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            curvature: Option<Vec<f64>>,
        }
        Wire {
            method: self.method,
            setup: &self.setup,
            grad: self.grad.iter().copied().collect(),
            curvature: self
                .curvature
                .as_ref()
                .map(|w| w.transpose().iter().copied().collect()),
        }
        .serialize(serializer)
    }
}

impl GradientReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionConfig {
    /// Radius in squared-metric units.
    pub rho: f64,
    pub damping: f64,
    /// Fixed step size for the natural gradient.
    pub eta: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            rho: 1e-2,
            damping: 1e-8,
            eta: 0.1,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.damping >= 0.0 && self.eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "trust region needs rho > 0, damping >= 0, eta > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `sum_s nu'(s) sum_a pi'(a|s) A^pi(s, a)`, which equals `J(pi') - J(pi)`.
pub fn performance_difference(mdp: &TabularMdp, pi_new: &dyn Policy, pi_old: &dyn Policy, setup: Setup) -> Result<f64> {
    let old = value_functions(mdp, pi_old, setup)?;
    let nu_new = measure_for(mdp, pi_new, setup)?;
    Ok(space_average(&nu_new, pi_new, |s, a| old.adv[(s, a)]))
}

/// First-order surrogate: the same sum under the old policy's measure.
pub fn approx_performance_difference(mdp: &TabularMdp, pi_new: &dyn Policy, pi_old: &dyn Policy, setup: Setup) -> Result<f64> {
    let old = value_functions(mdp, pi_old, setup)?;
    let nu_old = measure_for(mdp, pi_old, setup)?;
    let table_new = pi_new.table();
    Ok(space_average(&nu_old, pi_old, |s, a| {
        let ratio = table_new[(s, a)] / pi_old.action_probs(s)[a];
        ratio * old.adv[(s, a)]
    }))
}

/// Greedy improvement `argmax_a A(s, a)`, ties to the lowest action index.
pub fn policy_iteration_step(mdp: &TabularMdp, policy: &dyn Policy, setup: Setup) -> Result<DeterministicTablePolicy> {
    let values = value_functions(mdp, policy, setup)?;
    let scale = values.q.amax().max(1.0);
    let actions = (0..mdp.n_states())
        .map(|s| {
            let row = values.adv.row(s);
            let best = row.max();
            row.iter()
                .position(|x| *x >= best - 1e-12 * scale)
                .expect("nonempty row")
        })
        .collect();
    DeterministicTablePolicy::new(actions, mdp.n_actions())
}

/// Iterates [`policy_iteration_step`] to a fixed point. Returns every
/// iterate with its objective, starting with the greedy policy of `init`.
pub fn policy_iteration(
    mdp: &TabularMdp,
    init: &dyn Policy,
    setup: Setup,
    max_iters: usize,
) -> Result<Vec<(DeterministicTablePolicy, f64)>> {
    let mut current = policy_iteration_step(mdp, init, setup)?;
    let mut path = vec![(current.clone(), objective(mdp, &current, setup)?)];
    for _ in 0..max_iters {
        let next = policy_iteration_step(mdp, &current, setup)?;
        if next == current {
            break;
        }
        path.push((next.clone(), objective(mdp, &next, setup)?));
        current = next;
    }
    Ok(path)
}

/// `sum_s nu(s) sum_a pi(a|s) grad log pi(a|s) Q(s, a)` with `nu`, `Q` from the same setup.
pub fn policy_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy, setup: Setup) -> Result<GradientReport> {
    let values = value_functions(mdp, policy, setup)?;
    let nu = measure_for(mdp, policy, setup)?;
    let n_a = mdp.n_actions();
    let mut grad = DVector::zeros(policy.n_params());
    for s in 0..mdp.n_states() {
        let w = nu.weights[s];
        for (a, p) in policy.action_probs(s).into_iter().enumerate() {
            let coeff = w * p * values.q[(s, a)];
            for (b, score) in policy.score_row(s, a).into_iter().enumerate() {
                grad[s * n_a + b] += coeff * score;
            }
        }
    }
    Ok(GradientReport {
        grad,
        curvature: None,
        setup,
        method: Method::Exact,
    })
}

/// Per-path `sum_{s,a} visits(s, a) grad log pi(a|s) q(s, a)`.
pub fn score_weighted_samples(visits: &[DMatrix<f64>], policy: &SoftmaxPolicy, q: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let n_a = policy.n_actions();
    visits
        .iter()
        .map(|c| {
            let mut g = DVector::zeros(policy.n_params());
            for s in 0..c.nrows() {
                for a in 0..n_a {
                    let weight = c[(s, a)];
                    if weight == 0.0 {
                        continue;
                    }
                    for (b, score) in policy.score_row(s, a).into_iter().enumerate() {
                        g[s * n_a + b] += weight * score * q[(s, a)];
                    }
                }
            }
            g
        })
        .collect()
}

/// Time-based policy gradient aggregated with the setup of `values`
/// (`gamma^k` weights when discounted).
pub fn monte_carlo_policy_gradient(trajectories: &[Trajectory], policy: &SoftmaxPolicy, values: &ValueBundle) -> Result<GradientReport> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let visits: Vec<_> = trajectories
        .iter()
        .map(|t| weighted_visits(t, policy.n_states(), policy.n_actions(), values.setup))
        .collect();
    let samples = score_weighted_samples(&visits, policy, &values.q);
    Ok(GradientReport {
        grad: BatchEstimate::from_samples(&samples)?.mean,
        curvature: None,
        setup: values.setup,
        method: Method::MonteCarloCorrect,
    })
}

/// Score outer-product curvature `sum_s nu(s) sum_a pi(a|s) g g^T`, block diagonal over states.
pub fn curvature_with_measure(policy: &SoftmaxPolicy, weights: &DVector<f64>) -> DMatrix<f64> {
    let n_a = policy.n_actions();
    let mut w = DMatrix::zeros(policy.n_params(), policy.n_params());
    for (s, nu) in weights.iter().enumerate() {
        for (a, p) in policy.action_probs(s).into_iter().enumerate() {
            let score = policy.score_row(s, a);
            for i in 0..n_a {
                for j in 0..n_a {
                    w[(s * n_a + i, s * n_a + j)] += nu * p * score[i] * score[j];
                }
            }
        }
    }
    w
}

/// Policy gradient with the curvature `W` filled in.
pub fn policy_curvature(mdp: &TabularMdp, policy: &SoftmaxPolicy, setup: Setup) -> Result<GradientReport> {
    let mut report = policy_gradient(mdp, policy, setup)?;
    let nu = measure_for(mdp, policy, setup)?;
    report.curvature = Some(curvature_with_measure(policy, &nu.weights));
    Ok(report)
}

/// `sum_s nu_old(s) KL(pi_new(.|s) || pi_old(.|s))`.
pub fn kl_metric(mdp: &TabularMdp, pi_new: &dyn Policy, pi_old: &dyn Policy, setup: Setup) -> Result<f64> {
    let nu = measure_for(mdp, pi_old, setup)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        let p_new = pi_new.action_probs(s);
        let p_old = pi_old.action_probs(s);
        let mut kl = 0.0;
        for (a, (pn, po)) in p_new.iter().zip(&p_old).enumerate() {
            if *pn == 0.0 {
                continue;
            }
            if *po == 0.0 {
                return Err(Error::UnsupportedAction { state: s, action: a });
            }
            kl += pn * (pn / po).ln();
        }
        total += nu.weights[s] * kl;
    }
    Ok(total)
}

fn damped_pinv(report: &GradientReport, damping: f64) -> Result<DMatrix<f64>> {
    let w = report
        .curvature
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("report carries no curvature".into()))?;
    let n = w.nrows();
    Ok(pinv(&(w + DMatrix::identity(n, n) * damping)))
}

/// `eta (W + damping I)^+ g`.
pub fn natural_gradient_step(report: &GradientReport, config: &TrustRegionConfig) -> Result<DVector<f64>> {
    config.validate()?;
    Ok(damped_pinv(report, config.damping)? * &report.grad * config.eta)
}

/// Closed-form maximizer of `delta^T g` over `delta^T W delta <= 2 rho`.
pub fn trust_region_step(report: &GradientReport, config: &TrustRegionConfig) -> Result<DVector<f64>> {
    config.validate()?;
    let direction = damped_pinv(report, config.damping)? * &report.grad;
    let quad = report.grad.dot(&direction);
    if quad <= 1e-14 {
        return Err(Error::DegenerateGradient(quad));
    }
    let step = direction * (2.0 * config.rho / quad).sqrt();
    let w = report.curvature.as_ref().expect("checked by damped_pinv");
    debug_assert!(step.dot(&(w * &step)) <= 2.0 * config.rho * (1.0 + 1e-6));
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(grad: Vec<f64>, w: DMatrix<f64>) -> GradientReport {
        GradientReport {
            grad: DVector::from_vec(grad),
            curvature: Some(w),
            setup: Setup::Average,
            method: Method::Exact,
        }
    }

    #[test]
    fn identical_policies_have_zero_difference() {
        let mdp = TabularMdp::random(4, 3, 8);
        let pi = SoftmaxPolicy::random(4, 3, 1.0, 8);
        for setup in [Setup::Discounted { gamma: 0.9 }, Setup::Average] {
            assert!(performance_difference(&mdp, &pi, &pi, setup).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_fixed_point() {
        let mdp = TabularMdp::random(4, 3, 2);
        let setup = Setup::Discounted { gamma: 0.9 };
        let path = policy_iteration(&mdp, &SoftmaxPolicy::uniform(4, 3), setup, 100).unwrap();
        let last = &path.last().unwrap().0;
        assert_eq!(&policy_iteration_step(&mdp, last, setup).unwrap(), last);
    }

    #[test]
    fn dominant_action_is_found_in_one_step() {
        let t = vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]; 2];
        let mdp = TabularMdp::new(t, vec![vec![0.0, 1.0], vec![0.2, 0.7]], vec![0.5, 0.5]).unwrap();
        let start = DeterministicTablePolicy::new(vec![0, 0], 2).unwrap();
        let next = policy_iteration_step(&mdp, &start, Setup::Discounted { gamma: 0.9 }).unwrap();
        assert_eq!(next.actions(), &[1, 1]);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let mut file = TabularMdp::random(3, 2, 1).to_file();
        file.reward = vec![vec![0.7; 2]; 3];
        let mdp = TabularMdp::from_file(file).unwrap();
        let pi = SoftmaxPolicy::random(3, 2, 1.0, 1);
        for setup in [Setup::Discounted { gamma: 0.9 }, Setup::Average] {
            assert!(policy_gradient(&mdp, &pi, setup).unwrap().grad.amax() < 1e-10);
        }
    }

    #[test]
    fn bandit_gradient_closed_form() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let pi = SoftmaxPolicy::uniform(1, 2);
        let g = policy_gradient(&mdp, &pi, Setup::Discounted { gamma: 0.9 }).unwrap().grad;
        // d/dtheta_0 of 10 * sigmoid(theta_0 - theta_1) at 0 is 10 * 0.25.
        assert!((g[0] - 2.5).abs() < 1e-12 && (g[1] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn bandit_curvature_is_hand_value() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let w = policy_curvature(&mdp, &SoftmaxPolicy::uniform(1, 2), Setup::Average)
            .unwrap()
            .curvature
            .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((w - expected).amax() < 1e-15);
    }

    #[test]
    fn curvature_annihilates_gauge_directions() {
        let mdp = TabularMdp::random(3, 4, 11);
        let pi = SoftmaxPolicy::random(3, 4, 1.0, 11);
        let w = policy_curvature(&mdp, &pi, Setup::Discounted { gamma: 0.9 }).unwrap().curvature.unwrap();
        for s in 0..3 {
            let mut ones = DVector::zeros(12);
            ones.rows_mut(s * 4, 4).fill(1.0);
            assert!((&w * ones).amax() < 1e-12);
        }
        assert!((&w - w.transpose()).amax() < 1e-14);
        assert!(w.symmetric_eigenvalues().min() > -1e-8);
    }

    #[test]
    fn kl_of_identical_is_zero_and_support_is_checked() {
        let mdp = TabularMdp::random(2, 2, 3);
        let pi = SoftmaxPolicy::random(2, 2, 1.0, 3);
        assert!(kl_metric(&mdp, &pi, &pi, Setup::Average).unwrap().abs() < 1e-15);
        let det = DeterministicTablePolicy::new(vec![0, 0], 2).unwrap();
        let err = kl_metric(&mdp, &pi, &det, Setup::Average).unwrap_err();
        assert_eq!(err, Error::UnsupportedAction { state: 0, action: 1 });
    }

    #[test]
    fn kl_against_uniform_is_log2_minus_entropy() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let sharp = SoftmaxPolicy::new(DMatrix::from_row_slice(1, 2, &[6.0, 0.0]));
        let p = sharp.action_probs(0);
        let entropy: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        let m = kl_metric(&mdp, &sharp, &SoftmaxPolicy::uniform(1, 2), Setup::Average).unwrap();
        assert!((m - (2f64.ln() - entropy)).abs() < 1e-14);
    }

    #[test]
    fn identity_curvature_reduces_to_gradient() {
        let r = report(vec![1.0, -2.0, 0.5], DMatrix::identity(3, 3));
        let cfg = TrustRegionConfig {
            damping: 0.0,
            eta: 0.3,
            ..Default::default()
        };
        let step = natural_gradient_step(&r, &cfg).unwrap();
        assert!((step - &r.grad * 0.3).amax() < 1e-14);
    }

    #[test]
    fn null_space_gradient_maps_to_zero() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = report(vec![0.0, 3.0], w);
        let cfg = TrustRegionConfig {
            damping: 0.0,
            ..Default::default()
        };
        assert!(natural_gradient_step(&r, &cfg).unwrap().amax() < 1e-15);
    }

    #[test]
    fn unit_trust_region_step() {
        let r = report(vec![0.0, 1.0], DMatrix::identity(2, 2));
        let cfg = TrustRegionConfig {
            rho: 0.5,
            damping: 0.0,
            eta: 1.0,
        };
        let step = trust_region_step(&r, &cfg).unwrap();
        assert!((step.norm() - 1.0).abs() < 1e-14);
        let scaled = report(vec![0.0, 42.0], DMatrix::identity(2, 2));
        assert!((trust_region_step(&scaled, &cfg).unwrap() - step).amax() < 1e-14);
    }

    #[test]
    fn degenerate_gradient_is_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let cfg = TrustRegionConfig {
            damping: 0.0,
            ..Default::default()
        };
        assert!(matches!(trust_region_step(&report(vec![0.0, 1.0], w), &cfg), Err(Error::DegenerateGradient(_))));
    }

    #[test]
    fn config_validation() {
        let bad = TrustRegionConfig {
            rho: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_json_layout() {
        let r = report(vec![1.0, 2.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["method"], "exact");
        assert_eq!(v["setup"]["kind"], "average");
        assert_eq!(v["curvature"].as_array().unwrap().len(), 4);
    }
}
