use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mdp::{objective, value_functions, Policy, Setup, SoftmaxPolicy, TabularMdp};
use crate::measures::measure_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub epsilon: f64,
    pub inner_steps: usize,
    pub learning_rate: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epsilon: 0.2,
            inner_steps: 20,
            learning_rate: 0.1,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

fn check_support(pi_old: &dyn Policy) -> Result<()> {
    for s in 0..pi_old.n_states() {
        if let Some(a) = pi_old.action_probs(s).iter().position(|p| *p <= 0.0) {
            return Err(Error::UnsupportedAction { state: s, action: a });
        }
    }
    Ok(())
}

/// Clipped surrogate `sum_s nu_old sum_a pi_old min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn ppo_clip_surrogate(mdp: &TabularMdp, pi_new: &dyn Policy, pi_old: &dyn Policy, setup: Setup, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_support(pi_old)?;
    let values = value_functions(mdp, pi_old, setup)?;
    let nu = measure_for(mdp, pi_old, setup)?;
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        let p_new = pi_new.action_probs(s);
        let p_old = pi_old.action_probs(s);
        let inner: f64 = (0..mdp.n_actions())
            .map(|a| {
                let r = p_new[a] / p_old[a];
                let adv = values.adv[(s, a)];
                p_old[a] * (r * adv).min(r.clamp(1.0 - epsilon, 1.0 + epsilon) * adv)
            })
            .sum();
        total += nu.weights[s] * inner;
    }
    Ok(total)
}

/// Gradient of [`ppo_clip_surrogate`] with respect to the new policy's logits.
pub fn ppo_surrogate_gradient(
    mdp: &TabularMdp,
    pi_new: &SoftmaxPolicy,
    pi_old: &dyn Policy,
    setup: Setup,
    epsilon: f64,
) -> Result<DVector<f64>> {
    check_epsilon(epsilon)?;
    check_support(pi_old)?;
    let values = value_functions(mdp, pi_old, setup)?;
    let nu = measure_for(mdp, pi_old, setup)?;
    let n_a = mdp.n_actions();
    let mut grad = DVector::zeros(pi_new.n_params());
    for s in 0..mdp.n_states() {
        let p_new = pi_new.action_probs(s);
        let p_old = pi_old.action_probs(s);
        for a in 0..n_a {
            let r = p_new[a] / p_old[a];
            let adv = values.adv[(s, a)];
            // The unclipped branch is the active (differentiable) one.
            let active = if adv >= 0.0 { r <= 1.0 + epsilon } else { r >= 1.0 - epsilon };
            if !active {
                continue;
            }
            // d r / d theta[s, b] = r (1{a = b} - pi_new(b|s)), times pi_old(a|s).
            let coeff = nu.weights[s] * p_new[a] * adv;
            for (b, pb) in p_new.iter().enumerate() {
                let score = if a == b { 1.0 - pb } else { -pb };
                grad[s * n_a + b] += coeff * score;
            }
        }
    }
    Ok(grad)
}

/// Outer loop: anchor `pi_old`, run `inner_steps` of full-batch gradient
/// ascent on the exact clipped surrogate, re-anchor. Returns the objective
/// before the first and after every outer iteration, and the final policy.
pub fn ppo_optimize(
    mdp: &TabularMdp,
    init: &SoftmaxPolicy,
    setup: Setup,
    config: &PpoConfig,
    outer_iters: usize,
) -> Result<(Vec<f64>, SoftmaxPolicy)> {
    let mut current = init.clone();
    let mut history = vec![objective(mdp, &current, setup)?];
    for _ in 0..outer_iters {
        let anchor = current.clone();
        let mut candidate = current.clone();
        for _ in 0..config.inner_steps {
            let g = ppo_surrogate_gradient(mdp, &candidate, &anchor, setup, config.epsilon)?;
            candidate = candidate.perturbed(&(g * config.learning_rate));
        }
        current = candidate;
        history.push(objective(mdp, &current, setup)?);
    }
    Ok((history, current))
}
