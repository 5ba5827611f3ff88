use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// A tabular policy: a distribution over actions for every state.
pub trait Policy: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;

    /// `pi(. | s)`.
    fn action_probs(&self, s: usize) -> Vec<f64>;

    /// Row-stochastic `(s, a)` table.
    fn table(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            for (a, p) in self.action_probs(s).into_iter().enumerate() {
                t[(s, a)] = p;
            }
        }
        t
    }
}

/// Softmax over per-state logits `theta[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    theta: DMatrix<f64>,
}

impl SoftmaxPolicy {
    pub fn new(theta: DMatrix<f64>) -> Self {
        SoftmaxPolicy { theta }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(DMatrix::zeros(n_states, n_actions))
    }

    /// Logits drawn i.i.d. from `N(0, scale^2)`.
    pub fn random(n_states: usize, n_actions: usize, scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 7);
        Self::new(DMatrix::from_fn(n_states, n_actions, |_, _| {
            scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        }))
    }

    /// Rebuilds a policy from a flat row-major parameter vector.
    pub fn from_flat(n_states: usize, n_actions: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != n_states * n_actions {
            return Err(Error::InvalidArgument(format!(
                "expected {} logits, got {}",
                n_states * n_actions,
                flat.len()
            )));
        }
        Ok(Self::new(DMatrix::from_row_slice(n_states, n_actions, flat)))
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Row-major flattening, `index = s * n_actions + a`.
    pub fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_params(), self.theta.transpose().iter().copied())
    }

    pub fn n_params(&self) -> usize {
        self.theta.nrows() * self.theta.ncols()
    }

    /// Policy with logits `theta + delta` (`delta` flat, row-major).
    pub fn perturbed(&self, delta: &DVector<f64>) -> Self {
        let n_a = self.theta.ncols();
        let mut theta = self.theta.clone();
        for (i, d) in delta.iter().enumerate() {
            theta[(i / n_a, i % n_a)] += d;
        }
        Self::new(theta)
    }

    /// Score of `(s, a)` restricted to row `s`: `1{b = a} - pi(b | s)`.
    pub fn score_row(&self, s: usize, a: usize) -> Vec<f64> {
        let probs = self.action_probs(s);
        probs
            .iter()
            .enumerate()
            .map(|(b, p)| if b == a { 1.0 - p } else { -p })
            .collect()
    }

    /// Exact `grad_theta log pi(a | s)` over all logits (row-major). Zero outside row `s`.
    pub fn grad_log_pi(&self, s: usize, a: usize) -> DVector<f64> {
        let n_a = self.theta.ncols();
        let mut g = DVector::zeros(self.n_params());
        for (b, v) in self.score_row(s, a).into_iter().enumerate() {
            g[s * n_a + b] = v;
        }
        g
    }
}

impl Policy for SoftmaxPolicy {
    fn n_states(&self) -> usize {
        self.theta.nrows()
    }

    fn n_actions(&self) -> usize {
        self.theta.ncols()
    }

    fn action_probs(&self, s: usize) -> Vec<f64> {
        let row = self.theta.row(s);
        let max = row.max();
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

/// Deterministic map state -> action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeterministicTablePolicy {
    action_of: Vec<usize>,
    n_actions: usize,
}

impl DeterministicTablePolicy {
    pub fn new(action_of: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some((s, a)) = action_of.iter().enumerate().find(|(_, a)| **a >= n_actions) {
            return Err(Error::InvalidArgument(format!(
                "action {a} for state {s} out of range (n_actions = {n_actions})"
            )));
        }
        Ok(DeterministicTablePolicy { action_of, n_actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.action_of[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }
}

impl Policy for DeterministicTablePolicy {
    fn n_states(&self) -> usize {
        self.action_of.len()
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, s: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_actions];
        p[self.action_of[s]] = 1.0;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_two_action_score() {
        let pi = SoftmaxPolicy::uniform(3, 2);
        let g = pi.grad_log_pi(1, 0);
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn score_matches_finite_difference() {
        let pi = SoftmaxPolicy::random(4, 3, 1.0, 2);
        let h = 1e-6;
        for s in 0..4 {
            for a in 0..3 {
                let g = pi.grad_log_pi(s, a);
                for i in 0..pi.n_params() {
                    let mut e = DVector::zeros(pi.n_params());
                    e[i] = h;
                    let up = pi.perturbed(&e).action_probs(s)[a].ln();
                    let down = pi.perturbed(&(-e)).action_probs(s)[a].ln();
                    let fd = (up - down) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-7, "s={s} a={a} i={i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn deterministic_rejects_out_of_range() {
        assert!(DeterministicTablePolicy::new(vec![0, 2], 2).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_normalize_and_score_has_zero_mean(
            logits in proptest::collection::vec(-20.0f64..20.0, 12),
        ) {
            let pi = SoftmaxPolicy::from_flat(3, 4, &logits).unwrap();
            for s in 0..3 {
                let probs = pi.action_probs(s);
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut mean = [0.0; 4];
                for (a, p) in probs.iter().enumerate() {
                    for (b, v) in pi.score_row(s, a).iter().enumerate() {
                        mean[b] += p * v;
                    }
                }
                prop_assert!(mean.iter().all(|m| m.abs() < 1e-10));
            }
        }
    }
}
