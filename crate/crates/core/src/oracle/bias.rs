use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{value_functions, Setup, SoftmaxPolicy, TabularMdp};
use crate::measures::{truncation_horizon, visit_batch_multi, BatchEstimate};
use crate::optimizers::incorrect::{hybrid_gradient_samples, mixed_gradient_exact};
use crate::optimizers::{policy_gradient, score_weighted_samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MatchesExact,
    MatchesMixed,
    Inconclusive,
}

/// One estimator compared against the correct target and the mixed-measure
/// target, both expressed at the estimator's own normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub estimator: String,
    pub estimator_mean: Vec<f64>,
    pub exact_target: Vec<f64>,
    pub mixed_target: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub n_samples: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasStudy {
    pub gamma: f64,
    pub horizon: usize,
    pub correct: BiasReport,
    pub hybrid: BiasReport,
}

const AGREE_SE: f64 = 3.0;
const DISAGREE_SE: f64 = 5.0;
const SE_FLOOR: f64 = 1e-12;

fn within(mean: &DVector<f64>, target: &DVector<f64>, se: &DVector<f64>, k: f64) -> bool {
    mean.iter()
        .zip(target.iter())
        .zip(se.iter())
        .all(|((m, t), e)| (m - t).abs() < k * e + SE_FLOOR)
}

fn beyond_somewhere(mean: &DVector<f64>, target: &DVector<f64>, se: &DVector<f64>, k: f64) -> bool {
    mean.iter()
        .zip(target.iter())
        .zip(se.iter())
        .any(|((m, t), e)| (m - t).abs() > k * e + SE_FLOOR)
}

/// `MatchesExact` when every component is within 3 SE of the exact target;
/// otherwise `MatchesMixed` when within 3 SE of the mixed target and more
/// than 5 SE from the exact one in some component.
pub fn classify(mean: &DVector<f64>, exact: &DVector<f64>, mixed: &DVector<f64>, se: &DVector<f64>) -> Verdict {
    if within(mean, exact, se, AGREE_SE) {
        Verdict::MatchesExact
    } else if within(mean, mixed, se, AGREE_SE) && beyond_somewhere(mean, exact, se, DISAGREE_SE) {
        Verdict::MatchesMixed
    } else {
        Verdict::Inconclusive
    }
}

fn report(name: &str, estimate: BatchEstimate, exact: DVector<f64>, mixed: DVector<f64>) -> BiasReport {
    let verdict = classify(&estimate.mean, &exact, &mixed, &estimate.standard_error);
    BiasReport {
        estimator: name.to_string(),
        estimator_mean: estimate.mean.iter().copied().collect(),
        exact_target: exact.iter().copied().collect(),
        mixed_target: mixed.iter().copied().collect(),
        standard_error: estimate.standard_error.iter().copied().collect(),
        n_samples: estimate.n,
        verdict,
    }
}

/// Runs the `gamma^k`-weighted gradient estimator and the unweighted
/// (`1/len`) hybrid estimator on the same `n_paths` rollouts and compares
/// each with the exact discounted gradient and with the exact mixed-measure
/// expression `sum nu_mu pi grad log pi Q_gamma`.
///
/// The hybrid converges to a probability-normalized quantity, so its exact
/// target is `(1 - gamma) grad J_gamma`; the correct estimator's mixed
/// target is scaled by `1 / (1 - gamma)` in the same way.
pub fn estimator_bias_study(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    gamma: f64,
    n_paths: usize,
    horizon: usize,
    seed: u64,
) -> Result<BiasStudy> {
    if n_paths < 100 {
        return Err(Error::InvalidArgument(format!("bias study needs at least 100 paths, got {n_paths}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidSetup(format!("bias study needs gamma in (0, 1), got {gamma}")));
    }
    let needed = truncation_horizon(gamma, 1e-8);
    if horizon < needed {
        return Err(Error::InvalidArgument(format!("horizon {horizon} below truncation horizon {needed}")));
    }
    let discounted = Setup::Discounted { gamma };
    let values = value_functions(mdp, policy, discounted)?;
    let exact = policy_gradient(mdp, policy, discounted)?.grad;
    let mixed = mixed_gradient_exact(mdp, policy, gamma)?;

    let visits = visit_batch_multi(mdp, policy, &[discounted, Setup::Average], horizon, n_paths, seed);
    let (disc, avg): (Vec<_>, Vec<_>) = visits.into_iter().map(|mut v| (v.remove(0), v.remove(0))).unzip();

    let correct = BatchEstimate::from_samples(&score_weighted_samples(&disc, policy, &values.q))?;
    let hybrid = BatchEstimate::from_samples(&hybrid_gradient_samples(&avg, policy, &values)?)?;
    let scale = 1.0 - gamma;
    Ok(BiasStudy {
        gamma,
        horizon,
        correct: report("discounted_time_sum", correct, exact.clone(), &mixed / scale),
        hybrid: report("hybrid_gradient", hybrid, &exact * scale, mixed),
    })
}

impl BiasStudy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }

    /// One row per (estimator, component).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,component,mean,exact,mixed,standard_error,verdict\n");
        for r in [&self.correct, &self.hybrid] {
            let verdict = serde_json::to_value(r.verdict).expect("verdict serializes");
            for i in 0..r.estimator_mean.len() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.estimator,
                    i,
                    r.estimator_mean[i],
                    r.exact_target[i],
                    r.mixed_target[i],
                    r.standard_error[i],
                    verdict.as_str().unwrap_or_default()
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_rules() {
        let se = DVector::from_vec(vec![0.1, 0.1]);
        let exact = DVector::from_vec(vec![0.0, 0.0]);
        let mixed = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(classify(&DVector::from_vec(vec![0.05, 0.0]), &exact, &mixed, &se), Verdict::MatchesExact);
        assert_eq!(classify(&DVector::from_vec(vec![0.95, 0.0]), &exact, &mixed, &se), Verdict::MatchesMixed);
        assert_eq!(classify(&DVector::from_vec(vec![0.5, 0.0]), &exact, &mixed, &se), Verdict::Inconclusive);
    }

    #[test]
    fn single_state_both_match_exact() {
        let mdp = TabularMdp::new(vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.2]], vec![1.0]).unwrap();
        let pi = SoftmaxPolicy::random(1, 2, 1.0, 3);
        let study = estimator_bias_study(&mdp, &pi, 0.7, 200, 500, 3).unwrap();
        assert_eq!(study.correct.verdict, Verdict::MatchesExact);
        assert_eq!(study.hybrid.verdict, Verdict::MatchesExact);
    }

    #[test]
    fn rejects_small_batches_and_short_horizons() {
        let mdp = TabularMdp::random(2, 2, 0);
        let pi = SoftmaxPolicy::uniform(2, 2);
        assert!(estimator_bias_study(&mdp, &pi, 0.7, 10, 500, 0).is_err());
        assert!(estimator_bias_study(&mdp, &pi, 0.7, 100, 10, 0).is_err());
    }
}
