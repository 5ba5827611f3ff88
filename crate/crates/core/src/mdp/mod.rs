//! Finite MDPs, tabular policies and exact value computation.

mod policy;
mod values;

pub use policy::{DeterministicTablePolicy, Policy, SoftmaxPolicy};
pub use values::{bellman_residual, is_ergodic, objective, value_functions, ValueBundle};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

const PROB_TOL: f64 = 1e-12;

/// Objective setup. The total-reward setup is `Discounted { gamma: 1.0 }`
/// on an MDP with an absorbing terminal state (see [`TabularMdp::terminalize`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setup {
    Discounted { gamma: f64 },
    Average,
}

impl Setup {
    pub fn discounted(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidSetup(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        Ok(Setup::Discounted { gamma })
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Setup::Discounted { gamma } => Some(gamma),
            Setup::Average => None,
        }
    }

    /// Discount applied to the next-state value: `gamma`, or 1 for the average setup.
    pub fn continuation(&self) -> f64 {
        self.gamma().unwrap_or(1.0)
    }

    pub fn label(&self) -> String {
        match *self {
            Setup::Discounted { gamma } => format!("discounted(gamma={gamma})"),
            Setup::Average => "average".to_string(),
        }
    }
}

/// Finite state/action MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `(s, a, s')`, row-major.
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    rho0: DVector<f64>,
    terminal: Option<usize>,
}

/// On-disk JSON layout of an MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub rho0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<usize>,
}

impl TabularMdp {
    /// Builds an MDP from nested `transition[s][a][s']`, `reward[s][a]` and `rho0[s]`,
    /// reporting the first violated invariant.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, rho0: Vec<f64>) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map(|t| t.len()).unwrap_or(0);
        Self::from_file(MdpFile {
            n_states,
            n_actions,
            transition,
            reward,
            rho0,
            terminal: None,
        })
    }

    pub fn from_file(file: MdpFile) -> Result<Self> {
        let MdpFile {
            n_states,
            n_actions,
            transition,
            reward,
            rho0,
            terminal,
        } = file;
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("n_states and n_actions must be positive".into()));
        }
        if transition.len() != n_states {
            return Err(Error::InvalidMdp(format!(
                "transition has {} state rows, expected {n_states}",
                transition.len()
            )));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "transition[{s}] has {} actions, expected {n_actions}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::InvalidMdp(format!(
                        "transition[{s}][{a}] has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                if let Some((s2, p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidMdp(format!("transition[{s}][{a}][{s2}] = {p} is not a probability")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!("transition[{s}][{a}] sums to {total}, expected 1")));
                }
                flat.extend_from_slice(row);
            }
        }
        if reward.len() != n_states {
            return Err(Error::InvalidMdp(format!("reward has {} rows, expected {n_states}", reward.len())));
        }
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidMdp(format!("reward[{s}] has length {}, expected {n_actions}", row.len())));
            }
            if let Some((a, r)) = row.iter().enumerate().find(|(_, r)| !r.is_finite()) {
                return Err(Error::InvalidMdp(format!("reward[{s}][{a}] = {r} is not finite")));
            }
        }
        if rho0.len() != n_states {
            return Err(Error::InvalidMdp(format!("rho0 has length {}, expected {n_states}", rho0.len())));
        }
        if let Some((s, p)) = rho0.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::InvalidMdp(format!("rho0[{s}] = {p} is negative")));
        }
        let total: f64 = rho0.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("rho0 sums to {total}, expected 1")));
        }
        let reward = DMatrix::from_fn(n_states, n_actions, |s, a| reward[s][a]);
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition: flat,
            reward,
            rho0: DVector::from_vec(rho0),
            terminal: None,
        };
        match terminal {
            None => Ok(mdp),
            Some(t) if t >= n_states => Err(Error::InvalidMdp(format!("terminal state {t} out of range"))),
            Some(t) => {
                for a in 0..n_actions {
                    if (mdp.p(t, a, t) - 1.0).abs() > PROB_TOL || mdp.reward[(t, a)] != 0.0 {
                        return Err(Error::InvalidMdp(format!(
                            "declared terminal state {t} is not absorbing with zero reward under action {a}"
                        )));
                    }
                }
                Ok(TabularMdp { terminal: Some(t), ..mdp })
            }
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
                .collect(),
            reward: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.reward[(s, a)]).collect())
                .collect(),
            rho0: self.rho0.iter().copied().collect(),
            terminal: self.terminal,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Next-state distribution for `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn rho0(&self) -> &DVector<f64> {
        &self.rho0
    }

    pub fn terminal(&self) -> Option<usize> {
        self.terminal
    }

    /// Same MDP with a different initial distribution.
    pub fn with_rho0(&self, rho0: DVector<f64>) -> Result<Self> {
        if rho0.len() != self.n_states {
            return Err(Error::InvalidMdp("rho0 length mismatch".into()));
        }
        let total = rho0.sum();
        if rho0.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp("rho0 must be a probability vector".into()));
        }
        Ok(TabularMdp { rho0, ..self.clone() })
    }

    /// Copy in which `terminal_state` self-loops with probability 1 and zero
    /// reward under every action; enables `gamma = 1` (total reward).
    pub fn terminalize(&self, terminal_state: usize) -> Result<Self> {
        if terminal_state >= self.n_states {
            return Err(Error::InvalidArgument(format!("terminal state {terminal_state} out of range")));
        }
        let mut out = self.clone();
        for a in 0..self.n_actions {
            let start = (terminal_state * self.n_actions + a) * self.n_states;
            for s2 in 0..self.n_states {
                out.transition[start + s2] = if s2 == terminal_state { 1.0 } else { 0.0 };
            }
            out.reward[(terminal_state, a)] = 0.0;
        }
        out.terminal = Some(terminal_state);
        Ok(out)
    }

    /// Policy-averaged transition matrix `P^pi` and reward vector `R^pi`.
    pub fn induced(&self, pi: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = pi[(s, a)];
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.reward[(s, a)];
                for (s2, prob) in self.row(s, a).iter().enumerate() {
                    p[(s, s2)] += w * prob;
                }
            }
        }
        (p, r)
    }

    /// Random MDP with dense transition rows drawn uniformly then normalized,
    /// rewards uniform on [0, 1) and a random initial distribution.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let mut normalized = |len: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        };
        let transition = (0..n_states)
            .map(|_| (0..n_actions).map(|_| normalized(n_states)).collect())
            .collect();
        let rho0 = normalized(n_states);
        let mut rng = stream_rng(seed, 1);
        let reward = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self::new(transition, reward, rho0).expect("generated rows are normalized")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loader_reports_first_bad_row() {
        let json = r#"{"n_states":2,"n_actions":1,
            "transition":[[[0.5,0.5]],[[0.7,0.2]]],
            "reward":[[0],[1]],"rho0":[1,0]}"#;
        let err = TabularMdp::from_json_str(json).unwrap_err();
        assert!(err.to_string().contains("transition[1][0]"), "{err}");
    }

    #[test]
    fn loader_rejects_negative_probability() {
        let json = r#"{"n_states":2,"n_actions":1,
            "transition":[[[1.5,-0.5]],[[0.5,0.5]]],
            "reward":[[0],[1]],"rho0":[1,0]}"#;
        let err = TabularMdp::from_json_str(json).unwrap_err();
        assert!(err.to_string().contains("transition[0][0][1]"), "{err}");
    }

    #[test]
    fn loader_rejects_bad_rho0() {
        let json = r#"{"n_states":2,"n_actions":1,
            "transition":[[[0.5,0.5]],[[0.5,0.5]]],
            "reward":[[0],[1]],"rho0":[0.6,0.6]}"#;
        assert!(TabularMdp::from_json_str(json).unwrap_err().to_string().contains("rho0"));
    }

    #[test]
    fn json_round_trip() {
        let mdp = TabularMdp::random(4, 3, 0).terminalize(3).unwrap();
        let text = serde_json::to_string(&mdp.to_file()).unwrap();
        assert_eq!(TabularMdp::from_json_str(&text).unwrap(), mdp);
    }

    #[test]
    fn terminalize_is_idempotent() {
        let mdp = TabularMdp::random(5, 2, 3);
        let once = mdp.terminalize(4).unwrap();
        assert_eq!(once.terminalize(4).unwrap(), once);
        assert_eq!(once.row(4, 1), &[0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn setup_rejects_out_of_range_gamma() {
        assert!(Setup::discounted(0.0).is_err());
        assert!(Setup::discounted(1.5).is_err());
        assert!(Setup::discounted(1.0).is_ok());
    }
}
