//! Averaging measures (stationary and discounted), space averages, rollouts
//! and time-based estimators.
//!
//! Every time-based estimator goes through [`weighted_visits`] /
//! [`visit_batch`]: a path is reduced to its weighted `(s, a)` visit table
//! (weights `gamma^k` in the discounted setup, `1/len` in the average setup)
//! and contracted against `g(s, a)`. That reordering of the sum is exact, and
//! it lets long rollouts be streamed instead of stored.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::solve_checked;
use crate::mdp::{is_ergodic, Policy, Setup, TabularMdp};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureKind {
    Stationary,
    Discounted { gamma: f64, rho0: DVector<f64> },
}

/// Nonnegative weight per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub weights: DVector<f64>,
    pub kind: MeasureKind,
}

impl Measure {
    pub fn mass(&self) -> f64 {
        self.weights.sum()
    }
}

/// Invariant distribution of a row-stochastic chain via the bordered system
/// `[P^T - I, 1; 1^T, 0] [nu; lambda] = [0; 1]`.
pub fn stationary_from_chain(chain: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = chain.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n))
        .copy_from(&(chain.transpose() - DMatrix::identity(n, n)));
    m.view_mut((0, n), (n, 1)).fill(1.0);
    m.view_mut((n, 0), (1, n)).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let x = solve_checked(&m, &rhs, "stationary distribution").map_err(|_| Error::NonErgodicChain)?;
    Ok(x.rows(0, n).map(|w| w.max(0.0)))
}

pub fn stationary_measure(mdp: &TabularMdp, policy: &dyn Policy) -> Result<Measure> {
    let (p, _) = mdp.induced(&policy.table());
    if !is_ergodic(&p) {
        return Err(Error::NonErgodicChain);
    }
    Ok(Measure {
        weights: stationary_from_chain(&p)?,
        kind: MeasureKind::Stationary,
    })
}

/// Solves `(I - gamma P^T) nu = rho0`. With `gamma = 1` the MDP must be
/// terminalized; the terminal state then carries no mass.
pub fn discounted_measure(mdp: &TabularMdp, policy: &dyn Policy, gamma: f64, rho0: &DVector<f64>) -> Result<Measure> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidSetup(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if gamma == 1.0 && mdp.terminal().is_none() {
        return Err(Error::InvalidSetup("gamma = 1 requires a terminal state".into()));
    }
    let n = mdp.n_states();
    let (p, _) = mdp.induced(&policy.table());
    let mut m = DMatrix::identity(n, n) - p.transpose() * gamma;
    let mut rhs = rho0.clone();
    if gamma == 1.0 {
        let t = mdp.terminal().expect("checked above");
        m.row_mut(t).fill(0.0);
        m[(t, t)] = 1.0;
        rhs[t] = 0.0;
    }
    let weights = solve_checked(&m, &rhs, "discounted occupancy measure")?;
    Ok(Measure {
        weights: weights.map(|w| w.max(0.0)),
        kind: MeasureKind::Discounted {
            gamma,
            rho0: rho0.clone(),
        },
    })
}

/// The averaging measure matching `setup`, started from the MDP's `rho0`.
pub fn measure_for(mdp: &TabularMdp, policy: &dyn Policy, setup: Setup) -> Result<Measure> {
    match setup {
        Setup::Discounted { gamma } => discounted_measure(mdp, policy, gamma, mdp.rho0()),
        Setup::Average => stationary_measure(mdp, policy),
    }
}

/// `sum_s nu(s) sum_a pi(a|s) f(s, a)`.
pub fn space_average(measure: &Measure, policy: &dyn Policy, f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for (s, w) in measure.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let inner: f64 = policy
            .action_probs(s)
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(a, p)| p * f(s, a))
            .sum();
        total += w * inner;
    }
    total
}

/// Vector-valued [`space_average`].
pub fn space_average_vec(
    measure: &Measure,
    policy: &dyn Policy,
    dim: usize,
    f: impl Fn(usize, usize) -> DVector<f64>,
) -> DVector<f64> {
    let mut total = DVector::zeros(dim);
    for (s, w) in measure.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (a, p) in policy.action_probs(s).into_iter().enumerate() {
            if p > 0.0 {
                total += f(s, a) * (w * p);
            }
        }
    }
    total
}

/// One sampled path. `states` has one more entry than `actions`/`rewards`;
/// paths stop early when they enter the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub horizon: usize,
}

/// Horizon `ceil(log(eps (1 - gamma)) / log gamma)` bounding the truncation
/// bias of a discounted sum by `eps * |g|_inf`.
pub fn truncation_horizon(gamma: f64, eps: f64) -> usize {
    assert!(gamma > 0.0 && gamma < 1.0, "truncation needs gamma in (0, 1)");
    ((eps * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(1.0) as usize
}

fn sample_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_nonzero
}

/// Drives one path and hands `(k, s, a, r)` to `visit`; returns the final state.
fn drive(
    mdp: &TabularMdp,
    table: &DMatrix<f64>,
    horizon: usize,
    seed: u64,
    stream: u64,
    mut visit: impl FnMut(usize, usize, usize, f64),
) -> usize {
    let mut rng = stream_rng(seed, stream);
    let n_a = mdp.n_actions();
    let mut s = sample_index(mdp.rho0().iter().copied(), rng.random());
    for k in 0..horizon {
        if Some(s) == mdp.terminal() {
            break;
        }
        let a = sample_index((0..n_a).map(|a| table[(s, a)]), rng.random());
        visit(k, s, a, mdp.reward()[(s, a)]);
        s = sample_index(mdp.row(s, a).iter().copied(), rng.random());
    }
    s
}

pub fn rollout(mdp: &TabularMdp, policy: &dyn Policy, horizon: usize, seed: u64) -> Result<Trajectory> {
    rollout_stream(mdp, policy, horizon, seed, 0)
}

/// Path `stream` of the batch with base `seed`.
pub fn rollout_stream(mdp: &TabularMdp, policy: &dyn Policy, horizon: usize, seed: u64, stream: u64) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let table = policy.table();
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        seed,
        stream,
        horizon,
    };
    let last = drive(mdp, &table, horizon, seed, stream, |_, s, a, r| {
        traj.states.push(s);
        traj.actions.push(a);
        traj.rewards.push(r);
    });
    traj.states.push(last);
    Ok(traj)
}

pub fn rollout_batch(mdp: &TabularMdp, policy: &dyn Policy, horizon: usize, n_paths: usize, seed: u64) -> Result<Vec<Trajectory>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| rollout_stream(mdp, policy, horizon, seed, i))
        .collect()
}

/// Time aggregation rule for a setup.
#[derive(Debug, Clone, Copy)]
struct Aggregation {
    gamma: Option<f64>,
}

impl Aggregation {
    fn new(setup: Setup) -> Self {
        Aggregation { gamma: setup.gamma() }
    }

    fn finish(&self, mut counts: DMatrix<f64>, len: usize) -> DMatrix<f64> {
        if self.gamma.is_none() && len > 0 {
            counts /= len as f64;
        }
        counts
    }
}

struct Accumulator {
    agg: Aggregation,
    weight: f64,
    counts: DMatrix<f64>,
    len: usize,
}

impl Accumulator {
    fn new(agg: Aggregation, n_states: usize, n_actions: usize) -> Self {
        Accumulator {
            agg,
            weight: 1.0,
            counts: DMatrix::zeros(n_states, n_actions),
            len: 0,
        }
    }

    fn push(&mut self, s: usize, a: usize) {
        self.counts[(s, a)] += self.weight;
        if let Some(g) = self.agg.gamma {
            self.weight *= g;
        }
        self.len += 1;
    }

    fn finish(self) -> DMatrix<f64> {
        self.agg.finish(self.counts, self.len)
    }
}

/// Weighted `(s, a)` visit table of one path: discounted `sum_k gamma^k 1{(s_k, a_k) = (s, a)}`,
/// average `(1/len) sum_k 1{...}` over the path's `len` state-action pairs.
pub fn weighted_visits(traj: &Trajectory, n_states: usize, n_actions: usize, setup: Setup) -> DMatrix<f64> {
    let mut acc = Accumulator::new(Aggregation::new(setup), n_states, n_actions);
    for (s, a) in traj.states.iter().zip(&traj.actions) {
        acc.push(*s, *a);
    }
    acc.finish()
}

/// Weighted visit tables for `n_paths` streamed rollouts (streams `0..n_paths`
/// of `seed`) without storing the paths. Output order is the stream order.
pub fn visit_batch(
    mdp: &TabularMdp,
    policy: &dyn Policy,
    setup: Setup,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<DMatrix<f64>> {
    visit_batch_multi(mdp, policy, &[setup], horizon, n_paths, seed)
        .into_iter()
        .map(|mut per_setup| per_setup.remove(0))
        .collect()
}

/// Like [`visit_batch`], aggregating every path under several setups at
/// once (common random numbers). Indexed `[path][setup]`.
pub fn visit_batch_multi(
    mdp: &TabularMdp,
    policy: &dyn Policy,
    setups: &[Setup],
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<Vec<DMatrix<f64>>> {
    let table = policy.table();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut accs: Vec<_> = setups
                .iter()
                .map(|s| Accumulator::new(Aggregation::new(*s), mdp.n_states(), mdp.n_actions()))
                .collect();
            drive(mdp, &table, horizon, seed, i, |_, s, a, _| {
                for acc in accs.iter_mut() {
                    acc.push(s, a);
                }
            });
            accs.into_iter().map(Accumulator::finish).collect()
        })
        .collect()
}

/// `sum_{s,a} visits(s, a) g(s, a)`.
pub fn contract(visits: &DMatrix<f64>, g: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for s in 0..visits.nrows() {
        for a in 0..visits.ncols() {
            let c = visits[(s, a)];
            if c != 0.0 {
                total += c * g(s, a);
            }
        }
    }
    total
}

/// Vector-valued [`contract`].
pub fn contract_vec(visits: &DMatrix<f64>, dim: usize, g: impl Fn(usize, usize) -> DVector<f64>) -> DVector<f64> {
    let mut total = DVector::zeros(dim);
    for s in 0..visits.nrows() {
        for a in 0..visits.ncols() {
            let c = visits[(s, a)];
            if c != 0.0 {
                total += g(s, a) * c;
            }
        }
    }
    total
}

/// Mean over paths of the time aggregate of `g` (see module docs).
pub fn time_estimate(trajectories: &[Trajectory], g: impl Fn(usize, usize) -> f64, setup: Setup) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_states = trajectories
        .iter()
        .flat_map(|t| t.states.iter())
        .max()
        .map_or(1, |m| m + 1);
    let n_actions = trajectories
        .iter()
        .flat_map(|t| t.actions.iter())
        .max()
        .map_or(1, |m| m + 1);
    let total: f64 = trajectories
        .iter()
        .map(|t| contract(&weighted_visits(t, n_states, n_actions, setup), &g))
        .sum();
    Ok(total / trajectories.len() as f64)
}

/// Sample mean and standard error of i.i.d. per-path vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEstimate {
    pub mean: DVector<f64>,
    pub standard_error: DVector<f64>,
    pub n: usize,
}

impl BatchEstimate {
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyBatch)?;
        let n = samples.len();
        let mut mean = DVector::zeros(first.len());
        for x in samples {
            mean += x;
        }
        mean /= n as f64;
        let mut var = DVector::zeros(first.len());
        for x in samples {
            let d = x - &mean;
            var += d.component_mul(&d);
        }
        let denom = (n.max(2) - 1) as f64;
        let standard_error = var.map(|v| (v / denom / n as f64).sqrt());
        Ok(BatchEstimate { mean, standard_error, n })
    }
}

/// Writes one or more paths as CSV `k,s,a,r` (plus a leading `traj_id` for
/// batches). The final state of each path is written with empty `a`/`r`.
pub fn write_trajectories_csv(out: &mut impl Write, trajectories: &[Trajectory]) -> io::Result<()> {
    let batch = trajectories.len() > 1;
    if batch {
        writeln!(out, "traj_id,k,s,a,r")?;
    } else {
        writeln!(out, "k,s,a,r")?;
    }
    for (id, t) in trajectories.iter().enumerate() {
        let prefix = if batch { format!("{id},") } else { String::new() };
        for k in 0..t.actions.len() {
            writeln!(out, "{prefix}{k},{},{},{}", t.states[k], t.actions[k], t.rewards[k])?;
        }
        writeln!(out, "{prefix}{},{},,", t.actions.len(), t.states[t.actions.len()])?;
    }
    Ok(())
}
