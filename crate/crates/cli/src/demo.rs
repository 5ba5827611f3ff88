//! Tabular showcase: every correct optimizer on one MDP, both setups.

use std::str::FromStr;

use anyhow::{ensure, Result};
use polopt_core::mdp::{objective, Setup, SoftmaxPolicy, TabularMdp};
use polopt_core::optimizers::{
    natural_gradient_step, policy_curvature, policy_gradient, policy_iteration, ppo_optimize, trust_region_step, PpoConfig,
    TrustRegionConfig,
};
use polopt_core::oracle::enumerate_deterministic_optimum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoMethod {
    PolicyIteration,
    PolicyGradient,
    NaturalGradient,
    TrustRegion,
    Ppo,
}

impl DemoMethod {
    pub const ALL: [DemoMethod; 5] = [
        DemoMethod::PolicyIteration,
        DemoMethod::PolicyGradient,
        DemoMethod::NaturalGradient,
        DemoMethod::TrustRegion,
        DemoMethod::Ppo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DemoMethod::PolicyIteration => "policy_iteration",
            DemoMethod::PolicyGradient => "policy_gradient",
            DemoMethod::NaturalGradient => "natural_gradient",
            DemoMethod::TrustRegion => "trust_region",
            DemoMethod::Ppo => "ppo",
        }
    }
}

impl FromStr for DemoMethod {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        DemoMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub gamma: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub trust_region: TrustRegionConfig,
    pub ppo: PpoConfig,
    pub methods: Vec<DemoMethod>,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            gamma: 0.9,
            iterations: 50,
            learning_rate: 0.1,
            trust_region: TrustRegionConfig {
                rho: 1e-3,
                damping: 1e-8,
                eta: 0.1,
            },
            ppo: PpoConfig::default(),
            methods: DemoMethod::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)");
        ensure!(self.learning_rate > 0.0, "learning rate must be positive");
        ensure!(self.ppo.epsilon > 0.0 && self.ppo.epsilon < 1.0, "ppo epsilon must lie in (0, 1)");
        self.trust_region.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTrace {
    pub method: DemoMethod,
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetupTrace {
    pub setup: Setup,
    /// Best deterministic policy by enumeration, when the state space is small enough.
    pub optimum: Option<f64>,
    pub methods: Vec<MethodTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub setups: Vec<SetupTrace>,
}

fn ascend(
    mdp: &TabularMdp,
    init: &SoftmaxPolicy,
    setup: Setup,
    iterations: usize,
    step: impl Fn(&SoftmaxPolicy) -> polopt_core::Result<nalgebra::DVector<f64>>,
) -> Result<Vec<f64>> {
    let mut pi = init.clone();
    let mut trace = vec![objective(mdp, &pi, setup)?];
    for _ in 0..iterations {
        pi = pi.perturbed(&step(&pi)?);
        trace.push(objective(mdp, &pi, setup)?);
    }
    Ok(trace)
}

fn trace(mdp: &TabularMdp, init: &SoftmaxPolicy, setup: Setup, method: DemoMethod, config: &DemoConfig) -> Result<Vec<f64>> {
    let n = config.iterations;
    match method {
        DemoMethod::PolicyIteration => Ok(policy_iteration(mdp, init, setup, n)?.into_iter().map(|(_, j)| j).collect()),
        DemoMethod::PolicyGradient => ascend(mdp, init, setup, n, |pi| Ok(policy_gradient(mdp, pi, setup)?.grad * config.learning_rate)),
        DemoMethod::NaturalGradient => ascend(mdp, init, setup, n, |pi| natural_gradient_step(&policy_curvature(mdp, pi, setup)?, &config.trust_region)),
        DemoMethod::TrustRegion => ascend(mdp, init, setup, n, |pi| {
            let report = policy_curvature(mdp, pi, setup)?;
            match trust_region_step(&report, &config.trust_region) {
                Err(polopt_core::Error::DegenerateGradient(_)) => Ok(nalgebra::DVector::zeros(pi.n_params())),
                other => other,
            }
        }),
        DemoMethod::Ppo => Ok(ppo_optimize(mdp, init, setup, &config.ppo, n)?.0),
    }
}

pub fn mdp_demo(mdp: &TabularMdp, config: &DemoConfig) -> Result<DemoReport> {
    config.validate()?;
    let init = SoftmaxPolicy::random(mdp.n_states(), mdp.n_actions(), 0.5, config.seed);
    let mut setups = Vec::new();
    for setup in [Setup::discounted(config.gamma)?, Setup::Average] {
        let optimum = match enumerate_deterministic_optimum(mdp, setup) {
            Ok((_, j)) => Some(j),
            Err(polopt_core::Error::TooLarge(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let methods = config
            .methods
            .iter()
            .map(|m| Ok(MethodTrace {
                method: *m,
                objective: trace(mdp, &init, setup, *m, config)?,
            }))
            .collect::<Result<Vec<_>>>()?;
        setups.push(SetupTrace { setup, optimum, methods });
    }
    Ok(DemoReport {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        setups,
    })
}

/// The 5-state, 3-action MDP shipped with the binary.
pub const BUNDLED_MDP: &str = include_str!("../data/demo_mdp.json");

pub fn bundled_mdp() -> TabularMdp {
    TabularMdp::from_json_str(BUNDLED_MDP).expect("bundled MDP is valid")
}
