//! TOML experiment files. Every key is optional; command-line flags win.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::field::Grid;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub vector_field: VectorFieldSection,
    #[serde(default)]
    pub gap: GapSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub mdp_demo: DemoSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorFieldSection {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    /// `"K0MIN,K0MAX,K1MIN,K1MAX,N"`
    pub grid: Option<String>,
    pub methods: Option<Vec<String>>,
    /// LQR problem JSON, resolved relative to the config file.
    pub problem: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSection {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub k0: Option<[f64; 2]>,
    pub max_iters: Option<usize>,
    pub step_sizes: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Option<Vec<f64>>,
    pub gammas: Option<Vec<f64>>,
    pub grid: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSection {
    pub gamma: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub damping: Option<f64>,
    pub ppo_epsilon: Option<f64>,
    pub ppo_inner_steps: Option<usize>,
    pub ppo_learning_rate: Option<f64>,
    pub methods: Option<Vec<String>>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file: ExperimentFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let (Some(problem), Some(dir)) = (&file.vector_field.problem, path.parent()) {
            file.vector_field.problem = Some(dir.join(problem));
        }
        Ok(file)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

pub fn parse_grid(s: Option<&str>) -> Result<Grid> {
    s.map_or_else(|| Ok(Grid::default()), str::parse)
}

/// Comma-separated floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("not a number: {x:?}")))
        .collect()
}

/// Base seed from `POLOPT_SEED`, default 0.
pub fn base_seed() -> Result<u64> {
    match std::env::var("POLOPT_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("POLOPT_SEED must be an unsigned integer, got {v:?}")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(e.into()),
    }
}
