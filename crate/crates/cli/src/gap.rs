//! Optimality-gap runs for the LQR: iterate a method from a fixed start and
//! log `J(K_t) - J*`, with `J*` from policy iteration.

use std::str::FromStr;

use anyhow::{ensure, Result};
use nalgebra::DMatrix;
use polopt_core::lqr::incorrect::{hybrid_gradient, hybrid_npg, hybrid_npg_hybrid_grad};
use polopt_core::lqr::{gradient, natural_gradient, policy_improvement, riccati_fixed_point, solve, LqrGains, LqrProblem};
use polopt_core::mdp::Setup;
use rayon::prelude::*;

use crate::output::{csv_string, fmt_f64};
use crate::svg::{Frame, Svg, PALETTE};

pub const DEFAULT_STEP_SIZES: [f64; 7] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
pub const STOP_GAP: f64 = 1e-12;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMethod {
    PolicyIteration,
    Gradient,
    NaturalGradient,
    HybridGradient,
    HybridNpg,
    HybridNpgHybridGrad,
}

impl GapMethod {
    pub const ALL: [GapMethod; 6] = [
        GapMethod::PolicyIteration,
        GapMethod::Gradient,
        GapMethod::NaturalGradient,
        GapMethod::HybridGradient,
        GapMethod::HybridNpg,
        GapMethod::HybridNpgHybridGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GapMethod::PolicyIteration => "policy_iteration",
            GapMethod::Gradient => "gradient",
            GapMethod::NaturalGradient => "natural_gradient",
            GapMethod::HybridGradient => "hybrid_gradient",
            GapMethod::HybridNpg => "hybrid_npg",
            GapMethod::HybridNpgHybridGrad => "hybrid_npg_hybrid_grad",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, GapMethod::HybridGradient | GapMethod::HybridNpg | GapMethod::HybridNpgHybridGrad)
    }

    /// Descent direction in the given setup. Hybrids always use the configured
    /// discount for their value terms, whatever setup is being optimized.
    fn direction(self, problem: &LqrProblem, k: &LqrGains, setup: Setup, gamma: f64) -> polopt_core::Result<DMatrix<f64>> {
        Ok(match self {
            GapMethod::PolicyIteration => policy_improvement(problem, k, setup)?.k_mat - &k.k_mat,
            GapMethod::Gradient => -gradient(problem, k, setup)?,
            GapMethod::NaturalGradient => -natural_gradient(problem, k, setup)?,
            GapMethod::HybridGradient => -hybrid_gradient(problem, k, gamma)?,
            GapMethod::HybridNpg => -hybrid_npg(problem, k, gamma)?,
            GapMethod::HybridNpgHybridGrad => -hybrid_npg_hybrid_grad(problem, k, gamma)?,
        })
    }
}

impl FromStr for GapMethod {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        GapMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRun {
    pub setup: Setup,
    pub method: GapMethod,
    /// `None` for policy iteration, which takes no step size.
    pub step_size: Option<f64>,
    pub j_star: f64,
    /// Gap before the first update and after each one. A diverged run ends with `nan`.
    pub gaps: Vec<f64>,
    pub status: RunStatus,
}

impl GapRun {
    pub fn final_gap(&self) -> f64 {
        *self.gaps.last().expect("runs log the initial gap")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub k0: [f64; 2],
    pub max_iters: usize,
    pub step_sizes: Vec<f64>,
    pub methods: Vec<GapMethod>,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            alpha: 1.0,
            gamma: 0.7,
            k0: [0.0, 1.5],
            max_iters: 5000,
            step_sizes: DEFAULT_STEP_SIZES.to_vec(),
            methods: GapMethod::ALL.to_vec(),
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha.is_finite() && self.alpha > 0.0, "alpha must be positive");
        ensure!(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)");
        ensure!(self.k0.iter().all(|x| x.is_finite()), "k0 must be finite");
        ensure!(!self.step_sizes.is_empty(), "at least one step size is needed");
        ensure!(self.step_sizes.iter().all(|s| s.is_finite() && *s > 0.0), "step sizes must be positive");
        Ok(())
    }
}

/// One run with a fixed step size.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    problem: &LqrProblem,
    setup: Setup,
    gamma: f64,
    method: GapMethod,
    k0: &LqrGains,
    step_size: Option<f64>,
    j_star: f64,
    max_iters: usize,
) -> Result<GapRun> {
    let initial = solve(problem, k0, setup)?.objective - j_star;
    let mut gaps = vec![initial];
    let mut k = k0.clone();
    let mut status = RunStatus::MaxIters;
    if initial < STOP_GAP {
        status = RunStatus::Converged;
    }
    let limit = DIVERGENCE_FACTOR * initial.max(STOP_GAP);
    for _ in 0..max_iters {
        if status == RunStatus::Converged {
            break;
        }
        let next = method
            .direction(problem, &k, setup, gamma)
            .map(|d| k.offset(&(d * step_size.unwrap_or(1.0))));
        let gap = next
            .as_ref()
            .ok()
            .and_then(|k_next| solve(problem, k_next, setup).ok())
            .map(|s| s.objective - j_star);
        match (next, gap) {
            (Ok(k_next), Some(g)) if g.is_finite() && g <= limit => {
                gaps.push(g);
                k = k_next;
                if g < STOP_GAP {
                    status = RunStatus::Converged;
                }
            }
            _ => {
                gaps.push(f64::NAN);
                status = RunStatus::Diverged;
                break;
            }
        }
    }
    Ok(GapRun {
        setup,
        method,
        step_size,
        j_star,
        gaps,
        status,
    })
}

/// Orders runs by speed: converged before not, then fewer iterations, then smaller final gap.
fn speed_key(run: &GapRun) -> (u8, usize, f64) {
    match run.status {
        RunStatus::Converged => (0, run.gaps.len(), run.final_gap()),
        RunStatus::MaxIters => (1, 0, run.final_gap()),
        RunStatus::Diverged => (2, 0, 0.0),
    }
}

/// Runs every method in both setups. Step sizes are chosen per (setup, method)
/// as the fastest non-divergent run over the configured grid.
pub fn gap_experiment(config: &GapConfig) -> Result<Vec<GapRun>> {
    config.validate()?;
    let problem = LqrProblem::two_state_example(config.alpha);
    let k0 = LqrGains::from_row_slice(1, 2, &config.k0);
    let setups = [Setup::Discounted { gamma: config.gamma }, Setup::Average];
    let mut jobs = Vec::new();
    for setup in setups {
        let k_star = riccati_fixed_point(&problem, setup, &k0)?;
        let j_star = solve(&problem, &k_star, setup)?.objective;
        for method in &config.methods {
            jobs.push((setup, *method, j_star));
        }
    }
    jobs.into_par_iter()
        .map(|(setup, method, j_star)| {
            if method == GapMethod::PolicyIteration {
                return run_method(&problem, setup, config.gamma, method, &k0, None, j_star, config.max_iters);
            }
            let runs = config
                .step_sizes
                .iter()
                .map(|eta| run_method(&problem, setup, config.gamma, method, &k0, Some(*eta), j_star, config.max_iters))
                .collect::<Result<Vec<_>>>()?;
            Ok(runs
                .into_iter()
                .min_by(|a, b| speed_key(a).partial_cmp(&speed_key(b)).expect("keys are comparable"))
                .expect("step grid is nonempty"))
        })
        .collect()
}

pub fn gap_csv(runs: &[GapRun]) -> Result<String> {
    csv_string(
        &["setup", "method", "step_size", "j_star", "iteration", "gap", "status"],
        runs.iter().flat_map(|run| {
            let last = run.gaps.len() - 1;
            run.gaps.iter().enumerate().map(move |(i, g)| {
                vec![
                    run.setup.label(),
                    run.method.name().to_string(),
                    run.step_size.map_or_else(String::new, fmt_f64),
                    fmt_f64(run.j_star),
                    i.to_string(),
                    fmt_f64(*g),
                    if i == last { run.status.name().to_string() } else { String::new() },
                ]
            })
        }),
    )
}

/// `log10(gap)` against iteration, one panel per setup.
pub fn gap_svg(runs: &[GapRun]) -> String {
    let mut setups: Vec<Setup> = runs.iter().map(|r| r.setup).collect();
    setups.dedup();
    let (w, h) = (420.0, 300.0);
    let mut svg = Svg::new(setups.len() as f64 * (w + 40.0) + 20.0, h + 140.0);
    for (p, setup) in setups.iter().enumerate() {
        let panel: Vec<&GapRun> = runs.iter().filter(|r| r.setup == *setup).collect();
        let max_len = panel.iter().map(|r| r.gaps.len()).max().unwrap_or(1) as f64;
        let frame = Frame {
            x0: 30.0 + p as f64 * (w + 40.0),
            y0: 30.0,
            width: w,
            height: h,
            x_range: (0.0, (max_len - 1.0).max(1.0)),
            y_range: (-16.0, 2.0),
        };
        svg.frame(&frame, &format!("{} (log10 gap)", setup.label()));
        for (i, run) in panel.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let points: Vec<(f64, f64)> = run
                .gaps
                .iter()
                .enumerate()
                .filter(|(_, g)| g.is_finite())
                .map(|(t, g)| frame.map(t as f64, g.max(1e-16).log10().clamp(-16.0, 2.0)))
                .collect();
            svg.polyline(&points, color);
            svg.text(frame.x0, frame.y0 + h + 18.0 + 14.0 * i as f64, &format!("{} ({})", run.method.name(), run.status.name()), 11.0);
            svg.polyline(&[(frame.x0 - 20.0, frame.y0 + h + 14.0 + 14.0 * i as f64), (frame.x0 - 4.0, frame.y0 + h + 14.0 + 14.0 * i as f64)], color);
        }
    }
    svg.finish()
}
