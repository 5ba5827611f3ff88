use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use polopt::config::{base_seed, parse_grid, parse_list, ExperimentFile};
use polopt::demo::{bundled_mdp, mdp_demo, DemoConfig, DemoMethod};
use polopt::field::{field_csv, field_svg, sweep, sweep_field_csv, sweep_summary_csv, sweep_svg, vector_field, FieldMethod};
use polopt::gap::{gap_csv, gap_experiment, gap_svg, GapConfig, GapMethod};
use polopt::output::emit;
use polopt::verify::{report, run_suite, select, VerifyContext};
use polopt_core::lqr::{Correction, LqrProblem};
use polopt_core::mdp::TabularMdp;

#[derive(Parser)]
#[command(name = "polopt", version, about = "Policy optimization under discounted and average-reward objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical self-checks. Exits nonzero if any fails.
    Verify {
        /// Suite name or tag (`tabular`, `lqr`).
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, hide = true)]
        disable_gamma_correction: bool,
    },
    /// Update directions of every method over a grid of 1x2 gains.
    VectorField {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// `K0MIN,K0MAX,K1MIN,K1MAX,N`
        #[arg(long)]
        grid: Option<String>,
        /// Comma-separated method names.
        #[arg(long)]
        methods: Option<String>,
        /// LQR problem JSON; defaults to the scaled two-state system.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Optimality gap per iteration for every method in both setups.
    Gap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Agreement of discounted and average gradients across system scales and discounts.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated.
        #[arg(long)]
        alphas: Option<String>,
        /// Comma-separated.
        #[arg(long)]
        gammas: Option<String>,
        #[arg(long)]
        grid: Option<String>,
        /// Summary CSV, one row per cell; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full per-cell vector fields.
        #[arg(long)]
        field_out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Tabular optimizers on an MDP, both setups, as JSON.
    MdpDemo {
        /// MDP JSON; the bundled 5-state example when omitted.
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Comma-separated; an empty string runs nothing.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn names<T: std::str::FromStr<Err = anyhow::Error>>(list: &[impl AsRef<str>]) -> Result<Vec<T>> {
    list.iter().map(|s| s.as_ref().trim().parse()).collect()
}

fn split(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

fn pick_methods<T: std::str::FromStr<Err = anyhow::Error> + Clone>(flag: Option<&str>, file: Option<&Vec<String>>, all: &[T]) -> Result<Vec<T>> {
    match (flag, file) {
        (Some(f), _) => names(&split(f)),
        (None, Some(list)) => names(list),
        (None, None) => Ok(all.to_vec()),
    }
}

fn read_json<T>(path: &Path, parse: impl Fn(&str) -> polopt_core::Result<T>) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { filter, disable_gamma_correction } => {
            let ctx = VerifyContext {
                base_seed: base_seed()?,
                correction: if disable_gamma_correction { Correction::Literal } else { Correction::Discounted },
            };
            let suites = select(filter.as_deref())?;
            let outcomes: Vec<_> = suites
                .iter()
                .map(|s| {
                    let o = run_suite(s, &ctx);
                    eprintln!("{} {}", if o.passed { "ok  " } else { "FAIL" }, o.name);
                    o
                })
                .collect();
            print!("{}", report(&outcomes));
            Ok(outcomes.iter().all(|o| o.passed))
        }
        Command::VectorField { config, gamma, alpha, grid, methods, problem, out, svg } => {
            let file = ExperimentFile::load_optional(config.as_deref())?.vector_field;
            let gamma = gamma.or(file.gamma).unwrap_or(0.7);
            let grid = parse_grid(grid.as_deref().or(file.grid.as_deref()))?;
            let methods = pick_methods(methods.as_deref(), file.methods.as_ref(), &FieldMethod::ALL)?;
            let problem = match problem.or(file.problem) {
                Some(path) => read_json(&path, LqrProblem::from_json_str)?,
                None => LqrProblem::two_state_example(alpha.or(file.alpha).unwrap_or(1.0)),
            };
            let rows = vector_field(&problem, gamma, &grid, &methods)?;
            emit(out.as_deref(), &field_csv(&rows)?)?;
            if let Some(path) = svg {
                emit(Some(&path), &field_svg(&rows, &grid, &format!("update directions, gamma = {gamma}")))?;
            }
            Ok(true)
        }
        Command::Gap { config, gamma, alpha, max_iters, methods, out, svg } => {
            let file = ExperimentFile::load_optional(config.as_deref())?.gap;
            let defaults = GapConfig::default();
            let config = GapConfig {
                alpha: alpha.or(file.alpha).unwrap_or(defaults.alpha),
                gamma: gamma.or(file.gamma).unwrap_or(defaults.gamma),
                k0: file.k0.unwrap_or(defaults.k0),
                max_iters: max_iters.or(file.max_iters).unwrap_or(defaults.max_iters),
                step_sizes: file.step_sizes.unwrap_or(defaults.step_sizes),
                methods: pick_methods(methods.as_deref(), file.methods.as_ref(), &GapMethod::ALL)?,
            };
            let runs = gap_experiment(&config)?;
            emit(out.as_deref(), &gap_csv(&runs)?)?;
            if let Some(path) = svg {
                emit(Some(&path), &gap_svg(&runs))?;
            }
            Ok(true)
        }
        Command::Sweep { config, alphas, gammas, grid, out, field_out, svg } => {
            let file = ExperimentFile::load_optional(config.as_deref())?.sweep;
            let alphas = match alphas {
                Some(s) => parse_list(&s)?,
                None => file.alphas.unwrap_or_else(|| vec![0.3, 0.6, 1.0]),
            };
            let gammas = match gammas {
                Some(s) => parse_list(&s)?,
                None => file.gammas.unwrap_or_else(|| vec![0.7, 0.9, 0.99]),
            };
            let grid = parse_grid(grid.as_deref().or(file.grid.as_deref()))?;
            let cells = sweep(&alphas, &gammas, &grid)?;
            emit(out.as_deref(), &sweep_summary_csv(&cells)?)?;
            if let Some(path) = field_out {
                emit(Some(&path), &sweep_field_csv(&cells)?)?;
            }
            if let Some(path) = svg {
                emit(Some(&path), &sweep_svg(&cells, &grid))?;
            }
            Ok(true)
        }
        Command::MdpDemo { mdp, config, gamma, iterations, methods, out } => {
            let file = ExperimentFile::load_optional(config.as_deref())?.mdp_demo;
            let mdp = match mdp {
                Some(path) => read_json(&path, TabularMdp::from_json_str)?,
                None => bundled_mdp(),
            };
            let mut demo = DemoConfig {
                seed: base_seed()?,
                methods: pick_methods(methods.as_deref(), file.methods.as_ref(), &DemoMethod::ALL)?,
                ..DemoConfig::default()
            };
            demo.gamma = gamma.or(file.gamma).unwrap_or(demo.gamma);
            demo.iterations = iterations.or(file.iterations).unwrap_or(demo.iterations);
            demo.learning_rate = file.learning_rate.unwrap_or(demo.learning_rate);
            demo.trust_region.rho = file.rho.unwrap_or(demo.trust_region.rho);
            demo.trust_region.eta = file.eta.unwrap_or(demo.trust_region.eta);
            demo.trust_region.damping = file.damping.unwrap_or(demo.trust_region.damping);
            demo.ppo.epsilon = file.ppo_epsilon.unwrap_or(demo.ppo.epsilon);
            demo.ppo.inner_steps = file.ppo_inner_steps.unwrap_or(demo.ppo.inner_steps);
            demo.ppo.learning_rate = file.ppo_learning_rate.unwrap_or(demo.ppo.learning_rate);
            let report = mdp_demo(&mdp, &demo)?;
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            emit(out.as_deref(), &json)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
