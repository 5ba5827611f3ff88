//! Numerical self-checks behind `polopt verify`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use nalgebra::{DMatrix, DVector};
use polopt_core::linalg::symmetrize;
use polopt_core::lqr::{
    gradient, is_stable, performance_difference_with, riccati_fixed_point, riccati_iterates, solve, Correction, LqrGains,
    LqrProblem,
};
use polopt_core::mdp::{objective, value_functions, Setup, SoftmaxPolicy, TabularMdp};
use polopt_core::measures::{
    contract, contract_vec, discounted_measure, space_average, space_average_vec, stationary_measure, truncation_horizon,
    visit_batch, BatchEstimate,
};
use polopt_core::optimizers::{kl_metric, performance_difference, policy_curvature, policy_gradient, policy_iteration};
use polopt_core::oracle::{
    abel_limit_study, enumerate_deterministic_optimum, estimator_bias_study, finite_difference, Verdict, DEFAULT_GAMMA_GRID,
};
use polopt_core::rng::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::field::{angle_exceedance, field_row, sweep, vector_field, FieldMethod, Grid};
use crate::gap::{gap_experiment, GapConfig, GapMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Tabular,
    Lqr,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Tabular => "tabular",
            Tag::Lqr => "lqr",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyContext {
    pub base_seed: u64,
    pub correction: Correction,
}

impl Default for VerifyContext {
    fn default() -> Self {
        VerifyContext {
            base_seed: 0,
            correction: Correction::Discounted,
        }
    }
}

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

fn check(passed: bool, detail: String) -> Result<Check> {
    Ok(Check { passed, detail })
}

pub struct Suite {
    pub name: &'static str,
    pub criterion: u8,
    pub tag: Tag,
    run: fn(&VerifyContext) -> Result<Check>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub criterion: u8,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "performance-difference", criterion: 1, tag: Tag::Tabular, run: performance_difference_suite },
    Suite { name: "ergodicity", criterion: 2, tag: Tag::Tabular, run: ergodicity_suite },
    Suite { name: "gradient-tabular", criterion: 3, tag: Tag::Tabular, run: gradient_tabular_suite },
    Suite { name: "gradient-lqr", criterion: 3, tag: Tag::Lqr, run: gradient_lqr_suite },
    Suite { name: "curvature-tabular", criterion: 4, tag: Tag::Tabular, run: curvature_tabular_suite },
    Suite { name: "curvature-lqr", criterion: 4, tag: Tag::Lqr, run: curvature_lqr_suite },
    Suite { name: "limits", criterion: 5, tag: Tag::Tabular, run: limits_suite },
    Suite { name: "bias", criterion: 6, tag: Tag::Tabular, run: bias_suite },
    Suite { name: "lqr-identity", criterion: 7, tag: Tag::Lqr, run: lqr_identity_suite },
    Suite { name: "hybrid-field", criterion: 8, tag: Tag::Lqr, run: hybrid_field_suite },
    Suite { name: "gap-plateau", criterion: 9, tag: Tag::Lqr, run: gap_plateau_suite },
    Suite { name: "gradient-sweep", criterion: 10, tag: Tag::Lqr, run: gradient_sweep_suite },
    Suite { name: "pi-tabular", criterion: 11, tag: Tag::Tabular, run: pi_tabular_suite },
    Suite { name: "pi-lqr", criterion: 11, tag: Tag::Lqr, run: pi_lqr_suite },
];

/// Suites whose name or tag equals `filter`; all suites when `None`.
pub fn select(filter: Option<&str>) -> Result<Vec<&'static Suite>> {
    let Some(f) = filter else {
        return Ok(SUITES.iter().collect());
    };
    let chosen: Vec<_> = SUITES.iter().filter(|s| s.name == f || s.tag.name() == f).collect();
    if chosen.is_empty() {
        let names: Vec<_> = SUITES.iter().map(|s| s.name).collect();
        bail!("no suite matches {f:?}; known suites: {}; tags: tabular, lqr", names.join(", "));
    }
    Ok(chosen)
}

pub fn run_suite(suite: &Suite, ctx: &VerifyContext) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match (suite.run)(ctx) {
        Ok(c) => (c.passed, c.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    Outcome {
        name: suite.name,
        criterion: suite.criterion,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn report(outcomes: &[Outcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status}  c{:<2} {:<24} {:>8.2}s  {}", o.criterion, o.name, o.elapsed.as_secs_f64(), o.detail);
    }
    match outcomes.iter().find(|o| !o.passed) {
        Some(first) => {
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            let _ = writeln!(out, "{failed} of {} suites failed; first failure: {}", outcomes.len(), first.name);
        }
        None => {
            let _ = writeln!(out, "all {} suites passed", outcomes.len());
        }
    }
    out
}

const SETUPS: [Setup; 2] = [Setup::Discounted { gamma: 0.9 }, Setup::Average];

fn random_tabular(rng: &mut ChaCha8Rng) -> (TabularMdp, usize, usize, u64) {
    let n = rng.random_range(2..=5);
    let a = rng.random_range(2..=3);
    let seed = rng.random();
    (TabularMdp::random(n, a, seed), n, a, seed)
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng, floor: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * floor
}

/// Random system with gains stable in the average setup, hence in every discounted one.
fn random_lqr(rng: &mut ChaCha8Rng) -> Result<(LqrProblem, LqrGains)> {
    loop {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let problem = LqrProblem::new(
            DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)),
            random_spd(n, rng, 0.1),
            random_spd(n, rng, 0.1),
            random_spd(m, rng, 0.5),
        )?;
        let k: Vec<f64> = (0..m * n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let gains = LqrGains::from_row_slice(m, n, &k);
        if is_stable(&problem, &gains, Setup::Average) {
            return Ok((problem, gains));
        }
    }
}

fn row_major(k: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(k.transpose().as_slice())
}

fn performance_difference_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (mdp, n, a, seed) = random_tabular(&mut rng);
        let old = SoftmaxPolicy::random(n, a, 1.0, seed ^ 1);
        let new = SoftmaxPolicy::random(n, a, 1.0, seed ^ 2);
        for setup in SETUPS {
            let direct = objective(&mdp, &new, setup)? - objective(&mdp, &old, setup)?;
            worst = worst.max((performance_difference(&mdp, &new, &old, setup)? - direct).abs());
        }
    }
    check(worst < 1e-9, format!("max |identity - direct| = {worst:.2e} over 200 cases"))
}

fn ergodicity_suite(_: &VerifyContext) -> Result<Check> {
    let mdp = TabularMdp::random(4, 2, 31);
    let pi = SoftmaxPolicy::random(4, 2, 1.0, 31);
    let reward = mdp.reward().clone();
    let mut worst: f64 = 0.0;
    for (setup, horizon) in [(Setup::Discounted { gamma: 0.8 }, truncation_horizon(0.8, 1e-8)), (Setup::Average, 100_000)] {
        let nu = match setup {
            Setup::Average => stationary_measure(&mdp, &pi)?,
            Setup::Discounted { gamma } => discounted_measure(&mdp, &pi, gamma, mdp.rho0())?,
        };
        let visits = visit_batch(&mdp, &pi, setup, horizon, 200, 31);
        let samples: Vec<_> = visits.iter().map(|v| DVector::from_element(1, contract(v, |s, a| reward[(s, a)]))).collect();
        let est = BatchEstimate::from_samples(&samples)?;
        let space = space_average(&nu, &pi, |s, a| reward[(s, a)]);
        worst = worst.max((est.mean[0] - space).abs() / est.standard_error[0].max(1e-12));

        let q = value_functions(&mdp, &pi, setup)?.q;
        let g = |s: usize, a: usize| pi.grad_log_pi(s, a) * q[(s, a)];
        let samples: Vec<_> = visits.iter().map(|v| contract_vec(v, pi.n_params(), g)).collect();
        let est = BatchEstimate::from_samples(&samples)?;
        let space = space_average_vec(&nu, &pi, pi.n_params(), g);
        for i in 0..pi.n_params() {
            worst = worst.max((est.mean[i] - space[i]).abs() / est.standard_error[i].max(1e-12));
        }
    }
    check(worst < 3.0, format!("max deviation {worst:.2} standard errors"))
}

fn gradient_tabular_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (mdp, n, a, seed) = random_tabular(&mut rng);
        let pi = SoftmaxPolicy::random(n, a, 1.0, seed);
        for setup in SETUPS {
            let g = policy_gradient(&mdp, &pi, setup)?.grad;
            let f = |theta: &DVector<f64>| {
                SoftmaxPolicy::from_flat(n, a, theta.as_slice())
                    .and_then(|p| objective(&mdp, &p, setup))
                    .unwrap_or(f64::NAN)
            };
            let fd = finite_difference(f, &pi.flat(), Some(1e-5))?;
            let scale = g.norm().max(1e-3 * objective(&mdp, &pi, setup)?.abs()).max(1e-8);
            worst = worst.max((&g - &fd).norm() / scale);
        }
    }
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 100 cases"))
}

fn gradient_lqr_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (problem, k) = random_lqr(&mut rng)?;
        let (m, n) = k.k_mat.shape();
        for setup in [Setup::Discounted { gamma: 0.7 }, Setup::Average] {
            let g = gradient(&problem, &k, setup)?;
            let f = |x: &DVector<f64>| solve(&problem, &LqrGains::from_row_slice(m, n, x.as_slice()), setup).map_or(f64::NAN, |s| s.objective);
            let fd = finite_difference(f, &row_major(&k.k_mat), Some(1e-6))?;
            let scale = g.norm().max(1e-3 * solve(&problem, &k, setup)?.objective);
            worst = worst.max((row_major(&g) - fd).norm() / scale);
        }
    }
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 100 cases"))
}

fn curvature_tabular_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 5);
    let mut details = Vec::new();
    let mut passed = true;
    for _ in 0..5 {
        let (mdp, n, a, seed) = random_tabular(&mut rng);
        let pi = SoftmaxPolicy::random(n, a, 1.0, seed);
        let mut dir_rng = stream_rng(seed, 1);
        let dir = DVector::from_fn(pi.n_params(), |_, _| dir_rng.random_range(-1.0..1.0)).normalize();
        for setup in SETUPS {
            let w = policy_curvature(&mdp, &pi, setup)?.curvature.expect("exact curvature");
            let errors = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|scale| {
                    let delta = &dir * *scale;
                    let quad = 0.5 * delta.dot(&(&w * &delta));
                    Ok((kl_metric(&mdp, &pi.perturbed(&delta), &pi, setup)? / quad - 1.0).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            // First order in the step, down to a roundoff floor for KL values near 1e-9.
            passed &= errors[0] < 0.05 && errors[1] <= 0.2 * errors[0] + 1e-6 && errors[2] <= 0.02 * errors[0] + 1e-6;
            details.push(errors[2]);
        }
    }
    let worst = details.iter().cloned().fold(0.0, f64::max);
    check(passed, format!("|KL / quadratic - 1| shrinks linearly; worst at step 1e-4: {worst:.2e}"))
}

/// `sum_t c^t Cov_t` with `Cov_0 = W`; the stationary covariance when `c = 1`.
fn moment_series(problem: &LqrProblem, k: &LqrGains, setup: Setup) -> DMatrix<f64> {
    let a_k = problem.closed_loop(k);
    let mut cov = problem.w_cov.clone();
    let mut moment = DMatrix::zeros(cov.nrows(), cov.ncols());
    let mut discount = 1.0;
    match setup {
        Setup::Discounted { gamma } => {
            while discount > 1e-18 {
                moment += &cov * discount;
                cov = &a_k * cov * a_k.transpose() + &problem.w_cov;
                discount *= gamma;
            }
        }
        Setup::Average => loop {
            let next = &a_k * &cov * a_k.transpose() + &problem.w_cov;
            let change = (&next - &cov).amax();
            cov = next;
            if change <= 1e-15 * cov.amax() {
                moment = cov;
                break;
            }
        },
    }
    moment
}

fn curvature_lqr_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 6);
    let mut worst_x: f64 = 0.0;
    let mut worst_metric: f64 = 0.0;
    for _ in 0..20 {
        let (problem, k) = random_lqr(&mut rng)?;
        let (m, n) = k.k_mat.shape();
        for setup in [Setup::Discounted { gamma: 0.7 }, Setup::Average] {
            let moment = moment_series(&problem, &k, setup);
            let x = polopt_core::lqr::curvature(&problem, &k, setup)?;
            worst_x = worst_x.max((x - &moment).amax() / moment.amax().max(1.0));
            // The metric is a quadratic form in delta; its Hessian is 2 * moment.
            for _ in 0..5 {
                let delta = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
                let exact = (&delta * &moment * delta.transpose()).trace();
                let metric = polopt_core::lqr::euclidean_metric(&problem, &k, &k.offset(&delta), setup)?;
                worst_metric = worst_metric.max((metric - exact).abs() / exact.max(1.0));
            }
        }
    }
    check(
        worst_x < 1e-10 && worst_metric < 1e-10,
        format!("max |X - moment series| = {worst_x:.2e}; max metric error {worst_metric:.2e}"),
    )
}

fn limits_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut passed = true;
    let mut worst_gap: f64 = 0.0;
    for i in 0..20 {
        let seed = ctx.base_seed.wrapping_add(100 + i);
        let mdp = TabularMdp::random(5, 3, seed);
        let pi = SoftmaxPolicy::random(5, 3, 1.0, seed);
        let rows = abel_limit_study(&mdp, &pi, &DEFAULT_GAMMA_GRID)?;
        let j_mu = rows[0].average;
        let last = rows.last().expect("grid is nonempty").gap / j_mu.abs().max(1.0);
        passed &= rows.windows(2).all(|w| w[1].gap <= w[0].gap) && last < 1e-3;
        worst_gap = worst_gap.max(last);

        let adv_mu = value_functions(&mdp, &pi, Setup::Average)?.adv;
        let adv_gamma = value_functions(&mdp, &pi, Setup::Discounted { gamma: 0.9999 })?.adv;
        passed &= (adv_gamma - &adv_mu).amax() < 1e-2 * adv_mu.amax().max(1.0);
    }
    check(passed, format!("20 MDPs; worst relative Abel gap at 0.9999: {worst_gap:.2e}"))
}

fn bias_suite(_: &VerifyContext) -> Result<Check> {
    let mdp = TabularMdp::random(3, 2, 21);
    let pi = SoftmaxPolicy::random(3, 2, 1.0, 21);
    let study = estimator_bias_study(&mdp, &pi, 0.7, 1000, 2000, 21)?;
    let passed = study.correct.verdict == Verdict::MatchesExact && study.hybrid.verdict == Verdict::MatchesMixed;
    check(passed, format!("correct: {:?}, hybrid: {:?}", study.correct.verdict, study.hybrid.verdict))
}

fn lqr_identity_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (problem, k_old) = random_lqr(&mut rng)?;
        let (m, n) = k_old.k_mat.shape();
        let k_new = loop {
            let k = k_old.offset(&DMatrix::from_fn(m, n, |_, _| rng.random_range(-0.3..0.3)));
            if is_stable(&problem, &k, Setup::Average) {
                break k;
            }
        };
        for setup in [Setup::Discounted { gamma: 0.7 }, Setup::Average] {
            let diff = performance_difference_with(&problem, &k_old, &k_new, setup, ctx.correction)?;
            let direct = solve(&problem, &k_new, setup)?.objective - solve(&problem, &k_old, setup)?.objective;
            worst = worst.max((diff.total - direct).abs() / direct.abs().max(1.0));
        }
    }
    check(worst < 1e-8, format!("max relative error {worst:.2e} over 100 cases"))
}

const EXAMPLE_GAMMA: f64 = 0.7;

fn hybrid_field_suite(_: &VerifyContext) -> Result<Check> {
    let problem = LqrProblem::two_state_example(1.0);
    let k0 = LqrGains::from_row_slice(1, 2, &[0.0, 1.5]);
    let k_mu = riccati_fixed_point(&problem, Setup::Average, &k0)?;
    let k_gamma = riccati_fixed_point(&problem, Setup::Discounted { gamma: EXAMPLE_GAMMA }, &k0)?;
    let at = |k: &LqrGains| (k.k_mat[0], k.k_mat[1]);
    let mut worst: f64 = 0.0;
    for (method, k) in [
        (FieldMethod::PolicyIterationDirection, &k_mu),
        (FieldMethod::GradJMu, &k_mu),
        (FieldMethod::NpgMu, &k_mu),
        (FieldMethod::GradJGamma, &k_gamma),
        (FieldMethod::NpgGamma, &k_gamma),
    ] {
        let row = field_row(&problem, EXAMPLE_GAMMA, method, 0, at(k));
        ensure!(row.stable, "{} undefined at its optimum", method.name());
        worst = worst.max(row.magnitude);
    }
    // Hybrids run in the average setup, so their reference is the average-setup method they replace.
    let pairs = [
        (FieldMethod::HybridGradient, FieldMethod::GradJMu),
        (FieldMethod::HybridNpg, FieldMethod::NpgMu),
        (FieldMethod::HybridNpgHybridGrad, FieldMethod::NpgMu),
        (FieldMethod::HybridGradient, FieldMethod::GradJGamma),
    ];
    let rows = vector_field(&problem, EXAMPLE_GAMMA, &Grid::default(), &FieldMethod::ALL)?;
    let mut least: f64 = 1.0;
    let mut parts = Vec::new();
    for (hybrid, reference) in pairs {
        let (fraction, n) = angle_exceedance(&rows, hybrid, reference, 1.0);
        least = least.min(fraction);
        parts.push(format!("{} vs {} {:.0}% of {n}", hybrid.name(), reference.name(), 100.0 * fraction));
    }
    check(
        worst < 1e-6 && least >= 0.2,
        format!("max field norm at optima {worst:.2e}; > 1 deg: {}", parts.join(", ")),
    )
}

fn gap_plateau_suite(_: &VerifyContext) -> Result<Check> {
    let runs = gap_experiment(&GapConfig {
        gamma: EXAMPLE_GAMMA,
        ..GapConfig::default()
    })?;
    let mut passed = true;
    let mut notes = Vec::new();
    for run in &runs {
        let correct = matches!(run.method, GapMethod::Gradient | GapMethod::NaturalGradient);
        if correct {
            let ok = run.final_gap() < 1e-8;
            passed &= ok;
            if !ok {
                notes.push(format!("{} {} stalled at {:.2e}", run.setup.label(), run.method.name(), run.final_gap()));
            }
        } else if run.method.is_hybrid() && run.setup == Setup::Average {
            let plateau = run.final_gap() / run.j_star;
            passed &= plateau > 1e-3;
            notes.push(format!("{} plateau {:.2}%", run.method.name(), 100.0 * plateau));
        }
    }
    check(passed, format!("correct methods converge; {}", notes.join(", ")))
}

fn gradient_sweep_suite(_: &VerifyContext) -> Result<Check> {
    let cells = sweep(&[0.3, 1.0], &[0.7, 0.99], &Grid::default())?;
    let cosine = |alpha: f64, gamma: f64| {
        cells
            .iter()
            .find(|c| c.alpha == alpha && c.gamma == gamma)
            .map(|c| c.mean_cosine)
            .expect("cell was requested")
    };
    let small = [cosine(0.3, 0.7), cosine(0.3, 0.99)];
    let large = cosine(1.0, 0.7);
    let passed = small.iter().all(|c| *c > 0.99) && large < small[0];
    check(passed, format!("mean cosine alpha 0.3: {:.4} / {:.4}; alpha 1, gamma 0.7: {large:.4}", small[0], small[1]))
}

fn pi_tabular_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut passed = true;
    for i in 0..20u64 {
        let seed = ctx.base_seed.wrapping_add(20_000 + i);
        let n = 2 + (i as usize % 4);
        let mdp = TabularMdp::random(n, 3, seed);
        for setup in SETUPS {
            let (_, best) = enumerate_deterministic_optimum(&mdp, setup)?;
            let path = policy_iteration(&mdp, &SoftmaxPolicy::uniform(n, 3), setup, 1000)?;
            let reached = path.last().expect("path has a start").1;
            passed &= path.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
            passed &= (reached - best).abs() < 1e-10 * best.abs().max(1.0);
        }
    }
    check(passed, "20 MDPs, both setups: monotone and equal to enumeration".into())
}

/// Gains from value iteration on the Riccati map, independent of policy evaluation.
fn dare_value_iteration(problem: &LqrProblem, setup: Setup) -> Result<LqrGains> {
    let gamma = setup.continuation();
    let (a, b, q, r) = (&problem.a_mat, &problem.b_mat, &problem.q_cost, &problem.r_cost);
    let mut p = q.clone();
    for _ in 0..1_000_000 {
        let u = r + b.transpose() * &p * b * gamma;
        let bpa = b.transpose() * &p * a * gamma;
        let Some(k) = u.lu().solve(&bpa) else { bail!("singular value-iteration step") };
        // Sum of PSD terms; the subtractive form loses definiteness once P is large.
        let a_k = a - b * &k;
        let next = symmetrize(&(q + k.transpose() * r * &k + a_k.transpose() * &p * &a_k * gamma));
        let change = (&next - &p).amax();
        p = next;
        if change < 1e-13 * p.amax().max(1.0) {
            return Ok(LqrGains::new(k)?);
        }
    }
    bail!("value iteration did not converge")
}

fn pi_lqr_suite(ctx: &VerifyContext) -> Result<Check> {
    let mut rng = stream_rng(ctx.base_seed, 8);
    let mut cases = vec![(LqrProblem::two_state_example(1.0), LqrGains::from_row_slice(1, 2, &[0.0, 1.5]))];
    for _ in 0..20 {
        cases.push(random_lqr(&mut rng)?);
    }
    let mut passed = true;
    let mut worst: f64 = 0.0;
    for (problem, k0) in &cases {
        for setup in [Setup::Discounted { gamma: 0.7 }, Setup::Average] {
            let iterates = riccati_iterates(problem, setup, k0)?;
            passed &= iterates.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12 * w[0].1.abs().max(1.0));
            let k_pi = &iterates.last().expect("iterates start at k0").0;
            let k_fixed = riccati_fixed_point(problem, setup, k0)?;
            let k_vi = dare_value_iteration(problem, setup)?;
            worst = worst.max((&k_pi.k_mat - &k_vi.k_mat).amax()).max((&k_fixed.k_mat - &k_vi.k_mat).amax());
        }
    }
    check(passed && worst < 1e-8, format!("21 systems, both setups; max |K_pi - K_vi| = {worst:.2e}"))
}
