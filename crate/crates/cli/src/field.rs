//! Update-direction fields over a grid of 1x2 gains, and the alpha x gamma sweep.

use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use nalgebra::DMatrix;
use polopt_core::linalg::{angle_degrees, cosine};
use polopt_core::lqr::incorrect::{hybrid_gradient, hybrid_npg, hybrid_npg_hybrid_grad};
use polopt_core::lqr::{gradient, is_stable, natural_gradient, policy_improvement, LqrGains, LqrProblem};
use polopt_core::mdp::Setup;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{csv_string, fmt_f64};
use crate::svg::{Frame, Svg, PALETTE};

/// `k0` varies slowest. `steps` points per axis, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub k0_min: f64,
    pub k0_max: f64,
    pub k1_min: f64,
    pub k1_max: f64,
    pub steps: usize,
}

/// Brackets both optimal gains of the default system and the average-setup
/// stability boundary. Not taken from any published figure.
impl Default for Grid {
    fn default() -> Self {
        Grid {
            k0_min: -1.0,
            k0_max: 2.0,
            k1_min: -1.0,
            k1_max: 2.0,
            steps: 21,
        }
    }
}

impl FromStr for Grid {
    type Err = anyhow::Error;

    /// `K0MIN,K0MAX,K1MIN,K1MAX,N`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            bail!("grid needs K0MIN,K0MAX,K1MIN,K1MAX,N; got {s:?}");
        }
        let num = |i: usize| -> Result<f64> { parts[i].parse::<f64>().map_err(|e| anyhow::anyhow!("grid field {}: {e}", i + 1)) };
        let grid = Grid {
            k0_min: num(0)?,
            k0_max: num(1)?,
            k1_min: num(2)?,
            k1_max: num(3)?,
            steps: parts[4].parse().map_err(|e| anyhow::anyhow!("grid steps: {e}"))?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, "grid steps must be at least 1");
        ensure!(
            [self.k0_min, self.k0_max, self.k1_min, self.k1_max].iter().all(|x| x.is_finite()),
            "grid bounds must be finite"
        );
        ensure!(self.k0_min <= self.k0_max && self.k1_min <= self.k1_max, "grid bounds must satisfy min <= max");
        ensure!(self.steps == 1 || (self.k0_min < self.k0_max && self.k1_min < self.k1_max), "a multi-step grid needs min < max");
        Ok(())
    }

    fn axis(min: f64, max: f64, steps: usize, i: usize) -> f64 {
        if steps == 1 {
            min
        } else {
            min + (max - min) * i as f64 / (steps - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.steps;
        (0..n * n)
            .map(|idx| {
                (
                    Self::axis(self.k0_min, self.k0_max, n, idx / n),
                    Self::axis(self.k1_min, self.k1_max, n, idx % n),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldMethod {
    PolicyIterationDirection,
    GradJMu,
    NpgMu,
    GradJGamma,
    NpgGamma,
    HybridGradient,
    HybridNpg,
    HybridNpgHybridGrad,
}

impl FieldMethod {
    pub const ALL: [FieldMethod; 8] = [
        FieldMethod::PolicyIterationDirection,
        FieldMethod::GradJMu,
        FieldMethod::NpgMu,
        FieldMethod::GradJGamma,
        FieldMethod::NpgGamma,
        FieldMethod::HybridGradient,
        FieldMethod::HybridNpg,
        FieldMethod::HybridNpgHybridGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldMethod::PolicyIterationDirection => "policy_iteration_direction",
            FieldMethod::GradJMu => "grad_J_mu",
            FieldMethod::NpgMu => "npg_mu",
            FieldMethod::GradJGamma => "grad_J_gamma",
            FieldMethod::NpgGamma => "npg_gamma",
            FieldMethod::HybridGradient => "hybrid_gradient",
            FieldMethod::HybridNpg => "hybrid_npg",
            FieldMethod::HybridNpgHybridGrad => "hybrid_npg_hybrid_grad",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(
            self,
            FieldMethod::HybridGradient | FieldMethod::HybridNpg | FieldMethod::HybridNpgHybridGrad
        )
    }

    /// The setup whose optimum this method targets. Hybrids are computed
    /// with discounted quantities but sampled under the stationary measure.
    pub fn target_setup(self, gamma: f64) -> Setup {
        match self {
            FieldMethod::GradJGamma | FieldMethod::NpgGamma => Setup::Discounted { gamma },
            _ => Setup::Average,
        }
    }

    /// Whether `k` lies where the method is defined.
    pub fn defined_at(self, problem: &LqrProblem, k: &LqrGains, gamma: f64) -> bool {
        let discounted = Setup::Discounted { gamma };
        match self {
            FieldMethod::GradJGamma | FieldMethod::NpgGamma => is_stable(problem, k, discounted),
            _ if self.is_hybrid() => is_stable(problem, k, discounted) && is_stable(problem, k, Setup::Average),
            _ => is_stable(problem, k, Setup::Average),
        }
    }

    /// Raw update direction for cost minimization (minus the gradient-like quantity).
    pub fn direction(self, problem: &LqrProblem, k: &LqrGains, gamma: f64) -> polopt_core::Result<DMatrix<f64>> {
        let discounted = Setup::discounted(gamma)?;
        Ok(match self {
            FieldMethod::PolicyIterationDirection => policy_improvement(problem, k, Setup::Average)?.k_mat - &k.k_mat,
            FieldMethod::GradJMu => -gradient(problem, k, Setup::Average)?,
            FieldMethod::NpgMu => -natural_gradient(problem, k, Setup::Average)?,
            FieldMethod::GradJGamma => -gradient(problem, k, discounted)?,
            FieldMethod::NpgGamma => -natural_gradient(problem, k, discounted)?,
            FieldMethod::HybridGradient => -hybrid_gradient(problem, k, gamma)?,
            FieldMethod::HybridNpg => -hybrid_npg(problem, k, gamma)?,
            FieldMethod::HybridNpgHybridGrad => -hybrid_npg_hybrid_grad(problem, k, gamma)?,
        })
    }
}

impl FromStr for FieldMethod {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub method: FieldMethod,
    pub index: usize,
    pub k0: f64,
    pub k1: f64,
    /// Unit direction; NaN where the method is undefined.
    pub dk0: f64,
    pub dk1: f64,
    /// Norm before normalization.
    pub magnitude: f64,
    pub stable: bool,
}

fn gains(k0: f64, k1: f64) -> LqrGains {
    LqrGains::from_row_slice(1, 2, &[k0, k1])
}

pub fn field_row(problem: &LqrProblem, gamma: f64, method: FieldMethod, index: usize, (k0, k1): (f64, f64)) -> FieldRow {
    let k = gains(k0, k1);
    let stable = method.defined_at(problem, &k, gamma);
    let raw = if stable { method.direction(problem, &k, gamma).ok() } else { None };
    let defined = raw.is_some();
    let (dk0, dk1, magnitude) = match raw {
        Some(d) => {
            let norm = d.norm();
            if norm > 0.0 {
                (d[0] / norm, d[1] / norm, norm)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    FieldRow {
        method,
        index,
        k0,
        k1,
        dk0,
        dk1,
        magnitude,
        stable: defined,
    }
}

/// Rows for every method and grid point, ordered by (method, grid index).
pub fn vector_field(problem: &LqrProblem, gamma: f64, grid: &Grid, methods: &[FieldMethod]) -> Result<Vec<FieldRow>> {
    ensure!(problem.state_dim() == 2 && problem.input_dim() == 1, "vector fields need a 2-state, 1-input system");
    ensure!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1), got {gamma}");
    grid.validate()?;
    let points = grid.points();
    let tasks: Vec<(FieldMethod, usize)> = methods
        .iter()
        .flat_map(|m| (0..points.len()).map(move |i| (*m, i)))
        .collect();
    Ok(tasks
        .into_par_iter()
        .map(|(m, i)| field_row(problem, gamma, m, i, points[i]))
        .collect())
}

pub const FIELD_HEADER: [&str; 8] = ["method", "index", "k0", "k1", "dk0", "dk1", "magnitude", "stable"];

pub fn field_record(r: &FieldRow) -> Vec<String> {
    vec![
        r.method.name().to_string(),
        r.index.to_string(),
        fmt_f64(r.k0),
        fmt_f64(r.k1),
        fmt_f64(r.dk0),
        fmt_f64(r.dk1),
        fmt_f64(r.magnitude),
        r.stable.to_string(),
    ]
}

pub fn field_csv(rows: &[FieldRow]) -> Result<String> {
    csv_string(&FIELD_HEADER, rows.iter().map(field_record))
}

fn by_method(rows: &[FieldRow], method: FieldMethod) -> Vec<&FieldRow> {
    rows.iter().filter(|r| r.method == method).collect()
}

/// Fraction of grid points (where both are defined) at which the two
/// directions differ by more than `threshold_deg`; also returns the count.
pub fn angle_exceedance(rows: &[FieldRow], a: FieldMethod, b: FieldMethod, threshold_deg: f64) -> (f64, usize) {
    let (ra, rb) = (by_method(rows, a), by_method(rows, b));
    let mut total = 0;
    let mut over = 0;
    for (x, y) in ra.iter().zip(&rb) {
        if x.stable && y.stable && x.magnitude > 0.0 && y.magnitude > 0.0 {
            total += 1;
            if angle_degrees(&[x.dk0, x.dk1], &[y.dk0, y.dk1]) > threshold_deg {
                over += 1;
            }
        }
    }
    (if total == 0 { f64::NAN } else { over as f64 / total as f64 }, total)
}

/// Mean cosine between two methods' directions over points where both are defined.
pub fn mean_cosine(rows: &[FieldRow], a: FieldMethod, b: FieldMethod) -> (f64, usize) {
    let (ra, rb) = (by_method(rows, a), by_method(rows, b));
    let values: Vec<f64> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.stable && y.stable && x.magnitude > 0.0 && y.magnitude > 0.0)
        .map(|(x, y)| cosine(&[x.dk0, x.dk1], &[y.dk0, y.dk1]))
        .collect();
    let n = values.len();
    (if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 }, n)
}

/// Small multiples, one panel per method.
pub fn field_svg(rows: &[FieldRow], grid: &Grid, title: &str) -> String {
    let mut methods: Vec<FieldMethod> = rows.iter().map(|r| r.method).collect();
    methods.dedup();
    let cols = 4usize;
    let panel = 220.0;
    let rows_n = methods.len().div_ceil(cols).max(1);
    let mut svg = Svg::new(cols as f64 * (panel + 30.0) + 20.0, rows_n as f64 * (panel + 40.0) + 40.0);
    svg.text(10.0, 18.0, title, 14.0);
    let cell = panel / grid.steps.max(2) as f64;
    for (i, m) in methods.iter().enumerate() {
        let frame = Frame {
            x0: 20.0 + (i % cols) as f64 * (panel + 30.0),
            y0: 50.0 + (i / cols) as f64 * (panel + 40.0),
            width: panel,
            height: panel,
            x_range: (grid.k0_min, grid.k0_max),
            y_range: (grid.k1_min, grid.k1_max),
        };
        svg.frame(&frame, m.name());
        let color = PALETTE[i % PALETTE.len()];
        for r in rows.iter().filter(|r| r.method == *m) {
            let (px, py) = frame.map(r.k0, r.k1);
            if r.stable {
                svg.arrow(px, py, r.dk0 * cell * 0.8, -r.dk1 * cell * 0.8, color);
            } else {
                svg.dot(px, py, "#ccc");
            }
        }
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub gamma: f64,
    pub mean_cosine: f64,
    pub n_points: usize,
    pub rows: Vec<FieldRow>,
}

/// One vector field per `(alpha, gamma)` on the scaled system `alpha A`, with
/// the mean cosine between the discounted and average gradient directions.
pub fn sweep(alphas: &[f64], gammas: &[f64], grid: &Grid) -> Result<Vec<SweepCell>> {
    ensure!(!alphas.is_empty() && !gammas.is_empty(), "sweep needs at least one alpha and one gamma");
    ensure!(alphas.iter().all(|a| a.is_finite() && *a > 0.0), "alphas must be positive");
    alphas
        .iter()
        .flat_map(|a| gammas.iter().map(move |g| (*a, *g)))
        .map(|(alpha, gamma)| {
            let rows = vector_field(&LqrProblem::two_state_example(alpha), gamma, grid, &FieldMethod::ALL)?;
            let (mean, n) = mean_cosine(&rows, FieldMethod::GradJGamma, FieldMethod::GradJMu);
            Ok(SweepCell {
                alpha,
                gamma,
                mean_cosine: mean,
                n_points: n,
                rows,
            })
        })
        .collect()
}

pub fn sweep_summary_csv(cells: &[SweepCell]) -> Result<String> {
    csv_string(
        &["alpha", "gamma", "mean_cosine", "n_points"],
        cells
            .iter()
            .map(|c| vec![fmt_f64(c.alpha), fmt_f64(c.gamma), fmt_f64(c.mean_cosine), c.n_points.to_string()]),
    )
}

pub fn sweep_field_csv(cells: &[SweepCell]) -> Result<String> {
    let mut header = vec!["alpha", "gamma"];
    header.extend(FIELD_HEADER);
    csv_string(
        &header,
        cells.iter().flat_map(|c| {
            c.rows.iter().map(move |r| {
                let mut rec = vec![fmt_f64(c.alpha), fmt_f64(c.gamma)];
                rec.extend(field_record(r));
                rec
            })
        }),
    )
}

/// Panel grid (alpha down, gamma across) of the discounted and average gradient arrows.
pub fn sweep_svg(cells: &[SweepCell], grid: &Grid) -> String {
    let mut alphas: Vec<f64> = cells.iter().map(|c| c.alpha).collect();
    alphas.dedup();
    let cols = cells.len() / alphas.len().max(1);
    let panel = 220.0;
    let mut svg = Svg::new(cols.max(1) as f64 * (panel + 30.0) + 20.0, alphas.len() as f64 * (panel + 40.0) + 40.0);
    svg.text(10.0, 18.0, "grad_J_gamma (blue) vs grad_J_mu (red)", 14.0);
    let cell_px = panel / grid.steps.max(2) as f64;
    for (i, c) in cells.iter().enumerate() {
        let frame = Frame {
            x0: 20.0 + (i % cols.max(1)) as f64 * (panel + 30.0),
            y0: 50.0 + (i / cols.max(1)) as f64 * (panel + 40.0),
            width: panel,
            height: panel,
            x_range: (grid.k0_min, grid.k0_max),
            y_range: (grid.k1_min, grid.k1_max),
        };
        svg.frame(&frame, &format!("alpha={} gamma={} cos={:.4}", c.alpha, c.gamma, c.mean_cosine));
        for (method, color) in [(FieldMethod::GradJGamma, PALETTE[0]), (FieldMethod::GradJMu, PALETTE[1])] {
            for r in c.rows.iter().filter(|r| r.method == method && r.stable) {
                let (px, py) = frame.map(r.k0, r.k1);
                svg.arrow(px, py, r.dk0 * cell_px * 0.8, -r.dk1 * cell_px * 0.8, color);
            }
        }
    }
    svg.finish()
}
