//! Solves the diffusion HJB equation on a bounded grid via the
//! zero-correlation transform, plus grid-refinement and domain-expansion
//! studies.

use rayon::prelude::*;
use serde::Serialize;

use crate::discretizer::{assemble_discrete_hjb, Grid, Scheme};
use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::regime_solver::{solve_matrix_equation, SolverMethod, SolverOptions, WellPosednessReport};

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub scheme: Scheme,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, scheme: Scheme::Upwind, max_iterations: 10_000 }
    }
}

/// Consumption rate, value factor and policies at the grid nodes.
#[derive(Clone, Debug, Serialize)]
pub struct DiffusionSolution {
    pub grid: Grid,
    pub y: Vec<f64>,
    /// Optimal consumption rate.
    pub u: Vec<f64>,
    /// Value factor `u^{-R}`.
    pub f: Vec<f64>,
    /// `u'/u` by central differences, one-sided at the ends.
    pub du_over_u: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub eta: Vec<f64>,
    pub scheme: Scheme,
    pub tol: f64,
    pub iterations: usize,
    pub method: SolverMethod,
    /// Relative residual of the discrete equation in the transformed
    /// variable `v`, where `f = v^phi`.
    pub residual: f64,
    /// Risk aversion of the original model.
    pub risk_aversion: f64,
    /// Risk aversion of the equivalent zero-correlation model.
    pub r_tilde: f64,
    pub phi: f64,
}

impl DiffusionSolution {
    /// Linear interpolation of u, clamped to the grid.
    pub fn u_at(&self, y: f64) -> f64 {
        interpolate(&self.grid, &self.u, y)
    }

    /// Nodes inside `[lo, hi]`.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Vec<usize> {
        let eps = 1e-9 * self.grid.h;
        (0..self.y.len()).filter(|&i| self.y[i] >= lo - eps && self.y[i] <= hi + eps).collect()
    }
}

pub(crate) fn interpolate(grid: &Grid, values: &[f64], y: f64) -> f64 {
    let t = ((y - grid.lower) / grid.h).clamp(0.0, grid.n as f64);
    let k = (t.floor() as usize).min(grid.n.saturating_sub(1));
    let w = t - k as f64;
    if w == 0.0 {
        values[k]
    } else {
        (1.0 - w) * values[k] + w * values[k + 1]
    }
}

/// `u'/u` from nodal values.
pub fn log_derivative(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = grid.h;
    (0..n)
        .map(|i| {
            let d = if n == 1 {
                0.0
            } else if i == 0 {
                (u[1] - u[0]) / h
            } else if i == n - 1 {
                (u[n - 1] - u[n - 2]) / h
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            };
            d / u[i]
        })
        .collect()
}

/// Certify and solve on `[lower, upper]` with `n` intervals.
pub fn solve(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
    opts: &SolveOptions,
) -> Result<DiffusionSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let (zero, phi) = model.to_zero_correlation();
    let (a, grid, eta) = assemble_discrete_hjb(&zero, lower, upper, n, opts.scheme)?;
    let report = WellPosednessReport::assess(&a, &eta)?;
    if !report.verdict {
        return Err(Error::IllPosed(Box::new(report)));
    }
    let r_tilde = zero.risk_aversion();
    let p = 1.0 - 1.0 / r_tilde;
    let sopts = SolverOptions { tol: opts.tol, max_iterations: opts.max_iterations, start: None };
    let sol = solve_matrix_equation(&a, p, &sopts)?;

    let big_r = model.base_risk_aversion();
    let u: Vec<f64> = sol.x.iter().map(|v| v.powf(-1.0 / r_tilde)).collect();
    let f: Vec<f64> = sol.x.iter().map(|v| v.powf(phi)).collect();
    let y = grid.nodes();
    let du_over_u = log_derivative(&grid, &u);
    let pi_hat = y.iter().zip(&du_over_u).map(|(&yi, &g)| model.portfolio_weight(yi, g)).collect();
    Ok(DiffusionSolution {
        grid,
        y,
        u,
        f,
        du_over_u,
        pi_hat,
        eta,
        scheme: opts.scheme,
        tol: opts.tol,
        iterations: sol.iterations,
        method: sol.method,
        residual: sol.residual,
        risk_aversion: big_r,
        r_tilde,
        phi,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    GridRefinement,
    DomainExpansion,
}

/// One resolution or domain, with the difference to the next entry.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    /// N for refinement, m for expansion.
    pub index: f64,
    pub lower: f64,
    pub upper: f64,
    pub h: f64,
    pub iterations: usize,
    /// Sup-difference to the next row's solution.
    pub difference: Option<f64>,
    /// Local order (refinement) or ratio of consecutive differences
    /// (expansion).
    pub rate: Option<f64>,
    /// Whether `difference` lies above the solver-tolerance floor.
    pub above_floor: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub kind: StudyKind,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares order in h (refinement) or geometric rate per unit of
    /// m (expansion).
    pub fitted_rate: Option<f64>,
    /// Differences at or below this are indistinguishable from solver
    /// error.
    pub floor: f64,
    pub pairs_used: usize,
    pub window: Option<(f64, f64)>,
}

impl ConvergenceTable {
    pub fn differences(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.difference).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,lower,upper,h,iterations,difference,rate,above_floor\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{},{},{},{}\n",
                r.index,
                r.lower,
                r.upper,
                r.h,
                r.iterations,
                opt(r.difference),
                opt(r.rate),
                r.above_floor.map_or(String::new(), |b| b.to_string()),
            ));
        }
        out
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Error bound of a solution attributable to the solver tolerance. The
/// solver stops when `log v` is within `tol` of the fixed point and
/// `u = v^{-1/R_tilde}`, so two solutions can differ by
/// `2 tol max u / R_tilde` without any discretization effect.
fn tolerance_floor(sol: &DiffusionSolution, idx: &[usize]) -> f64 {
    let umax = idx.iter().map(|&i| sol.u[i]).fold(0.0, f64::max);
    2.0 * sol.tol * umax / sol.r_tilde
}

/// Pairwise sup-differences on common nodes for increasing N.
pub fn grid_refinement_study(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n_list: &[usize],
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("need at least two increasing resolutions".into()));
    }
    let sols: Vec<DiffusionSolution> = n_list
        .par_iter()
        .map(|&n| solve(model, lower, upper, n, opts))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ConvergenceRow> = sols
        .iter()
        .map(|s| ConvergenceRow {
            index: s.grid.n as f64,
            lower,
            upper,
            h: s.grid.h,
            iterations: s.iterations,
            difference: None,
            rate: None,
            above_floor: None,
        })
        .collect();
    let mut floor = 0.0f64;
    for k in 0..sols.len() - 1 {
        let (c, f) = (&sols[k], &sols[k + 1]);
        let g = gcd(c.grid.n, f.grid.n);
        let (sc, sf) = (c.grid.n / g, f.grid.n / g);
        let diff = (0..=g).map(|j| (c.u[j * sc] - f.u[j * sf]).abs()).fold(0.0, f64::max);
        let all: Vec<usize> = (0..c.u.len()).collect();
        let fl = tolerance_floor(c, &all).max(tolerance_floor(f, &(0..f.u.len()).collect::<Vec<_>>()));
        floor = floor.max(fl);
        rows[k].difference = Some(diff);
        rows[k].above_floor = Some(diff > fl);
    }
    for k in 0..rows.len().saturating_sub(2) {
        if let (Some(d0), Some(d1)) = (rows[k].difference, rows[k + 1].difference) {
            rows[k].rate = Some((d0 / d1).ln() / (rows[k].h / rows[k + 1].h).ln());
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.above_floor == Some(true))
        .map(|r| (r.h.ln(), r.difference.expect("set above").ln()))
        .unzip();
    Ok(ConvergenceTable {
        kind: StudyKind::GridRefinement,
        fitted_rate: least_squares_slope(&xs, &ys),
        pairs_used: xs.len(),
        rows,
        floor,
        window: None,
    })
}

/// Solutions on nested domains with a common spacing, compared on a fixed
/// window. The fitted rate is `exp(slope)` of log-differences against the
/// domain index, using only differences above the tolerance floor.
pub fn domain_expansion_study(
    model: &DiffusionModel,
    domains: &[(f64, f64, f64)],
    h: f64,
    window: (f64, f64),
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    if domains.len() < 2 {
        return Err(Error::InvalidArgument("need at least two domains".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("spacing h must be positive".into()));
    }
    for w in domains.windows(2) {
        if !(w[1].1 <= w[0].1 && w[1].2 >= w[0].2) {
            return Err(Error::InvalidArgument("domains must be nested".into()));
        }
    }
    let (w0, w1) = window;
    if !(w0 <= w1 && w0 >= domains[0].1 && w1 <= domains[0].2) {
        return Err(Error::InvalidArgument("window must lie inside the smallest domain".into()));
    }
    let sols: Vec<DiffusionSolution> = domains
        .par_iter()
        .map(|&(_, lo, hi)| {
            let n = ((hi - lo) / h).round().max(1.0) as usize;
            solve(model, lo, hi, n, opts)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ConvergenceRow> = domains
        .iter()
        .zip(&sols)
        .map(|(&(m, lo, hi), s)| ConvergenceRow {
            index: m,
            lower: lo,
            upper: hi,
            h: s.grid.h,
            iterations: s.iterations,
            difference: None,
            rate: None,
            above_floor: None,
        })
        .collect();
    let mut floor = 0.0f64;
    for k in 0..sols.len() - 1 {
        let (a, b) = (&sols[k], &sols[k + 1]);
        let idx = a.window_indices(w0, w1);
        let diff = idx.iter().map(|&i| (a.u[i] - b.u_at(a.y[i])).abs()).fold(0.0, f64::max);
        let idx_b = b.window_indices(w0, w1);
        let fl = tolerance_floor(a, &idx).max(tolerance_floor(b, &idx_b));
        floor = floor.max(fl);
        rows[k].difference = Some(diff);
        rows[k].above_floor = Some(diff > fl);
    }
    for k in 0..rows.len().saturating_sub(2) {
        if let (Some(d0), Some(d1)) = (rows[k].difference, rows[k + 1].difference) {
            rows[k].rate = Some(d1 / d0);
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.above_floor == Some(true))
        .map(|r| (r.index, r.difference.expect("set above").ln()))
        .unzip();
    Ok(ConvergenceTable {
        kind: StudyKind::DomainExpansion,
        fitted_rate: least_squares_slope(&xs, &ys).map(f64::exp),
        pairs_used: xs.len(),
        rows,
        floor,
        window: Some(window),
    })
}

/// Domain-expansion study over the model's default nested domains.
pub fn domain_expansion_for(
    model: &DiffusionModel,
    m_list: &[f64],
    h: f64,
    window: (f64, f64),
    opts: &SolveOptions,
) -> Result<ConvergenceTable> {
    let domains = m_list
        .iter()
        .map(|&m| model.default_domain(m).map(|(lo, hi)| (m, lo, hi)))
        .collect::<Result<Vec<_>>>()?;
    domain_expansion_study(model, &domains, h, window, opts)
}
