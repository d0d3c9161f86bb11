//! The Psi operator, proportional sub/supersolution bounds, HJB residuals
//! and tail diagnostics of computed solutions.

use serde::Serialize;

use crate::diffusion_solver::DiffusionSolution;
use crate::discretizer::Grid;
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, Family, Jet};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiEvaluation {
    pub y: f64,
    pub psi_g: f64,
    pub g: f64,
    pub g_prime: f64,
    pub g_second: f64,
    pub a_tilde: f64,
    pub d: f64,
    pub b: f64,
}

/// `Psi g = 1 + (b^2 g''/2 + a_tilde g') / g^2 - d (g')^2 / g^3`.
pub fn psi(model: &DiffusionModel, g: Jet, y: f64) -> Result<PsiEvaluation> {
    if !(g.value > 0.0) {
        return Err(Error::InvalidArgument(format!("Psi needs g(y) > 0, got g({y}) = {}", g.value)));
    }
    let c = model.coefficients_at(y)?;
    let gv = g.value;
    let psi_g = 1.0 + (0.5 * c.b * c.b * g.second + c.a_tilde * g.first) / (gv * gv)
        - c.d * g.first * g.first / (gv * gv * gv);
    Ok(PsiEvaluation {
        y,
        psi_g,
        g: gv,
        g_prime: g.first,
        g_second: g.second,
        a_tilde: c.a_tilde,
        d: c.d,
        b: c.b,
    })
}

/// `Psi eta` with closed-form derivatives where available.
pub fn psi_eta(model: &DiffusionModel, y: f64) -> Result<PsiEvaluation> {
    psi(model, model.eta_jet(y), y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    ClosedForm,
    CentralDifferences,
}

/// Constants `C1 = inf Psi g1`, `C2 = sup Psi g2` over a grid, making
/// `C1 g1` a subsolution and `C2 g2` a supersolution.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsCertificate {
    pub c1: f64,
    pub c2: f64,
    pub valid: bool,
    pub c1_argmin: f64,
    pub c2_argmax: f64,
    pub derivative_source: DerivativeSource,
    pub grid: Vec<f64>,
}

impl BoundsCertificate {
    pub fn lower(&self, g1: Jet) -> f64 {
        self.c1 * g1.value
    }

    pub fn upper(&self, g2: Jet) -> f64 {
        self.c2 * g2.value
    }
}

/// Guide functions for the bounds.
pub fn constant_guide(c: f64) -> impl Fn(f64) -> Jet {
    move |_| Jet::constant(c)
}

pub fn eta_guide(model: &DiffusionModel) -> impl Fn(f64) -> Jet + '_ {
    move |y| model.eta_jet(y)
}

/// `g2(y) = 1 - ((1-R)/R) log(1 + e^{y - y*})` where `eta(y*) = 0`, an
/// upper guide for the short-rate model that dominates `eta`.
pub fn vasicek_upper_guide(model: &DiffusionModel) -> Result<impl Fn(f64) -> Jet> {
    let Family::Vasicek(p) = model.family() else {
        return Err(Error::InvalidArgument("guide applies to the vasicek family only".into()));
    };
    let big_r = model.base_risk_aversion();
    let c = (1.0 - big_r) / big_r;
    let y_star = p.delta / (1.0 - big_r) - p.lambda * p.lambda / (2.0 * big_r);
    Ok(move |y: f64| {
        let z = y - y_star;
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        let logistic = 1.0 / (1.0 + (-z).exp());
        Jet::new(1.0 - c * softplus, -c * logistic, -c * logistic * (1.0 - logistic))
    })
}

pub fn proportional_bounds(
    model: &DiffusionModel,
    g1: &dyn Fn(f64) -> Jet,
    g2: &dyn Fn(f64) -> Jet,
    grid: &[f64],
) -> Result<BoundsCertificate> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let mut violations = Vec::new();
    for (i, &y) in grid.iter().enumerate() {
        let eta = model.frozen_rate(y)?;
        let (l, u) = (g1(y).value, g2(y).value);
        let slack = 1e-12 * eta.abs().max(1e-300);
        if !(l > 0.0 && u > 0.0) || l > eta + slack || u < eta - slack {
            violations.push(i);
        }
    }
    if !violations.is_empty() {
        return Err(Error::BoundOrdering { nodes: violations });
    }
    let (mut c1, mut c1_argmin) = (f64::INFINITY, grid[0]);
    let (mut c2, mut c2_argmax) = (f64::NEG_INFINITY, grid[0]);
    for &y in grid {
        let p1 = psi(model, g1(y), y)?.psi_g;
        let p2 = psi(model, g2(y), y)?.psi_g;
        if p1 < c1 {
            c1 = p1;
            c1_argmin = y;
        }
        if p2 > c2 {
            c2 = p2;
            c2_argmax = y;
        }
    }
    Ok(BoundsCertificate {
        c1,
        c2,
        valid: c1 > 0.0 && c2.is_finite(),
        c1_argmin,
        c2_argmax,
        derivative_source: if model.family().has_closed_form_derivatives() {
            DerivativeSource::ClosedForm
        } else {
            DerivativeSource::CentralDifferences
        },
        grid: grid.to_vec(),
    })
}

/// Pointwise `b^2 u''/2 + a_tilde u' + eta u - u^2 - d (u')^2 / u` at the
/// interior nodes `1..n` (boundary nodes excluded).
pub fn hjb_residual(model: &DiffusionModel, grid: &Grid, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != grid.len() {
        return Err(Error::InvalidArgument("u does not match the grid".into()));
    }
    if let Some(i) = u.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("u[{i}] is not positive")));
    }
    let h = grid.h;
    (1..grid.n)
        .map(|i| {
            let c = model.coefficients_at(grid.node(i))?;
            let d1 = (u[i + 1] - u[i - 1]) / (2.0 * h);
            let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
            Ok(0.5 * c.b * c.b * d2 + c.a_tilde * d1 + c.eta * u[i] - u[i] * u[i]
                - c.d * d1 * d1 / u[i])
        })
        .collect()
}

/// `Psi u` from finite differences of nodal values, at interior nodes.
pub fn psi_of_solution(model: &DiffusionModel, grid: &Grid, u: &[f64]) -> Result<Vec<f64>> {
    let h = grid.h;
    (1..grid.n)
        .map(|i| {
            let jet = Jet::new(
                u[i],
                (u[i + 1] - u[i - 1]) / (2.0 * h),
                (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h),
            );
            psi(model, jet, grid.node(i)).map(|p| p.psi_g)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailConfig {
    /// Share of nodes at each end forming the tail window.
    pub window_fraction: f64,
    /// Share of nodes skipped next to each boundary, where the reflecting
    /// boundary layer distorts the solution.
    pub skip_fraction: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig { window_fraction: 0.1, skip_fraction: 0.005 }
    }
}

/// Diagnostics over one tail window.
#[derive(Clone, Debug, Serialize)]
pub struct TailSummary {
    /// Node where the point values are read (first node past the skip).
    pub eval_index: usize,
    pub eval_y: f64,
    /// `u / eta` at the evaluation node (`None` if `eta <= 0` there).
    pub ratio: Option<f64>,
    /// `u'/u` at the evaluation node.
    pub logderiv: f64,
    /// Node range `[from, to]` of the window, in y.
    pub window: (f64, f64),
    pub window_nodes: usize,
    /// `u <= eta` on the whole window.
    pub below_eta_flag: bool,
    /// `u <= eta Psi eta` on the whole window (`None` if eta is not
    /// positive on it).
    pub below_eta_psi_flag: Option<bool>,
    /// `Psi eta <= 1` on the whole window.
    pub psi_eta_below_one_flag: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanReversionCheck {
    pub kappa: f64,
    pub threshold: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticReport {
    pub config: TailConfig,
    pub left: TailSummary,
    pub right: TailSummary,
    pub mean_reversion_check: Option<MeanReversionCheck>,
}

impl AsymptoticReport {
    pub fn ratio_left(&self) -> Option<f64> {
        self.left.ratio
    }

    pub fn ratio_right(&self) -> Option<f64> {
        self.right.ratio
    }

    pub fn logderiv_left(&self) -> f64 {
        self.left.logderiv
    }

    pub fn logderiv_right(&self) -> f64 {
        self.right.logderiv
    }
}

fn tail_summary(
    model: &DiffusionModel,
    sol: &DiffusionSolution,
    idx: &[usize],
    eval_index: usize,
) -> Result<TailSummary> {
    let eta_eval = sol.eta[eval_index];
    let mut below_eta = true;
    let mut below_psi = Some(true);
    let mut psi_below_one = Some(true);
    for &i in idx {
        let (u, eta) = (sol.u[i], sol.eta[i]);
        below_eta &= u <= eta;
        if eta > 0.0 {
            let pe = psi_eta(model, sol.y[i])?.psi_g;
            below_psi = below_psi.map(|b| b && u <= eta * pe);
            psi_below_one = psi_below_one.map(|b| b && pe <= 1.0);
        } else {
            below_psi = None;
            psi_below_one = None;
        }
    }
    let ys: Vec<f64> = idx.iter().map(|&i| sol.y[i]).collect();
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TailSummary {
        eval_index,
        eval_y: sol.y[eval_index],
        ratio: (eta_eval > 0.0).then(|| sol.u[eval_index] / eta_eval),
        logderiv: sol.du_over_u[eval_index],
        window: (lo, hi),
        window_nodes: idx.len(),
        below_eta_flag: below_eta,
        below_eta_psi_flag: below_psi,
        psi_eta_below_one_flag: psi_below_one,
    })
}

pub fn asymptotic_report(
    solution: &DiffusionSolution,
    model: &DiffusionModel,
    config: TailConfig,
) -> Result<AsymptoticReport> {
    let n = solution.grid.n;
    let width = (config.window_fraction * n as f64).round() as usize;
    let skip = (config.skip_fraction * n as f64).round() as usize;
    if !(config.window_fraction > 0.0 && config.window_fraction < 0.5) || width <= skip {
        return Err(Error::InvalidArgument(format!(
            "tail window of {width} nodes does not fit past a skip of {skip} nodes"
        )));
    }
    let left_idx: Vec<usize> = (skip..=width).collect();
    let right_idx: Vec<usize> = (n - width..=n - skip).collect();
    let left = tail_summary(model, solution, &left_idx, skip)?;
    let right = tail_summary(model, solution, &right_idx, n - skip)?;
    let mean_reversion_check = model
        .mean_reversion_check()
        .map(|(kappa, threshold, holds)| MeanReversionCheck { kappa, threshold, holds });
    Ok(AsymptoticReport { config, left, right, mean_reversion_check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion_solver::{solve, SolveOptions};
    use crate::model::catalog;

    #[test]
    fn constant_g_gives_one() {
        for m in [catalog::mpr(), catalog::heston(), catalog::vasicek()] {
            let p = psi(&m, Jet::constant(0.3), 0.7).unwrap();
            assert_eq!(p.psi_g, 1.0);
        }
        assert!(psi(&catalog::mpr(), Jet::constant(0.0), 0.0).is_err());
    }

    #[test]
    fn mpr_psi_eta_far_right() {
        let p = psi_eta(&catalog::mpr(), 10.0).unwrap();
        assert!((p.psi_g - 1.0).abs() < 0.05, "{}", p.psi_g);
    }

    #[test]
    fn heston_psi_eta_at_one_by_hand() {
        // eta = 0.0165 + 0.34445 y, eta' = 0.34445, eta'' = 0
        // a_tilde(1) = 0.088 (0.035 - 1) + (-1/2)(-0.84)(1.66)(0.031)
        // d(1) = 0.5 * 0.031^2 * (0.2944 * 2 + 0.7056 + 1)
        let eta = 0.0165 + 0.34445;
        let d1 = 0.34445;
        let a = 0.088 * (0.035 - 1.0) + 0.5 * 0.84 * 1.66 * 0.031;
        let d = 0.5 * 0.031f64.powi(2) * (0.2944 * 2.0 + 0.7056 + 1.0);
        let want = 1.0 + a * d1 / (eta * eta) - d * d1 * d1 / (eta * eta * eta);
        let got = psi_eta(&catalog::heston(), 1.0).unwrap().psi_g;
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
    }

    #[test]
    fn constant_guides_give_unit_constants() {
        let m = catalog::constant(0.05, 2.0);
        let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let g = constant_guide(0.05);
        let c = proportional_bounds(&m, &g, &g, &grid).unwrap();
        assert_eq!((c.c1, c.c2), (1.0, 1.0));
        assert!(c.valid);
    }

    #[test]
    fn mpr_bounds_are_finite() {
        let m = catalog::mpr();
        let grid: Vec<f64> = (0..=1200).map(|i| -6.0 + 0.01 * i as f64).collect();
        let c = proportional_bounds(&m, &constant_guide(0.04), &eta_guide(&m), &grid).unwrap();
        assert!(c.valid);
        assert_eq!(c.c1, 1.0);
        assert!(c.c2.is_finite() && c.c2 > 1.0);
        assert!(matches!(
            proportional_bounds(&m, &eta_guide(&m), &constant_guide(0.04), &grid),
            Err(Error::BoundOrdering { .. })
        ));
    }

    #[test]
    fn vasicek_upper_guide_is_finite_and_dominates_eta() {
        let m = catalog::vasicek();
        let g2 = vasicek_upper_guide(&m).unwrap();
        let grid: Vec<f64> = (0..=5500).map(|i| -5.0 + 0.01 * i as f64).collect();
        let mut sup = f64::NEG_INFINITY;
        for &y in &grid {
            assert!(g2(y).value >= m.frozen_rate(y).unwrap());
            sup = sup.max(psi(&m, g2(y), y).unwrap().psi_g);
        }
        assert!(sup.is_finite());
        // derivative consistency against differences of the closed form
        let h = 1e-5;
        for y in [-3.0, 0.0, 2.0] {
            let fd = (g2(y + h).value - g2(y - h).value) / (2.0 * h);
            assert!((fd - g2(y).first).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_of_constant_solution_vanishes() {
        let m = catalog::constant(0.05, 2.0);
        let grid = Grid::new(-1.0, 1.0, 50).unwrap();
        let r = hjb_residual(&m, &grid, &[0.05; 51]).unwrap();
        assert_eq!(r.len(), 49);
        assert!(r.iter().all(|v| v.abs() < 1e-16));
    }

    #[test]
    fn residual_spike_follows_stencil() {
        let m = catalog::mpr();
        let s = solve(&m, -3.0, 3.0, 600, &SolveOptions::default()).unwrap();
        let base = hjb_residual(&m, &s.grid, &s.u).unwrap();
        let mut u = s.u.clone();
        let k = 300;
        u[k] += 1e-3;
        let bumped = hjb_residual(&m, &s.grid, &u).unwrap();
        let h = s.grid.h;
        let b = m.volatility(s.y[k]);
        let spike = bumped[k - 1] - base[k - 1];
        // leading term -b^2 delta / h^2
        let want = -b * b * 1e-3 / (h * h);
        assert!((spike / want - 1.0).abs() < 0.01, "{spike} vs {want}");
    }

    #[test]
    fn solver_residual_is_small_and_first_order() {
        let m = catalog::mpr();
        let mut sups = Vec::new();
        for n in [600, 1200, 2400] {
            let s = solve(&m, -3.0, 3.0, n, &SolveOptions::default()).unwrap();
            let r = hjb_residual(&m, &s.grid, &s.u).unwrap();
            let skip = n / 20;
            sups.push(r[skip..n - 1 - skip].iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        for w in sups.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 0.8 && order < 1.3, "{sups:?}");
        }
    }

    #[test]
    fn psi_identity_for_solution() {
        // Psi u = 2 - eta / u for exact solutions
        let m = catalog::mpr();
        let s = solve(&m, -3.0, 3.0, 3000, &SolveOptions {
            scheme: crate::discretizer::Scheme::Central,
            ..Default::default()
        })
        .unwrap();
        let p = psi_of_solution(&m, &s.grid, &s.u).unwrap();
        for i in (150..2850).step_by(50) {
            let want = 2.0 - s.eta[i] / s.u[i];
            assert!((p[i - 1] - want).abs() < 1e-3, "at {}: {} vs {want}", s.y[i], p[i - 1]);
        }
    }

    #[test]
    fn report_has_mean_reversion_entry() {
        let m = catalog::heston();
        let s = solve(&m, 0.01, 3.0, 2990, &SolveOptions::default()).unwrap();
        let r = asymptotic_report(&s, &m, TailConfig::default()).unwrap();
        let mr = r.mean_reversion_check.unwrap();
        assert!((mr.threshold - 0.5 * 0.84 * 1.66 * 0.031).abs() < 1e-15);
        assert!(mr.holds);
        assert!(r.right.window.0 > 2.6);
    }
}
