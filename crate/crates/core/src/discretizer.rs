//! Generators of reflected diffusions on a bounded grid and the discrete
//! HJB operator `A_h = diag(eta) - Q_h / R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::TridiagonalOperator;
use crate::model::DiffusionModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Upwind,
    Central,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(Scheme::Upwind),
            "central" => Ok(Scheme::Central),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// How the reflecting rows of the central scheme are closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClosure {
    /// Same half-cell rows as the upwind generator. First order at the
    /// boundary.
    HalfCell,
    /// Ghost-node Neumann rows `Q_01 = b^2 / h^2`. Keeps the scheme second
    /// order.
    Neumann,
}

/// Uniform grid `y_i = lower + i h`, `i = 0..=n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!("invalid domain [{lower}, {upper}]")));
        }
        if n < 1 {
            return Err(Error::InvalidArgument("grid needs at least one interval".into()));
        }
        Ok(Grid { lower, upper, n, h: (upper - lower) / n as f64 })
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.upper
        } else {
            self.lower + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteGenerator {
    pub grid: Grid,
    pub q: TridiagonalOperator,
    pub scheme: Scheme,
}

fn check_domain(model: &DiffusionModel, lower: f64, upper: f64) -> Result<()> {
    let (lo, hi) = model.interval();
    for y in [lower, upper] {
        if !(y > lo && y < hi) {
            return Err(Error::Domain { value: y, lower: lo, upper: hi });
        }
    }
    Ok(())
}

/// Drift and volatility at the nodes, rejecting vanishing volatility.
fn node_coefficients(model: &DiffusionModel, grid: &Grid) -> Result<(Vec<f64>, Vec<f64>)> {
    let ys = grid.nodes();
    let mut a = Vec::with_capacity(ys.len());
    let mut b = Vec::with_capacity(ys.len());
    for (node, &y) in ys.iter().enumerate() {
        let bi = model.volatility(y);
        if bi == 0.0 || !bi.is_finite() {
            return Err(Error::DegenerateVolatility { node, y });
        }
        a.push(model.drift(y));
        b.push(bi);
    }
    Ok((a, b))
}

/// Upwind generator: drift split by sign, so off-diagonals stay nonnegative
/// for every h.
pub fn build_upwind_generator(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
) -> Result<DiscreteGenerator> {
    check_domain(model, lower, upper)?;
    let grid = Grid::new(lower, upper, n)?;
    let (a, b) = node_coefficients(model, &grid)?;
    let h = grid.h;
    let h2 = h * h;
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for i in 0..=n {
        let diff = 0.5 * b[i] * b[i] / h2;
        let up = diff + a[i].max(0.0) / h;
        let down = diff + (-a[i]).max(0.0) / h;
        if i == 0 {
            sup[0] = up;
        } else if i == n {
            sub[n - 1] = down;
        } else {
            sup[i] = up;
            sub[i - 1] = down;
        }
    }
    Ok(DiscreteGenerator {
        grid,
        q: TridiagonalOperator::from_row_sums(sub, sup, vec![0.0; n + 1])?,
        scheme: Scheme::Upwind,
    })
}

/// `h* = min b^2 / max |a|` over the grid nodes.
pub fn central_threshold(model: &DiffusionModel, lower: f64, upper: f64, n: usize) -> Result<f64> {
    let grid = Grid::new(lower, upper, n)?;
    let (a, b) = node_coefficients(model, &grid)?;
    let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bmin = b.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    Ok(if amax == 0.0 { f64::INFINITY } else { bmin / amax })
}

pub fn build_central_generator(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
) -> Result<DiscreteGenerator> {
    build_central_generator_with(model, lower, upper, n, BoundaryClosure::Neumann)
}

/// Central differences for the drift; requires `h < h*` so that the
/// off-diagonals stay nonnegative.
pub fn build_central_generator_with(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
    closure: BoundaryClosure,
) -> Result<DiscreteGenerator> {
    check_domain(model, lower, upper)?;
    let grid = Grid::new(lower, upper, n)?;
    let h_star = central_threshold(model, lower, upper, n)?;
    let h = grid.h;
    if h >= h_star {
        return Err(Error::CentralSchemeUnstable { h, h_star });
    }
    let (a, b) = node_coefficients(model, &grid)?;
    let h2 = h * h;
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for i in 1..n {
        let diff = 0.5 * b[i] * b[i] / h2;
        sup[i] = diff + a[i] / (2.0 * h);
        sub[i - 1] = diff - a[i] / (2.0 * h);
    }
    let (top, bottom) = match closure {
        BoundaryClosure::HalfCell => (
            0.5 * b[0] * b[0] / h2 + a[0].max(0.0) / h,
            0.5 * b[n] * b[n] / h2 + (-a[n]).max(0.0) / h,
        ),
        // ghost node y_{-1} = y_1, so the drift term drops out
        BoundaryClosure::Neumann => (b[0] * b[0] / h2, b[n] * b[n] / h2),
    };
    sup[0] = top;
    sub[n - 1] = bottom;
    Ok(DiscreteGenerator {
        grid,
        q: TridiagonalOperator::from_row_sums(sub, sup, vec![0.0; n + 1])?,
        scheme: Scheme::Central,
    })
}

pub fn build_generator(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
    scheme: Scheme,
) -> Result<DiscreteGenerator> {
    match scheme {
        Scheme::Upwind => build_upwind_generator(model, lower, upper, n),
        Scheme::Central => build_central_generator(model, lower, upper, n),
    }
}

/// `A_h = diag(eta) - Q_h / R` with this model's risk aversion, together
/// with the frozen rates at the nodes.
pub fn assemble_discrete_hjb(
    model: &DiffusionModel,
    lower: f64,
    upper: f64,
    n: usize,
    scheme: Scheme,
) -> Result<(TridiagonalOperator, Grid, Vec<f64>)> {
    let gen = build_generator(model, lower, upper, n, scheme)?;
    let eta = model.frozen_rates(&gen.grid.nodes())?;
    let a = gen.q.scaled_plus_diagonal(-1.0 / model.risk_aversion(), &eta);
    Ok((a, gen.grid, eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{check_nonsingular_m_matrix, ZMatrix};
    use crate::model::{catalog, BlackScholesParams, Family, MprParams};
    use proptest::prelude::*;

    fn ou(kappa: f64, theta: f64, nu: f64) -> DiffusionModel {
        DiffusionModel::new(
            Family::BlackScholes(BlackScholesParams {
                r: 0.0,
                lambda: 0.0,
                sigma: 1.0,
                delta: 0.1,
                kappa,
                theta,
                nu,
            }),
            2.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn two_node_example() {
        let g = build_upwind_generator(&ou(0.0, 0.0, 1.0), 0.0, 1.0, 1).unwrap();
        assert_eq!(g.q.to_dense().rows(), vec![vec![-0.5, 0.5], vec![0.5, -0.5]]);
        let (a, _, eta) = assemble_discrete_hjb(&ou(0.0, 0.0, 1.0), 0.0, 1.0, 1, Scheme::Upwind)
            .unwrap();
        let e = eta[0];
        let want = [[e + 0.25, -0.25], [-0.25, e + 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn positive_drift_only_on_super_diagonal() {
        // a(y) = -kappa (y - theta) > 0 on the whole grid
        let m = ou(1.0, 10.0, 1.0);
        let g = build_upwind_generator(&m, 0.0, 1.0, 10).unwrap();
        let h2 = g.grid.h * g.grid.h;
        for i in 1..10 {
            assert!((g.q.sub()[i - 1] - 0.5 / h2).abs() < 1e-9);
            assert!(g.q.sup()[i] > 0.5 / h2);
        }
    }

    #[test]
    fn central_zero_drift_interior_matches_upwind() {
        let m = ou(0.0, 0.0, 0.7);
        let up = build_upwind_generator(&m, -1.0, 1.0, 20).unwrap();
        let half = build_central_generator_with(&m, -1.0, 1.0, 20, BoundaryClosure::HalfCell)
            .unwrap();
        assert_eq!(up.q, half.q);
        let neu = build_central_generator(&m, -1.0, 1.0, 20).unwrap();
        assert_eq!(&up.q.main()[1..20], &neu.q.main()[1..20]);
        assert_eq!(neu.q.sup()[0], 2.0 * up.q.sup()[0]);
    }

    #[test]
    fn central_threshold_examples() {
        let mpr = catalog::mpr();
        let h_star = central_threshold(&mpr, -3.0, 3.0, 100).unwrap();
        assert!((h_star - 0.36 / (0.3 * 3.5)).abs() < 1e-12);
        assert!(build_central_generator(&mpr, -3.0, 3.0, 100).is_ok());

        let vas = catalog::vasicek();
        let err = build_central_generator(&vas, -5.0, 50.0, 100).unwrap_err();
        match err {
            Error::CentralSchemeUnstable { h, h_star } => {
                assert!((h - 0.55).abs() < 1e-12);
                let want = 0.033f64.powi(2) / (0.43 * (50.0 - 0.013));
                assert!((h_star - want).abs() < 1e-15);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn heston_discretization_is_z_matrix() {
        let (a, _, _) =
            assemble_discrete_hjb(&catalog::heston(), 0.01, 1.0, 990, Scheme::Upwind).unwrap();
        assert!(a.is_z_matrix());
    }

    #[test]
    fn rejects_domain_outside_state_space() {
        assert!(build_upwind_generator(&catalog::heston(), 0.0, 1.0, 10).is_err());
        assert!(build_upwind_generator(&catalog::mpr(), 1.0, -1.0, 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn generators_are_conservative(
            kappa in -2.0..2.0f64,
            theta in -1.0..1.0f64,
            nu in 0.05..2.0f64,
            lo in -5.0..0.0f64,
            width in 0.1..10.0f64,
            n in 1usize..400,
        ) {
            let m = DiffusionModel::new(
                Family::Mpr(MprParams { r: 0.02, sigma: 0.2, delta: 0.05, kappa, theta, nu }),
                1.5,
                0.3,
            ).unwrap();
            let g = build_upwind_generator(&m, lo, lo + width, n).unwrap();
            let scale = g.q.norm_inf();
            for s in g.q.to_dense().apply(&vec![1.0; n + 1]) {
                prop_assert!(s.abs() <= 1e-12 * scale.max(1.0));
            }
            prop_assert!(g.q.sub().iter().chain(g.q.sup()).all(|&v| v >= 0.0));
            prop_assert!(g.q.main().iter().all(|&v| v <= 0.0));

            let eta = m.frozen_rates(&g.grid.nodes()).unwrap();
            let a = g.q.scaled_plus_diagonal(-1.0 / 1.5, &eta);
            prop_assert!(a.is_z_matrix());

            if let Ok(c) = build_central_generator(&m, lo, lo + width, n) {
                for s in c.q.to_dense().apply(&vec![1.0; n + 1]) {
                    prop_assert!(s.abs() <= 1e-12 * c.q.norm_inf().max(1.0));
                }
                prop_assert!(c.q.sub().iter().chain(c.q.sup()).all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn constant_eta_row_sums(n in 1usize..200, nu in 0.1..3.0f64, kappa in 0.0..3.0f64) {
            let m = ou(kappa, 0.2, nu);
            let (a, _, eta) = assemble_discrete_hjb(&m, -2.0, 2.0, n, Scheme::Upwind).unwrap();
            for s in a.apply(&vec![1.0; n + 1]) {
                prop_assert!((s - eta[0]).abs() <= 1e-12 * a.norm_inf());
            }
            prop_assert!(check_nonsingular_m_matrix(&a).unwrap().verdict);
        }
    }
}
