use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market coefficients at a single factor value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketCoefficients {
    pub r: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    /// Factor drift.
    pub a: f64,
    /// Factor volatility.
    pub b: f64,
}

/// Value, first and second derivative of a scalar function at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl Jet {
    pub fn new(value: f64, first: f64, second: f64) -> Self {
        Jet { value, first, second }
    }

    pub fn constant(value: f64) -> Self {
        Jet { value, first: 0.0, second: 0.0 }
    }
}

/// Constant market, factor is an Ornstein-Uhlenbeck process that does not
/// enter the coefficients. Defaults give a driftless unit-volatility factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackScholesParams {
    pub r: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "one")]
    pub nu: f64,
}

fn one() -> f64 {
    1.0
}

/// Stochastic market price of risk: lambda(y) = y, Ornstein-Uhlenbeck factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MprParams {
    pub r: f64,
    pub sigma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub theta: f64,
    pub nu: f64,
}

/// Heston stochastic volatility: sigma(y) = sqrt(y), lambda(y) = lambda sqrt(y),
/// CIR factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonParams {
    pub r: f64,
    pub lambda: f64,
    pub delta: f64,
    pub kappa: f64,
    pub theta: f64,
    pub nu: f64,
}

/// Vasicek short rate r(y) = y with constant market price of risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VasicekParams {
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub theta: f64,
    pub nu: f64,
}

/// Piecewise-linear coefficients on a strictly increasing grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedCoefficients {
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TabulatedCoefficients {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n < 3 {
            return Err(Error::InvalidModel("tabulated grid needs at least 3 points".into()));
        }
        for (name, col) in [
            ("r", &self.r),
            ("lambda", &self.lambda),
            ("sigma", &self.sigma),
            ("delta", &self.delta),
            ("a", &self.a),
            ("b", &self.b),
        ] {
            if col.len() != n {
                return Err(Error::InvalidModel(format!(
                    "tabulated column `{name}` has length {}, expected {n}",
                    col.len()
                )));
            }
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("tabulated `{name}[{k}]` is not finite")));
            }
        }
        if let Some(k) = self.y.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel(format!("tabulated `y` not strictly increasing at {k}")));
        }
        if let Some(k) = self.sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::InvalidModel(format!("tabulated `sigma[{k}]` must be positive")));
        }
        if let Some(k) = self.b.iter().position(|&b| b == 0.0) {
            return Err(Error::InvalidModel(format!("tabulated `b[{k}]` must be nonzero")));
        }
        Ok(())
    }

    /// Index k and weight w with y = (1-w) y_k + w y_{k+1}.
    fn locate(&self, y: f64) -> (usize, f64) {
        let n = self.y.len();
        let k = match self.y.partition_point(|&t| t <= y) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let w = (y - self.y[k]) / (self.y[k + 1] - self.y[k]);
        (k, w)
    }

    fn interp(col: &[f64], k: usize, w: f64) -> f64 {
        (1.0 - w) * col[k] + w * col[k + 1]
    }

    fn market(&self, y: f64) -> MarketCoefficients {
        let (k, w) = self.locate(y);
        MarketCoefficients {
            r: Self::interp(&self.r, k, w),
            lambda: Self::interp(&self.lambda, k, w),
            sigma: Self::interp(&self.sigma, k, w),
            delta: Self::interp(&self.delta, k, w),
            a: Self::interp(&self.a, k, w),
            b: Self::interp(&self.b, k, w),
        }
    }

    /// Frozen rate at the table nodes, then nodal derivatives by central
    /// differences (one-sided at the ends), then linear interpolation.
    fn eta_jet(&self, risk_aversion: f64, y: f64) -> Jet {
        let n = self.y.len();
        let eta: Vec<f64> = (0..n)
            .map(|k| {
                frozen_rate_formula(self.r[k], self.lambda[k], self.delta[k], risk_aversion)
            })
            .collect();
        let d1 = nodal_derivative(&self.y, &eta);
        let d2 = nodal_derivative(&self.y, &d1);
        let (k, w) = self.locate(y);
        let m = self.market(y);
        Jet::new(
            frozen_rate_formula(m.r, m.lambda, m.delta, risk_aversion),
            Self::interp(&d1, k, w),
            Self::interp(&d2, k, w),
        )
    }
}

fn nodal_derivative(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (lo, hi) = match k {
                0 => (0, 1),
                k if k == n - 1 => (n - 2, n - 1),
                k => (k - 1, k + 1),
            };
            (v[hi] - v[lo]) / (x[hi] - x[lo])
        })
        .collect()
}

/// The frozen consumption rate of a Black-Scholes market.
pub fn frozen_rate_formula(r: f64, lambda: f64, delta: f64, risk_aversion: f64) -> f64 {
    let big_r = risk_aversion;
    (delta - (1.0 - big_r) * (r + lambda * lambda / (2.0 * big_r))) / big_r
}

/// Closed set of factor model families.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    BlackScholes(BlackScholesParams),
    Mpr(MprParams),
    Heston(HestonParams),
    Vasicek(VasicekParams),
    Tabulated(TabulatedCoefficients),
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidModel(msg.to_string()))
    }
}

fn all_finite(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::InvalidModel(format!("parameter `{name}` is not finite")));
        }
    }
    Ok(())
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::BlackScholes(_) => "black_scholes",
            Family::Mpr(_) => "mpr",
            Family::Heston(_) => "heston",
            Family::Vasicek(_) => "vasicek",
            Family::Tabulated(_) => "tabulated",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Family::BlackScholes(p) => {
                all_finite(&[
                    ("r", p.r),
                    ("lambda", p.lambda),
                    ("sigma", p.sigma),
                    ("delta", p.delta),
                    ("kappa", p.kappa),
                    ("theta", p.theta),
                    ("nu", p.nu),
                ])?;
                require(p.sigma > 0.0, "`sigma` must be positive")?;
                require(p.nu != 0.0, "`nu` must be nonzero")
            }
            Family::Mpr(p) => {
                all_finite(&[
                    ("r", p.r),
                    ("sigma", p.sigma),
                    ("delta", p.delta),
                    ("kappa", p.kappa),
                    ("theta", p.theta),
                    ("nu", p.nu),
                ])?;
                require(p.sigma > 0.0, "`sigma` must be positive")?;
                require(p.nu != 0.0, "`nu` must be nonzero")
            }
            Family::Heston(p) => {
                all_finite(&[
                    ("r", p.r),
                    ("lambda", p.lambda),
                    ("delta", p.delta),
                    ("kappa", p.kappa),
                    ("theta", p.theta),
                    ("nu", p.nu),
                ])?;
                require(p.theta > 0.0, "`theta` must be positive")?;
                require(p.nu > 0.0, "`nu` must be positive")?;
                require(
                    p.kappa * p.theta >= 0.5 * p.nu * p.nu,
                    "Feller condition kappa*theta >= nu^2/2 violated",
                )
            }
            Family::Vasicek(p) => {
                all_finite(&[
                    ("lambda", p.lambda),
                    ("sigma", p.sigma),
                    ("delta", p.delta),
                    ("kappa", p.kappa),
                    ("theta", p.theta),
                    ("nu", p.nu),
                ])?;
                require(p.sigma > 0.0, "`sigma` must be positive")?;
                require(p.nu != 0.0, "`nu` must be nonzero")
            }
            Family::Tabulated(t) => t.validate(),
        }
    }

    /// Open state interval (E_minus, E_plus).
    pub fn interval(&self) -> (f64, f64) {
        match self {
            Family::Heston(_) => (0.0, f64::INFINITY),
            Family::Tabulated(t) => (t.y[0], *t.y.last().expect("validated")),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Coefficients at y; no domain check.
    pub fn market(&self, y: f64) -> MarketCoefficients {
        match self {
            Family::BlackScholes(p) => MarketCoefficients {
                r: p.r,
                lambda: p.lambda,
                sigma: p.sigma,
                delta: p.delta,
                a: -p.kappa * (y - p.theta),
                b: p.nu,
            },
            Family::Mpr(p) => MarketCoefficients {
                r: p.r,
                lambda: y,
                sigma: p.sigma,
                delta: p.delta,
                a: -p.kappa * (y - p.theta),
                b: p.nu,
            },
            Family::Heston(p) => {
                let s = y.max(0.0).sqrt();
                MarketCoefficients {
                    r: p.r,
                    lambda: p.lambda * s,
                    sigma: s,
                    delta: p.delta,
                    a: -p.kappa * (y - p.theta),
                    b: p.nu * s,
                }
            }
            Family::Vasicek(p) => MarketCoefficients {
                r: y,
                lambda: p.lambda,
                sigma: p.sigma,
                delta: p.delta,
                a: -p.kappa * (y - p.theta),
                b: p.nu,
            },
            Family::Tabulated(t) => t.market(y),
        }
    }

    /// Frozen rate with its first two derivatives in y. Closed form for the
    /// parametric families.
    pub fn eta_jet(&self, risk_aversion: f64, y: f64) -> Jet {
        let big_r = risk_aversion;
        let c = 1.0 - big_r;
        match self {
            Family::BlackScholes(p) => {
                Jet::constant(frozen_rate_formula(p.r, p.lambda, p.delta, big_r))
            }
            Family::Mpr(p) => Jet::new(
                frozen_rate_formula(p.r, y, p.delta, big_r),
                -c * y / (big_r * big_r),
                -c / (big_r * big_r),
            ),
            Family::Heston(p) => {
                let l2 = p.lambda * p.lambda;
                Jet::new(
                    (p.delta - c * (p.r + l2 * y / (2.0 * big_r))) / big_r,
                    -c * l2 / (2.0 * big_r * big_r),
                    0.0,
                )
            }
            Family::Vasicek(p) => {
                Jet::new(frozen_rate_formula(y, p.lambda, p.delta, big_r), -c / big_r, 0.0)
            }
            Family::Tabulated(t) => t.eta_jet(big_r, y),
        }
    }

    /// True when the derivatives returned by `eta_jet` are exact.
    pub fn has_closed_form_derivatives(&self) -> bool {
        !matches!(self, Family::Tabulated(_))
    }

    /// Mean-reversion speed and theta, where applicable.
    pub fn mean_reversion(&self) -> Option<(f64, f64)> {
        match self {
            Family::BlackScholes(p) => Some((p.kappa, p.theta)),
            Family::Mpr(p) => Some((p.kappa, p.theta)),
            Family::Heston(p) => Some((p.kappa, p.theta)),
            Family::Vasicek(p) => Some((p.kappa, p.theta)),
            Family::Tabulated(_) => None,
        }
    }
}
