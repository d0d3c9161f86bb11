//! Market models: finite-regime and one-dimensional diffusion factors.

mod family;
mod json;
mod regime;

pub use family::{
    frozen_rate_formula, BlackScholesParams, Family, HestonParams, Jet, MarketCoefficients,
    MprParams, TabulatedCoefficients, VasicekParams,
};
pub use json::{Model, ModelFile};
pub use regime::RegimeModel;
pub(crate) use regime::validate_generator;

use serde::Serialize;

use crate::error::{Error, Result};

/// Quantities entering the consumption-rate equation
/// `1/2 b^2 u'' + a_tilde u' + eta u - u^2 - d (u')^2 / u = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedCoefficients {
    pub eta: f64,
    pub a_tilde: f64,
    pub d: f64,
    pub phi: f64,
    pub r_tilde: f64,
    pub b: f64,
}

/// Record of a distortion to zero correlation.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Distortion {
    base_risk_aversion: f64,
    base_rho: f64,
}

/// Diffusion factor model with constant correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    family: Family,
    risk_aversion: f64,
    rho: f64,
    distortion: Option<Distortion>,
}

pub(crate) fn validate_risk_aversion(big_r: f64) -> Result<()> {
    if !(big_r.is_finite() && big_r > 0.0) {
        return Err(Error::InvalidModel(format!("risk aversion R = {big_r} must be positive")));
    }
    if (big_r - 1.0).abs() < 1e-12 {
        return Err(Error::InvalidModel("risk aversion R = 1 (log utility) is not supported".into()));
    }
    Ok(())
}

/// phi = 1 / (1 - ((R-1)/R) rho^2).
pub fn distortion_exponent(risk_aversion: f64, rho: f64) -> f64 {
    1.0 / (1.0 - (risk_aversion - 1.0) / risk_aversion * rho * rho)
}

impl DiffusionModel {
    pub fn new(family: Family, risk_aversion: f64, rho: f64) -> Result<Self> {
        family.validate()?;
        validate_risk_aversion(risk_aversion)?;
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidModel(format!("correlation rho = {rho} outside [-1, 1]")));
        }
        Ok(DiffusionModel { family, risk_aversion, rho, distortion: None })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Risk aversion of this model. For a distorted model this is R_tilde.
    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Risk aversion that defines the frozen rate (the original one for a
    /// distorted model).
    pub fn base_risk_aversion(&self) -> f64 {
        self.distortion.map_or(self.risk_aversion, |d| d.base_risk_aversion)
    }

    pub fn is_distorted(&self) -> bool {
        self.distortion.is_some()
    }

    pub fn interval(&self) -> (f64, f64) {
        self.family.interval()
    }

    pub fn contains(&self, y: f64) -> bool {
        let (lo, hi) = self.interval();
        y > lo && y < hi
    }

    fn check_domain(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            let (lower, upper) = self.interval();
            Err(Error::Domain { value: y, lower, upper })
        }
    }

    /// Market coefficients of the underlying family (no domain check).
    pub fn market(&self, y: f64) -> MarketCoefficients {
        self.family.market(y)
    }

    /// Factor drift entering this model's generator. For a distorted model
    /// this is the adjusted drift.
    pub fn drift(&self, y: f64) -> f64 {
        let m = self.family.market(y);
        match self.distortion {
            None => m.a,
            Some(d) => adjusted_drift(&m, d.base_risk_aversion, d.base_rho),
        }
    }

    pub fn volatility(&self, y: f64) -> f64 {
        self.family.market(y).b
    }

    pub fn frozen_rate(&self, y: f64) -> Result<f64> {
        self.check_domain(y)?;
        Ok(self.family.eta_jet(self.base_risk_aversion(), y).value)
    }

    pub fn frozen_rates(&self, ys: &[f64]) -> Result<Vec<f64>> {
        ys.iter().map(|&y| self.frozen_rate(y)).collect()
    }

    /// Frozen rate and its derivatives; no domain check.
    pub fn eta_jet(&self, y: f64) -> Jet {
        self.family.eta_jet(self.base_risk_aversion(), y)
    }

    pub fn coefficients_at(&self, y: f64) -> Result<DerivedCoefficients> {
        self.check_domain(y)?;
        let m = self.family.market(y);
        let eta = self.eta_jet(y).value;
        let big_r = self.risk_aversion;
        let rho = self.rho;
        let a_tilde = match self.distortion {
            None => adjusted_drift(&m, big_r, rho),
            Some(d) => adjusted_drift(&m, d.base_risk_aversion, d.base_rho),
        };
        let phi = distortion_exponent(big_r, rho);
        let r_tilde = (1.0 - rho * rho) * big_r + rho * rho;
        let d = 0.5 * m.b * m.b * (r_tilde + 1.0);
        Ok(DerivedCoefficients { eta, a_tilde, d, phi, r_tilde, b: m.b })
    }

    /// Equivalent zero-correlation model with adjusted drift and risk
    /// aversion R_tilde, together with the exponent phi of `f = v^phi`.
    pub fn to_zero_correlation(&self) -> (DiffusionModel, f64) {
        if self.distortion.is_some() || self.rho == 0.0 {
            return (self.clone(), 1.0);
        }
        let big_r = self.risk_aversion;
        let rho = self.rho;
        let phi = distortion_exponent(big_r, rho);
        let model = DiffusionModel {
            family: self.family.clone(),
            risk_aversion: (1.0 - rho * rho) * big_r + rho * rho,
            rho: 0.0,
            distortion: Some(Distortion { base_risk_aversion: big_r, base_rho: rho }),
        };
        (model, phi)
    }

    /// Portfolio weight `(lambda - R rho b u'/u) / (sigma R)`.
    pub fn portfolio_weight(&self, y: f64, du_over_u: f64) -> f64 {
        let m = self.family.market(y);
        let big_r = self.base_risk_aversion();
        let rho = self.distortion.map_or(self.rho, |d| d.base_rho);
        (m.lambda - big_r * rho * m.b * du_over_u) / (m.sigma * big_r)
    }

    /// Nested truncation of the state space indexed by m >= 1.
    pub fn default_domain(&self, m: f64) -> Result<(f64, f64)> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidArgument(format!("domain index m = {m} must be positive")));
        }
        match &self.family {
            Family::Heston(_) => {
                if m <= 1.0 {
                    return Err(Error::InvalidArgument(
                        "heston domains [1/m, sqrt(m)] need m > 1".into(),
                    ));
                }
                Ok((1.0 / m, m.sqrt()))
            }
            Family::Tabulated(t) => {
                let lo = t.y[0];
                let hi = *t.y.last().expect("validated");
                let margin = (hi - lo) / (2.0 * (m + 1.0));
                Ok((lo + margin, hi - margin))
            }
            _ => Ok((-m, m)),
        }
    }

    /// Mean-reversion condition `kappa > ((1-R)/R) rho lambda nu` (heston) or
    /// `kappa > ((1-R)/R) rho nu` (mpr). Returns (lhs kappa, rhs, holds).
    pub fn mean_reversion_check(&self) -> Option<(f64, f64, bool)> {
        let big_r = self.base_risk_aversion();
        let rho = self.distortion.map_or(self.rho, |d| d.base_rho);
        let c = (1.0 - big_r) / big_r * rho;
        let (kappa, rhs) = match &self.family {
            Family::Heston(p) => (p.kappa, c * p.lambda * p.nu),
            Family::Mpr(p) => (p.kappa, c * p.nu),
            _ => return None,
        };
        Some((kappa, rhs, kappa > rhs))
    }
}

fn adjusted_drift(m: &MarketCoefficients, big_r: f64, rho: f64) -> f64 {
    m.a + (1.0 - big_r) / big_r * rho * m.lambda * m.b
}

/// Built-in parameter sets used by the examples and tests.
pub mod catalog {
    use super::*;

    /// Stochastic market price of risk.
    pub fn mpr() -> DiffusionModel {
        DiffusionModel::new(
            Family::Mpr(MprParams {
                r: 0.02,
                sigma: 0.2,
                delta: 0.05,
                kappa: 0.3,
                theta: 0.5,
                nu: 0.6,
            }),
            1.5,
            -0.2,
        )
        .expect("catalog model is valid")
    }

    pub fn heston() -> DiffusionModel {
        DiffusionModel::new(
            Family::Heston(HestonParams {
                r: 0.013,
                lambda: 1.66,
                delta: 0.02,
                kappa: 0.088,
                theta: 0.035,
                nu: 0.031,
            }),
            2.0,
            -0.84,
        )
        .expect("catalog model is valid")
    }

    pub fn vasicek() -> DiffusionModel {
        DiffusionModel::new(
            Family::Vasicek(VasicekParams {
                lambda: 23.0 / 60.0,
                sigma: 0.18,
                delta: 0.02,
                kappa: 0.43,
                theta: 0.013,
                nu: 0.033,
            }),
            1.5,
            -0.0012,
        )
        .expect("catalog model is valid")
    }

    /// Constant market with frozen rate `eta = delta / R` (r = lambda = 0).
    pub fn constant(eta: f64, risk_aversion: f64) -> DiffusionModel {
        DiffusionModel::new(
            Family::BlackScholes(BlackScholesParams {
                r: 0.0,
                lambda: 0.0,
                sigma: 1.0,
                delta: eta * risk_aversion,
                kappa: 0.0,
                theta: 0.0,
                nu: 1.0,
            }),
            risk_aversion,
            0.0,
        )
        .expect("catalog model is valid")
    }
}
