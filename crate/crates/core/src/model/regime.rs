use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::family::frozen_rate_formula;
use super::validate_risk_aversion;

/// Finite-state market driven by a continuous-time Markov chain.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeModel {
    q: DenseMatrix,
    r: Vec<f64>,
    lambda: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    risk_aversion: f64,
}

impl RegimeModel {
    pub fn new(
        q: DenseMatrix,
        r: Vec<f64>,
        lambda: Vec<f64>,
        sigma: Vec<f64>,
        delta: Vec<f64>,
        risk_aversion: f64,
    ) -> Result<Self> {
        let n = q.dim();
        if n == 0 {
            return Err(Error::InvalidModel("regime model needs at least one state".into()));
        }
        for (name, v) in [("r", &r), ("lambda", &lambda), ("sigma", &sigma), ("delta", &delta)] {
            if v.len() != n {
                return Err(Error::InvalidModel(format!(
                    "`{name}` has length {}, expected {n}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidModel(format!("`{name}[{i}]` is not finite")));
            }
        }
        if let Some(i) = sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::InvalidModel(format!("`sigma[{i}]` must be positive")));
        }
        validate_generator(&q)?;
        validate_risk_aversion(risk_aversion)?;
        Ok(RegimeModel { q, r, lambda, sigma, delta, risk_aversion })
    }

    /// Model with prescribed frozen rates: r = lambda = 0, sigma = 1 and
    /// delta = R eta.
    pub fn with_frozen_rates(eta: &[f64], q: DenseMatrix, risk_aversion: f64) -> Result<Self> {
        let n = eta.len();
        RegimeModel::new(
            q,
            vec![0.0; n],
            vec![0.0; n],
            vec![1.0; n],
            eta.iter().map(|e| e * risk_aversion).collect(),
            risk_aversion,
        )
    }

    pub fn states(&self) -> usize {
        self.q.dim()
    }

    pub fn generator(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }

    /// Nonlinearity exponent p = 1 - 1/R.
    pub fn exponent(&self) -> f64 {
        1.0 - 1.0 / self.risk_aversion
    }

    pub fn frozen_rate(&self, state: usize) -> Result<f64> {
        if state >= self.states() {
            return Err(Error::Domain {
                value: state as f64,
                lower: 0.0,
                upper: (self.states() - 1) as f64,
            });
        }
        Ok(frozen_rate_formula(
            self.r[state],
            self.lambda[state],
            self.delta[state],
            self.risk_aversion,
        ))
    }

    pub fn frozen_rates(&self) -> Vec<f64> {
        (0..self.states())
            .map(|i| {
                frozen_rate_formula(self.r[i], self.lambda[i], self.delta[i], self.risk_aversion)
            })
            .collect()
    }

    /// Copy with every discount rate raised by `shift`.
    pub fn with_delta_shift(&self, shift: f64) -> Self {
        let mut m = self.clone();
        m.delta.iter_mut().for_each(|d| *d += shift);
        m
    }
}

/// Off-diagonals nonnegative, rows summing to zero within 1e-12 relative.
pub(crate) fn validate_generator(q: &DenseMatrix) -> Result<()> {
    let n = q.dim();
    for i in 0..n {
        let row = q.row(i);
        let mut scale = 0.0f64;
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("`Q[{i}][{j}]` is not finite")));
            }
            if i != j && v < 0.0 {
                return Err(Error::InvalidModel(format!("`Q[{i}][{j}]` = {v} is negative")));
            }
            scale = scale.max(v.abs());
            sum += v;
        }
        if sum.abs() > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidModel(format!("row {i} of `Q` sums to {sum:e}, not 0")));
        }
    }
    Ok(())
}
