//! Monte-Carlo simulation of factor paths and wealth under proportional
//! consumption/investment policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion_solver::{interpolate, DiffusionSolution};
use crate::discretizer::Grid;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{DiffusionModel, Family, Model, RegimeModel};
use crate::regime_solver::HjbSolution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorValue {
    Regime(usize),
    Diffusion(f64),
}

/// Recorded trajectory. Wealth and discount are empty for factor-only
/// paths.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub factor: Vec<FactorValue>,
    pub wealth: Vec<f64>,
    /// `int_0^t delta(Y_s) ds`.
    pub discount: Vec<f64>,
    /// Running discounted utility integral.
    pub utility: Vec<f64>,
}

/// Proportional policy: portfolio weight and consumption rate as
/// functions of the factor.
pub trait Policy: Sync {
    fn weight(&self, y: FactorValue) -> f64;
    fn consumption(&self, y: FactorValue) -> f64;
}

#[derive(Clone, Debug)]
pub struct RegimePolicy {
    pub pi: Vec<f64>,
    pub xi: Vec<f64>,
}

impl RegimePolicy {
    pub fn optimal(sol: &HjbSolution) -> Self {
        RegimePolicy { pi: sol.pi_hat.clone(), xi: sol.u.clone() }
    }
}

impl Policy for RegimePolicy {
    fn weight(&self, y: FactorValue) -> f64 {
        match y {
            FactorValue::Regime(i) => self.pi[i],
            FactorValue::Diffusion(_) => panic!("regime policy evaluated at a diffusion state"),
        }
    }

    fn consumption(&self, y: FactorValue) -> f64 {
        match y {
            FactorValue::Regime(i) => self.xi[i],
            FactorValue::Diffusion(_) => panic!("regime policy evaluated at a diffusion state"),
        }
    }
}

/// Policy tabulated on a grid, interpolated linearly and held constant
/// outside it.
#[derive(Clone, Debug)]
pub struct GridPolicy {
    grid: Grid,
    pi: Vec<f64>,
    xi: Vec<f64>,
}

impl GridPolicy {
    pub fn optimal(sol: &DiffusionSolution) -> Self {
        GridPolicy { grid: sol.grid.clone(), pi: sol.pi_hat.clone(), xi: sol.u.clone() }
    }

    fn at(&self, y: FactorValue, v: &[f64]) -> f64 {
        match y {
            FactorValue::Diffusion(y) => interpolate(&self.grid, v, y),
            FactorValue::Regime(_) => panic!("grid policy evaluated at a regime state"),
        }
    }
}

impl Policy for GridPolicy {
    fn weight(&self, y: FactorValue) -> f64 {
        self.at(y, &self.pi)
    }

    fn consumption(&self, y: FactorValue) -> f64 {
        self.at(y, &self.xi)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy {
    pub pi: f64,
    pub xi: f64,
}

impl Policy for ConstantPolicy {
    fn weight(&self, _: FactorValue) -> f64 {
        self.pi
    }

    fn consumption(&self, _: FactorValue) -> f64 {
        self.xi
    }
}

/// Another policy with its weight and consumption scaled.
pub struct ScaledPolicy<'a> {
    pub inner: &'a dyn Policy,
    pub weight_scale: f64,
    pub consumption_scale: f64,
}

impl Policy for ScaledPolicy<'_> {
    fn weight(&self, y: FactorValue) -> f64 {
        self.weight_scale * self.inner.weight(y)
    }

    fn consumption(&self, y: FactorValue) -> f64 {
        self.consumption_scale * self.inner.consumption(y)
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Jump times and states of a chain on `[0, horizon]`.
fn ctmc_jumps<R: Rng>(
    q: &DenseMatrix,
    y0: usize,
    horizon: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<usize>) {
    let mut times = vec![0.0];
    let mut states = vec![y0];
    let mut t = 0.0;
    let mut i = y0;
    loop {
        let rate = -q.get(i, i);
        if !(rate > 0.0) {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(rng);
        if t >= horizon {
            break;
        }
        let mut target = rng.random::<f64>() * rate;
        let mut next = i;
        for j in 0..q.dim() {
            if j == i {
                continue;
            }
            let qij = q.get(i, j);
            next = j;
            if target < qij {
                break;
            }
            target -= qij;
        }
        // guard against rounding leaving `next` on a zero-rate state
        if q.get(i, next) <= 0.0 {
            next = (0..q.dim()).rev().find(|&j| j != i && q.get(i, j) > 0.0).expect("rate > 0");
        }
        i = next;
        times.push(t);
        states.push(i);
    }
    (times, states)
}

/// Exponential holding times with rate `|q_ii|`, jumps to `j` with
/// probability `q_ij / |q_ii|`.
pub fn sample_ctmc_path(q: &DenseMatrix, y0: usize, horizon: f64, seed: u64) -> Result<PathSample> {
    crate::model::validate_generator(q)?;
    if y0 >= q.dim() {
        return Err(Error::InvalidArgument(format!("initial state {y0} out of range")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let mut rng = path_rng(seed, 0);
    let (times, states) = ctmc_jumps(q, y0, horizon, &mut rng);
    Ok(PathSample {
        times,
        factor: states.into_iter().map(FactorValue::Regime).collect(),
        ..Default::default()
    })
}

/// A pair of standard normals with correlation `rho`.
pub fn correlated_normals<R: Rng>(rng: &mut R, rho: f64) -> (f64, f64) {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    (z1, rho * z1 + (1.0 - rho * rho).sqrt() * z2)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Pair each path with its mirror image (negated Brownian increments).
    pub antithetic: bool,
}

impl SimulationConfig {
    fn steps(&self) -> Result<(usize, f64)> {
        if !(self.horizon > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument("horizon and dt must be positive".into()));
        }
        let n = (self.horizon / self.dt).round().max(1.0) as usize;
        Ok((n, self.horizon / n as f64))
    }
}

/// Monte-Carlo estimate of the truncated objective
/// `E int_0^T exp(-int_0^t delta) (xi_t X_t)^{1-R} / (1-R) dt`.
#[derive(Clone, Debug, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    /// Independent samples behind the standard error (pairs when
    /// antithetic).
    pub samples: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Mean contribution of the final 10% of the horizon.
    pub truncation_note: f64,
    pub antithetic: bool,
}

enum Market<'a> {
    Regime(&'a RegimeModel),
    Diffusion(&'a DiffusionModel),
}

struct PathOutcome {
    utility: f64,
    tail: f64,
}

/// Euler scheme on log-wealth with left-endpoint integrals. `sign`
/// negates every Brownian increment.
fn simulate_path(
    market: &Market,
    policy: &dyn Policy,
    x0: f64,
    y0: FactorValue,
    steps: usize,
    dt: f64,
    rng: &mut ChaCha8Rng,
    sign: f64,
    mut record: Option<&mut PathSample>,
) -> PathOutcome {
    let sqrt_dt = dt.sqrt();
    let tail_start = steps - steps / 10;
    let mut log_x = x0.ln();
    let mut disc = 0.0;
    let mut utility = 0.0;
    let mut tail = 0.0;
    match market {
        Market::Regime(m) => {
            let FactorValue::Regime(s0) = y0 else { panic!("regime market needs a regime state") };
            let horizon = steps as f64 * dt;
            let (jump_t, jump_s) = ctmc_jumps(m.generator(), s0, horizon, rng);
            let big_r = m.risk_aversion();
            let mut ptr = 0;
            for k in 0..steps {
                let t = k as f64 * dt;
                while ptr + 1 < jump_t.len() && jump_t[ptr + 1] <= t {
                    ptr += 1;
                }
                let s = jump_s[ptr];
                let y = FactorValue::Regime(s);
                let (pi, xi) = (policy.weight(y), policy.consumption(y));
                if let Some(rec) = record.as_deref_mut() {
                    rec.times.push(t);
                    rec.factor.push(y);
                    rec.wealth.push(log_x.exp());
                    rec.discount.push(disc);
                    rec.utility.push(utility);
                }
                let inc = (-disc + (1.0 - big_r) * (xi.ln() + log_x)).exp() / (1.0 - big_r) * dt;
                let inc = if xi == 0.0 && big_r < 1.0 { 0.0 } else { inc };
                utility += inc;
                if k >= tail_start {
                    tail += inc;
                }
                disc += m.delta()[s] * dt;
                let (r, l, sg) = (m.r()[s], m.lambda()[s], m.sigma()[s]);
                let z: f64 = StandardNormal.sample(rng);
                log_x += (r + pi * l * sg - xi - 0.5 * pi * pi * sg * sg) * dt
                    + pi * sg * sqrt_dt * sign * z;
            }
        }
        Market::Diffusion(m) => {
            let FactorValue::Diffusion(mut y) = y0 else {
                panic!("diffusion market needs a real state")
            };
            let big_r = m.base_risk_aversion();
            let rho = m.rho();
            let truncate = matches!(m.family(), Family::Heston(_));
            // the factor does not move any Black-Scholes coefficient
            let frozen = matches!(m.family(), Family::BlackScholes(_));
            let (lo, hi) = m.interval();
            for k in 0..steps {
                let t = k as f64 * dt;
                // full truncation for the square-root factor
                let ye = if truncate { y.max(0.0) } else { y.clamp(lo, hi) };
                let fy = FactorValue::Diffusion(ye);
                let c = m.market(ye);
                let (pi, xi) = (policy.weight(fy), policy.consumption(fy));
                if let Some(rec) = record.as_deref_mut() {
                    rec.times.push(t);
                    rec.factor.push(FactorValue::Diffusion(y));
                    rec.wealth.push(log_x.exp());
                    rec.discount.push(disc);
                    rec.utility.push(utility);
                }
                let inc = (-disc + (1.0 - big_r) * (xi.ln() + log_x)).exp() / (1.0 - big_r) * dt;
                let inc = if xi == 0.0 && big_r < 1.0 { 0.0 } else { inc };
                utility += inc;
                if k >= tail_start {
                    tail += inc;
                }
                disc += c.delta * dt;
                let (z1, z2) = if frozen {
                    (StandardNormal.sample(rng), 0.0)
                } else {
                    correlated_normals(rng, rho)
                };
                log_x += (c.r + pi * c.lambda * c.sigma - xi - 0.5 * pi * pi * c.sigma * c.sigma)
                    * dt
                    + pi * c.sigma * sqrt_dt * sign * z1;
                y += c.a * dt + c.b * sqrt_dt * sign * z2;
            }
        }
    }
    if let Some(rec) = record {
        rec.times.push(steps as f64 * dt);
        rec.factor.push(match y0 {
            FactorValue::Regime(_) => *rec.factor.last().expect("at least one step"),
            v => v,
        });
        rec.wealth.push(log_x.exp());
        rec.discount.push(disc);
        rec.utility.push(utility);
    }
    PathOutcome { utility, tail }
}

fn market_of(model: &Model) -> Market<'_> {
    match model {
        Model::Regime(m) => Market::Regime(m),
        Model::Diffusion(m) => Market::Diffusion(m),
    }
}

fn check_state(model: &Model, y0: FactorValue) -> Result<()> {
    match (model, y0) {
        (Model::Regime(m), FactorValue::Regime(i)) if i < m.states() => Ok(()),
        (Model::Diffusion(m), FactorValue::Diffusion(y)) if m.contains(y) => Ok(()),
        _ => Err(Error::InvalidArgument("initial state does not match the model".into())),
    }
}

/// One recorded path. For a regime model the factor path is sampled
/// exactly and sampled on the time grid.
pub fn simulate_wealth(
    model: &Model,
    policy: &dyn Policy,
    x0: f64,
    y0: FactorValue,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<PathSample> {
    if !(x0 > 0.0) {
        return Err(Error::InvalidArgument("initial wealth must be positive".into()));
    }
    check_state(model, y0)?;
    let cfg = SimulationConfig { horizon, dt, paths: 1, seed, antithetic: false };
    let (steps, dt) = cfg.steps()?;
    let mut rec = PathSample::default();
    let mut rng = path_rng(seed, 0);
    simulate_path(&market_of(model), policy, x0, y0, steps, dt, &mut rng, 1.0, Some(&mut rec));
    Ok(rec)
}

/// Deterministic pairwise summation.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Mean and standard error over paths with per-path seeds derived from
/// `(seed, path index)`, so the result does not depend on the number of
/// worker threads.
pub fn estimate_value(
    model: &Model,
    policy: &dyn Policy,
    x0: f64,
    y0: FactorValue,
    cfg: &SimulationConfig,
) -> Result<ValueEstimate> {
    if !(x0 > 0.0) {
        return Err(Error::InvalidArgument("initial wealth must be positive".into()));
    }
    check_state(model, y0)?;
    let (steps, dt) = cfg.steps()?;
    if cfg.paths == 0 || (cfg.antithetic && cfg.paths % 2 != 0) {
        return Err(Error::InvalidArgument(
            "path count must be positive (and even when antithetic)".into(),
        ));
    }
    let samples = if cfg.antithetic { cfg.paths / 2 } else { cfg.paths };
    let market = market_of(model);
    let outcomes: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k as u64);
            let a = simulate_path(&market, policy, x0, y0, steps, dt, &mut rng, 1.0, None);
            if cfg.antithetic {
                let mut rng = path_rng(cfg.seed, k as u64);
                let b = simulate_path(&market, policy, x0, y0, steps, dt, &mut rng, -1.0, None);
                (0.5 * (a.utility + b.utility), 0.5 * (a.tail + b.tail))
            } else {
                (a.utility, a.tail)
            }
        })
        .collect();
    let values: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let tails: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let n = samples as f64;
    let mean = pairwise_sum(&values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if samples > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    Ok(ValueEstimate {
        mean,
        std_error: (var / n).sqrt(),
        paths: cfg.paths,
        samples,
        horizon: steps as f64 * dt,
        dt,
        truncation_note: pairwise_sum(&tails) / n,
        antithetic: cfg.antithetic,
    })
}

/// Horizon T with `exp(-min_eta T) = 1e-4`.
pub fn default_horizon(min_eta: f64) -> Result<f64> {
    if !(min_eta > 0.0) {
        return Err(Error::InvalidArgument(
            "default horizon needs a positive frozen rate; pass a horizon explicitly".into(),
        ));
    }
    Ok(1e4f64.ln() / min_eta)
}

/// Estimates over increasing horizons with common random numbers. For an
/// ill-posed model the truncated objective does not settle as T grows,
/// and this table shows how it grows.
pub fn horizon_growth(
    model: &Model,
    policy: &dyn Policy,
    x0: f64,
    y0: FactorValue,
    horizons: &[f64],
    cfg: &SimulationConfig,
) -> Result<Vec<ValueEstimate>> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("horizons must be nonempty and increasing".into()));
    }
    horizons
        .iter()
        .map(|&horizon| estimate_value(model, policy, x0, y0, &SimulationConfig { horizon, ..*cfg }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlackScholesParams, Family};

    fn two_state_q() -> DenseMatrix {
        DenseMatrix::from_rows(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap()
    }

    fn black_scholes(big_r: f64, r: f64, delta: f64, lambda: f64, sigma: f64) -> Model {
        Model::Diffusion(
            DiffusionModel::new(
                Family::BlackScholes(BlackScholesParams {
                    r,
                    lambda,
                    sigma,
                    delta,
                    kappa: 1.0,
                    theta: 0.0,
                    nu: 1.0,
                }),
                big_r,
                0.3,
            )
            .unwrap(),
        )
    }

    #[test]
    fn single_state_path_is_constant() {
        let p = sample_ctmc_path(&DenseMatrix::zeros(1), 0, 100.0, 7).unwrap();
        assert_eq!(p.factor, vec![FactorValue::Regime(0)]);
    }

    #[test]
    fn holding_times_and_occupation() {
        let p = sample_ctmc_path(&two_state_q(), 0, 1e4, 11).unwrap();
        let mut hold = [Vec::new(), Vec::new()];
        for k in 0..p.times.len() - 1 {
            let FactorValue::Regime(s) = p.factor[k] else { unreachable!() };
            hold[s].push(p.times[k + 1] - p.times[k]);
        }
        let h0 = &hold[0];
        let n = h0.len() as f64;
        let mean = h0.iter().sum::<f64>() / n;
        // exponential(1): sd 1
        assert!((mean - 1.0).abs() < 3.0 / n.sqrt(), "mean {mean}");
        let occ0: f64 = h0.iter().sum::<f64>() / 1e4;
        // occupation of a symmetric chain; renewal SE approx sqrt(1/(2 n))
        assert!((occ0 - 0.5).abs() < 3.0 * (0.5 / n).sqrt(), "occupation {occ0}");
    }

    #[test]
    fn zero_consumption_gives_zero_utility() {
        let m = black_scholes(0.5, 0.02, 0.05, 0.2, 0.2);
        let pol = ConstantPolicy { pi: 0.5, xi: 0.0 };
        let p = simulate_wealth(&m, &pol, 1.0, FactorValue::Diffusion(0.0), 10.0, 0.01, 3).unwrap();
        assert_eq!(*p.utility.last().unwrap(), 0.0);
        assert!(p.wealth.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn deterministic_integral_matches_closed_form() {
        // pi = 0: X_t = x0 exp((r - xi) t), integrand exp(-delta t) (xi X_t)^{1-R}/(1-R)
        let (big_r, r, delta, xi, x0) = (2.0, 0.03, 0.1, 0.05, 1.5);
        let m = black_scholes(big_r, r, delta, 0.3, 0.2);
        let pol = ConstantPolicy { pi: 0.0, xi };
        let (horizon, dt) = (20.0, 1e-3);
        let p = simulate_wealth(&m, &pol, x0, FactorValue::Diffusion(0.0), horizon, dt, 5).unwrap();
        let k = delta - (1.0 - big_r) * (r - xi);
        let c = (xi * x0).powf(1.0 - big_r) / (1.0 - big_r);
        // left Riemann sum of c exp(-k t)
        let want = c * dt * (1.0 - (-k * horizon).exp()) / (1.0 - (-k * dt).exp());
        let got = *p.utility.last().unwrap();
        assert!((got / want - 1.0).abs() < 1e-10, "{got} vs {want}");
        let exact = c * (1.0 - (-k * horizon).exp()) / k;
        assert!((got / exact - 1.0).abs() < k * dt);
    }

    #[test]
    fn correlated_increments_have_target_correlation() {
        let rho = -0.84;
        let n = 1_000_000;
        let mut rng = path_rng(99, 0);
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = correlated_normals(&mut rng, rho);
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
            sx += a;
            sy += b;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / (nf * nf);
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        let se = (1.0 - rho * rho) / nf.sqrt();
        assert!((corr - rho).abs() < 3.0 * se, "{corr}");
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let m = black_scholes(2.0, 0.02, 0.3, 0.3, 0.2);
        let pol = ConstantPolicy { pi: 0.5, xi: 0.2 };
        let cfg = SimulationConfig { horizon: 5.0, dt: 0.05, paths: 64, seed: 42, antithetic: false };
        let y0 = FactorValue::Diffusion(0.0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_value(&m, &pol, 1.0, y0, &cfg).unwrap());
        let b = four.install(|| estimate_value(&m, &pol, 1.0, y0, &cfg).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn ill_posed_objective_grows_with_horizon() {
        // eta = -0.05 in both states, R = 2, pi = 0, xi = 0.1: the integrand
        // is -(1/xi) exp(0.2 t), so the objective is -50 (exp(0.2 T) - 1)
        let model = Model::Regime(RegimeModel::with_frozen_rates(&[-0.05, -0.05], two_state_q(), 2.0).unwrap());
        let pol = ConstantPolicy { pi: 0.0, xi: 0.1 };
        let cfg = SimulationConfig { horizon: 1.0, dt: 0.001, paths: 4, seed: 3, antithetic: false };
        let horizons = [5.0, 10.0, 20.0];
        let rows = horizon_growth(&model, &pol, 1.0, FactorValue::Regime(0), &horizons, &cfg).unwrap();
        for (row, t) in rows.iter().zip(horizons) {
            let exact = -50.0 * ((0.2 * t).exp() - 1.0);
            assert!((row.mean / exact - 1.0).abs() < 0.2 * t * cfg.dt, "T = {t}: {} vs {exact}", row.mean);
        }
        assert!(rows.windows(2).all(|w| w[1].mean < 2.0 * w[0].mean));
        assert!(horizon_growth(&model, &pol, 1.0, FactorValue::Regime(0), &[2.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn rejects_mismatched_state() {
        let m = black_scholes(2.0, 0.02, 0.3, 0.3, 0.2);
        let pol = ConstantPolicy { pi: 0.5, xi: 0.2 };
        let cfg = SimulationConfig { horizon: 1.0, dt: 0.1, paths: 3, seed: 1, antithetic: true };
        assert!(estimate_value(&m, &pol, 1.0, FactorValue::Diffusion(0.0), &cfg).is_err());
        assert!(estimate_value(&m, &pol, 1.0, FactorValue::Regime(0), &cfg).is_err());
        assert!(default_horizon(-0.1).is_err());
    }
}
