//! Well-posedness and the matrix equation `A f = f^p` for finite-regime
//! markets.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    check_nonsingular_m_matrix, DenseMatrix, Factorization, MCertificate, ZMatrix,
};
use crate::model::RegimeModel;

/// `diag(eta) - Q / R`.
pub fn assemble_a(model: &RegimeModel) -> DenseMatrix {
    model
        .generator()
        .scaled_plus_diagonal(-1.0 / model.risk_aversion(), &model.frozen_rates())
}

/// The easy sufficient conditions that can settle well-posedness without a
/// certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuickChecks {
    /// Every frozen rate is positive (well-posed).
    pub all_eta_positive: bool,
    /// Every frozen rate is nonpositive (ill-posed).
    pub all_eta_nonpositive: bool,
    /// First state with `eta_i <= -(1/R) sum_{j != i} q_ij` (ill-posed).
    pub diagonal_violation: Option<usize>,
}

impl QuickChecks {
    /// Verdict implied by the quick checks, if any applies.
    pub fn conclusion(&self) -> Option<bool> {
        if self.all_eta_positive {
            Some(true)
        } else if self.all_eta_nonpositive || self.diagonal_violation.is_some() {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WellPosednessReport {
    pub verdict: bool,
    pub certificate: MCertificate,
    pub quick_checks: QuickChecks,
}

impl WellPosednessReport {
    /// Report for `A = diag(eta) - Q/R`. The diagonal of A equals
    /// `eta_i + (1/R) sum_{j != i} q_ij`, so the diagonal criterion is read
    /// off directly.
    pub fn assess<A: ZMatrix>(a: &A, eta: &[f64]) -> Result<Self> {
        let certificate = check_nonsingular_m_matrix(a)?;
        let quick_checks = QuickChecks {
            all_eta_positive: eta.iter().all(|&e| e > 0.0),
            all_eta_nonpositive: eta.iter().all(|&e| e <= 0.0),
            diagonal_violation: a.diagonal().iter().position(|&d| d <= 0.0),
        };
        Ok(WellPosednessReport { verdict: certificate.verdict, certificate, quick_checks })
    }

    pub fn summary(&self) -> String {
        match (self.verdict, self.certificate.failure_index) {
            (true, _) => "well-posed".to_string(),
            (false, Some(i)) if self.certificate.numerically_singular => {
                format!("numerically singular at index {i}")
            }
            (false, Some(i)) => format!("minor ratio nonpositive at index {i}"),
            (false, None) => "certificate failed".to_string(),
        }
    }
}

pub fn check_wellposed(model: &RegimeModel) -> WellPosednessReport {
    let a = assemble_a(model);
    WellPosednessReport::assess(&a, &model.frozen_rates()).expect("A is a Z-matrix by construction")
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Starting point; defaults to the lower corner of the iterate box
    /// (fixed point) or `(A^{-1} 1)^{1/(1-p)}` (Newton).
    pub start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iterations: 10_000, start: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    FixedPoint,
    Newton,
}

/// Positive solution of `A x = x^p` and how it was obtained.
#[derive(Clone, Debug, Serialize)]
pub struct MatrixSolution {
    pub x: Vec<f64>,
    pub method: SolverMethod,
    pub iterations: usize,
    /// Log-sup distances between iterates (fixed point) or relative
    /// residuals (Newton).
    pub trace: Vec<f64>,
    /// `||A x - x^p||_inf / ||x^p||_inf`.
    pub residual: f64,
    /// Iterate box `[m, M]` (fixed point only).
    pub bounds: Option<(f64, f64)>,
    /// A priori iteration count to reach log-sup accuracy `tol`.
    pub iteration_bound: Option<f64>,
}

fn relative_residual<A: ZMatrix>(a: &A, x: &[f64], p: f64) -> f64 {
    let ax = a.apply(x);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (axi, xi) in ax.iter().zip(x) {
        let xp = xi.powf(p);
        num = num.max((axi - xp).abs());
        den = den.max(xp.abs());
    }
    num / den
}

/// `x = A^{-1} 1` after factorization, failing unless A certifies.
fn certified_factor<A: ZMatrix>(a: &A) -> Result<(A::Factor, Vec<f64>)> {
    let cert = check_nonsingular_m_matrix(a)?;
    if !cert.verdict {
        return Err(Error::NotMMatrix { index: cert.failure_index.unwrap_or(0) });
    }
    let factor = a.factorize()?;
    let c = factor.solve(&vec![1.0; a.dim()]);
    if let Some(index) = c.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NotMMatrix { index });
    }
    Ok((factor, c))
}

fn validate_start(start: &[f64], n: usize) -> Result<()> {
    if start.len() != n {
        return Err(Error::InvalidArgument(format!(
            "start vector has length {}, expected {n}",
            start.len()
        )));
    }
    if let Some(i) = start.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("start vector entry {i} is not positive")));
    }
    Ok(())
}

/// Box `[m, M]` that the fixed-point map sends into itself.
pub fn iterate_box(c_min: f64, c_max: f64, p: f64) -> (f64, f64) {
    if p >= 0.0 {
        let e = 1.0 / (1.0 - p);
        (c_min.powf(e), c_max.powf(e))
    } else {
        let e = 1.0 / (1.0 - p * p);
        ((c_min * c_max.powf(p)).powf(e), (c_min.powf(p) * c_max).powf(e))
    }
}

/// Iteration `x_{n+1} = A^{-1} x_n^p`, a contraction with rate |p| in the
/// log-sup metric. Stops once the step is at most `tol (1 - |p|)`, which
/// bounds the distance to the fixed point by `tol`.
pub fn solve_hjb_fixed_point<A: ZMatrix>(
    a: &A,
    p: f64,
    opts: &SolverOptions,
) -> Result<MatrixSolution> {
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::ExponentOutOfRange { p });
    }
    let n = a.dim();
    let (factor, c) = certified_factor(a)?;
    let c_min = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_max = c.iter().cloned().fold(0.0, f64::max);
    let (m, big_m) = iterate_box(c_min, c_max, p);

    let mut x = match &opts.start {
        Some(s) => {
            validate_start(s, n)?;
            s.clone()
        }
        None => vec![m; n],
    };
    let stop = opts.tol * (1.0 - p.abs());
    let mut log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mut rhs = vec![0.0; n];
    let mut trace = Vec::new();
    loop {
        for (r, lx) in rhs.iter_mut().zip(&log_x) {
            *r = (p * lx).exp();
        }
        factor.solve_into(&rhs, &mut x);
        let mut dist = 0.0f64;
        for (xi, lx) in x.iter().zip(log_x.iter_mut()) {
            let l = xi.ln();
            dist = dist.max((l - *lx).abs());
            *lx = l;
        }
        trace.push(dist);
        if !dist.is_finite() {
            return Err(Error::NoConvergence {
                method: "fixed point",
                iterations: trace.len(),
                last_error: dist,
                last_iterate: x,
            });
        }
        if dist <= stop {
            break;
        }
        if trace.len() >= opts.max_iterations {
            return Err(Error::NoConvergence {
                method: "fixed point",
                iterations: trace.len(),
                last_error: dist,
                last_iterate: x,
            });
        }
    }
    let spread = big_m * big_m / m - big_m;
    let iteration_bound = if p == 0.0 {
        1.0
    } else if spread > 0.0 {
        ((opts.tol.ln() - spread.ln()) / p.abs().ln()).max(1.0)
    } else {
        1.0
    };
    Ok(MatrixSolution {
        residual: relative_residual(a, &x, p),
        x,
        method: SolverMethod::FixedPoint,
        iterations: trace.len(),
        trace,
        bounds: Some((m, big_m)),
        iteration_bound: Some(iteration_bound),
    })
}

const MAX_HALVINGS: usize = 60;

/// Damped Newton on `F(x) = A x - x^p` with Jacobian `A - diag(p x^{p-1})`.
/// Steps are halved until the iterate stays positive. Stops when
/// `||F(x)||_inf <= tol ||x^p||_inf`.
pub fn solve_hjb_newton<A: ZMatrix>(a: &A, p: f64, opts: &SolverOptions) -> Result<MatrixSolution> {
    if !(p < 1.0) {
        return Err(Error::InvalidArgument(format!("Newton solver needs p < 1, got {p}")));
    }
    let n = a.dim();
    let (factor, c) = certified_factor(a)?;
    let mut x = match &opts.start {
        Some(s) => {
            validate_start(s, n)?;
            s.clone()
        }
        // exact when A is diagonal
        None => c.iter().map(|v| v.powf(1.0 / (1.0 - p))).collect(),
    };
    let max_iter = opts.max_iterations.min(500);
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut shift = vec![0.0; n];
    let mut fx = vec![0.0; n];
    loop {
        a.apply_into(&x, &mut fx);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..n {
            let xp = x[i].powf(p);
            fx[i] -= xp;
            num = num.max(fx[i].abs());
            den = den.max(xp);
            shift[i] = -p * xp / x[i];
        }
        let res = num / den;
        trace.push(res);
        if res <= opts.tol {
            break;
        }
        if steps >= max_iter || !res.is_finite() {
            return Err(Error::NoConvergence {
                method: "Newton",
                iterations: steps,
                last_error: res,
                last_iterate: x,
            });
        }
        let candidate = match a.with_added_diagonal(&shift).factorize() {
            Ok(jac) => {
                let delta = jac.solve(&fx);
                let mut t = 1.0;
                let mut halvings = 0;
                loop {
                    let y: Vec<f64> = x.iter().zip(&delta).map(|(xi, di)| xi - t * di).collect();
                    if y.iter().all(|&v| v > 0.0 && v.is_finite()) {
                        break Some(y);
                    }
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        break None;
                    }
                    t *= 0.5;
                }
            }
            Err(_) => None,
        };
        x = match candidate {
            Some(y) => y,
            // For 0 < p < 1 the Jacobian need not be an M-matrix away from
            // the solution; a contraction step keeps the iterate positive.
            None if p > -1.0 => {
                let rhs: Vec<f64> = x.iter().map(|v| v.powf(p)).collect();
                factor.solve(&rhs)
            }
            None => {
                return Err(Error::NoConvergence {
                    method: "Newton",
                    iterations: steps,
                    last_error: res,
                    last_iterate: x,
                })
            }
        };
        steps += 1;
    }
    Ok(MatrixSolution {
        residual: relative_residual(a, &x, p),
        x,
        method: SolverMethod::Newton,
        iterations: steps,
        trace,
        bounds: None,
        iteration_bound: None,
    })
}

/// Fixed point for `p > -1`, Newton otherwise.
pub fn solve_matrix_equation<A: ZMatrix>(
    a: &A,
    p: f64,
    opts: &SolverOptions,
) -> Result<MatrixSolution> {
    if p > -1.0 {
        solve_hjb_fixed_point(a, p, opts)
    } else {
        solve_hjb_newton(a, p, opts)
    }
}

/// Value factor and optimal policies of a regime model.
#[derive(Clone, Debug, Serialize)]
pub struct HjbSolution {
    pub f: Vec<f64>,
    /// Optimal consumption rate `f^{-1/R}`.
    pub u: Vec<f64>,
    /// Optimal portfolio weight `lambda / (R sigma)`.
    pub pi_hat: Vec<f64>,
    pub risk_aversion: f64,
    pub method: SolverMethod,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub residual: f64,
}

impl HjbSolution {
    /// `V(x, state) = x^{1-R} / (1-R) f(state)`.
    pub fn value(&self, wealth: f64, state: usize) -> f64 {
        let big_r = self.risk_aversion;
        wealth.powf(1.0 - big_r) / (1.0 - big_r) * self.f[state]
    }
}

pub fn value_and_policies(model: &RegimeModel, f: &[f64]) -> Result<HjbSolution> {
    if f.len() != model.states() {
        return Err(Error::InvalidArgument("value factor has the wrong length".into()));
    }
    if let Some(i) = f.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("value factor f[{i}] is not positive")));
    }
    let big_r = model.risk_aversion();
    Ok(HjbSolution {
        f: f.to_vec(),
        u: f.iter().map(|v| v.powf(-1.0 / big_r)).collect(),
        pi_hat: model
            .lambda()
            .iter()
            .zip(model.sigma())
            .map(|(l, s)| l / (big_r * s))
            .collect(),
        risk_aversion: big_r,
        method: SolverMethod::FixedPoint,
        iterations: 0,
        trace: Vec::new(),
        residual: 0.0,
    })
}

/// Certify, then solve. Ill-posed models are refused with their report.
pub fn solve_regime(model: &RegimeModel, opts: &SolverOptions) -> Result<HjbSolution> {
    let a = assemble_a(model);
    let report = WellPosednessReport::assess(&a, &model.frozen_rates())?;
    if !report.verdict {
        return Err(Error::IllPosed(Box::new(report)));
    }
    let sol = solve_matrix_equation(&a, model.exponent(), opts)?;
    let mut out = value_and_policies(model, &sol.x)?;
    out.method = sol.method;
    out.iterations = sol.iterations;
    out.trace = sol.trace;
    out.residual = sol.residual;
    Ok(out)
}

/// Verdict for a chain cycling `1 -> 2 -> ... -> N -> 1` with rates `q`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CyclicVerdict {
    pub well_posed: bool,
    /// First state failing `eta_i > -q_i / R`.
    pub diagonal_violation: Option<usize>,
    /// `sum_i log(1 + R eta_i / q_i)`; positive iff well-posed.
    pub log_product: Option<f64>,
}

pub fn cyclic_wellposed(eta: &[f64], q: &[f64], risk_aversion: f64) -> Result<CyclicVerdict> {
    if eta.len() != q.len() || eta.is_empty() {
        return Err(Error::InvalidArgument("eta and q must have equal nonzero length".into()));
    }
    if let Some(i) = q.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("cyclic rate q[{i}] must be positive")));
    }
    let big_r = risk_aversion;
    if let Some(i) = (0..eta.len()).find(|&i| !(eta[i] > -q[i] / big_r)) {
        return Ok(CyclicVerdict { well_posed: false, diagonal_violation: Some(i), log_product: None });
    }
    let log_product: f64 = eta.iter().zip(q).map(|(e, qi)| (big_r * e / qi).ln_1p()).sum();
    Ok(CyclicVerdict { well_posed: log_product > 0.0, diagonal_violation: None, log_product: Some(log_product) })
}

/// Generator of the cyclic chain.
pub fn cyclic_generator(q: &[f64]) -> DenseMatrix {
    let n = q.len();
    let mut m = DenseMatrix::zeros(n);
    if n > 1 {
        for i in 0..n {
            m.set(i, i, -q[i]);
            m.set(i, (i + 1) % n, q[i]);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearestNeighbourVerdict {
    pub well_posed: bool,
    pub ratios: Vec<f64>,
    pub failure_index: Option<usize>,
}

/// Ratio recursion for a birth-death chain. `q_minus[0]` and
/// `q_plus[N-1]` must be zero.
pub fn nearest_neighbour_wellposed(
    eta: &[f64],
    q_minus: &[f64],
    q_plus: &[f64],
    risk_aversion: f64,
) -> Result<NearestNeighbourVerdict> {
    let n = eta.len();
    if n == 0 || q_minus.len() != n || q_plus.len() != n {
        return Err(Error::InvalidArgument("eta, q_minus, q_plus must have equal length".into()));
    }
    if q_minus[0] != 0.0 || q_plus[n - 1] != 0.0 {
        return Err(Error::InvalidArgument("boundary rates q_minus[0], q_plus[N-1] must be 0".into()));
    }
    if q_minus.iter().chain(q_plus).any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("jump rates must be nonnegative".into()));
    }
    let big_r = risk_aversion;
    let mut ratios = Vec::with_capacity(n);
    let mut failure_index = None;
    for i in 0..n {
        let mut r = eta[i] + (q_minus[i] + q_plus[i]) / big_r;
        if i > 0 {
            r -= q_plus[i - 1] * q_minus[i] / (big_r * big_r * ratios[i - 1]);
        }
        ratios.push(r);
        if r <= crate::linalg::PIVOT_FLOOR {
            failure_index = Some(i);
            break;
        }
    }
    Ok(NearestNeighbourVerdict { well_posed: failure_index.is_none(), ratios, failure_index })
}

/// Generator of the birth-death chain.
pub fn nearest_neighbour_generator(q_minus: &[f64], q_plus: &[f64]) -> DenseMatrix {
    let n = q_minus.len();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        if i > 0 {
            m.set(i, i - 1, q_minus[i]);
        }
        if i + 1 < n {
            m.set(i, i + 1, q_plus[i]);
        }
        m.set(i, i, -(q_minus[i] + q_plus[i]));
    }
    m
}
