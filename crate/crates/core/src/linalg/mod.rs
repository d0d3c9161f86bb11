//! Tridiagonal and small dense linear algebra with M-matrix certificates.

mod dense;
mod tridiagonal;

pub use dense::{DenseFactor, DenseMatrix};
pub use tridiagonal::{TridiagonalFactor, TridiagonalOperator};

use serde::Serialize;

use crate::error::{Error, Result};

/// Pivots or ratios at or below this magnitude count as numerically zero.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// A solved factorization.
pub trait Factorization {
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]);

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rhs.len()];
        self.solve_into(rhs, &mut out);
        out
    }
}

/// Square matrices the solvers can work with.
pub trait ZMatrix: Clone + Sync {
    type Factor: Factorization;

    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);
    /// First off-diagonal entry that breaks the Z-matrix sign pattern.
    fn first_positive_off_diagonal(&self) -> Option<(usize, usize, f64)>;
    fn diagonal(&self) -> Vec<f64>;
    fn norm_inf(&self) -> f64;
    /// Ratios of consecutive leading principal minors, i.e. the pivots of
    /// elimination without row exchanges. Stops after the first pivot whose
    /// magnitude is at most `PIVOT_FLOOR`.
    fn minor_ratios(&self) -> Vec<f64>;
    /// LU without row exchanges.
    fn factorize(&self) -> Result<Self::Factor>;
    /// Linear solve that does not rely on the no-exchange factorization
    /// succeeding for dense input.
    fn solve_general(&self, rhs: &[f64]) -> Result<Vec<f64>>;
    fn with_added_diagonal(&self, d: &[f64]) -> Self;

    fn is_z_matrix(&self) -> bool {
        self.first_positive_off_diagonal().is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    MinorRatios,
    PositiveImage,
}

/// Positive vector together with its (positive) image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub ax: Vec<f64>,
}

/// Evidence for or against a matrix being a nonsingular M-matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCertificate {
    pub verdict: bool,
    pub method: CertificateMethod,
    /// Minor ratios (minor-ratio method only).
    pub ratios: Vec<f64>,
    /// Candidate `x = A^{-1} 1` and `A x` (positive-image method only).
    pub witness: Option<Witness>,
    pub failure_index: Option<usize>,
    /// A ratio fell to within `PIVOT_FLOOR` of zero.
    pub numerically_singular: bool,
}

impl MCertificate {
    /// Leading principal minors as running products of the ratios, or `None`
    /// when they leave the representable range.
    pub fn leading_minors(&self) -> Option<Vec<f64>> {
        let mut acc = 1.0f64;
        let mut out = Vec::with_capacity(self.ratios.len());
        for &r in &self.ratios {
            acc *= r;
            if !acc.is_finite() || (acc != 0.0 && acc.abs() < f64::MIN_POSITIVE) {
                return None;
            }
            out.push(acc);
        }
        Some(out)
    }
}

fn require_z<A: ZMatrix>(a: &A) -> Result<()> {
    match a.first_positive_off_diagonal() {
        Some((row, col, value)) => Err(Error::NotZMatrix { row, col, value }),
        None => Ok(()),
    }
}

/// Minor-ratio test: a Z-matrix is a nonsingular M-matrix iff all leading
/// principal minors are positive. Ratios are used directly so large
/// dimensions never overflow.
pub fn check_nonsingular_m_matrix<A: ZMatrix>(a: &A) -> Result<MCertificate> {
    require_z(a)?;
    let ratios = a.minor_ratios();
    let failure_index = ratios.iter().position(|&r| r <= PIVOT_FLOOR);
    let numerically_singular =
        failure_index.is_some_and(|i| ratios[i].abs() <= PIVOT_FLOOR);
    Ok(MCertificate {
        verdict: failure_index.is_none() && ratios.len() == a.dim(),
        method: CertificateMethod::MinorRatios,
        ratios,
        witness: None,
        failure_index,
        numerically_singular,
    })
}

/// Positive-image test with candidate `x = A^{-1} 1`.
pub fn positive_image_certificate<A: ZMatrix>(a: &A) -> Result<MCertificate> {
    require_z(a)?;
    let n = a.dim();
    let (witness, failure_index, singular) = match a.solve_general(&vec![1.0; n]) {
        Ok(x) => {
            let ax = a.apply(&x);
            let bad = (0..n).find(|&i| !(x[i] > 0.0 && ax[i] > 0.0 && x[i].is_finite()));
            (Some(Witness { x, ax }), bad, false)
        }
        Err(Error::Singular { row }) => (None, Some(row), true),
        Err(e) => return Err(e),
    };
    Ok(MCertificate {
        verdict: failure_index.is_none(),
        method: CertificateMethod::PositiveImage,
        ratios: Vec::new(),
        witness,
        failure_index,
        numerically_singular: singular,
    })
}

/// Thomas algorithm.
pub fn tridiag_solve(a: &TridiagonalOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != a.dim() {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has length {}, expected {}",
            rhs.len(),
            a.dim()
        )));
    }
    Ok(a.factorize()?.solve(rhs))
}

/// Upper bound `||x||_inf / min(Ax)` on `||A^{-1}||_inf`, valid for any
/// `x > 0` with `Ax > 0` when A is a Z-matrix.
pub fn inverse_norm_bound<A: ZMatrix>(a: &A, x: &[f64]) -> Result<f64> {
    if x.len() != a.dim() {
        return Err(Error::InvalidArgument("witness has the wrong length".into()));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("witness x[{i}] is not positive")));
    }
    let ax = a.apply(x);
    if let Some(i) = ax.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("(Ax)[{i}] is not positive")));
    }
    let xmax = x.iter().cloned().fold(0.0, f64::max);
    let axmin = ax.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(xmax / axmin)
}
