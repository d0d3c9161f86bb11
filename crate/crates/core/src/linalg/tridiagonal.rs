use crate::error::{Error, Result};

use super::{Factorization, ZMatrix, PIVOT_FLOOR};

/// Banded matrix with sub-, main and super-diagonal.
///
/// `sub[i] = A[i+1][i]` and `sup[i] = A[i][i+1]`. Row sums are stored
/// alongside the diagonals. For a fine grid the diagonal of `diag(eta) - Q/R`
/// is dominated by `b^2/h^2`, and recovering `eta` from it would cancel most
/// of its digits. Products and the elimination are therefore written in
/// terms of the row sums and the off-diagonals, which keeps every term of
/// one sign for an M-matrix with nonnegative row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalOperator {
    sub: Vec<f64>,
    main: Vec<f64>,
    sup: Vec<f64>,
    row_sum: Vec<f64>,
}

impl TridiagonalOperator {
    pub fn new(sub: Vec<f64>, main: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let n = main.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty tridiagonal operator".into()));
        }
        if sub.len() != n - 1 || sup.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "diagonal lengths ({}, {n}, {}) do not match",
                sub.len(),
                sup.len()
            )));
        }
        if sub.iter().chain(&main).chain(&sup).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tridiagonal entry".into()));
        }
        let row_sum = (0..n)
            .map(|i| {
                let l = if i > 0 { sub[i - 1] } else { 0.0 };
                let u = if i + 1 < n { sup[i] } else { 0.0 };
                l + main[i] + u
            })
            .collect();
        Ok(TridiagonalOperator { sub, main, sup, row_sum })
    }

    /// Operator given by its off-diagonals and exact row sums; the diagonal
    /// is implied.
    pub fn from_row_sums(sub: Vec<f64>, sup: Vec<f64>, row_sum: Vec<f64>) -> Result<Self> {
        let n = row_sum.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty tridiagonal operator".into()));
        }
        if sub.len() != n - 1 || sup.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "diagonal lengths ({}, {n}, {}) do not match",
                sub.len(),
                sup.len()
            )));
        }
        let main: Vec<f64> = (0..n)
            .map(|i| {
                let l = if i > 0 { sub[i - 1] } else { 0.0 };
                let u = if i + 1 < n { sup[i] } else { 0.0 };
                row_sum[i] - l - u
            })
            .collect();
        if sub.iter().chain(&main).chain(&sup).chain(&row_sum).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tridiagonal entry".into()));
        }
        Ok(TridiagonalOperator { sub, main, sup, row_sum })
    }

    pub fn identity(n: usize) -> Self {
        TridiagonalOperator {
            sub: vec![0.0; n.saturating_sub(1)],
            main: vec![1.0; n],
            sup: vec![0.0; n.saturating_sub(1)],
            row_sum: vec![1.0; n],
        }
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn main(&self) -> &[f64] {
        &self.main
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    /// `alpha * self + diag(d)`.
    pub fn scaled_plus_diagonal(&self, alpha: f64, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.main.len());
        TridiagonalOperator {
            sub: self.sub.iter().map(|v| alpha * v).collect(),
            main: self.main.iter().zip(d).map(|(v, e)| alpha * v + e).collect(),
            sup: self.sup.iter().map(|v| alpha * v).collect(),
            row_sum: self.row_sum.iter().zip(d).map(|(v, e)| alpha * v + e).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.main[i]
        } else if j == i + 1 {
            self.sup[i]
        } else if i == j + 1 {
            self.sub[j]
        } else {
            0.0
        }
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sum
    }

    pub fn to_dense(&self) -> super::DenseMatrix {
        let n = self.dim();
        let rows = (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect();
        super::DenseMatrix::from_rows(rows).expect("square by construction")
    }
}

/// Thomas factorization without pivoting.
#[derive(Clone, Debug)]
pub struct TridiagonalFactor {
    /// Multipliers `l[i] = sub[i] / d[i]`.
    l: Vec<f64>,
    /// Pivots.
    d: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalFactor {
    pub fn pivots(&self) -> &[f64] {
        &self.d
    }
}

impl Factorization for TridiagonalFactor {
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(rhs.len(), n);
        assert_eq!(out.len(), n);
        out[0] = rhs[0];
        for i in 1..n {
            out[i] = rhs[i] - self.l[i - 1] * out[i - 1];
        }
        out[n - 1] /= self.d[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = (out[i] - self.sup[i] * out[i + 1]) / self.d[i];
        }
    }
}

impl TridiagonalOperator {
    /// Pivots `r_i` (ratios of consecutive leading minors) and multipliers,
    /// stopping after the first pivot below the floor.
    ///
    /// With `s_i = r_i + sup_i` the recursion reads
    /// `s_i = rowsum_i - sub_{i-1} s_{i-1} / r_{i-1}`, `r_i = s_i - sup_i`,
    /// which is algebraically the usual one but subtracts nothing when the
    /// off-diagonals are nonpositive and the row sums nonnegative.
    fn pivots(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let sup_at = |i: usize| if i + 1 < n { self.sup[i] } else { 0.0 };
        let mut r = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n.saturating_sub(1));
        let mut s = self.row_sum[0];
        r.push(s - sup_at(0));
        for i in 1..n {
            let prev = r[i - 1];
            if prev.abs() <= PIVOT_FLOOR {
                break;
            }
            let m = self.sub[i - 1] / prev;
            l.push(m);
            s = self.row_sum[i] - m * s;
            r.push(s - sup_at(i));
        }
        (r, l)
    }
}

impl ZMatrix for TridiagonalOperator {
    type Factor = TridiagonalFactor;

    fn dim(&self) -> usize {
        self.main.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = self.row_sum[i] * x[i];
            if i > 0 {
                acc += self.sub[i - 1] * (x[i - 1] - x[i]);
            }
            if i + 1 < n {
                acc += self.sup[i] * (x[i + 1] - x[i]);
            }
            y[i] = acc;
        }
    }

    fn first_positive_off_diagonal(&self) -> Option<(usize, usize, f64)> {
        if let Some(i) = self.sup.iter().position(|&v| v > 0.0) {
            return Some((i, i + 1, self.sup[i]));
        }
        self.sub.iter().position(|&v| v > 0.0).map(|i| (i + 1, i, self.sub[i]))
    }

    fn diagonal(&self) -> Vec<f64> {
        self.main.clone()
    }

    fn norm_inf(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.main[i].abs();
                if i > 0 {
                    s += self.sub[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.sup[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    fn minor_ratios(&self) -> Vec<f64> {
        self.pivots().0
    }

    fn factorize(&self) -> Result<TridiagonalFactor> {
        let n = self.dim();
        let (d, l) = self.pivots();
        if let Some(row) = d.iter().position(|p| p.abs() <= PIVOT_FLOOR) {
            return Err(Error::Singular { row });
        }
        debug_assert_eq!(d.len(), n);
        Ok(TridiagonalFactor { l, d, sup: self.sup.clone() })
    }

    fn solve_general(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factorize().map(|f| f.solve(rhs))
    }

    fn with_added_diagonal(&self, d: &[f64]) -> Self {
        self.scaled_plus_diagonal(1.0, d)
    }
}
