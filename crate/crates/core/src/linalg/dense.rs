use crate::error::{Error, Result};

use super::{Factorization, ZMatrix, PIVOT_FLOOR};

/// Row-major square matrix for small regime models.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "row {i} has length {}, expected {n}",
                rows[i].len()
            )));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(DenseMatrix { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// `alpha * self + diag(d)`.
    pub fn scaled_plus_diagonal(&self, alpha: f64, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut m = DenseMatrix { n: self.n, data: self.data.iter().map(|v| alpha * v).collect() };
        for (i, &v) in d.iter().enumerate() {
            m.data[i * self.n + i] += v;
        }
        m
    }

    /// Gaussian elimination with partial pivoting. Independent of the
    /// no-exchange path used for certification.
    pub fn solve_pivoted(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .expect("nonempty range");
            if a[p * n + k].abs() <= PIVOT_FLOOR {
                return Err(Error::Singular { row: k });
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                b.swap(k, p);
            }
            for i in k + 1..n {
                let m = a[i * n + k] / a[k * n + k];
                if m != 0.0 {
                    for j in k..n {
                        a[i * n + j] -= m * a[k * n + j];
                    }
                    b[i] -= m * b[k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i * n + i];
        }
        Ok(x)
    }
}

/// LU factors without row exchanges, stored in place.
#[derive(Clone, Debug)]
pub struct DenseFactor {
    n: usize,
    lu: Vec<f64>,
}

impl DenseFactor {
    pub fn pivots(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.lu[i * self.n + i]).collect()
    }
}

impl Factorization for DenseFactor {
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.copy_from_slice(rhs);
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * out[j]).sum();
            out[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * out[j]).sum();
            out[i] = (out[i] - s) / self.lu[i * n + i];
        }
    }
}

/// Elimination without row exchanges; stops at the first pivot below the
/// floor. Returns the factors and the pivots produced so far.
fn eliminate(m: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.n;
    let mut a = m.data.clone();
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let piv = a[k * n + k];
        pivots.push(piv);
        if piv.abs() <= PIVOT_FLOOR {
            break;
        }
        for i in k + 1..n {
            let l = a[i * n + k] / piv;
            a[i * n + k] = l;
            if l != 0.0 {
                for j in k + 1..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
    }
    (a, pivots)
}

impl ZMatrix for DenseMatrix {
    type Factor = DenseFactor;

    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn first_positive_off_diagonal(&self) -> Option<(usize, usize, f64)> {
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.get(i, j);
                if i != j && v > 0.0 {
                    return Some((i, j, v));
                }
            }
        }
        None
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn minor_ratios(&self) -> Vec<f64> {
        eliminate(self).1
    }

    fn factorize(&self) -> Result<DenseFactor> {
        let (lu, pivots) = eliminate(self);
        if let Some(row) = pivots.iter().position(|p| p.abs() <= PIVOT_FLOOR) {
            return Err(Error::Singular { row });
        }
        Ok(DenseFactor { n: self.n, lu })
    }

    fn solve_general(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_pivoted(rhs)
    }

    fn with_added_diagonal(&self, d: &[f64]) -> Self {
        self.scaled_plus_diagonal(1.0, d)
    }
}
