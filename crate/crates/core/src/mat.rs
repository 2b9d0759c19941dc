//! Small dense row-major matrices over a [`Scalar`] ring.

use crate::error::{Error, Result};
use crate::taylor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::from_f64(0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::from_f64(1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let t = a.clone() * other.get(k, j).clone();
                    let idx = i * out.cols + j;
                    out.data[idx] = out.data[idx].clone() + t;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&S::from_f64(-1.0)))
    }

    pub fn scale(&self, s: &S) -> Self {
        self.map(|a| a.clone() * s.clone())
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(S::from_f64(0.0), |acc, j| {
                    acc + self.get(i, j).clone() * v[j].clone()
                })
            })
            .collect()
    }

    /// Row vector times matrix.
    pub fn vec_mul(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.rows, v.len());
        (0..self.cols)
            .map(|j| {
                (0..self.rows).fold(S::from_f64(0.0), |acc, i| {
                    acc + v[i].clone() * self.get(i, j).clone()
                })
            })
            .collect()
    }

    /// Gauss-Jordan inverse pivoting on standard parts.
    pub fn inverse(&self) -> Result<Self> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for k in 0..n {
            let (piv, best) = (k..n)
                .map(|r| (r, a.get(r, k).standard().abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= 1e-14 {
                return Err(Error::Singular { pivot: best });
            }
            if piv != k {
                for c in 0..n {
                    a.data.swap(k * n + c, piv * n + c);
                    inv.data.swap(k * n + c, piv * n + c);
                }
            }
            let d = S::from_f64(1.0) / a.get(k, k).clone();
            for c in 0..n {
                a.data[k * n + c] = a.data[k * n + c].clone() * d.clone();
                inv.data[k * n + c] = inv.data[k * n + c].clone() * d.clone();
            }
            for r in 0..n {
                if r == k {
                    continue;
                }
                let f = a.get(r, k).clone();
                if f.is_zero() {
                    continue;
                }
                for c in 0..n {
                    a.data[r * n + c] = a.data[r * n + c].clone() - f.clone() * a.data[k * n + c].clone();
                    inv.data[r * n + c] =
                        inv.data[r * n + c].clone() - f.clone() * inv.data[k * n + c].clone();
                }
            }
        }
        Ok(inv)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.standard().abs()))
    }
}

