//! Symmetric tensors stored as homogeneous polynomials in the monomial basis.
//!
//! A contravariant tensor of degree `k` over `R^n` is realized as the
//! polynomial `P(a) = S(a, .., a)` on covectors, a covariant one as a
//! polynomial on vectors. Components are the monomial coefficients.

use std::fmt;

use crate::error::{Error, Result};
use crate::taylor::Scalar;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl MultiIndex {
    pub fn new(exponents: Vec<usize>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[usize] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().sum()
    }

    /// `gamma! = prod gamma_i!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&e| factorial(e)).product()
    }

    /// Number of ordered index tuples with this content: `|gamma|! / gamma!`.
    pub fn multinomial(&self) -> f64 {
        factorial(self.degree()) / self.factorial()
    }

    /// Multi-index counting the occurrences of each slot in `tuple`.
    pub fn from_tuple(dim: usize, tuple: &[usize]) -> Self {
        let mut e = vec![0; dim];
        for &i in tuple {
            e[i] += 1;
        }
        MultiIndex(e)
    }

    /// Sorted index tuple with this content.
    pub fn to_tuple(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &e)| std::iter::repeat(i).take(e))
            .collect()
    }

    /// Position in the graded-lex enumeration of [`multi_indices`].
    pub fn rank(&self) -> usize {
        let n = self.0.len();
        let mut k = self.degree();
        let mut r = 0;
        for (slot, &e) in self.0.iter().enumerate() {
            let rest = n - slot - 1;
            if rest == 0 {
                break;
            }
            for a in e + 1..=k {
                r += count(rest, k - a);
            }
            k -= e;
        }
        r
    }
}

pub(crate) fn factorial(e: usize) -> f64 {
    (1..=e).map(|v| v as f64).product()
}

/// `C(dim + degree - 1, degree)`.
pub fn count(dim: usize, degree: usize) -> usize {
    if dim == 0 {
        return usize::from(degree == 0);
    }
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..degree {
        num *= (dim + i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

/// All multi-indices of `(dim, degree)`, graded-lex (descending) order.
pub fn multi_indices(dim: usize, degree: usize) -> Vec<MultiIndex> {
    fn rec(dim: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if cur.len() + 1 == dim {
            cur.push(left);
            out.push(MultiIndex(cur.clone()));
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(count(dim, degree));
    if dim > 0 {
        rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variance {
    Contravariant,
    Covariant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor<S = f64> {
    dim: usize,
    degree: usize,
    variance: Variance,
    comps: Vec<S>,
}

impl<S: Scalar> SymTensor<S> {
    pub fn zeros(dim: usize, degree: usize, variance: Variance) -> Self {
        SymTensor {
            dim,
            degree,
            variance,
            comps: vec![S::from_f64(0.0); count(dim, degree)],
        }
    }

    /// Components listed in [`multi_indices`] order.
    pub fn from_components(
        dim: usize,
        degree: usize,
        variance: Variance,
        comps: Vec<S>,
    ) -> Result<Self> {
        if comps.len() != count(dim, degree) {
            return Err(Error::Shape(format!(
                "{} components for dim {dim}, degree {degree}",
                comps.len()
            )));
        }
        Ok(SymTensor {
            dim,
            degree,
            variance,
            comps,
        })
    }

    /// Degree-one tensor with the given coordinates.
    pub fn vector(comps: Vec<S>, variance: Variance) -> Self {
        let dim = comps.len();
        let mut t = SymTensor::zeros(dim, 1, variance);
        for (i, c) in comps.into_iter().enumerate() {
            let mut e = vec![0; dim];
            e[i] = 1;
            t.set(&MultiIndex(e), c);
        }
        t
    }

    pub fn scalar(v: S, dim: usize, variance: Variance) -> Self {
        SymTensor {
            dim,
            degree: 0,
            variance,
            comps: vec![v],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn variance(&self) -> Variance {
        self.variance
    }
    pub fn components(&self) -> &[S] {
        &self.comps
    }
    pub fn into_components(self) -> Vec<S> {
        self.comps
    }

    pub fn get(&self, idx: &MultiIndex) -> &S {
        &self.comps[idx.rank()]
    }

    pub fn set(&mut self, idx: &MultiIndex, v: S) {
        let r = idx.rank();
        self.comps[r] = v;
    }

    pub fn indexed(&self) -> impl Iterator<Item = (MultiIndex, &S)> {
        multi_indices(self.dim, self.degree)
            .into_iter()
            .zip(self.comps.iter())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.degree != other.degree || self.variance != other.variance
        {
            return Err(Error::Shape("operands differ in shape".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.comps.iter_mut().zip(&other.comps) {
            *a = a.clone() + b.clone();
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(&S::from_f64(-1.0)))
    }

    pub fn scale(&self, s: &S) -> Self {
        let mut out = self.clone();
        for a in &mut out.comps {
            *a = a.clone() * s.clone();
        }
        out
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> SymTensor<T> {
        SymTensor {
            dim: self.dim,
            degree: self.degree,
            variance: self.variance,
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .fold(0.0, |m, c| m.max(c.standard().abs()))
    }

    /// `(S ∨ T)(X,..,X) = S(X,..,X) T(X,..,X)`.
    pub fn sym_product(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.variance != other.variance {
            return Err(Error::Shape("sym_product operands differ".into()));
        }
        let mut out: SymTensor<S> = SymTensor::zeros(self.dim, self.degree + other.degree, self.variance);
        let ia = multi_indices(self.dim, self.degree);
        let ib = multi_indices(other.dim, other.degree);
        for (a, sa) in ia.iter().zip(&self.comps) {
            for (b, sb) in ib.iter().zip(&other.comps) {
                let sum = MultiIndex(a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect());
                let r = sum.rank();
                out.comps[r] = out.comps[r].clone() + sa.clone() * sb.clone();
            }
        }
        Ok(out)
    }

    /// Inner product `i(eta)`: the derivative of the polynomial realization
    /// along `eta`.
    pub fn contract(&self, eta: &[S]) -> Result<Self> {
        if self.degree == 0 {
            return Err(Error::Shape("cannot contract a degree-0 tensor".into()));
        }
        if eta.len() != self.dim {
            return Err(Error::Shape("covector dimension mismatch".into()));
        }
        let mut out: SymTensor<S> = SymTensor::zeros(self.dim, self.degree - 1, self.variance);
        for (g, s) in multi_indices(self.dim, self.degree).iter().zip(&self.comps) {
            for j in 0..self.dim {
                if g.0[j] == 0 {
                    continue;
                }
                let mut e = g.0.clone();
                e[j] -= 1;
                let r = MultiIndex(e).rank();
                let term = s.clone() * eta[j].clone() * S::from_f64(g.0[j] as f64);
                out.comps[r] = out.comps[r].clone() + term;
            }
        }
        Ok(out)
    }

    /// Full contraction normalized by `<v^k, eta^k> = <v, eta>^k`.
    pub fn pair(&self, other: &Self) -> Result<S> {
        if self.dim != other.dim || self.degree != other.degree || self.variance == other.variance
        {
            return Err(Error::Shape("pair needs opposite variances of equal shape".into()));
        }
        let mut acc = S::from_f64(0.0);
        for ((g, a), b) in multi_indices(self.dim, self.degree)
            .iter()
            .zip(&self.comps)
            .zip(&other.comps)
        {
            acc = acc + a.clone() * b.clone() * S::from_f64(1.0 / g.multinomial());
        }
        Ok(acc)
    }

    /// Keeps components supported on the last `dim - p` slots.
    pub fn project_transverse(&self, p: usize) -> Result<Self> {
        if p >= self.dim {
            return Err(Error::Dimension(format!("p = {p} with dim {}", self.dim)));
        }
        let q = self.dim - p;
        let mut out: SymTensor<S> = SymTensor::zeros(q, self.degree, self.variance);
        for (g, s) in multi_indices(self.dim, self.degree).iter().zip(&self.comps) {
            if g.0[..p].iter().all(|&e| e == 0) {
                out.set(&MultiIndex(g.0[p..].to_vec()), s.clone());
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::project_transverse`]: pads `p` leading zero slots.
    pub fn embed_transverse(&self, p: usize) -> Self {
        let mut out: SymTensor<S> = SymTensor::zeros(self.dim + p, self.degree, self.variance);
        for (g, s) in multi_indices(self.dim, self.degree).iter().zip(&self.comps) {
            let mut e = vec![0; p];
            e.extend_from_slice(&g.0);
            out.set(&MultiIndex(e), s.clone());
        }
        out
    }

    /// Value of the polynomial realization at `a`.
    pub fn evaluate(&self, a: &[S]) -> S {
        let mut acc = S::from_f64(0.0);
        for (g, s) in multi_indices(self.dim, self.degree).iter().zip(&self.comps) {
            let mut term = s.clone();
            for (x, &e) in a.iter().zip(&g.0) {
                if e > 0 {
                    term = term * x.powi(e as i32);
                }
            }
            acc = acc + term;
        }
        acc
    }

    /// Polynomial `a ↦ P(L a)` for a row-major `dim × dim` matrix `L`.
    pub fn compose_linear(&self, l: &[S]) -> Self {
        let n = self.dim;
        let forms: Vec<SymTensor<S>> = (0..n)
            .map(|i| SymTensor::vector(l[i * n..(i + 1) * n].to_vec(), self.variance))
            .collect();
        let mut out: SymTensor<S> = SymTensor::zeros(n, self.degree, self.variance);
        for (g, s) in multi_indices(n, self.degree).iter().zip(&self.comps) {
            let mut term = SymTensor::scalar(s.clone(), n, self.variance);
            for (i, &e) in g.0.iter().enumerate() {
                for _ in 0..e {
                    term = term.sym_product(&forms[i]).expect("same shape");
                }
            }
            out = out.add(&term).expect("same shape");
        }
        out
    }

    /// Symmetric-power action of `b` (row-major): contravariant tensors
    /// transform as `S^{i..} ↦ b^i_j .. S^{j..}`, covariant ones as
    /// `T ↦ T(b^{-1} ·, ..)`; the caller passes `b_inv` for the latter.
    pub fn act(&self, b: &[S], b_inv: &[S]) -> Self {
        match self.variance {
            Variance::Contravariant => {
                let n = self.dim;
                let mut bt = b.to_vec();
                for i in 0..n {
                    for j in 0..n {
                        bt[i * n + j] = b[j * n + i].clone();
                    }
                }
                self.compose_linear(&bt)
            }
            Variance::Covariant => self.compose_linear(b_inv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(multi_indices(2, 0), vec![e(&[0, 0])]);
        assert_eq!(multi_indices(2, 1), vec![e(&[1, 0]), e(&[0, 1])]);
        assert_eq!(multi_indices(3, 2).len(), 6);
        for (dim, deg) in [(1, 3), (3, 4), (5, 3), (4, 0)] {
            let all = multi_indices(dim, deg);
            assert_eq!(all.len(), count(dim, deg));
            for (r, g) in all.iter().enumerate() {
                assert_eq!(g.rank(), r);
                assert_eq!(g.degree(), deg);
            }
        }
    }

    #[test]
    fn product_of_covectors() {
        let s = SymTensor::vector(vec![1.0, 0.0], Variance::Covariant);
        let t = SymTensor::vector(vec![0.0, 1.0], Variance::Covariant);
        let st = s.sym_product(&t).unwrap();
        assert_eq!(st.evaluate(&[3.0, 5.0]), 15.0);
    }

    #[test]
    fn contraction_examples() {
        let e1 = SymTensor::vector(vec![1.0, 0.0], Variance::Contravariant);
        let sq = e1.sym_product(&e1).unwrap();
        assert_eq!(sq.contract(&[1.0, 0.0]).unwrap(), e1.scale(&2.0));
        assert_eq!(sq.contract(&[0.0, 1.0]).unwrap().max_abs(), 0.0);
        assert!(SymTensor::<f64>::scalar(1.0, 2, Variance::Contravariant)
            .contract(&[1.0, 0.0])
            .is_err());
    }

    #[test]
    fn pairing_normalization() {
        let v = SymTensor::vector(vec![0.3, -1.2, 2.0], Variance::Contravariant);
        let eta = SymTensor::vector(vec![1.5, 0.4, -0.7], Variance::Covariant);
        let d: f64 = 0.3 * 1.5 - 1.2 * 0.4 - 2.0 * 0.7;
        let vv = v.sym_product(&v).unwrap().sym_product(&v).unwrap();
        let ee = eta.sym_product(&eta).unwrap().sym_product(&eta).unwrap();
        assert!((vv.pair(&ee).unwrap() - d.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn transverse_projection_examples() {
        let s = SymTensor::vector(vec![1.0, 2.0, 3.0], Variance::Contravariant);
        assert_eq!(s.project_transverse(1).unwrap().components(), &[2.0, 3.0]);
        assert_eq!(s.project_transverse(0).unwrap(), s);
        let mut t = SymTensor::zeros(3, 2, Variance::Contravariant);
        t.set(&e(&[1, 1, 0]), 4.0);
        t.set(&e(&[0, 2, 0]), 7.0);
        let pt = t.project_transverse(1).unwrap();
        assert_eq!(*pt.get(&e(&[2, 0])), 7.0);
        assert_eq!(pt.max_abs(), 7.0);
    }

    #[test]
    fn action_on_vectors() {
        let b = [2.0, 1.0, 0.0, 3.0];
        let v = SymTensor::vector(vec![1.0, 1.0], Variance::Contravariant);
        assert_eq!(v.act(&b, &[]).components(), &[3.0, 3.0]);
    }
}
