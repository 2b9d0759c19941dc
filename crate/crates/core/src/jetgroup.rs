//! Second-order jet groups, the isotropy group `H` on the affine slice
//! `a = 1`, and the graded Lie algebra `R^n + gl(n,q) + R^{q*}`.
//!
//! Lie algebra elements are realized as `(n+1) x (n+1)` matrices
//! `[[m0, v], [xi, c]]` modulo multiples of the identity; the representative
//! with `c = 0` is stored, so `[[m, v], [xi, c]]` is read as
//! `[[m - c I, v], [xi, 0]]`.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::taylor::Scalar;

/// Entries `(i, j)` allowed in a block upper-triangular `gl(n,q)` matrix.
pub fn block_pattern(p: usize, q: usize) -> Vec<(usize, usize)> {
    let n = p + q;
    let mut out = Vec::with_capacity(n * n - p * q);
    for i in 0..n {
        for j in 0..n {
            if !(i >= p && j < p) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Dimension of `H` (and of the trivialized fiber).
pub fn h_dim(p: usize, q: usize) -> usize {
    let n = p + q;
    n * n - p * q + q
}

/// Largest entry violating the block pattern.
pub fn block_residual<S: Scalar>(m: &Mat<S>, p: usize) -> f64 {
    let n = m.rows();
    let mut r: f64 = 0.0;
    for i in p..n {
        for j in 0..p {
            r = r.max(m.get(i, j).standard().abs());
        }
    }
    r
}

/// Second-order frame package `(X, B, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2Frame {
    pub base: Vec<f64>,
    pub lin: Mat<f64>,
    /// `T^i_{kl}` at `i * n * n + k * n + l`.
    pub quad: Vec<f64>,
}

/// Element `(A, S)` of the second-order jet group.
#[derive(Clone, Debug, PartialEq)]
pub struct G2Element {
    pub lin: Mat<f64>,
    pub quad: Vec<f64>,
}

/// `T(A, A)^i_{kl} = T^i_{ab} A^a_k A^b_l`.
fn quad_pull(t: &[f64], a: &Mat<f64>) -> Vec<f64> {
    let n = a.rows();
    let mut half = vec![0.0; n * n * n];
    // half^i_{a l} = T^i_{a b} A^b_l
    for i in 0..n {
        for x in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for b in 0..n {
                    s += t[i * n * n + x * n + b] * a.get(b, l);
                }
                half[i * n * n + x * n + l] = s;
            }
        }
    }
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for x in 0..n {
                    s += half[i * n * n + x * n + l] * a.get(x, k);
                }
                out[i * n * n + k * n + l] = s;
            }
        }
    }
    out
}

/// `(B S)^i_{kl} = B^i_j S^j_{kl}`.
fn quad_push(b: &Mat<f64>, s: &[f64]) -> Vec<f64> {
    let n = b.rows();
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            let bij = *b.get(i, j);
            if bij == 0.0 {
                continue;
            }
            for kl in 0..n * n {
                out[i * n * n + kl] += bij * s[j * n * n + kl];
            }
        }
    }
    out
}

impl G2Element {
    pub fn identity(n: usize) -> Self {
        G2Element {
            lin: Mat::identity(n),
            quad: vec![0.0; n * n * n],
        }
    }

    /// Jet of the composition `phi_self ∘ phi_other`.
    pub fn compose(&self, other: &G2Element) -> G2Element {
        let lin = self.lin.mul(&other.lin);
        let a = quad_push(&self.lin, &other.quad);
        let b = quad_pull(&self.quad, &other.lin);
        G2Element {
            lin,
            quad: a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        }
    }

    /// True if the linear part is block upper-triangular and the transverse
    /// rows of the quadratic part only involve transverse columns.
    pub fn preserves_foliation(&self, p: usize, tol: f64) -> bool {
        let n = self.lin.rows();
        if block_residual(&self.lin, p) > tol {
            return false;
        }
        for i in p..n {
            for k in 0..n {
                for l in 0..n {
                    if (k < p || l < p) && self.quad[i * n * n + k * n + l].abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Right action `(X, B, T)·(0, A, S) = (X, BA, BS + T(A, A))`.
pub fn act(frame: &Jet2Frame, g: &G2Element) -> Jet2Frame {
    let lin = frame.lin.mul(&g.lin);
    let a = quad_push(&frame.lin, &g.quad);
    let b = quad_pull(&frame.quad, &g.lin);
    Jet2Frame {
        base: frame.base.clone(),
        lin,
        quad: a.iter().zip(&b).map(|(x, y)| x + y).collect(),
    }
}

/// `[[A, 0], [alpha, 1]]` with `A` in `GL(n,q)` and `alpha` transverse.
#[derive(Clone, Debug, PartialEq)]
pub struct HElement<S = f64> {
    p: usize,
    q: usize,
    a: Mat<S>,
    /// Full `n`-covector; tangential entries are zero.
    alpha: Vec<S>,
}

impl<S: Scalar> HElement<S> {
    pub fn identity(p: usize, q: usize) -> Self {
        HElement {
            p,
            q,
            a: Mat::identity(p + q),
            alpha: vec![S::from_f64(0.0); p + q],
        }
    }

    /// `alpha_t` holds the `q` transverse entries.
    pub fn new(p: usize, q: usize, a: Mat<S>, alpha_t: Vec<S>) -> Result<Self> {
        let n = p + q;
        if a.rows() != n || a.cols() != n || alpha_t.len() != q {
            return Err(Error::Dimension("HElement blocks".into()));
        }
        if block_residual(&a, p) > 0.0 {
            return Err(Error::Dimension(
                "linear part is not block upper-triangular".into(),
            ));
        }
        let mut alpha = vec![S::from_f64(0.0); p];
        alpha.extend(alpha_t);
        Ok(HElement { p, q, a, alpha })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }
    pub fn a(&self) -> &Mat<S> {
        &self.a
    }
    pub fn alpha(&self) -> &[S] {
        &self.alpha
    }

    /// Fiber coordinates: pattern entries of `A`, then the transverse `alpha`.
    pub fn coords(&self) -> Vec<S> {
        let mut out: Vec<S> = block_pattern(self.p, self.q)
            .into_iter()
            .map(|(i, j)| self.a.get(i, j).clone())
            .collect();
        out.extend_from_slice(&self.alpha[self.p..]);
        out
    }

    pub fn from_coords(p: usize, q: usize, c: &[S]) -> Self {
        let n = p + q;
        let pat = block_pattern(p, q);
        assert_eq!(c.len(), pat.len() + q);
        let mut a = Mat::zeros(n, n);
        for (k, (i, j)) in pat.iter().enumerate() {
            a.set(*i, *j, c[k].clone());
        }
        let mut alpha = vec![S::from_f64(0.0); p];
        alpha.extend_from_slice(&c[pat.len()..]);
        HElement { p, q, a, alpha }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let a = self.a.mul(&other.a);
        let mut alpha = other.a.vec_mul(&self.alpha);
        for (x, y) in alpha.iter_mut().zip(&other.alpha) {
            *x = x.clone() + y.clone();
        }
        HElement {
            p: self.p,
            q: self.q,
            a,
            alpha,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let ainv = self.a.inverse()?;
        let alpha = ainv
            .vec_mul(&self.alpha)
            .into_iter()
            .map(|x| -x)
            .collect();
        Ok(HElement {
            p: self.p,
            q: self.q,
            a: ainv,
            alpha,
        })
    }

    pub fn matrix(&self) -> Mat<S> {
        let n = self.p + self.q;
        Mat::from_fn(n + 1, n + 1, |i, j| {
            if i < n && j < n {
                self.a.get(i, j).clone()
            } else if i == n && j < n {
                self.alpha[j].clone()
            } else if i == n && j == n {
                S::from_f64(1.0)
            } else {
                S::from_f64(0.0)
            }
        })
    }

    /// Right multiplication by an algebra element: the tangent `h·k` of the
    /// curve `h exp(t k)` in fiber coordinates.
    pub fn times_algebra(&self, k: &LieG<S>) -> Vec<S> {
        let da = self.a.mul(&k.m0);
        let mut dalpha = k.m0.vec_mul(&self.alpha);
        for (x, y) in dalpha.iter_mut().zip(&k.xi) {
            *x = x.clone() + y.clone();
        }
        HElement {
            p: self.p,
            q: self.q,
            a: da,
            alpha: dalpha,
        }
        .coords()
    }
}

/// `[[A, 0], [alpha, 1]] ↦ (A^i_j, -A^i_j alpha_k - A^i_k alpha_j)`.
pub fn include_h(h: &HElement<f64>) -> G2Element {
    let n = h.p + h.q;
    let mut quad = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                quad[i * n * n + j * n + k] =
                    -h.a.get(i, j) * h.alpha[k] - h.a.get(i, k) * h.alpha[j];
            }
        }
    }
    G2Element {
        lin: h.a.clone(),
        quad,
    }
}

/// Keeps the transverse block `D` and `alpha''`.
pub fn project_group<S: Scalar>(h: &HElement<S>) -> HElement<S> {
    let (p, q) = (h.p, h.q);
    HElement {
        p: 0,
        q,
        a: Mat::from_fn(q, q, |i, j| h.a.get(p + i, p + j).clone()),
        alpha: h.alpha[p..].to_vec(),
    }
}

/// Element `v + m0 + xi` of the graded algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct LieG<S = f64> {
    p: usize,
    q: usize,
    pub v: Vec<S>,
    pub m0: Mat<S>,
    /// Full `n`-covector; adapted elements vanish on tangential slots.
    pub xi: Vec<S>,
}

impl<S: Scalar> LieG<S> {
    pub fn zero(p: usize, q: usize) -> Self {
        let n = p + q;
        LieG {
            p,
            q,
            v: vec![S::from_f64(0.0); n],
            m0: Mat::zeros(n, n),
            xi: vec![S::from_f64(0.0); n],
        }
    }

    pub fn new(p: usize, q: usize, v: Vec<S>, m0: Mat<S>, xi: Vec<S>) -> Self {
        let n = p + q;
        assert!(v.len() == n && xi.len() == n && m0.rows() == n && m0.cols() == n);
        LieG { p, q, v, m0, xi }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    /// Basis vector `e_i` of grade -1.
    pub fn basis_vector(p: usize, q: usize, i: usize) -> Self {
        let mut g = Self::zero(p, q);
        g.v[i] = S::from_f64(1.0);
        g
    }

    /// Grade-one element with transverse entries `h`.
    pub fn covector(p: usize, q: usize, h: &[S]) -> Self {
        let mut g = Self::zero(p, q);
        for (i, x) in h.iter().enumerate() {
            g.xi[p + i] = x.clone();
        }
        g
    }

    pub fn grade0(p: usize, q: usize, m0: Mat<S>) -> Self {
        let mut g = Self::zero(p, q);
        g.m0 = m0;
        g
    }

    pub fn matrix(&self) -> Mat<S> {
        let n = self.p + self.q;
        Mat::from_fn(n + 1, n + 1, |i, j| {
            if i < n && j < n {
                self.m0.get(i, j).clone()
            } else if i < n {
                self.v[i].clone()
            } else if j < n {
                self.xi[j].clone()
            } else {
                S::from_f64(0.0)
            }
        })
    }

    /// Reads a matrix modulo the identity.
    pub fn from_matrix(p: usize, q: usize, m: &Mat<S>) -> Self {
        let n = p + q;
        let c = m.get(n, n).clone();
        let m0 = Mat::from_fn(n, n, |i, j| {
            if i == j {
                m.get(i, j).clone() - c.clone()
            } else {
                m.get(i, j).clone()
            }
        });
        LieG {
            p,
            q,
            v: (0..n).map(|i| m.get(i, n).clone()).collect(),
            m0,
            xi: (0..n).map(|j| m.get(n, j).clone()).collect(),
        }
    }

    /// Largest entry outside `R^n + gl(n,q) + R^{q*}`.
    pub fn adapted_residual(&self) -> f64 {
        let xr = self.xi[..self.p]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.standard().abs()));
        xr.max(block_residual(&self.m0, self.p))
    }

    pub fn is_in_h(&self) -> bool {
        self.v.iter().all(|x| x.standard() == 0.0)
    }

    /// Coordinates: `v`, pattern entries of `m0`, transverse `xi`.
    pub fn coords(&self) -> Vec<S> {
        let mut out = self.v.clone();
        out.extend(
            block_pattern(self.p, self.q)
                .into_iter()
                .map(|(i, j)| self.m0.get(i, j).clone()),
        );
        out.extend_from_slice(&self.xi[self.p..]);
        out
    }

    pub fn from_coords(p: usize, q: usize, c: &[S]) -> Self {
        let n = p + q;
        let pat = block_pattern(p, q);
        assert_eq!(c.len(), n + pat.len() + q);
        let mut m0 = Mat::zeros(n, n);
        for (k, (i, j)) in pat.iter().enumerate() {
            m0.set(*i, *j, c[n + k].clone());
        }
        let mut xi = vec![S::from_f64(0.0); p];
        xi.extend_from_slice(&c[n + pat.len()..]);
        LieG {
            p,
            q,
            v: c[..n].to_vec(),
            m0,
            xi,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        LieG {
            p: self.p,
            q: self.q,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a.clone() + b.clone()).collect(),
            m0: self.m0.add(&other.m0),
            xi: self.xi.iter().zip(&other.xi).map(|(a, b)| a.clone() + b.clone()).collect(),
        }
    }

    pub fn scale(&self, s: &S) -> Self {
        LieG {
            p: self.p,
            q: self.q,
            v: self.v.iter().map(|a| a.clone() * s.clone()).collect(),
            m0: self.m0.scale(s),
            xi: self.xi.iter().map(|a| a.clone() * s.clone()).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&S::from_f64(-1.0)))
    }

    pub fn max_abs(&self) -> f64 {
        let f = |v: &[S]| v.iter().fold(0.0f64, |m, x| m.max(x.standard().abs()));
        f(&self.v).max(self.m0.max_abs()).max(f(&self.xi))
    }

    /// Matrix commutator without the subalgebra check.
    pub fn commutator(&self, other: &Self) -> Self {
        let (a, b) = (self.matrix(), other.matrix());
        Self::from_matrix(self.p, self.q, &a.mul(&b).sub(&b.mul(&a)))
    }

    /// Transverse block projection: `v''`, the `D` block of `m0`, `xi''`.
    pub fn project(&self) -> LieG<S> {
        let (p, q) = (self.p, self.q);
        LieG {
            p: 0,
            q,
            v: self.v[p..].to_vec(),
            m0: Mat::from_fn(q, q, |i, j| self.m0.get(p + i, p + j).clone()),
            xi: self.xi[p..].to_vec(),
        }
    }
}

/// Commutator, rejected if it leaves the adapted subalgebra.
pub fn bracket<S: Scalar>(a: &LieG<S>, b: &LieG<S>) -> Result<LieG<S>> {
    let c = a.commutator(b);
    if c.adapted_residual() > 1e-12 * (1.0 + a.max_abs() * b.max_abs()) {
        return Err(Error::LeavesSubalgebra);
    }
    Ok(c)
}

/// `Ad(h) a = h a h^{-1}`.
pub fn adjoint<S: Scalar>(h: &HElement<S>, a: &LieG<S>) -> Result<LieG<S>> {
    let hm = h.matrix();
    let hinv = h.inverse()?.matrix();
    Ok(LieG::from_matrix(a.p, a.q, &hm.mul(&a.matrix()).mul(&hinv)))
}

/// `Ad(h^{-1}) a = h^{-1} a h`, given `h^{-1}` already.
pub fn adjoint_inv<S: Scalar>(h: &HElement<S>, h_inv: &HElement<S>, a: &LieG<S>) -> LieG<S> {
    LieG::from_matrix(a.p, a.q, &h_inv.matrix().mul(&a.matrix()).mul(&h.matrix()))
}

/// `exp(t [[0, 0], [xi, 0]])` for transverse `xi` (given as `q` entries).
pub fn exp_h(p: usize, q: usize, xi: &[f64], t: f64) -> HElement<f64> {
    let mut h = HElement::identity(p, q);
    for (i, x) in xi.iter().enumerate() {
        h.alpha[p + i] = t * x;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn include_example() {
        let (p, q) = (1, 2);
        let n = p + q;
        let h = HElement::new(p, q, Mat::identity(n), vec![1.0, 0.0]).unwrap();
        let g = include_h(&h);
        let idx = |i: usize, k: usize, l: usize| i * n * n + k * n + l;
        assert_eq!(g.quad[idx(p, p, p)], -2.0);
        assert_eq!(g.quad[idx(0, 0, p)], -1.0);
        assert_eq!(g.quad[idx(0, 0, 0)], 0.0);
        assert!(g.preserves_foliation(p, 0.0));
        assert_eq!(include_h(&HElement::identity(p, q)), G2Element::identity(n));
    }

    #[test]
    fn projection_example() {
        let (p, q) = (1, 2);
        let mut a = Mat::identity(3);
        a.set(1, 1, 2.0);
        a.set(2, 2, 2.0);
        a.set(0, 2, 5.0);
        let h = HElement::new(p, q, a, vec![0.0, 0.0]).unwrap();
        let ph = project_group(&h);
        assert_eq!(ph.a(), &Mat::identity(2).scale(&2.0));
        assert_eq!(project_group(&HElement::<f64>::identity(p, q)), HElement::identity(0, q));
    }

    #[test]
    fn exp_is_one_parameter_group() {
        let xi = [0.3, -0.4];
        let a = exp_h(1, 2, &xi, 0.5).mul(&exp_h(1, 2, &xi, 0.25));
        assert_eq!(a, exp_h(1, 2, &xi, 0.75));
        assert_eq!(exp_h(1, 2, &xi, 0.0), HElement::identity(1, 2));
        let g = LieG::covector(1, 2, &xi).matrix();
        assert_eq!(g.mul(&g).max_abs(), 0.0);
    }

    #[test]
    fn grade_minus_one_is_abelian() {
        let a = LieG::<f64>::basis_vector(1, 2, 0);
        let b = LieG::<f64>::basis_vector(1, 2, 2);
        assert_eq!(bracket(&a, &b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn covector_vector_bracket() {
        // [h, X] = -(X ⊗ h + <h, X> Id) in grade 0
        let (p, q) = (0, 2);
        let h = LieG::covector(p, q, &[1.0, 2.0]);
        let x = LieG::new(p, q, vec![3.0, -1.0], Mat::zeros(2, 2), vec![0.0, 0.0]);
        let c = bracket(&h, &x).unwrap();
        let hx = 1.0 * 3.0 + 2.0 * -1.0;
        for i in 0..2 {
            for j in 0..2 {
                let expect = -(x.v[i] * h.xi[j] + if i == j { hx } else { 0.0 });
                assert!((c.m0.get(i, j) - expect).abs() < 1e-14);
            }
        }
        assert_eq!(c.v, vec![0.0, 0.0]);
    }

    #[test]
    fn coordinates_round_trip() {
        let (p, q) = (2, 3);
        let c: Vec<f64> = (0..h_dim(p, q)).map(|i| i as f64 * 0.1 + 1.0).collect();
        assert_eq!(HElement::from_coords(p, q, &c).coords(), c);
        let n = p + q;
        let g: Vec<f64> = (0..n + h_dim(p, q)).map(|i| i as f64 - 3.0).collect();
        assert_eq!(LieG::from_coords(p, q, &g).coords(), g);
    }
}
