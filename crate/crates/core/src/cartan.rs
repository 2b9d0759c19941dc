//! Normal Cartan connections on the trivialized bundle `W × H`.
//!
//! A bundle point `(m, h)` stands for `σ(m)·h` where `σ` is the section
//! induced by the Christoffel symbols. Tangent vectors are written in the
//! coordinates `(dm, dh)` with `dh` in [`HElement::coords`] order; algebra
//! elements in [`LieG::coords`] order. Both have dimension `n + dim H`.

use rand::Rng;

use crate::chart::{curvature, validate_adapted, AdaptedConnection, FoliatedConnection, VALIDATION_TOL};
use crate::error::{Error, Result};
use crate::jetgroup::{adjoint_inv, block_pattern, h_dim, HElement, Jet2Frame, LieG};
use crate::mat::Mat;
use crate::taylor::Jet;

#[derive(Clone, Debug, PartialEq)]
pub struct BundlePoint<S = f64> {
    pub m: Vec<S>,
    pub h: HElement<S>,
}

impl BundlePoint<f64> {
    /// Random fiber point with `A` near the identity.
    pub fn random(m: Vec<f64>, p: usize, q: usize, rng: &mut impl Rng) -> Self {
        let n = p + q;
        let mut a = Mat::identity(n);
        for (i, j) in block_pattern(p, q) {
            let v = rng.gen_range(-0.3..0.3);
            a.set(i, j, if i == j { 1.0 + v } else { v });
        }
        let alpha: Vec<f64> = (0..q).map(|_| rng.gen_range(-0.5..0.5)).collect();
        BundlePoint {
            m,
            h: HElement::new(p, q, a, alpha).expect("pattern respected"),
        }
    }

    pub fn section(m: Vec<f64>, p: usize, q: usize) -> Self {
        BundlePoint {
            m,
            h: HElement::identity(p, q),
        }
    }

    pub fn jets(&self) -> Vec<Jet> {
        self.coords().into_iter().map(Jet::constant).collect()
    }
}

impl<S: crate::taylor::Scalar> BundlePoint<S> {
    pub fn coords(&self) -> Vec<S> {
        let mut c = self.m.clone();
        c.extend(self.h.coords());
        c
    }

    pub fn from_coords(p: usize, q: usize, c: &[S]) -> Self {
        let n = p + q;
        BundlePoint {
            m: c[..n].to_vec(),
            h: HElement::from_coords(p, q, &c[n..]),
        }
    }

    /// Right action `(m, h)·g = (m, h g)`.
    pub fn act(&self, g: &HElement<S>) -> Self {
        BundlePoint {
            m: self.m.clone(),
            h: self.h.mul(g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnKind {
    Adapted,
    Foliated,
}

/// Deliberate defects used to check that the test suites can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutation {
    #[default]
    None,
    /// Negates the transverse-column deformation entries.
    FlipDeformationSign,
}

#[derive(Clone, Debug)]
pub struct CartanConn {
    kind: ConnKind,
    conn: AdaptedConnection,
    perturbation: Option<Vec<f64>>,
    mutation: Mutation,
}

/// `(X(m), δ, -Γ(m))`.
pub fn canonical_section(conn: &AdaptedConnection, m: &[f64]) -> Result<Jet2Frame> {
    let n = conn.chart().n();
    Ok(Jet2Frame {
        base: m.to_vec(),
        lin: Mat::identity(n),
        quad: conn.christoffel_at(m)?.into_iter().map(|v| -v).collect(),
    })
}

fn deformation_with(conn: &AdaptedConnection, m: &[Jet], mutation: Mutation) -> Result<Vec<Jet>> {
    let chart = conn.chart();
    let (p, q, n) = (chart.p(), chart.q(), chart.n());
    if q < 2 {
        return Err(Error::CodimensionOne { q });
    }
    let r = curvature(conn, m)?;
    let at = |i: usize, j: usize, k: usize, l: usize| &r[((i * n + j) * n + k) * n + l];
    let qf = q as f64;
    let sign = if mutation == Mutation::FlipDeformationSign { -1.0 } else { 1.0 };
    let mut out = vec![Jet::zero(); n * n];
    for j in p..n {
        for k in 0..n {
            let mut t = Jet::zero();
            let mut u = Jet::zero();
            for i in p..n {
                t += at(i, j, i, k);
                u += at(i, i, j, k);
            }
            // The deformation is minus the correction A with
            // A = U/((q+1)(q-1)) - T/(q-1) on transverse columns, -T/q otherwise.
            out[j * n + k] = if k >= p {
                (u * (1.0 / ((qf + 1.0) * (qf - 1.0))) - t * (1.0 / (qf - 1.0))) * (-sign)
            } else {
                t * (1.0 / qf)
            };
        }
    }
    Ok(out)
}

/// Deformation tensor `Γ_{jk}` at `m`, row-major; tangential rows vanish.
pub fn deformation_tensor(conn: &AdaptedConnection, m: &[Jet]) -> Result<Vec<Jet>> {
    deformation_with(conn, m, Mutation::None)
}

/// Curvature of the Cartan connection along the frame `ω^{-1}(e_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CartanCurvature {
    pub n: usize,
    /// Grade -1 part `Ω^i(e_k, e_l)` at `i*n*n + k*n + l`.
    pub torsion: Vec<f64>,
    /// `K^i_{jkl}` at `((i*n + j)*n + k)*n + l`.
    pub k: Vec<f64>,
    /// Grade 1 part `Ω_j(e_k, e_l)` at `j*n*n + k*n + l`.
    pub grade_one: Vec<f64>,
}

impl CartanCurvature {
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.k[((i * n + j) * n + k) * n + l]
    }

    /// `Σ_{i transverse} K^i_{jil}` at `j*n + l`.
    pub fn trace(&self, p: usize) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                out[j * n + l] = (p..n).map(|i| self.get(i, j, i, l)).sum();
            }
        }
        out
    }

    /// Worst `|K^i_{jkl} + K^i_{klj} + K^i_{ljk}|`.
    pub fn bianchi_residual(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let s = self.get(i, j, k, l) + self.get(i, k, l, j) + self.get(i, l, j, k);
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }

    pub fn structure_residual(&self) -> f64 {
        self.torsion.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Worst normality trace over transverse `j` and all `l`.
    pub fn normality_residual(&self, p: usize) -> f64 {
        let n = self.n;
        let t = self.trace(p);
        let mut worst: f64 = 0.0;
        for j in p..n {
            for l in 0..n {
                worst = worst.max(t[j * n + l].abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalReport {
    pub normality: f64,
    pub structure: f64,
    pub bianchi: f64,
}

impl NormalReport {
    pub fn worst(&self) -> f64 {
        self.normality.max(self.structure).max(self.bianchi)
    }
}

impl CartanConn {
    /// Adapted normal Cartan connection of the class of `conn`.
    pub fn adapted(conn: &AdaptedConnection) -> Result<Self> {
        let report = validate_adapted(conn)?;
        let bad = report.violations(VALIDATION_TOL);
        if !bad.is_empty() {
            return Err(Error::NotAdapted(bad.join(", ")));
        }
        Ok(CartanConn {
            kind: ConnKind::Adapted,
            conn: conn.clone(),
            perturbation: None,
            mutation: Mutation::None,
        })
    }

    /// Adds `A_{jk} θ^k ε^j` to the grade 1 part; `a` is `n × n` row-major
    /// with tangential rows zero.
    pub fn with_perturbation(mut self, a: Vec<f64>) -> Result<Self> {
        let (p, n) = (self.p(), self.n());
        if a.len() != n * n {
            return Err(Error::Shape("perturbation must be n × n".into()));
        }
        if a[..p * n].iter().any(|v| *v != 0.0) {
            return Err(Error::Shape("perturbation rows must be transverse".into()));
        }
        self.perturbation = Some(a);
        Ok(self)
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn kind(&self) -> ConnKind {
        self.kind
    }
    pub fn connection(&self) -> &AdaptedConnection {
        &self.conn
    }
    pub fn p(&self) -> usize {
        self.conn.chart().p()
    }
    pub fn q(&self) -> usize {
        self.conn.chart().q()
    }
    pub fn n(&self) -> usize {
        self.conn.chart().n()
    }
    pub fn fiber_dim(&self) -> usize {
        h_dim(self.p(), self.q())
    }
    /// Dimension of the bundle and of the algebra.
    pub fn dim(&self) -> usize {
        self.n() + self.fiber_dim()
    }

    /// Grade 1 coefficients of the pulled-back form, `a[j*n + k]`.
    pub fn grade_one(&self, m: &[Jet]) -> Result<Vec<Jet>> {
        let mut a: Vec<Jet> = deformation_with(&self.conn, m, self.mutation)?
            .into_iter()
            .map(|v| -v)
            .collect();
        if let Some(pert) = &self.perturbation {
            for (x, y) in a.iter_mut().zip(pert) {
                *x += &Jet::constant(*y);
            }
        }
        Ok(a)
    }

    /// `σ*ω(e_k)` for every chart direction `k`.
    pub fn section_form(&self, m: &[Jet]) -> Result<Vec<LieG<Jet>>> {
        let (p, q, n) = (self.p(), self.q(), self.n());
        let gamma = self.conn.christoffel(m)?;
        let a = self.grade_one(m)?;
        Ok((0..n)
            .map(|k| {
                let mut g = LieG::basis_vector(p, q, k);
                g.m0 = Mat::from_fn(n, n, |i, j| {
                    if i >= p && j < p {
                        Jet::zero()
                    } else {
                        gamma[(i * n + j) * n + k].clone()
                    }
                });
                for j in p..n {
                    g.xi[j] = a[j * n + k].clone();
                }
                g
            })
            .collect())
    }

    fn split(&self, u: &[Jet]) -> Result<BundlePoint<Jet>> {
        if u.len() != self.dim() {
            return Err(Error::PointDimension {
                expected: self.dim(),
                found: u.len(),
            });
        }
        Ok(BundlePoint::from_coords(self.p(), self.q(), u))
    }

    /// Matrix of `ω_u` (row-major, `dim × dim`): column `c` is `ω_u` of the
    /// `c`-th coordinate direction.
    pub fn omega_matrix(&self, u: &[Jet]) -> Result<Vec<Jet>> {
        let (p, q, n) = (self.p(), self.q(), self.n());
        let dim = self.dim();
        let pt = self.split(u)?;
        let h = &pt.h;
        let hinv = h.inverse()?;
        let mut cols: Vec<Vec<Jet>> = self
            .section_form(&pt.m)?
            .iter()
            .map(|y| adjoint_inv(h, &hinv, y).coords())
            .collect();
        // h^{-1} dh: m0 = A^{-1} dA, xi = dalpha - alpha A^{-1} dA
        let ainv = hinv.a();
        let alpha_ainv = ainv.vec_mul(h.alpha());
        let pat = block_pattern(p, q);
        for &(i, j) in &pat {
            let mut g = LieG::zero(p, q);
            for r in 0..n {
                g.m0.set(r, j, ainv.get(r, i).clone());
            }
            g.xi[j] = -alpha_ainv[i].clone();
            if j < p {
                g.xi[j] = Jet::zero();
            }
            cols.push(g.coords());
        }
        for t in 0..q {
            let mut g = LieG::zero(p, q);
            g.xi[p + t] = Jet::constant(1.0);
            cols.push(g.coords());
        }
        let mut out = vec![Jet::zero(); dim * dim];
        for (c, col) in cols.into_iter().enumerate() {
            for (r, v) in col.into_iter().enumerate() {
                out[r * dim + c] = v;
            }
        }
        Ok(out)
    }

    pub fn omega_at(&self, u: &[Jet], xi: &[Jet]) -> Result<LieG<Jet>> {
        let dim = self.dim();
        if xi.len() != dim {
            return Err(Error::PointDimension {
                expected: dim,
                found: xi.len(),
            });
        }
        let m = self.omega_matrix(u)?;
        let coords: Vec<Jet> = (0..dim)
            .map(|r| (0..dim).fold(Jet::zero(), |acc, c| acc + &m[r * dim + c] * &xi[c]))
            .collect();
        Ok(LieG::from_coords(self.p(), self.q(), &coords))
    }

    /// Solves `ω_u(v) = a` for each `a`. The chart part is `A a_{-1}`; the
    /// fiber part is the left translate of what remains.
    pub fn omega_inverse_many(&self, u: &[Jet], a: &[LieG<Jet>]) -> Result<Vec<Vec<Jet>>> {
        let pt = self.split(u)?;
        let h = &pt.h;
        let hinv = h.inverse()?;
        let forms = self.section_form(&pt.m)?;
        let (p, q) = (self.p(), self.q());
        Ok(a.iter()
            .map(|x| {
                let xm = h.a().mul_vec(&x.v);
                let mut y = LieG::zero(p, q);
                for (k, f) in forms.iter().enumerate() {
                    y = y.add(&f.scale(&xm[k]));
                }
                let rest = x.sub(&adjoint_inv(h, &hinv, &y));
                let mut out = xm;
                out.extend(h.times_algebra(&rest));
                out
            })
            .collect())
    }

    pub fn omega_inverse(&self, u: &[Jet], a: &LieG<Jet>) -> Result<Vec<Jet>> {
        Ok(self.omega_inverse_many(u, std::slice::from_ref(a))?.swap_remove(0))
    }

    /// Fundamental field of `k` (in the `H` algebra) at `u`.
    pub fn fundamental(&self, u: &[Jet], k: &LieG<Jet>) -> Result<Vec<Jet>> {
        let pt = self.split(u)?;
        let mut out = vec![Jet::zero(); self.n()];
        out.extend(pt.h.times_algebra(k));
        Ok(out)
    }

    /// Horizontal frame `ω^{-1}(e_k)`, `k = 0..n`.
    pub fn frame(&self, u: &[Jet]) -> Result<Vec<Vec<Jet>>> {
        let (p, q) = (self.p(), self.q());
        let basis: Vec<LieG<Jet>> = (0..self.n()).map(|k| LieG::basis_vector(p, q, k)).collect();
        self.omega_inverse_many(u, &basis)
    }

    /// `Ω(e_k, e_l) = -ω([V_k, V_l])` with `V = ω^{-1}(e)`.
    pub fn curvature_components(&self, u: &[f64]) -> Result<CartanCurvature> {
        let (p, q, n) = (self.p(), self.q(), self.n());
        let uj: Vec<Jet> = u.iter().map(|&v| Jet::constant(v)).collect();
        let frame = self.frame(&uj)?;
        // d[a][b] = derivative of V_a along V_b
        let mut d: Vec<Vec<Vec<Jet>>> = vec![Vec::new(); n];
        for b in 0..n {
            let shifted: Vec<Jet> = uj
                .iter()
                .zip(&frame[b])
                .map(|(x, v)| x.perturbed(0, v))
                .collect::<Result<_>>()?;
            let moved = self.frame(&shifted)?;
            for (a, va) in moved.into_iter().enumerate() {
                let dv: Vec<Jet> = va.iter().map(|x| x.derivative(0)).collect();
                if d[a].is_empty() {
                    d[a] = vec![Vec::new(); n];
                }
                d[a][b] = dv;
            }
        }
        let mat = self.omega_matrix(&uj)?;
        let dim = self.dim();
        let mut torsion = vec![0.0; n * n * n];
        let mut kk = vec![0.0; n * n * n * n];
        let mut g1 = vec![0.0; n * n * n];
        for k in 0..n {
            for l in 0..n {
                if k == l {
                    continue;
                }
                let br: Vec<f64> = (0..dim)
                    .map(|c| (&d[l][k][c] - &d[k][l][c]).value())
                    .collect();
                let coords: Vec<Jet> = (0..dim)
                    .map(|r| {
                        Jet::constant(-(0..dim).map(|c| mat[r * dim + c].value() * br[c]).sum::<f64>())
                    })
                    .collect();
                let om = LieG::from_coords(p, q, &coords);
                for i in 0..n {
                    torsion[(i * n + k) * n + l] = om.v[i].value();
                    g1[(i * n + k) * n + l] = om.xi[i].value();
                    for j in 0..n {
                        kk[((i * n + j) * n + k) * n + l] = om.m0.get(i, j).value();
                    }
                }
            }
        }
        Ok(CartanCurvature {
            n,
            torsion,
            k: kk,
            grade_one: g1,
        })
    }

    pub fn check_normal(&self, u: &[f64]) -> Result<NormalReport> {
        let c = self.curvature_components(u)?;
        Ok(NormalReport {
            normality: c.normality_residual(self.p()),
            structure: c.structure_residual(),
            bianchi: c.bianchi_residual(),
        })
    }
}

/// Normal Cartan connection of a foliated connection, built on the
/// transverse chart.
pub fn foliated_cartan(fconn: &FoliatedConnection) -> Result<CartanConn> {
    let q = fconn.chart().q();
    if q < 2 {
        return Err(Error::CodimensionOne { q });
    }
    Ok(CartanConn {
        kind: ConnKind::Foliated,
        conn: fconn.as_connection().clone(),
        perturbation: None,
        mutation: Mutation::None,
    })
}

/// Image of a bundle point and tangent vector under `(m, h) ↦ (y(m), p(h))`.
pub fn project_tangent(p: usize, q: usize, u: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p + q;
    let pat = block_pattern(p, q);
    let select = |v: &[f64]| -> Vec<f64> {
        let mut out = v[p..n].to_vec();
        for (c, (i, j)) in pat.iter().enumerate() {
            if *i >= p && *j >= p {
                out.push(v[n + c]);
            }
        }
        out.extend_from_slice(&v[n + pat.len()..]);
        out
    };
    (select(u), select(xi))
}

/// `|p_{n,q} ω_F(ξ) - ω(F)(p_* ξ)|` at `u`.
pub fn check_link(acc: &CartanConn, fcc: &CartanConn, u: &[f64], xi: &[f64]) -> Result<f64> {
    if acc.kind != ConnKind::Adapted || fcc.kind != ConnKind::Foliated || acc.q() != fcc.q() {
        return Err(Error::KindMismatch(
            "check_link needs an adapted and a matching foliated connection".into(),
        ));
    }
    let jets = |v: &[f64]| v.iter().map(|&x| Jet::constant(x)).collect::<Vec<_>>();
    let lhs = acc.omega_at(&jets(u), &jets(xi))?.project();
    let (uf, xif) = project_tangent(acc.p(), acc.q(), u, xi);
    let rhs = fcc.omega_at(&jets(&uf), &jets(&xif))?;
    Ok(lhs.sub(&rhs).max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::JetLu;
    use crate::chart::{induce_foliated, FoliatedChart};
    use crate::exprlang::ScalarFieldExpr;
    use crate::jetgroup::{act, include_h};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(s: &str, p: usize, q: usize) -> ScalarFieldExpr {
        ScalarFieldExpr::parse(s, p, q).unwrap()
    }

    fn sample(p: usize, q: usize) -> AdaptedConnection {
        let chart = FoliatedChart::cube(p, q, 1.0).unwrap();
        let n = p + q;
        let y = |i: usize| format!("y{}", i + 1);
        let mut entries = vec![
            ((p, p, p), ex(&format!("0.3*{} - 0.2*{}^2", y(1), y(0)), p, q)),
            ((p + 1, p, p + 1), ex(&format!("0.25*{}*{}", y(0), y(1)), p, q)),
            ((p, p + 1, p + 1), ex(&format!("0.4 + 0.1*{}", y(0)), p, q)),
        ];
        if p > 0 {
            entries.push(((0, 0, p), ex("0.2*x1*y1 + 0.1", p, q)));
            entries.push(((0, p, p + 1), ex("0.3*x1 - 0.2*y2^2", p, q)));
        }
        let _ = n;
        AdaptedConnection::from_entries(chart, &entries).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn flat_deformation_vanishes() {
        let c = AdaptedConnection::flat(FoliatedChart::cube(1, 2, 1.0).unwrap());
        let m: Vec<Jet> = [0.1, 0.2, 0.3].iter().map(|&v| Jet::constant(v)).collect();
        assert!(deformation_tensor(&c, &m).unwrap().iter().all(|v| v.value() == 0.0));
    }

    #[test]
    fn deformation_matches_brute_force() {
        let chart = FoliatedChart::cube(0, 2, 1.0).unwrap();
        let c = AdaptedConnection::from_entries(chart, &[((0, 1, 1), ex("y1", 0, 2))]).unwrap();
        let m = [0.4, -0.3];
        let mj: Vec<Jet> = m.iter().map(|&v| Jet::constant(v)).collect();
        let g: Vec<f64> = deformation_tensor(&c, &mj).unwrap().iter().map(Jet::value).collect();
        let r: Vec<f64> = curvature(&c, &mj).unwrap().iter().map(Jet::value).collect();
        let q = 2.0;
        for j in 0..2 {
            for k in 0..2 {
                let mut a = 0.0;
                let mut b = 0.0;
                for i in 0..2 {
                    a += r[((i * 2 + i) * 2 + j) * 2 + k];
                    b += r[((i * 2 + j) * 2 + i) * 2 + k];
                }
                let want = -a / ((q + 1.0) * (q - 1.0)) + b / (q - 1.0);
                assert!((g[j * 2 + k] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adapted_columns_vanish() {
        let c = sample(1, 2);
        let m: Vec<Jet> = [0.1, 0.2, -0.3].iter().map(|&v| Jet::constant(v)).collect();
        let g = deformation_tensor(&c, &m).unwrap();
        for j in 0..3 {
            assert!(g[j * 3].value().abs() < 1e-14);
        }
    }

    #[test]
    fn section_transforms_under_shift() {
        let c = sample(1, 2);
        let chart = c.chart().clone();
        let alpha = crate::chart::OneForm::from_exprs(
            chart,
            vec![ex("0", 1, 2), ex("0.3", 1, 2), ex("-0.2", 1, 2)],
        )
        .unwrap();
        let shifted = crate::chart::projective_shift(&c, &alpha).unwrap();
        let m = [0.1, 0.2, 0.3];
        let s = canonical_section(&c, &m).unwrap();
        let s2 = canonical_section(&shifted, &m).unwrap();
        let h = HElement::new(1, 2, Mat::identity(3), vec![0.3, -0.2]).unwrap();
        let moved = act(&s, &include_h(&h));
        for (a, b) in moved.quad.iter().zip(&s2.quad) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn omega_round_trip_and_fundamental() {
        let c = CartanConn::adapted(&sample(1, 2)).unwrap();
        let mut r = rng();
        let pt = BundlePoint::random(vec![0.1, -0.2, 0.3], 1, 2, &mut r);
        let u = pt.jets();
        let v: Vec<Jet> = (0..c.dim()).map(|_| Jet::constant(r.gen_range(-1.0..1.0))).collect();
        let a = c.omega_at(&u, &v).unwrap();
        let back = c.omega_inverse(&u, &a).unwrap();
        for (x, y) in back.iter().zip(&v) {
            assert!((x.value() - y.value()).abs() < 1e-10);
        }
        let mut k = LieG::zero(1, 2);
        k.m0.set(0, 2, Jet::constant(0.7));
        k.m0.set(1, 1, Jet::constant(-0.4));
        k.xi[2] = Jet::constant(0.5);
        let f = c.fundamental(&u, &k).unwrap();
        assert!(c.omega_at(&u, &f).unwrap().sub(&k).max_abs() < 1e-12);
        let vert = c.omega_inverse(&u, &k).unwrap();
        assert!(vert[..3].iter().all(|x| x.value().abs() < 1e-12));
    }

    #[test]
    fn closed_form_inverse() {
        let c = CartanConn::adapted(&sample(1, 2)).unwrap();
        let mut r = rng();
        let pt = BundlePoint::random(vec![0.1, -0.2, 0.3], 1, 2, &mut r);
        let u = pt.jets();
        let coords: Vec<Jet> = (0..c.dim()).map(|_| Jet::constant(r.gen_range(-1.0..1.0))).collect();
        let a = LieG::from_coords(1, 2, &coords);
        let solved = c.omega_inverse(&u, &a).unwrap();
        let lu = JetLu::new(&c.omega_matrix(&u).unwrap(), c.dim()).unwrap();
        for (s, w) in solved.iter().zip(lu.solve(&coords)) {
            assert!((s.value() - w.value()).abs() < 1e-10);
        }
    }

    #[test]
    fn equivariance() {
        let c = CartanConn::adapted(&sample(1, 2)).unwrap();
        let mut r = rng();
        let pt = BundlePoint::random(vec![0.1, -0.2, 0.3], 1, 2, &mut r);
        let g = BundlePoint::random(vec![0.0; 3], 1, 2, &mut r).h;
        let ginv = g.inverse().unwrap();
        let u = pt.jets();
        let ug = pt.act(&g).jets();
        // R_g maps (dm, dh) to (dm, dh·g); pull a random tangent along it
        let v: Vec<f64> = (0..c.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let dh = HElement::from_coords(1, 2, &v[3..]);
        let moved = {
            let a = dh.a().mul(g.a());
            let al = g.a().vec_mul(dh.alpha());
            let mut c2: Vec<f64> = v[..3].to_vec();
            c2.extend(HElement::new(1, 2, a, al[1..].to_vec()).unwrap().coords());
            c2
        };
        let j = |x: &[f64]| x.iter().map(|&t| Jet::constant(t)).collect::<Vec<_>>();
        let lhs = c.omega_at(&ug, &j(&moved)).unwrap();
        let rhs = c.omega_at(&u, &j(&v)).unwrap();
        let gj = HElement::<Jet>::from_coords(1, 2, &j(&g.coords()));
        let gij = HElement::<Jet>::from_coords(1, 2, &j(&ginv.coords()));
        let rhs = adjoint_inv(&gj, &gij, &rhs);
        assert!(lhs.sub(&rhs).max_abs() < 1e-10);
    }

    #[test]
    fn tangential_frame_is_tangent_to_leaves() {
        let c = CartanConn::adapted(&sample(1, 2)).unwrap();
        let mut r = rng();
        let pt = BundlePoint::random(vec![0.1, -0.2, 0.3], 1, 2, &mut r);
        let v = c.frame(&pt.jets()).unwrap();
        assert!(v[0][1].value().abs() < 1e-12 && v[0][2].value().abs() < 1e-12);
    }

    #[test]
    fn normal_and_torsion_free() {
        for (p, q) in [(0, 2), (1, 2), (1, 3)] {
            let c = CartanConn::adapted(&sample(p, q)).unwrap();
            let mut r = rng();
            let m: Vec<f64> = (0..p + q).map(|_| r.gen_range(-0.5..0.5)).collect();
            let pt = BundlePoint::random(m, p, q, &mut r);
            let rep = c.check_normal(&pt.coords()).unwrap();
            assert!(rep.worst() < 1e-9, "{p} {q} {rep:?}");
            let flipped = c.clone().with_mutation(Mutation::FlipDeformationSign);
            assert!(flipped.check_normal(&pt.coords()).unwrap().normality > 1e-6);
        }
    }

    #[test]
    fn section_curvature_is_chart_curvature() {
        let conn = sample(1, 2);
        let c = CartanConn::adapted(&conn).unwrap();
        let m = vec![0.2, 0.1, -0.3];
        let mut u = m.clone();
        u.extend(HElement::<f64>::identity(1, 2).coords());
        let k = c.curvature_components(&u).unwrap();
        let mj: Vec<Jet> = m.iter().map(|&v| Jet::constant(v)).collect();
        let rr = curvature(&conn, &mj).unwrap();
        let a: Vec<f64> = c.grade_one(&mj).unwrap().iter().map(Jet::value).collect();
        let n = 3;
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    for l in 0..n {
                        let want = rr[((i * n + j) * n + kk) * n + l].value()
                            + d(i, kk) * a[j * n + l]
                            - d(i, l) * a[j * n + kk]
                            + d(i, j) * (a[kk * n + l] - a[l * n + kk]);
                        assert!((k.get(i, j, kk, l) - want).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn perturbation_response() {
        let (p, q) = (1, 2);
        let n = p + q;
        let c = CartanConn::adapted(&sample(p, q)).unwrap();
        let mut r = rng();
        let mut a = vec![0.0; n * n];
        for j in p..n {
            for l in 0..n {
                a[j * n + l] = r.gen_range(-0.5..0.5);
            }
        }
        let cp = c.clone().with_perturbation(a.clone()).unwrap();
        let pt = BundlePoint::section(vec![0.1, 0.2, 0.3], p, q).coords();
        let t0 = c.curvature_components(&pt).unwrap().trace(p);
        let t1 = cp.curvature_components(&pt).unwrap().trace(p);
        let qf = q as f64;
        for j in p..n {
            for l in 0..n {
                let d = t1[j * n + l] - t0[j * n + l];
                let want = if l >= p {
                    (qf - 1.0) * a[j * n + l] + a[j * n + l] - a[l * n + j]
                } else {
                    (qf + 1.0) * a[j * n + l]
                };
                assert!((d - want).abs() < 1e-9, "{j} {l} {d} {want}");
            }
        }
    }

    #[test]
    fn link_and_p0_agreement() {
        let conn = sample(1, 2);
        let acc = CartanConn::adapted(&conn).unwrap();
        let fcc = foliated_cartan(&induce_foliated(&conn).unwrap()).unwrap();
        let mut r = rng();
        for _ in 0..5 {
            let m: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
            let u = BundlePoint::random(m, 1, 2, &mut r).coords();
            let xi: Vec<f64> = (0..acc.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
            assert!(check_link(&acc, &fcc, &u, &xi).unwrap() < 1e-9);
        }
        assert!(check_link(&acc, &acc, &[0.0; 15], &[0.0; 15]).is_err());
    }
}
