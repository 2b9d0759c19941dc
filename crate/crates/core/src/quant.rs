//! Lifts of symbols and functions to the Cartan bundle, invariant
//! differentiation, divergence and the projectively invariant quantization.
//!
//! Symmetric tensors use the monomial convention of [`SymTensor`]: the
//! covariant tensor `∇^r f` has coefficient `t_γ` equal to the sum of
//! `L_{i_1} ∘ … ∘ L_{i_r} f` over ordered tuples with content `γ`, and
//! `i(η)` is the derivative of the polynomial realization.

use std::ops::Range;
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cartan::{foliated_cartan, BundlePoint, CartanConn, ConnKind};
use crate::chart::{
    pushforward_field, restrict_transverse, x_dependence, AdaptedConnection, AdaptedDiffeo, ExprField,
    Field, FoliatedChart, FoliatedConnection, FunctionField, Pushforward, TensorKind, SAMPLE_POINTS,
    VALIDATION_TOL,
};
use crate::error::{Error, Result};
use crate::exprlang::{BinOp, Node, ScalarFieldExpr};
use crate::jetgroup::LieG;
use crate::mat::Mat;
use crate::symtensor::{count, multi_indices, MultiIndex, SymTensor, Variance};
use crate::taylor::{lie_tree, FieldFamily, Jet};

/// Contravariant symmetric tensor field of fixed degree.
#[derive(Clone, Debug)]
pub struct SymbolField {
    chart: FoliatedChart,
    degree: usize,
    kind: ConnKind,
    field: Arc<dyn Field>,
}

impl SymbolField {
    /// Components in [`multi_indices`] order.
    pub fn new(chart: FoliatedChart, degree: usize, kind: ConnKind, field: Arc<dyn Field>) -> Result<Self> {
        if kind == ConnKind::Foliated && chart.p() != 0 {
            return Err(Error::KindMismatch(
                "foliated symbols live on the transverse chart".into(),
            ));
        }
        let want = count(chart.n(), degree);
        if field.len() != want {
            return Err(Error::Shape(format!(
                "symbol of degree {degree} in dim {} needs {want} components, got {}",
                chart.n(),
                field.len()
            )));
        }
        Ok(SymbolField {
            chart,
            degree,
            kind,
            field,
        })
    }

    /// Sparse construction; unlisted components are zero.
    pub fn from_exprs(
        chart: FoliatedChart,
        degree: usize,
        kind: ConnKind,
        comps: Vec<(MultiIndex, ScalarFieldExpr)>,
    ) -> Result<Self> {
        let (p, q, n) = (chart.p(), chart.q(), chart.n());
        let mut exprs = vec![ScalarFieldExpr::constant(0.0, p, q); count(n, degree)];
        for (g, e) in comps {
            if g.dim() != n || g.degree() != degree {
                return Err(Error::Shape(format!("multi-index ({g}) does not fit")));
            }
            exprs[g.rank()] = e;
        }
        Self::new(chart, degree, kind, Arc::new(ExprField::new(exprs)))
    }

    pub fn chart(&self) -> &FoliatedChart {
        &self.chart
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn kind(&self) -> ConnKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.chart.n()
    }
    pub fn field(&self) -> &Arc<dyn Field> {
        &self.field
    }

    pub fn eval(&self, x: &[Jet]) -> Result<SymTensor<Jet>> {
        SymTensor::from_components(self.dim(), self.degree, Variance::Contravariant, self.field.eval(x)?)
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<SymTensor<f64>> {
        let xj: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        Ok(self.eval(&xj)?.map(Jet::value))
    }

    /// Ranks of the transverse-supported components.
    fn transverse_ranks(&self) -> Vec<usize> {
        let (p, q) = (self.chart.p(), self.chart.q());
        multi_indices(q, self.degree)
            .into_iter()
            .map(|g| {
                let mut e = vec![0; p];
                e.extend_from_slice(g.exponents());
                MultiIndex::new(e).rank()
            })
            .collect()
    }

    /// Worst `x`-derivative of the transverse-supported components.
    pub fn adaptedness_residual(&self) -> Result<f64> {
        if self.chart.p() == 0 {
            return Ok(0.0);
        }
        let pts = self.chart.sample_points(SAMPLE_POINTS);
        x_dependence(&self.chart, &*self.field, &self.transverse_ranks(), &pts)
    }

    pub fn validate(&self) -> Result<()> {
        let residual = self.adaptedness_residual()?;
        if residual > VALIDATION_TOL {
            return Err(Error::SymbolNotAdapted { residual });
        }
        Ok(())
    }

    /// Symbol `(S1 + S2)` with matching shape.
    pub fn plus(&self, other: &SymbolField) -> Result<SymbolField> {
        if self.degree != other.degree || self.dim() != other.dim() {
            return Err(Error::Shape("symbols differ in shape".into()));
        }
        Ok(SymbolField {
            chart: self.chart.clone(),
            degree: self.degree,
            kind: self.kind,
            field: Arc::new(SumField(self.field.clone(), other.field.clone())),
        })
    }
}

struct SumField(Arc<dyn Field>, Arc<dyn Field>);

impl Field for SumField {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let a = self.0.eval(x)?;
        let b = self.1.eval(x)?;
        Ok(a.into_iter().zip(b).map(|(u, v)| u + v).collect())
    }
}

impl Pushforward for SymbolField {
    fn pushforward(&self, phi: &AdaptedDiffeo) -> Result<Self> {
        SymbolField::new(
            phi.target().clone(),
            self.degree,
            self.kind,
            pushforward_field(&self.field, TensorKind::Contravariant(self.degree), phi)?,
        )
    }
}

/// Transverse-supported components read on the transverse chart.
pub fn reduce_symbol(s: &SymbolField) -> Result<SymbolField> {
    if s.kind != ConnKind::Adapted {
        return Err(Error::KindMismatch("only adapted symbols reduce".into()));
    }
    s.validate()?;
    SymbolField::new(
        s.chart.transverse(),
        s.degree,
        ConnKind::Foliated,
        restrict_transverse(&s.chart, &s.field, s.transverse_ranks()),
    )
}

type Evaluator = dyn Fn(&[Jet]) -> Result<Vec<Jet>> + Send + Sync;

/// Function on the bundle with values in a symmetric power.
#[derive(Clone)]
pub struct EquivariantField {
    degree: usize,
    dim: usize,
    variance: Variance,
    eval: Arc<Evaluator>,
}

impl std::fmt::Debug for EquivariantField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquivariantField")
            .field("degree", &self.degree)
            .field("dim", &self.dim)
            .field("variance", &self.variance)
            .finish()
    }
}

impl EquivariantField {
    pub fn new(degree: usize, dim: usize, variance: Variance, eval: Arc<Evaluator>) -> Self {
        EquivariantField {
            degree,
            dim,
            variance,
            eval,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn variance(&self) -> Variance {
        self.variance
    }

    pub fn eval(&self, u: &[Jet]) -> Result<Vec<Jet>> {
        (self.eval)(u)
    }

    pub fn tensor(&self, u: &[Jet]) -> Result<SymTensor<Jet>> {
        SymTensor::from_components(self.dim, self.degree, self.variance, self.eval(u)?)
    }

    /// Lie derivatives along nested vector field families.
    pub fn lie_tree(&self, u: &[Jet], families: &[&dyn FieldFamily]) -> Result<Vec<Vec<Jet>>> {
        let f = |v: &[Jet]| self.eval(v);
        lie_tree(&f, u, families)
    }
}

/// `f̂(m, h) = f(m)`.
pub fn lift_function(f: &FunctionField, cc: &CartanConn) -> Result<EquivariantField> {
    if f.chart().n() != cc.n() {
        return Err(Error::Dimension("function and connection charts differ".into()));
    }
    let n = cc.n();
    let field = f.field().clone();
    Ok(EquivariantField::new(
        0,
        n,
        Variance::Contravariant,
        Arc::new(move |u: &[Jet]| field.eval(&u[..n])),
    ))
}

/// `Ŝ(σ(m)·h) = ρ(A_h^{-1}) S(m)`.
pub fn lift_symbol(s: &SymbolField, cc: &CartanConn) -> Result<EquivariantField> {
    if s.kind != cc.kind() {
        return Err(Error::KindMismatch(format!(
            "{:?} symbol with {:?} connection",
            s.kind,
            cc.kind()
        )));
    }
    if s.dim() != cc.n() {
        return Err(Error::Dimension("symbol and connection charts differ".into()));
    }
    let (p, q, n, k) = (cc.p(), cc.q(), cc.n(), s.degree);
    let field = s.field.clone();
    Ok(EquivariantField::new(
        k,
        n,
        Variance::Contravariant,
        Arc::new(move |u: &[Jet]| {
            let pt = BundlePoint::<Jet>::from_coords(p, q, u);
            let t = SymTensor::from_components(n, k, Variance::Contravariant, field.eval(&pt.m)?)?;
            if k == 0 {
                return Ok(t.into_components());
            }
            let a = pt.h.a();
            let ainv = a.inverse()?;
            Ok(t.act(ainv.data(), a.data()).into_components())
        }),
    ))
}

/// The frame `ω^{-1}(e_k)` for `k` in a range of chart directions.
pub struct Frame<'a> {
    cc: &'a CartanConn,
    range: Range<usize>,
}

impl<'a> Frame<'a> {
    pub fn full(cc: &'a CartanConn) -> Self {
        Frame { cc, range: 0..cc.n() }
    }
    pub fn transverse(cc: &'a CartanConn) -> Self {
        Frame {
            cc,
            range: cc.p()..cc.n(),
        }
    }
}

impl FieldFamily for Frame<'_> {
    fn count(&self) -> usize {
        self.range.len()
    }
    fn eval_all(&self, u: &[Jet]) -> Result<Vec<Vec<Jet>>> {
        let (p, q) = (self.cc.p(), self.cc.q());
        let basis: Vec<LieG<Jet>> = self.range.clone().map(|k| LieG::basis_vector(p, q, k)).collect();
        self.cc.omega_inverse_many(u, &basis)
    }
}

/// Fundamental vector field of an element of the `H` algebra.
pub struct Fundamental<'a> {
    cc: &'a CartanConn,
    k: LieG<Jet>,
}

impl<'a> Fundamental<'a> {
    pub fn new(cc: &'a CartanConn, k: &LieG<f64>) -> Self {
        let (p, q) = k.dims();
        let j = |v: &[f64]| v.iter().map(|&x| Jet::constant(x)).collect::<Vec<_>>();
        Fundamental {
            cc,
            k: LieG::new(p, q, j(&k.v), k.m0.map(|x| Jet::constant(*x)), j(&k.xi)),
        }
    }

    /// Field of the transverse covector `h` (given by its `q` entries).
    pub fn covector(cc: &'a CartanConn, h: &[f64]) -> Self {
        Self::new(cc, &LieG::covector(cc.p(), cc.q(), h))
    }
}

impl FieldFamily for Fundamental<'_> {
    fn count(&self) -> usize {
        1
    }
    fn eval_all(&self, u: &[Jet]) -> Result<Vec<Vec<Jet>>> {
        Ok(vec![self.cc.fundamental(u, &self.k)?])
    }
}

/// Coordinate fields `∂_i` on a chart or bundle of dimension `dim`, acting
/// on the first `n` coordinates.
pub struct CoordinateFrame {
    pub n: usize,
    pub dim: usize,
}

impl FieldFamily for CoordinateFrame {
    fn count(&self) -> usize {
        self.n
    }
    fn eval_all(&self, _u: &[Jet]) -> Result<Vec<Vec<Jet>>> {
        Ok((0..self.n)
            .map(|i| {
                (0..self.dim)
                    .map(|j| Jet::constant(if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect())
    }
}

/// Packs `n^r` ordered Lie derivatives (first slot most significant) of a
/// field with `width` components into one covariant tensor per component.
pub fn assemble_derivative(entries: &[Vec<Jet>], n: usize, r: usize, width: usize) -> Result<Vec<SymTensor<Jet>>> {
    if entries.len() != n.pow(r as u32) {
        return Err(Error::Shape("derivative tree has the wrong size".into()));
    }
    let mut out: Vec<SymTensor<Jet>> = (0..width)
        .map(|_| SymTensor::zeros(n, r, Variance::Covariant))
        .collect();
    let mut comps: Vec<Vec<Jet>> = out.iter().map(|t| t.components().to_vec()).collect();
    for (idx, vals) in entries.iter().enumerate() {
        let mut tuple = vec![0; r];
        let mut rest = idx;
        for s in (0..r).rev() {
            tuple[s] = rest % n;
            rest /= n;
        }
        let rank = MultiIndex::from_tuple(n, &tuple).rank();
        for (c, v) in vals.iter().enumerate() {
            comps[c][rank] += v;
        }
    }
    for (t, c) in out.iter_mut().zip(comps) {
        *t = SymTensor::from_components(n, r, Variance::Covariant, c)?;
    }
    Ok(out)
}

/// Symmetrized iterated invariant differential, one covariant tensor per
/// value component of `field`.
pub fn invariant_derivative(
    field: &EquivariantField,
    cc: &CartanConn,
    u: &[Jet],
    k: usize,
) -> Result<Vec<SymTensor<Jet>>> {
    let frame = Frame::full(cc);
    let fams: Vec<&dyn FieldFamily> = vec![&frame; k];
    let tree = field.lie_tree(u, &fams)?;
    let width = count(field.dim(), field.degree());
    assemble_derivative(&tree, cc.n(), k, width)
}

/// Contracts `q^l` ordered transverse Lie derivatives of a contravariant
/// field with the matching transverse covectors, summing over tuples.
pub fn contract_tree(
    entries: &[Vec<Jet>],
    dim: usize,
    degree: usize,
    p: usize,
    l: usize,
) -> Result<SymTensor<Jet>> {
    if l > degree {
        return Err(Error::DivergenceOrder { l, k: degree });
    }
    let q = dim - p;
    if entries.len() != q.pow(l as u32) {
        return Err(Error::Shape("divergence tree has the wrong size".into()));
    }
    let mut acc: SymTensor<Jet> = SymTensor::zeros(dim, degree - l, Variance::Contravariant);
    for (idx, vals) in entries.iter().enumerate() {
        let mut t = SymTensor::from_components(dim, degree, Variance::Contravariant, vals.clone())?;
        let mut rest = idx;
        for _ in 0..l {
            let j = p + rest % q;
            rest /= q;
            let eta: Vec<Jet> = (0..dim)
                .map(|i| Jet::constant(if i == j { 1.0 } else { 0.0 }))
                .collect();
            t = t.contract(&eta)?;
        }
        acc = acc.add(&t)?;
    }
    Ok(acc)
}

/// `Div^l F` with `Div F = Σ_{j transverse} i(ε^j) L_{ω^{-1}(e_j)} F`.
pub fn divergence(field: &EquivariantField, cc: &CartanConn, u: &[Jet], l: usize) -> Result<SymTensor<Jet>> {
    if l > field.degree() {
        return Err(Error::DivergenceOrder {
            l,
            k: field.degree(),
        });
    }
    let frame = Frame::transverse(cc);
    let fams: Vec<&dyn FieldFamily> = vec![&frame; l];
    let tree = field.lie_tree(u, &fams)?;
    contract_tree(&tree, cc.n(), field.degree(), cc.p(), l)
}

/// `C_{k,l} = binom(k,l) Π_{s=1}^{l} (k-s)/(q+2k-s)`, exactly.
pub fn coeff(k: usize, l: usize, q: usize) -> Ratio<i64> {
    assert!(l <= k, "coefficient index l = {l} exceeds k = {k}");
    let (k, l, q) = (k as i64, l as i64, q as i64);
    let mut c = Ratio::from_integer(1);
    for s in 1..=l {
        c = c * Ratio::new(k - s, q + 2 * k - s) * Ratio::new(k - s + 1, s);
    }
    c
}

pub fn coeff_f64(k: usize, l: usize, q: usize) -> f64 {
    let c = coeff(k, l, q);
    *c.numer() as f64 / *c.denom() as f64
}

/// Weight applied to the `l`-th term: `C_{k,l} (k-l)!/k!`. The factorial
/// ratio converts the derivative convention of `i(η)` to contraction of a
/// single slot.
pub fn term_weight(k: usize, l: usize, q: usize) -> f64 {
    let falling: f64 = ((k - l + 1)..=k).map(|v| v as f64).product();
    coeff_f64(k, l, q) / falling
}

/// Quantization of a fixed symbol with respect to a normal Cartan connection.
#[derive(Clone, Debug)]
pub struct Quantizer {
    cc: CartanConn,
    symbol: SymbolField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantTerm {
    pub l: usize,
    pub coefficient: f64,
    pub pairing: f64,
}

impl Quantizer {
    pub fn new(cc: CartanConn, symbol: SymbolField) -> Result<Self> {
        if symbol.kind != cc.kind() {
            return Err(Error::KindMismatch(format!(
                "{:?} symbol with {:?} connection",
                symbol.kind,
                cc.kind()
            )));
        }
        if symbol.dim() != cc.n() {
            return Err(Error::Dimension("symbol and connection charts differ".into()));
        }
        symbol.validate()?;
        Ok(Quantizer { cc, symbol })
    }

    pub fn adapted(conn: &AdaptedConnection, symbol: &SymbolField) -> Result<Self> {
        Self::new(CartanConn::adapted(conn)?, symbol.clone())
    }

    pub fn foliated(fconn: &FoliatedConnection, symbol: &SymbolField) -> Result<Self> {
        Self::new(foliated_cartan(fconn)?, symbol.clone())
    }

    pub fn cartan(&self) -> &CartanConn {
        &self.cc
    }
    pub fn symbol(&self) -> &SymbolField {
        &self.symbol
    }

    /// Terms `⟨Div^l Ŝ, ∇^{k-l} f̂⟩(u)` for `l = 0..=k`.
    pub fn pairings(&self, f: &FunctionField, u: &[Jet]) -> Result<Vec<Jet>> {
        let k = self.symbol.degree;
        let s_hat = lift_symbol(&self.symbol, &self.cc)?;
        let f_hat = lift_function(f, &self.cc)?;
        (0..=k)
            .map(|l| {
                let div = divergence(&s_hat, &self.cc, u, l)?;
                let nab = invariant_derivative(&f_hat, &self.cc, u, k - l)?.swap_remove(0);
                div.pair(&nab)
            })
            .collect()
    }

    /// `Q(S)(f)` read at an arbitrary bundle point.
    pub fn apply_at(&self, f: &FunctionField, u: &[Jet]) -> Result<Jet> {
        let k = self.symbol.degree;
        let q = self.cc.q();
        Ok(self
            .pairings(f, u)?
            .into_iter()
            .enumerate()
            .fold(Jet::zero(), |acc, (l, t)| acc + t * term_weight(k, l, q)))
    }

    /// `Q(S)(f)(m)` through the section point `(m, id)`.
    pub fn apply(&self, f: &FunctionField, m: &[f64]) -> Result<f64> {
        let u = BundlePoint::section(m.to_vec(), self.cc.p(), self.cc.q()).jets();
        Ok(self.apply_at(f, &u)?.value())
    }

    pub fn terms(&self, f: &FunctionField, m: &[f64]) -> Result<Vec<QuantTerm>> {
        let k = self.symbol.degree;
        let q = self.cc.q();
        let u = BundlePoint::section(m.to_vec(), self.cc.p(), self.cc.q()).jets();
        Ok(self
            .pairings(f, &u)?
            .into_iter()
            .enumerate()
            .map(|(l, t)| QuantTerm {
                l,
                coefficient: coeff_f64(k, l, q),
                pairing: t.value(),
            })
            .collect())
    }

    /// Fixes the symbol side at the section point over `m`.
    pub fn at(&self, m: &[f64]) -> Result<PreparedQuantizer<'_>> {
        let u = BundlePoint::section(m.to_vec(), self.cc.p(), self.cc.q()).jets();
        let s_hat = lift_symbol(&self.symbol, &self.cc)?;
        let divs = (0..=self.symbol.degree)
            .map(|l| divergence(&s_hat, &self.cc, &u, l))
            .collect::<Result<_>>()?;
        Ok(PreparedQuantizer { qz: self, u, divs })
    }

    /// `∂_x` of `m ↦ Q(S)(f)(m)` at `m`, worst over tangential directions.
    pub fn x_derivative(&self, f: &FunctionField, m: &[f64]) -> Result<f64> {
        let (p, q) = (self.cc.p(), self.cc.q());
        let mut worst: f64 = 0.0;
        for lam in 0..p {
            let mut u = BundlePoint::section(m.to_vec(), p, q).jets();
            u[lam] = Jet::variable(m[lam], 0, 1.0)?;
            worst = worst.max(self.apply_at(f, &u)?.coeff(1).abs());
        }
        Ok(worst)
    }
}

/// Quantizer with `Div^l Ŝ` cached at one base point.
pub struct PreparedQuantizer<'a> {
    qz: &'a Quantizer,
    u: Vec<Jet>,
    divs: Vec<SymTensor<Jet>>,
}

impl PreparedQuantizer<'_> {
    pub fn apply(&self, f: &FunctionField) -> Result<f64> {
        let k = self.qz.symbol.degree;
        let q = self.qz.cc.q();
        let f_hat = lift_function(f, &self.qz.cc)?;
        let mut acc = 0.0;
        for (l, div) in self.divs.iter().enumerate() {
            let nab = invariant_derivative(&f_hat, &self.qz.cc, &self.u, k - l)?.swap_remove(0);
            acc += div.pair(&nab)?.value() * term_weight(k, l, q);
        }
        Ok(acc)
    }

    /// All coefficients `D_γ`, `|γ| ≤ k`, from one stacked evaluation of the
    /// probes `(X - m)^γ / γ!`.
    pub fn operator(&self) -> Result<OperatorTable> {
        let cc = &self.qz.cc;
        let chart = self.qz.symbol.chart();
        let (n, k, q) = (cc.n(), self.qz.symbol.degree, cc.q());
        let m: Vec<f64> = self.u[..n].iter().map(Jet::value).collect();
        let all: Vec<MultiIndex> = (0..=k).flat_map(|r| multi_indices(n, r)).collect();
        let probes = ExprField::new(all.iter().map(|g| probe(chart, &m, g)).collect());
        let eval = |u: &[Jet]| probes.eval(&u[..n]);
        let frame = Frame::full(cc);
        let mut values = vec![0.0; all.len()];
        for (l, div) in self.divs.iter().enumerate() {
            let r = k - l;
            let fams: Vec<&dyn FieldFamily> = vec![&frame; r];
            let nabs = assemble_derivative(&lie_tree(&eval, &self.u, &fams)?, n, r, all.len())?;
            let w = term_weight(k, l, q);
            for (v, nab) in values.iter_mut().zip(&nabs) {
                *v += div.pair(nab)?.value() * w;
            }
        }
        Ok(OperatorTable {
            base_point: m,
            degree: k,
            dim: n,
            coefficients: all.into_iter().zip(values).collect(),
        })
    }
}

pub fn quantize_adapted(conn: &AdaptedConnection, s: &SymbolField, f: &FunctionField, m: &[f64]) -> Result<f64> {
    Quantizer::adapted(conn, s)?.apply(f, m)
}

pub fn quantize_foliated(
    fconn: &FoliatedConnection,
    s: &SymbolField,
    f: &FunctionField,
    m_y: &[f64],
) -> Result<f64> {
    Quantizer::foliated(fconn, s)?.apply(f, m_y)
}

/// `(X - m)^γ / γ!` on `chart`.
pub fn probe(chart: &FoliatedChart, m: &[f64], gamma: &MultiIndex) -> ScalarFieldExpr {
    let (p, q) = (chart.p(), chart.q());
    let mut node = Node::Num(1.0 / gamma.factorial());
    for (i, &e) in gamma.exponents().iter().enumerate() {
        if e == 0 {
            continue;
        }
        let shifted = Node::Bin(BinOp::Sub, Box::new(Node::Var(i)), Box::new(Node::Num(m[i])));
        let factor = if e == 1 {
            shifted
        } else {
            Node::Pow(Box::new(shifted), e as i32)
        };
        node = Node::Bin(BinOp::Mul, Box::new(node), Box::new(factor));
    }
    ScalarFieldExpr::from_node(node, p, q)
}

/// Coefficients `D_γ` of a differential operator `Σ D_γ ∂^γ` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTable {
    pub base_point: Vec<f64>,
    pub degree: usize,
    pub dim: usize,
    /// Ascending degree, [`multi_indices`] order within a degree.
    pub coefficients: Vec<(MultiIndex, f64)>,
}

impl OperatorTable {
    pub fn get(&self, gamma: &MultiIndex) -> Option<f64> {
        self.coefficients.iter().find(|(g, _)| g == gamma).map(|(_, v)| *v)
    }

    /// Top-degree coefficients in [`multi_indices`] order.
    pub fn top(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .filter(|(g, _)| g.degree() == self.degree)
            .map(|(_, v)| *v)
            .collect()
    }

    /// `Σ D_γ ∂^γ f` at the base point.
    pub fn apply(&self, f: &FunctionField) -> Result<f64> {
        let mut total = 0.0;
        for r in 0..=self.degree {
            let d = partial_derivatives(f, &self.base_point, r)?;
            for (g, c) in self.coefficients.iter().filter(|(g, _)| g.degree() == r) {
                total += c * d.get(g).value();
            }
        }
        Ok(total)
    }
}

/// Partial derivatives of order `r` at `m` as polynomial coefficients
/// divided back to `∂^γ f`.
pub fn partial_derivatives(f: &FunctionField, m: &[f64], r: usize) -> Result<SymTensor<Jet>> {
    let n = f.chart().n();
    let frame = CoordinateFrame { n, dim: n };
    let fams: Vec<&dyn FieldFamily> = vec![&frame; r];
    let g = |x: &[Jet]| f.field().eval(x);
    let u: Vec<Jet> = m.iter().map(|&v| Jet::constant(v)).collect();
    let tree = lie_tree(&g, &u, &fams)?;
    let summed = assemble_derivative(&tree, n, r, 1)?.swap_remove(0);
    let comps: Vec<Jet> = multi_indices(n, r)
        .iter()
        .zip(summed.components())
        .map(|(g, v)| v.clone() * (1.0 / g.multinomial()))
        .collect();
    SymTensor::from_components(n, r, Variance::Covariant, comps)
}

/// Recovers `D_γ = Q((X - m)^γ / γ!)(m)` for `|γ| ≤ k` after checking
/// linearity of `quantizer` on random probe combinations.
pub fn extract_operator(
    quantizer: impl Fn(&FunctionField) -> Result<f64>,
    chart: &FoliatedChart,
    m: &[f64],
    k: usize,
) -> Result<OperatorTable> {
    let n = chart.n();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e);
    let all: Vec<MultiIndex> = (0..=k).flat_map(|r| multi_indices(n, r)).collect();
    let pick = |rng: &mut ChaCha8Rng| -> (ScalarFieldExpr, Vec<(usize, f64)>) {
        let mut e = ScalarFieldExpr::constant(0.0, chart.p(), chart.q());
        let mut terms = Vec::new();
        for _ in 0..3 {
            let i = rng.gen_range(0..all.len());
            let c = rng.gen_range(-1.0..1.0);
            e = e.plus(&probe(chart, m, &all[i]).scaled(c));
            terms.push((i, c));
        }
        (e, terms)
    };
    let mut coefficients = Vec::with_capacity(all.len());
    for g in &all {
        let f = FunctionField::from_expr(chart.clone(), probe(chart, m, g));
        coefficients.push((g.clone(), quantizer(&f)?));
    }
    for _ in 0..2 {
        let (e, terms) = pick(&mut rng);
        let got = quantizer(&FunctionField::from_expr(chart.clone(), e))?;
        let want: f64 = terms.iter().map(|(i, c)| c * coefficients[*i].1).sum();
        let residual = (got - want).abs();
        if residual > 1e-8 * (1.0 + want.abs()) {
            return Err(Error::NonLinear { residual });
        }
    }
    Ok(OperatorTable {
        base_point: m.to_vec(),
        degree: k,
        dim: n,
        coefficients,
    })
}

/// Infinitesimal symmetric-power action `d/dt ρ(I + t B) S` at `t = 0`.
pub fn rho_derivative(s: &SymTensor<Jet>, b: &Mat<f64>) -> Result<SymTensor<Jet>> {
    let level = s.components().iter().map(Jet::levels).max().unwrap_or(0);
    let n = b.rows();
    let mut mat = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            mat.push(Jet::constant(id).perturbed(level, &Jet::constant(*b.get(i, j)))?);
        }
    }
    let moved = s.act(&mat, &mat);
    Ok(moved.map(|v| v.derivative(level)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{induce_foliated, projective_shift, OneForm};

    fn ex(s: &str, p: usize, q: usize) -> ScalarFieldExpr {
        ScalarFieldExpr::parse(s, p, q).unwrap()
    }

    fn mi(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn conn(p: usize, q: usize) -> AdaptedConnection {
        let chart = FoliatedChart::cube(p, q, 1.0).unwrap();
        let mut entries = vec![
            ((p, p, p), ex("0.3*y2 - 0.2*y1^2", p, q)),
            ((p + 1, p, p + 1), ex("0.25*y1*y2", p, q)),
            ((p, p + 1, p + 1), ex("0.4 + 0.1*y1", p, q)),
        ];
        if p > 0 {
            entries.push(((0, 0, p), ex("0.2*x1*y1 + 0.1", p, q)));
            entries.push(((0, p, p + 1), ex("0.3*x1 - 0.2*y2^2", p, q)));
        }
        AdaptedConnection::from_entries(chart, &entries).unwrap()
    }

    fn symbol(p: usize, q: usize, k: usize) -> SymbolField {
        let chart = FoliatedChart::cube(p, q, 1.0).unwrap();
        let n = p + q;
        let comps = multi_indices(n, k)
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let tangential = g.exponents()[..p].iter().any(|&e| e > 0);
                let s = if tangential {
                    format!("{} + 0.2*x1*y1", 0.3 + 0.1 * i as f64)
                } else {
                    format!("{} - 0.3*y2 + 0.1*y1^2", 0.5 - 0.07 * i as f64)
                };
                (g, ex(&s, p, q))
            })
            .collect();
        SymbolField::from_exprs(chart, k, ConnKind::Adapted, comps).unwrap()
    }

    fn func(p: usize, q: usize) -> FunctionField {
        let chart = FoliatedChart::cube(p, q, 1.0).unwrap();
        FunctionField::from_expr(chart, ex("sin(y1) + y1*y2^2 - 0.5*y2^3 + 0.3*y1^4", p, q))
    }

    #[test]
    fn coefficients() {
        assert_eq!(coeff(3, 0, 2), Ratio::from_integer(1));
        assert_eq!(coeff(2, 2, 3), Ratio::from_integer(0));
        assert_eq!(coeff(3, 1, 2), Ratio::new(6, 7));
        for q in 2..5 {
            for k in 1..5 {
                for l in 1..=k {
                    let lhs = coeff(k, l, q) * Ratio::from_integer((l * (q + 2 * k - l)) as i64);
                    let rhs = coeff(k, l - 1, q) * Ratio::from_integer(((k - l + 1) * (k - l)) as i64);
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn lift_scaling() {
        let c = CartanConn::adapted(&conn(1, 2)).unwrap();
        let s = symbol(1, 2, 2);
        let lifted = lift_symbol(&s, &c).unwrap();
        let m = vec![0.1, 0.2, 0.3];
        let base = s.eval_at(&m).unwrap();
        let mut pt = BundlePoint::section(m, 1, 2);
        let id = lifted.tensor(&pt.jets()).unwrap().map(Jet::value);
        assert_eq!(id, base);
        pt.h = crate::jetgroup::HElement::new(1, 2, Mat::identity(3).scale(&2.0), vec![0.0, 0.0]).unwrap();
        let scaled = lifted.tensor(&pt.jets()).unwrap().map(Jet::value);
        for (a, b) in scaled.components().iter().zip(base.components()) {
            assert!((a - b / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_gradient() {
        let chart = FoliatedChart::cube(0, 2, 1.0).unwrap();
        let c = CartanConn::adapted(&AdaptedConnection::flat(chart.clone())).unwrap();
        let f = FunctionField::from_expr(chart, ex("y1^2*y2 + sin(y2)", 0, 2));
        let fh = lift_function(&f, &c).unwrap();
        let u = BundlePoint::section(vec![0.3, -0.4], 0, 2).jets();
        let g = invariant_derivative(&fh, &c, &u, 1).unwrap().swap_remove(0);
        let want = [2.0 * 0.3 * -0.4, 0.09 + (-0.4f64).cos()];
        for (a, b) in g.components().iter().zip(want) {
            assert!((a.value() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn k0_and_k1() {
        let (p, q) = (1, 2);
        let cn = conn(p, q);
        let f = func(p, q);
        let m = [0.1, 0.2, -0.3];
        let s0 = SymbolField::from_exprs(
            FoliatedChart::cube(p, q, 1.0).unwrap(),
            0,
            ConnKind::Adapted,
            vec![(mi(&[0, 0, 0]), ex("1 + y1", p, q))],
        )
        .unwrap();
        let v = quantize_adapted(&cn, &s0, &f, &m).unwrap();
        assert!((v - 1.2 * f.eval_at(&m).unwrap()).abs() < 1e-12);
        let s1 = symbol(p, q, 1);
        let v = quantize_adapted(&cn, &s1, &f, &m).unwrap();
        let sv = s1.eval_at(&m).unwrap();
        let h = 1e-5;
        let mut fd = 0.0;
        for (i, g) in multi_indices(3, 1).iter().enumerate() {
            let dir = g.exponents();
            let a: Vec<f64> = m.iter().zip(dir).map(|(x, d)| x + h * *d as f64).collect();
            let b: Vec<f64> = m.iter().zip(dir).map(|(x, d)| x - h * *d as f64).collect();
            fd += sv.components()[i] * (f.eval_at(&a).unwrap() - f.eval_at(&b).unwrap()) / (2.0 * h);
        }
        assert!((v - fd).abs() < 1e-5, "{v} {fd}");
    }

    #[test]
    fn fiber_independence() {
        let (p, q) = (1, 2);
        let qz = Quantizer::adapted(&conn(p, q), &symbol(p, q, 3)).unwrap();
        let f = func(p, q);
        let m = vec![0.1, 0.2, -0.3];
        let at_section = qz.apply(&f, &m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let u = BundlePoint::random(m.clone(), p, q, &mut rng).jets();
            let v = qz.apply_at(&f, &u).unwrap().value();
            assert!((v - at_section).abs() < 1e-8, "{v} vs {at_section}");
        }
    }

    #[test]
    fn projective_invariance() {
        let (p, q) = (1, 2);
        let cn = conn(p, q);
        let s = symbol(p, q, 3);
        let f = func(p, q);
        let alpha = OneForm::from_exprs(
            cn.chart().clone(),
            vec![ex("0", p, q), ex("0.3*y2 + 0.1", p, q), ex("-0.2*y1*y2", p, q)],
        )
        .unwrap();
        let shifted = projective_shift(&cn, &alpha).unwrap();
        let m = [0.1, 0.2, -0.3];
        let a = quantize_adapted(&cn, &s, &f, &m).unwrap();
        let b = quantize_adapted(&shifted, &s, &f, &m).unwrap();
        assert!((a - b).abs() < 1e-7, "{a} {b}");
    }

    #[test]
    fn commutation_with_reduction() {
        let (p, q) = (1, 2);
        let cn = conn(p, q);
        let s = symbol(p, q, 2);
        let f = func(p, q);
        let m = [0.1, 0.2, -0.3];
        let a = quantize_adapted(&cn, &s, &f, &m).unwrap();
        let fconn = induce_foliated(&cn).unwrap();
        let b = quantize_foliated(&fconn, &reduce_symbol(&s).unwrap(), &f.reduce().unwrap(), &m[p..]).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} {b}");
        let qz = Quantizer::adapted(&cn, &s).unwrap();
        assert!(qz.x_derivative(&f, &m).unwrap() < 1e-8);
    }

    #[test]
    fn principal_symbol_and_round_trip() {
        let (p, q) = (1, 2);
        let qz = Quantizer::adapted(&conn(p, q), &symbol(p, q, 2)).unwrap();
        let chart = FoliatedChart::cube(p, q, 1.0).unwrap();
        let m = vec![0.1, 0.2, -0.3];
        let table = extract_operator(|f| qz.apply(f, &m), &chart, &m, 2).unwrap();
        let s = qz.symbol().eval_at(&m).unwrap();
        for (a, b) in table.top().iter().zip(s.components()) {
            assert!((a - b).abs() < 1e-8);
        }
        let f = func(p, q);
        assert!((table.apply(&f).unwrap() - qz.apply(&f, &m).unwrap()).abs() < 1e-10);
        let batched = qz.at(&m).unwrap().operator().unwrap();
        for ((g, a), (h, b)) in table.coefficients.iter().zip(&batched.coefficients) {
            assert_eq!(g, h);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn reduce_example() {
        let chart = FoliatedChart::cube(1, 2, 1.0).unwrap();
        let s = SymbolField::from_exprs(
            chart,
            1,
            ConnKind::Adapted,
            vec![
                (mi(&[1, 0, 0]), ex("x1 + y1", 1, 2)),
                (mi(&[0, 1, 0]), ex("y2", 1, 2)),
                (mi(&[0, 0, 1]), ex("3", 1, 2)),
            ],
        )
        .unwrap();
        let r = reduce_symbol(&s).unwrap();
        assert_eq!(r.eval_at(&[0.5, 0.25]).unwrap().components(), &[0.25, 3.0]);
    }
}
