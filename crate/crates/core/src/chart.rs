//! Foliated charts, adapted and foliated connections, curvature, projective
//! shifts and adapted coordinate changes.
//!
//! Coordinates are `(x1..xp, y1..yq)`; indices `0..p` are tangential and
//! `p..n` transverse. Christoffel arrays store `Γ^i_{kl}` at `i*n*n + k*n + l`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exprlang::ScalarFieldExpr;
use crate::symtensor::{count, SymTensor, Variance};
use crate::taylor::{depth, Jet, JetLu, Scalar, CAPACITY};

/// Default number of sample points per numerical check.
pub const SAMPLE_POINTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct FoliatedChart {
    p: usize,
    q: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    seed: u64,
}

impl FoliatedChart {
    pub fn new(p: usize, q: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if q < 2 {
            return Err(Error::CodimensionOne { q });
        }
        let n = p + q;
        if lower.len() != n || upper.len() != n {
            return Err(Error::Dimension(format!(
                "domain box needs {n} bounds per side"
            )));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::Dimension("domain box is empty".into()));
        }
        Ok(FoliatedChart {
            p,
            q,
            lower,
            upper,
            seed: 0x5eed,
        })
    }

    /// Symmetric box `[-r, r]^n`.
    pub fn cube(p: usize, q: usize, r: f64) -> Result<Self> {
        let n = p + q;
        Self::new(p, q, vec![-r; n], vec![r; n])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn n(&self) -> usize {
        self.p + self.q
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.n()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| {
                let slack = 1e-9 * (b - a);
                *v >= a - slack && *v <= b + slack
            })
    }

    /// Transverse chart `y` with `p = 0`.
    pub fn transverse(&self) -> FoliatedChart {
        FoliatedChart {
            p: 0,
            q: self.q,
            lower: self.lower[self.p..].to_vec(),
            upper: self.upper[self.p..].to_vec(),
            seed: self.seed,
        }
    }

    /// Points drawn uniformly from the inner 80% of the box.
    pub fn sample_points(&self, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..count).map(|_| self.sample_with(&mut rng)).collect()
    }

    pub fn sample_with(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| {
                let w = b - a;
                a + 0.1 * w + 0.8 * w * rng.gen::<f64>()
            })
            .collect()
    }
}

/// A vector-valued smooth field on a chart, evaluable over jets.
pub trait Field: Send + Sync {
    fn len(&self) -> usize;
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>>;
    /// Expression form when the field is given symbolically.
    fn exprs(&self) -> Option<&[ScalarFieldExpr]> {
        None
    }
}

impl fmt::Debug for dyn Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exprs() {
            Some(e) => {
                let s: Vec<String> = e.iter().map(|x| x.to_string()).collect();
                write!(f, "Field{s:?}")
            }
            None => write!(f, "Field(<{} components>)", self.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExprField {
    exprs: Vec<ScalarFieldExpr>,
}

impl ExprField {
    pub fn new(exprs: Vec<ScalarFieldExpr>) -> Self {
        ExprField { exprs }
    }
}

impl Field for ExprField {
    fn len(&self) -> usize {
        self.exprs.len()
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        self.exprs.iter().map(|e| e.evaluate(x)).collect()
    }
    fn exprs(&self) -> Option<&[ScalarFieldExpr]> {
        Some(&self.exprs)
    }
}

/// Field on the transverse chart read off a field on the full chart at
/// fixed tangential coordinates.
struct TransverseRestriction {
    base: Arc<dyn Field>,
    x0: Vec<f64>,
    pick: Vec<usize>,
}

impl Field for TransverseRestriction {
    fn len(&self) -> usize {
        self.pick.len()
    }
    fn eval(&self, y: &[Jet]) -> Result<Vec<Jet>> {
        let mut full: Vec<Jet> = self.x0.iter().map(|&v| Jet::constant(v)).collect();
        full.extend_from_slice(y);
        let vals = self.base.eval(&full)?;
        Ok(self.pick.iter().map(|&i| vals[i].clone()).collect())
    }
}

/// Restricts `field` to the transverse chart, keeping components `pick`.
/// Expression fields are rewritten with `x` replaced by the box center.
pub fn restrict_transverse(
    chart: &FoliatedChart,
    field: &Arc<dyn Field>,
    pick: Vec<usize>,
) -> Arc<dyn Field> {
    let (p, q) = (chart.p(), chart.q());
    let x0 = chart.center()[..p].to_vec();
    if let Some(exprs) = field.exprs() {
        let vars: Vec<ScalarFieldExpr> = (0..p)
            .map(|i| ScalarFieldExpr::constant(x0[i], 0, q))
            .chain((0..q).map(|j| ScalarFieldExpr::var(j, 0, q)))
            .collect();
        let out: Result<Vec<ScalarFieldExpr>> =
            pick.iter().map(|&i| exprs[i].substitute(&vars)).collect();
        if let Ok(out) = out {
            return Arc::new(ExprField::new(out));
        }
    }
    Arc::new(TransverseRestriction {
        base: field.clone(),
        x0,
        pick,
    })
}

/// Worst `|∂_x field|` over the given components at the given points.
pub fn x_dependence(
    chart: &FoliatedChart,
    field: &dyn Field,
    comps: &[usize],
    points: &[Vec<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for pt in points {
        for lam in 0..chart.p() {
            let x: Vec<Jet> = pt
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i == lam {
                        Jet::variable(v, 0, 1.0)
                    } else {
                        Ok(Jet::constant(v))
                    }
                })
                .collect::<Result<_>>()?;
            let vals = field.eval(&x)?;
            for &c in comps {
                worst = worst.max(vals[c].coeff(1).abs());
            }
        }
    }
    Ok(worst)
}

#[inline]
fn gidx(n: usize, i: usize, k: usize, l: usize) -> usize {
    i * n * n + k * n + l
}

#[derive(Clone, Debug)]
pub struct AdaptedConnection {
    chart: FoliatedChart,
    gamma: Arc<dyn Field>,
}

impl AdaptedConnection {
    pub fn new(chart: FoliatedChart, gamma: Arc<dyn Field>) -> Result<Self> {
        let n = chart.n();
        if gamma.len() != n * n * n {
            return Err(Error::Shape(format!(
                "Christoffel field has {} components, expected {}",
                gamma.len(),
                n * n * n
            )));
        }
        Ok(AdaptedConnection { chart, gamma })
    }

    /// Builds from sparse 0-based entries `(i, k, l)`; `(i, l, k)` is mirrored.
    pub fn from_entries(
        chart: FoliatedChart,
        entries: &[((usize, usize, usize), ScalarFieldExpr)],
    ) -> Result<Self> {
        let (p, q) = (chart.p(), chart.q());
        let n = p + q;
        let mut exprs = vec![ScalarFieldExpr::constant(0.0, p, q); n * n * n];
        for ((i, k, l), e) in entries {
            if *i >= n || *k >= n || *l >= n {
                return Err(Error::Dimension(format!(
                    "Christoffel index ({}, {}, {}) out of range",
                    i + 1,
                    k + 1,
                    l + 1
                )));
            }
            exprs[gidx(n, *i, *k, *l)] = e.clone();
            exprs[gidx(n, *i, *l, *k)] = e.clone();
        }
        Self::new(chart, Arc::new(ExprField::new(exprs)))
    }

    pub fn flat(chart: FoliatedChart) -> Self {
        Self::from_entries(chart, &[]).expect("flat connection")
    }

    pub fn chart(&self) -> &FoliatedChart {
        &self.chart
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.gamma
    }

    pub fn christoffel(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        if x.len() != self.chart.n() {
            return Err(Error::PointDimension {
                expected: self.chart.n(),
                found: x.len(),
            });
        }
        self.gamma.eval(x)
    }

    pub fn christoffel_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        Ok(self.christoffel(&x)?.iter().map(Jet::value).collect())
    }
}

/// Connection on the transverse chart of a foliation.
#[derive(Clone, Debug)]
pub struct FoliatedConnection(AdaptedConnection);

impl FoliatedConnection {
    pub fn new(chart: FoliatedChart, gamma: Arc<dyn Field>) -> Result<Self> {
        if chart.p() != 0 {
            return Err(Error::Dimension(
                "a foliated connection lives on the transverse chart (p = 0)".into(),
            ));
        }
        Ok(FoliatedConnection(AdaptedConnection::new(chart, gamma)?))
    }

    pub fn from_entries(
        chart: FoliatedChart,
        entries: &[((usize, usize, usize), ScalarFieldExpr)],
    ) -> Result<Self> {
        if chart.p() != 0 {
            return Err(Error::Dimension(
                "a foliated connection lives on the transverse chart (p = 0)".into(),
            ));
        }
        Ok(FoliatedConnection(AdaptedConnection::from_entries(chart, entries)?))
    }

    pub fn as_connection(&self) -> &AdaptedConnection {
        &self.0
    }

    pub fn chart(&self) -> &FoliatedChart {
        self.0.chart()
    }

    /// Projective shift by a one-form on the transverse chart.
    pub fn shift(&self, alpha: &OneForm) -> Result<FoliatedConnection> {
        Ok(FoliatedConnection(shift_unchecked(&self.0, alpha)?))
    }
}

#[derive(Clone, Debug)]
pub struct OneForm {
    chart: FoliatedChart,
    comps: Arc<dyn Field>,
}

impl OneForm {
    pub fn new(chart: FoliatedChart, comps: Arc<dyn Field>) -> Result<Self> {
        if comps.len() != chart.n() {
            return Err(Error::Shape("one-form needs n components".into()));
        }
        Ok(OneForm { chart, comps })
    }

    pub fn from_exprs(chart: FoliatedChart, exprs: Vec<ScalarFieldExpr>) -> Result<Self> {
        Self::new(chart, Arc::new(ExprField::new(exprs)))
    }

    pub fn zero(chart: FoliatedChart) -> Self {
        let (p, q) = (chart.p(), chart.q());
        let e = vec![ScalarFieldExpr::constant(0.0, p, q); p + q];
        Self::from_exprs(chart, e).expect("zero form")
    }

    pub fn chart(&self) -> &FoliatedChart {
        &self.chart
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.comps
    }

    pub fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        self.comps.eval(x)
    }

    /// Worst violation of foliatedness over sample points: tangential
    /// components and `x`-derivatives of transverse components.
    pub fn foliated_residual(&self) -> Result<f64> {
        let pts = self.chart.sample_points(SAMPLE_POINTS);
        let p = self.chart.p();
        let mut worst: f64 = 0.0;
        for pt in &pts {
            let x: Vec<Jet> = pt.iter().map(|&v| Jet::constant(v)).collect();
            let vals = self.comps.eval(&x)?;
            for v in &vals[..p] {
                worst = worst.max(v.value().abs());
            }
        }
        let trans: Vec<usize> = (p..self.chart.n()).collect();
        Ok(worst.max(x_dependence(&self.chart, &*self.comps, &trans, &pts)?))
    }

    /// Transverse part as a one-form on the transverse chart.
    pub fn transverse(&self) -> OneForm {
        let p = self.chart.p();
        OneForm {
            chart: self.chart.transverse(),
            comps: restrict_transverse(&self.chart, &self.comps, (p..self.chart.n()).collect()),
        }
    }

    pub fn negated(&self) -> OneForm {
        OneForm {
            chart: self.chart.clone(),
            comps: Arc::new(Negated(self.comps.clone())),
        }
    }
}

struct Negated(Arc<dyn Field>);

impl Field for Negated {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        Ok(self.0.eval(x)?.into_iter().map(|v| -v).collect())
    }
}

/// Residuals of the three adaptedness conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedReport {
    pub symmetry: f64,
    pub mixed_block: f64,
    pub x_dependence: f64,
    pub points: usize,
}

impl AdaptedReport {
    pub const SYMMETRY: &'static str = "Γ^i_{kl}=Γ^i_{lk}";
    pub const MIXED_BLOCK: &'static str = "Γ^𝔨_{iλ}=0";
    pub const X_INDEPENDENCE: &'static str = "∂_x Γ^𝔨_{𝔦𝔩}=0";

    pub fn violations(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.symmetry > tol {
            out.push(Self::SYMMETRY);
        }
        if self.mixed_block > tol {
            out.push(Self::MIXED_BLOCK);
        }
        if self.x_dependence > tol {
            out.push(Self::X_INDEPENDENCE);
        }
        out
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.violations(tol).is_empty()
    }
}

/// Tolerance used when validating inputs numerically.
pub const VALIDATION_TOL: f64 = 1e-9;

pub fn validate_adapted(conn: &AdaptedConnection) -> Result<AdaptedReport> {
    let chart = &conn.chart;
    let (p, n) = (chart.p(), chart.n());
    let pts = chart.sample_points(SAMPLE_POINTS);
    let mut symmetry: f64 = 0.0;
    let mut mixed: f64 = 0.0;
    for pt in &pts {
        let g = conn.christoffel_at(pt)?;
        for i in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let v = g[gidx(n, i, k, l)];
                    symmetry = symmetry.max((v - g[gidx(n, i, l, k)]).abs());
                    if i >= p && (k < p || l < p) {
                        mixed = mixed.max(v.abs());
                    }
                }
            }
        }
    }
    let trans: Vec<usize> = (p..n)
        .flat_map(|i| (p..n).flat_map(move |k| (p..n).map(move |l| gidx(n, i, k, l))))
        .collect();
    let xdep = x_dependence(chart, &*conn.gamma, &trans, &pts)?;
    Ok(AdaptedReport {
        symmetry,
        mixed_block: mixed,
        x_dependence: xdep,
        points: pts.len(),
    })
}

pub fn induce_foliated(conn: &AdaptedConnection) -> Result<FoliatedConnection> {
    let report = validate_adapted(conn)?;
    let bad = report.violations(VALIDATION_TOL);
    if !bad.is_empty() {
        return Err(Error::NotAdapted(bad.join(", ")));
    }
    let chart = &conn.chart;
    let (p, q, n) = (chart.p(), chart.q(), chart.n());
    let pick: Vec<usize> = (0..q)
        .flat_map(|i| (0..q).flat_map(move |k| (0..q).map(move |l| gidx(n, p + i, p + k, p + l))))
        .collect();
    let field = restrict_transverse(chart, &conn.gamma, pick);
    FoliatedConnection::new(chart.transverse(), field)
}

struct ShiftedChristoffel {
    base: Arc<dyn Field>,
    alpha: Arc<dyn Field>,
    n: usize,
}

impl Field for ShiftedChristoffel {
    fn len(&self) -> usize {
        self.n * self.n * self.n
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let n = self.n;
        let mut g = self.base.eval(x)?;
        let a = self.alpha.eval(x)?;
        for i in 0..n {
            for l in 0..n {
                // δ^k_i α_l + δ^k_l α_i with k = i, then k = l
                g[gidx(n, i, i, l)] += &a[l];
                g[gidx(n, l, i, l)] += &a[i];
            }
        }
        Ok(g)
    }
}

fn shift_unchecked(conn: &AdaptedConnection, alpha: &OneForm) -> Result<AdaptedConnection> {
    if alpha.chart.n() != conn.chart.n() {
        return Err(Error::Dimension("one-form and connection charts differ".into()));
    }
    let n = conn.chart.n();
    let field: Arc<dyn Field> = match (conn.gamma.exprs(), alpha.comps.exprs()) {
        (Some(g), Some(a)) => {
            let mut g = g.to_vec();
            for i in 0..n {
                for l in 0..n {
                    let e = g[gidx(n, i, i, l)].plus(&a[l]);
                    g[gidx(n, i, i, l)] = e;
                    let e = g[gidx(n, l, i, l)].plus(&a[i]);
                    g[gidx(n, l, i, l)] = e;
                }
            }
            Arc::new(ExprField::new(g))
        }
        _ => Arc::new(ShiftedChristoffel {
            base: conn.gamma.clone(),
            alpha: alpha.comps.clone(),
            n,
        }),
    };
    AdaptedConnection::new(conn.chart.clone(), field)
}

/// `Γ'^k_{il} = Γ^k_{il} + δ^k_i α_l + δ^k_l α_i`; `α` must be foliated.
pub fn projective_shift(conn: &AdaptedConnection, alpha: &OneForm) -> Result<AdaptedConnection> {
    if conn.chart.p() > 0 {
        let residual = alpha.foliated_residual()?;
        if residual > VALIDATION_TOL {
            return Err(Error::NonFoliatedForm { residual });
        }
    }
    shift_unchecked(conn, alpha)
}

/// Christoffel symbols and their first partials at `x`.
pub fn christoffel_with_partials(
    conn: &AdaptedConnection,
    x: &[Jet],
) -> Result<(Vec<Jet>, Vec<Vec<Jet>>)> {
    let n = conn.chart.n();
    let g = conn.christoffel(x)?;
    let level = depth(x);
    let mut partials = Vec::with_capacity(n);
    for k in 0..n {
        let xs: Vec<Jet> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v.perturbed(level, &Jet::constant(if i == k { 1.0 } else { 0.0 })))
            .collect::<Result<_>>()?;
        let gk = conn.christoffel(&xs)?;
        partials.push(gk.iter().map(|v| v.derivative(level)).collect());
    }
    Ok((g, partials))
}

/// `R^i_{jkl}` at `i*n^3 + j*n^2 + k*n + l`.
pub fn curvature(conn: &AdaptedConnection, m: &[Jet]) -> Result<Vec<Jet>> {
    let std: Vec<f64> = m.iter().map(Jet::value).collect();
    if !conn.chart.contains(&std) {
        return Err(Error::OutsideDomain(std));
    }
    let n = conn.chart.n();
    let (g, d) = christoffel_with_partials(conn, m)?;
    let mut r = vec![Jet::zero(); n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = &d[k][gidx(n, i, l, j)] - &d[l][gidx(n, i, k, j)];
                    for a in 0..n {
                        v += &(&g[gidx(n, i, k, a)] * &g[gidx(n, a, l, j)]);
                        v -= &(&g[gidx(n, i, l, a)] * &g[gidx(n, a, k, j)]);
                    }
                    r[((i * n + j) * n + k) * n + l] = v;
                }
            }
        }
    }
    Ok(r)
}

/// Adapted coordinate change `(x, y) ↦ (x'(x, y), y'(y))` with a declared
/// inverse.
#[derive(Clone, Debug)]
pub struct AdaptedDiffeo {
    source: FoliatedChart,
    target: FoliatedChart,
    forward: Vec<ScalarFieldExpr>,
    inverse: Vec<ScalarFieldExpr>,
}

impl AdaptedDiffeo {
    pub fn new(
        source: FoliatedChart,
        forward: Vec<ScalarFieldExpr>,
        inverse: Vec<ScalarFieldExpr>,
    ) -> Result<Self> {
        let (p, n) = (source.p(), source.n());
        if forward.len() != n || inverse.len() != n {
            return Err(Error::NotAdaptedDiffeo("needs n components each way".into()));
        }
        let pts = source.sample_points(SAMPLE_POINTS);
        let fwd = ExprField::new(forward.clone());
        let trans: Vec<usize> = (p..n).collect();
        let xdep = x_dependence(&source, &fwd, &trans, &pts)?;
        if xdep > VALIDATION_TOL {
            return Err(Error::NotAdaptedDiffeo(format!(
                "transverse components depend on x (residual {xdep:e})"
            )));
        }
        let mut images = Vec::new();
        let mut worst: f64 = 0.0;
        for pt in &pts {
            let img: Vec<f64> = forward
                .iter()
                .map(|e| e.evaluate(pt))
                .collect::<Result<_>>()?;
            let back: Vec<f64> = inverse
                .iter()
                .map(|e| e.evaluate(&img))
                .collect::<Result<_>>()?;
            for (a, b) in back.iter().zip(pt) {
                worst = worst.max((a - b).abs());
            }
            images.push(img);
        }
        if worst > VALIDATION_TOL {
            return Err(Error::NotAdaptedDiffeo(format!(
                "declared inverse is off by {worst:e}"
            )));
        }
        // Target box: image of the box corners and a point cloud, padded.
        let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);
        for c in 0..(1usize << n) {
            let corner: Vec<f64> = (0..n)
                .map(|i| {
                    if c >> i & 1 == 1 {
                        source.upper()[i]
                    } else {
                        source.lower()[i]
                    }
                })
                .collect();
            images.push(forward.iter().map(|e| e.evaluate(&corner)).collect::<Result<_>>()?);
        }
        for _ in 0..200 {
            let pt: Vec<f64> = source
                .lower()
                .iter()
                .zip(source.upper())
                .map(|(a, b)| rng.gen_range(*a..*b))
                .collect();
            images.push(forward.iter().map(|e| e.evaluate(&pt)).collect::<Result<_>>()?);
        }
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for img in &images {
            for i in 0..n {
                lo[i] = lo[i].min(img[i]);
                hi[i] = hi[i].max(img[i]);
            }
        }
        for i in 0..n {
            let pad = 0.1 * (hi[i] - lo[i]).max(1e-6);
            lo[i] -= pad;
            hi[i] += pad;
        }
        let target = FoliatedChart::new(p, source.q(), lo, hi)?.with_seed(source.seed);
        Ok(AdaptedDiffeo {
            source,
            target,
            forward,
            inverse,
        })
    }

    pub fn source(&self) -> &FoliatedChart {
        &self.source
    }
    pub fn target(&self) -> &FoliatedChart {
        &self.target
    }

    pub fn forward<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        self.forward.iter().map(|e| e.evaluate(x)).collect()
    }

    pub fn inverse<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        self.inverse.iter().map(|e| e.evaluate(x)).collect()
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &AdaptedDiffeo) -> Result<AdaptedDiffeo> {
        let forward = self
            .forward
            .iter()
            .map(|e| e.substitute(&first.forward))
            .collect::<Result<_>>()?;
        let inverse = first
            .inverse
            .iter()
            .map(|e| e.substitute(&self.inverse))
            .collect::<Result<_>>()?;
        AdaptedDiffeo::new(first.source.clone(), forward, inverse)
    }

    /// Value, Jacobian `∂ψ^d/∂x'^k` (row-major) and Hessian
    /// `∂²ψ^d/∂x'^k∂x'^l` of the inverse map at a target point.
    fn inverse_jets(&self, xp: &[Jet], second: bool) -> Result<(Vec<Jet>, Vec<Jet>, Vec<Jet>)> {
        let n = self.source.n();
        let level = depth(xp);
        let need = level + if second { 2 } else { 1 };
        if need > CAPACITY {
            return Err(Error::CapacityExceeded {
                requested: need,
                capacity: CAPACITY,
            });
        }
        let val = self.inverse(xp)?;
        let mut jac = vec![Jet::zero(); n * n];
        let mut hess = vec![Jet::zero(); if second { n * n * n } else { 0 }];
        let unit = |i: usize, k: usize| Jet::constant(if i == k { 1.0 } else { 0.0 });
        for k in 0..n {
            let xs: Vec<Jet> = xp
                .iter()
                .enumerate()
                .map(|(i, v)| v.perturbed(level, &unit(i, k)))
                .collect::<Result<_>>()?;
            if !second {
                let out = self.inverse(&xs)?;
                for d in 0..n {
                    jac[d * n + k] = out[d].derivative(level);
                }
                continue;
            }
            for l in k..n {
                let xs2: Vec<Jet> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.perturbed(level + 1, &unit(i, l)))
                    .collect::<Result<_>>()?;
                let out = self.inverse(&xs2)?;
                for d in 0..n {
                    let h = out[d].derivative(level + 1).derivative(level);
                    if l == k {
                        jac[d * n + k] = out[d].without(level + 1).derivative(level);
                    }
                    hess[gidx(n, d, k, l)] = h.clone();
                    hess[gidx(n, d, l, k)] = h;
                }
            }
        }
        Ok((val, jac, hess))
    }
}

/// How a field's components transform under a coordinate change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Scalar,
    Covector,
    /// Symmetric contravariant tensor of the given degree.
    Contravariant(usize),
    Christoffel,
}

struct Pushed {
    base: Arc<dyn Field>,
    phi: AdaptedDiffeo,
    kind: TensorKind,
    len: usize,
}

fn invert(jac: &[Jet], n: usize) -> Result<Vec<Jet>> {
    let lu = JetLu::new(jac, n)?;
    let mut inv = vec![Jet::zero(); n * n];
    for c in 0..n {
        let e: Vec<Jet> = (0..n)
            .map(|r| Jet::constant(if r == c { 1.0 } else { 0.0 }))
            .collect();
        let col = lu.solve(&e);
        for r in 0..n {
            inv[r * n + c] = col[r].clone();
        }
    }
    Ok(inv)
}

impl Field for Pushed {
    fn len(&self) -> usize {
        self.len
    }
    fn eval(&self, xp: &[Jet]) -> Result<Vec<Jet>> {
        let n = self.phi.source.n();
        match self.kind {
            TensorKind::Scalar => {
                let x = self.phi.inverse(xp)?;
                self.base.eval(&x)
            }
            TensorKind::Covector => {
                let (x, jac, _) = self.phi.inverse_jets(xp, false)?;
                let a = self.base.eval(&x)?;
                Ok((0..n)
                    .map(|k| (0..n).fold(Jet::zero(), |acc, b| acc + &a[b] * &jac[b * n + k]))
                    .collect())
            }
            TensorKind::Contravariant(k) => {
                let (x, jac, _) = self.phi.inverse_jets(xp, false)?;
                let dphi = invert(&jac, n)?;
                let s = SymTensor::from_components(n, k, Variance::Contravariant, self.base.eval(&x)?)?;
                Ok(s.act(&dphi, &jac).into_components())
            }
            TensorKind::Christoffel => {
                let (x, jac, hess) = self.phi.inverse_jets(xp, true)?;
                let dphi = invert(&jac, n)?;
                let g = self.base.eval(&x)?;
                // inner^d_{kl} = Γ^d_{bc} J^b_k J^c_l + H^d_{kl}
                let mut half = vec![Jet::zero(); n * n * n];
                for d in 0..n {
                    for b in 0..n {
                        for l in 0..n {
                            let mut s = Jet::zero();
                            for c in 0..n {
                                s += &(&g[gidx(n, d, b, c)] * &jac[c * n + l]);
                            }
                            half[gidx(n, d, b, l)] = s;
                        }
                    }
                }
                let mut inner = hess;
                for d in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let mut s = Jet::zero();
                            for b in 0..n {
                                s += &(&half[gidx(n, d, b, l)] * &jac[b * n + k]);
                            }
                            inner[gidx(n, d, k, l)] += &s;
                        }
                    }
                }
                let mut out = vec![Jet::zero(); n * n * n];
                for a in 0..n {
                    for kl in 0..n * n {
                        let mut s = Jet::zero();
                        for d in 0..n {
                            s += &(&dphi[a * n + d] * &inner[d * n * n + kl]);
                        }
                        out[a * n * n + kl] = s;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Transports a field of the given kind along `phi`.
pub fn pushforward_field(
    field: &Arc<dyn Field>,
    kind: TensorKind,
    phi: &AdaptedDiffeo,
) -> Result<Arc<dyn Field>> {
    let n = phi.source.n();
    let len = match kind {
        TensorKind::Scalar => 1,
        TensorKind::Covector => n,
        TensorKind::Contravariant(k) => count(n, k),
        TensorKind::Christoffel => n * n * n,
    };
    if field.len() != len {
        return Err(Error::Shape(format!(
            "field has {} components, {kind:?} needs {len}",
            field.len()
        )));
    }
    Ok(Arc::new(Pushed {
        base: field.clone(),
        phi: phi.clone(),
        kind,
        len,
    }))
}

/// Objects that can be transported along an adapted diffeomorphism.
pub trait Pushforward: Sized {
    fn pushforward(&self, phi: &AdaptedDiffeo) -> Result<Self>;
}

impl Pushforward for AdaptedConnection {
    fn pushforward(&self, phi: &AdaptedDiffeo) -> Result<Self> {
        AdaptedConnection::new(
            phi.target.clone(),
            pushforward_field(&self.gamma, TensorKind::Christoffel, phi)?,
        )
    }
}

impl Pushforward for OneForm {
    fn pushforward(&self, phi: &AdaptedDiffeo) -> Result<Self> {
        OneForm::new(
            phi.target.clone(),
            pushforward_field(&self.comps, TensorKind::Covector, phi)?,
        )
    }
}

/// Scalar function on a chart.
#[derive(Clone, Debug)]
pub struct FunctionField {
    chart: FoliatedChart,
    field: Arc<dyn Field>,
}

impl FunctionField {
    pub fn new(chart: FoliatedChart, field: Arc<dyn Field>) -> Result<Self> {
        if field.len() != 1 {
            return Err(Error::Shape("a function has one component".into()));
        }
        Ok(FunctionField { chart, field })
    }

    pub fn from_expr(chart: FoliatedChart, e: ScalarFieldExpr) -> Self {
        FunctionField {
            chart,
            field: Arc::new(ExprField::new(vec![e])),
        }
    }

    pub fn chart(&self) -> &FoliatedChart {
        &self.chart
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.field
    }

    pub fn eval(&self, x: &[Jet]) -> Result<Jet> {
        Ok(self.field.eval(x)?.swap_remove(0))
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<f64> {
        let x: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
        Ok(self.eval(&x)?.value())
    }

    pub fn x_dependence(&self) -> Result<f64> {
        let pts = self.chart.sample_points(SAMPLE_POINTS);
        x_dependence(&self.chart, &*self.field, &[0], &pts)
    }

    /// The function read on the transverse chart; requires foliatedness.
    pub fn reduce(&self) -> Result<FunctionField> {
        let residual = self.x_dependence()?;
        if residual > VALIDATION_TOL {
            return Err(Error::FunctionNotFoliated { residual });
        }
        Ok(FunctionField {
            chart: self.chart.transverse(),
            field: restrict_transverse(&self.chart, &self.field, vec![0]),
        })
    }

    /// `a f + b g`.
    pub fn combine(&self, a: f64, other: &FunctionField, b: f64) -> FunctionField {
        FunctionField {
            chart: self.chart.clone(),
            field: Arc::new(Combined(self.field.clone(), a, other.field.clone(), b)),
        }
    }
}

struct Combined(Arc<dyn Field>, f64, Arc<dyn Field>, f64);

impl Field for Combined {
    fn len(&self) -> usize {
        1
    }
    fn eval(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let a = self.0.eval(x)?.swap_remove(0);
        let b = self.2.eval(x)?.swap_remove(0);
        Ok(vec![a * self.1 + b * self.3])
    }
}

impl Pushforward for FunctionField {
    fn pushforward(&self, phi: &AdaptedDiffeo) -> Result<Self> {
        FunctionField::new(
            phi.target.clone(),
            pushforward_field(&self.field, TensorKind::Scalar, phi)?,
        )
    }
}
