//! Seeded property suites over random polynomial instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cartan::{check_link, foliated_cartan, BundlePoint, CartanConn, ConnKind, Mutation};
use crate::chart::{
    induce_foliated, projective_shift, AdaptedConnection, AdaptedDiffeo, FoliatedChart, FoliatedConnection,
    FunctionField, OneForm, Pushforward,
};
use crate::error::{Error, Result};
use crate::exprlang::{BinOp, Node, ScalarFieldExpr};
use crate::jetgroup::{HElement, LieG};
use crate::mat::Mat;
use crate::quant::{
    assemble_derivative, contract_tree, invariant_derivative, lift_function, lift_symbol,
    reduce_symbol, rho_derivative, Frame, Fundamental, Quantizer, SymbolField,
};
use crate::symtensor::{multi_indices, MultiIndex, SymTensor, Variance};
use crate::taylor::{FieldFamily, Jet};

/// Suite names in registry order.
pub const SUITES: &[&str] = &[
    "structure-equation",
    "bianchi",
    "normality",
    "equ2-linear-response",
    "link",
    "gonabla",
    "goinv",
    "div1",
    "div2",
    "nablag1",
    "invalg",
    "prop-inv",
    "remark-pairing",
    "fiber-independence",
    "principal-symbol",
    "k0-multiplication",
    "k1-derivation",
    "projective-invariance",
    "naturality-pushforward",
    "foliatedness-of-output",
    "commutation",
    "p0-consistency",
    "q1-rejection",
];

pub const DEFAULT_SEED: u64 = 20_240_917;

/// Default instance grid.
pub const GRID: &[(usize, usize)] = &[(0, 2), (0, 3), (1, 2), (1, 3), (2, 2), (2, 3)];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSpec {
    pub name: String,
    pub seed: u64,
    /// `(p, q)` pairs.
    pub dims: Vec<(usize, usize)>,
    /// Inclusive degree range, cycled over the sample points.
    pub degrees: (usize, usize),
    pub tolerance: f64,
    /// Random connections per `(p, q)`.
    pub connections: usize,
    /// Sample points per connection.
    pub points: usize,
    pub mutation: Mutation,
}

impl CheckSpec {
    pub fn new(name: &str, seed: u64) -> Result<Self> {
        if !SUITES.contains(&name) {
            return Err(Error::UnknownSuite(name.to_string()));
        }
        let (degrees, tolerance, points) = match name {
            "structure-equation" | "bianchi" | "normality" => ((0, 0), 1e-9, 20),
            "equ2-linear-response" => ((0, 0), 1e-6, 20),
            "link" => ((0, 0), 1e-9, 50),
            "gonabla" => ((1, 3), 1e-8, 20),
            "goinv" | "div1" | "invalg" => ((1, 3), 1e-8, 20),
            "div2" => ((1, 3), 1e-8, 20),
            "nablag1" => ((1, 4), 1e-8, 20),
            "prop-inv" => ((1, 3), 1e-8, 20),
            "remark-pairing" | "fiber-independence" => ((0, 3), 1e-8, 20),
            "principal-symbol" => ((1, 3), 1e-8, 20),
            "k0-multiplication" => ((0, 0), 1e-12, 20),
            "k1-derivation" => ((1, 1), 1e-5, 20),
            "projective-invariance" | "naturality-pushforward" => ((0, 3), 1e-7, 20),
            "foliatedness-of-output" | "commutation" => ((0, 3), 1e-8, 20),
            "p0-consistency" => ((0, 3), 1e-10, 20),
            _ => ((0, 0), 0.0, 1),
        };
        Ok(CheckSpec {
            name: name.to_string(),
            seed,
            dims: GRID.to_vec(),
            degrees,
            tolerance,
            connections: 5,
            points,
            mutation: Mutation::None,
        })
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    /// Smaller instance counts for quick runs.
    pub fn scaled(mut self, connections: usize, points: usize) -> Self {
        self.connections = connections;
        self.points = points;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub worst_instance: String,
    pub samples: usize,
}

/// Random polynomial of total degree `≤ deg` in the given global variables.
pub fn random_poly(p: usize, q: usize, vars: &[usize], deg: usize, scale: f64, rng: &mut impl Rng) -> ScalarFieldExpr {
    let mut terms: Vec<Node> = Vec::new();
    for d in 0..=deg {
        for g in multi_indices(vars.len().max(1), d) {
            if vars.is_empty() && d > 0 {
                break;
            }
            if rng.gen_bool(0.4) {
                continue;
            }
            let mut node = Node::Num(rng.gen_range(-scale..scale));
            for (slot, &e) in g.exponents().iter().enumerate() {
                if e == 0 || vars.is_empty() {
                    continue;
                }
                let v = Node::Var(vars[slot]);
                let f = if e == 1 { v } else { Node::Pow(Box::new(v), e as i32) };
                node = Node::Bin(BinOp::Mul, Box::new(node), Box::new(f));
            }
            terms.push(node);
        }
    }
    let root = terms
        .into_iter()
        .reduce(|a, b| Node::Bin(BinOp::Add, Box::new(a), Box::new(b)))
        .unwrap_or(Node::Num(0.0));
    ScalarFieldExpr::from_node(root, p, q)
}

fn all_vars(p: usize, q: usize) -> Vec<usize> {
    (0..p + q).collect()
}

fn y_vars(p: usize, q: usize) -> Vec<usize> {
    (p..p + q).collect()
}

/// Random adapted connection on `[-1, 1]^n`: transverse symbols are
/// polynomials in `y`; tangential rows may involve `x`.
pub fn random_connection(p: usize, q: usize, rng: &mut impl Rng) -> Result<AdaptedConnection> {
    let n = p + q;
    let chart = FoliatedChart::cube(p, q, 1.0)?.with_seed(rng.gen());
    let mut entries = Vec::new();
    for i in 0..n {
        for k in 0..n {
            for l in k..n {
                if i < p {
                    entries.push(((i, k, l), random_poly(p, q, &all_vars(p, q), 2, 0.5, rng)));
                } else if k >= p {
                    entries.push(((i, k, l), random_poly(p, q, &y_vars(p, q), 2, 0.5, rng)));
                }
            }
        }
    }
    AdaptedConnection::from_entries(chart, &entries)
}

pub fn random_symbol(chart: &FoliatedChart, k: usize, rng: &mut impl Rng) -> Result<SymbolField> {
    let (p, q, n) = (chart.p(), chart.q(), chart.n());
    let comps = multi_indices(n, k)
        .into_iter()
        .map(|g| {
            let tangential = g.exponents()[..p].iter().any(|&e| e > 0);
            let vars = if tangential { all_vars(p, q) } else { y_vars(p, q) };
            (g, random_poly(p, q, &vars, 2, 0.5, rng))
        })
        .collect();
    SymbolField::from_exprs(chart.clone(), k, ConnKind::Adapted, comps)
}

/// Polynomial in `y` plus a trigonometric term.
pub fn random_foliated_function(chart: &FoliatedChart, rng: &mut impl Rng) -> FunctionField {
    let (p, q) = (chart.p(), chart.q());
    let poly = random_poly(p, q, &y_vars(p, q), 4, 0.5, rng);
    let j = p + rng.gen_range(0..q);
    let c = rng.gen_range(-0.5..0.5);
    let trig = ScalarFieldExpr::from_node(
        Node::Bin(
            BinOp::Mul,
            Box::new(Node::Num(c)),
            Box::new(Node::Call(crate::exprlang::Func::Sin, Box::new(Node::Var(j)))),
        ),
        p,
        q,
    );
    FunctionField::from_expr(chart.clone(), poly.plus(&trig))
}

pub fn random_function(chart: &FoliatedChart, rng: &mut impl Rng) -> FunctionField {
    let (p, q) = (chart.p(), chart.q());
    let e = random_poly(p, q, &all_vars(p, q), 4, 0.5, rng);
    FunctionField::from_expr(chart.clone(), e)
}

pub fn random_foliated_form(chart: &FoliatedChart, rng: &mut impl Rng) -> Result<OneForm> {
    let (p, q) = (chart.p(), chart.q());
    let comps = (0..p + q)
        .map(|i| {
            if i < p {
                ScalarFieldExpr::constant(0.0, p, q)
            } else {
                random_poly(p, q, &y_vars(p, q), 2, 0.3, rng)
            }
        })
        .collect();
    OneForm::from_exprs(chart.clone(), comps)
}

/// Triangular adapted change of coordinates with exact inverse:
/// `x1' = x1 (1 + c y1)`, `y2' = y2 + e y1^2`.
pub fn natural_diffeo(chart: &FoliatedChart, c: f64, e: f64) -> Result<AdaptedDiffeo> {
    let (p, q) = (chart.p(), chart.q());
    let n = p + q;
    let var = |i: usize| Node::Var(i);
    let num = Node::Num;
    let bin = |op, a, b| Node::Bin(op, Box::new(a), Box::new(b));
    let y1 = p;
    let y2 = p + 1;
    let mut fwd: Vec<Node> = (0..n).map(var).collect();
    let mut inv: Vec<Node> = (0..n).map(var).collect();
    let one_plus = bin(BinOp::Add, num(1.0), bin(BinOp::Mul, num(c), var(y1)));
    if p > 0 {
        fwd[0] = bin(BinOp::Mul, var(0), one_plus.clone());
        inv[0] = bin(BinOp::Div, var(0), one_plus);
    }
    let sq = bin(BinOp::Mul, num(e), Node::Pow(Box::new(var(y1)), 2));
    fwd[y2] = bin(BinOp::Add, var(y2), sq.clone());
    inv[y2] = bin(BinOp::Sub, var(y2), sq);
    let wrap = |v: Vec<Node>| v.into_iter().map(|x| ScalarFieldExpr::from_node(x, p, q)).collect();
    AdaptedDiffeo::new(chart.clone(), wrap(fwd), wrap(inv))
}

fn jets(v: &[f64]) -> Vec<Jet> {
    v.iter().map(|&x| Jet::constant(x)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

fn max_diff(a: &SymTensor<Jet>, b: &SymTensor<Jet>) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .fold(0.0, |m, (x, y)| m.max((x.value() - y.value()).abs()))
}

fn random_g0(p: usize, q: usize, rng: &mut impl Rng) -> HElement<f64> {
    let h = BundlePoint::random(vec![0.0; p + q], p, q, rng).h;
    HElement::new(p, q, h.a().clone(), vec![0.0; q]).expect("pattern respected")
}

fn covector(p: usize, h: &[f64]) -> Vec<Jet> {
    let mut v = vec![Jet::zero(); p];
    v.extend(h.iter().map(|&x| Jet::constant(x)));
    v
}

struct Instance {
    p: usize,
    q: usize,
    index: usize,
    conn: AdaptedConnection,
    rng: ChaCha8Rng,
}

impl Instance {
    fn chart(&self) -> &FoliatedChart {
        self.conn.chart()
    }

    fn point(&mut self) -> Vec<f64> {
        let chart = self.conn.chart().clone();
        chart.sample_with(&mut self.rng)
    }

    fn bundle_point(&mut self) -> BundlePoint {
        let m = self.point();
        BundlePoint::random(m, self.p, self.q, &mut self.rng)
    }

    fn label(&self) -> String {
        format!("p={} q={} connection #{}", self.p, self.q, self.index)
    }
}

/// Worst residual and its description.
#[derive(Default)]
struct Worst {
    value: f64,
    what: String,
    samples: usize,
}

impl Worst {
    fn record(&mut self, v: f64, what: impl FnOnce() -> String) {
        self.samples += 1;
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > self.value || self.what.is_empty() {
            self.value = v.max(self.value);
            self.what = what();
        }
    }

    fn merge(&mut self, other: Worst) {
        self.samples += other.samples;
        if other.value > self.value || self.what.is_empty() {
            self.value = other.value.max(self.value);
            self.what = other.what;
        }
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

fn cartan(conn: &AdaptedConnection, spec: &CheckSpec) -> Result<CartanConn> {
    Ok(CartanConn::adapted(conn)?.with_mutation(spec.mutation))
}

fn degree_for(spec: &CheckSpec, i: usize) -> usize {
    let (lo, hi) = spec.degrees;
    lo + i % (hi - lo + 1)
}

fn run_instance(spec: &CheckSpec, inst: &mut Instance) -> Result<Worst> {
    let mut w = Worst::default();
    let (p, q) = (inst.p, inst.q);
    let n = p + q;
    let label = inst.label();
    let chart = inst.chart().clone();
    match spec.name.as_str() {
        "structure-equation" | "bianchi" | "normality" => {
            let cc = cartan(&inst.conn, spec)?;
            for _ in 0..spec.points {
                let u = inst.bundle_point();
                let c = cc.curvature_components(&u.coords())?;
                let v = match spec.name.as_str() {
                    "structure-equation" => c.structure_residual(),
                    "bianchi" => c.bianchi_residual(),
                    _ => c.normality_residual(p),
                };
                w.record(v, || format!("{label}, m = {}", fmt(&u.m)));
            }
        }
        "equ2-linear-response" => {
            let cc = cartan(&inst.conn, spec)?;
            let qf = q as f64;
            for _ in 0..spec.points {
                let m = inst.point();
                let u = BundlePoint::section(m.clone(), p, q).coords();
                let mut a = vec![0.0; n * n];
                for j in p..n {
                    for l in 0..n {
                        a[j * n + l] = inst.rng.gen_range(-0.5..0.5);
                    }
                }
                let cp = cc.clone().with_perturbation(a.clone())?;
                let t0 = cc.curvature_components(&u)?.trace(p);
                let t1 = cp.curvature_components(&u)?.trace(p);
                let mut err: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for j in p..n {
                    for l in 0..n {
                        let want = if l >= p {
                            (qf - 1.0) * a[j * n + l] + a[j * n + l] - a[l * n + j]
                        } else {
                            (qf + 1.0) * a[j * n + l]
                        };
                        err = err.max((t1[j * n + l] - t0[j * n + l] - want).abs());
                        scale = scale.max(want.abs());
                    }
                }
                w.record(err / scale.max(1e-12), || format!("{label}, m = {}", fmt(&m)));
            }
        }
        "link" => {
            let acc = cartan(&inst.conn, spec)?;
            let fcc = foliated_cartan(&induce_foliated(&inst.conn)?)?;
            for _ in 0..spec.points {
                let u = inst.bundle_point().coords();
                let xi: Vec<f64> = (0..acc.dim()).map(|_| inst.rng.gen_range(-1.0..1.0)).collect();
                let full = check_link(&acc, &fcc, &u, &xi)?;
                // grade -1 part alone: transverse chart components
                let lhs = acc.omega_at(&jets(&u), &jets(&xi))?.project();
                let (uf, xif) = crate::cartan::project_tangent(p, q, &u, &xi);
                let rhs = fcc.omega_at(&jets(&uf), &jets(&xif))?;
                let canonical = lhs
                    .v
                    .iter()
                    .zip(&rhs.v)
                    .fold(0.0f64, |m, (a, b)| m.max((a.value() - b.value()).abs()));
                w.record(full.max(canonical), || format!("{label}, m = {}", fmt(&u[..n])));
            }
        }
        "gonabla" => {
            let cc = cartan(&inst.conn, spec)?;
            let f = random_function(&chart, &mut inst.rng);
            let fh = lift_function(&f, &cc)?;
            for i in 0..spec.points {
                let r = degree_for(spec, i);
                let u = inst.bundle_point();
                let g = random_g0(p, q, &mut inst.rng);
                let a = g.a().clone();
                let ainv = a.inverse()?;
                let at_u = invariant_derivative(&fh, &cc, &u.jets(), r)?.swap_remove(0);
                let at_ug = invariant_derivative(&fh, &cc, &u.act(&g).jets(), r)?.swap_remove(0);
                let moved = at_u.act(&jets(ainv.data()), &jets(a.data()));
                let scale = 1.0 + at_u.max_abs();
                w.record(max_diff(&at_ug, &moved) / scale, || format!("{label}, r = {r}, m = {}", fmt(&u.m)));
            }
        }
        "goinv" => {
            let cc = cartan(&inst.conn, spec)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let sh = lift_symbol(&s, &cc)?;
                let u = inst.bundle_point();
                let g = random_g0(p, q, &mut inst.rng);
                let d = Mat::from_fn(q, q, |a, b| *g.a().get(p + a, p + b));
                let dinv = d.inverse()?;
                let div_u = crate::quant::divergence(&sh, &cc, &u.jets(), 1)?.project_transverse(p)?;
                let div_ug = crate::quant::divergence(&sh, &cc, &u.act(&g).jets(), 1)?.project_transverse(p)?;
                let moved = div_u.act(&jets(dinv.data()), &jets(d.data()));
                let scale = 1.0 + div_u.max_abs();
                w.record(max_diff(&div_ug, &moved) / scale, || format!("{label}, k = {k}, m = {}", fmt(&u.m)));
            }
        }
        "div1" | "div2" => {
            let cc = cartan(&inst.conn, spec)?;
            let tframe = Frame::transverse(&cc);
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let l = if spec.name == "div1" { 1 } else { 1 + (i / 3) % k.min(3) };
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let sh = lift_symbol(&s, &cc)?;
                let u = inst.bundle_point();
                let uj = u.jets();
                let h: Vec<f64> = (0..q).map(|_| inst.rng.gen_range(-1.0..1.0)).collect();
                let hf = Fundamental::covector(&cc, &h);
                let mut outer: Vec<&dyn FieldFamily> = vec![&hf];
                outer.extend(std::iter::repeat(&tframe as &dyn FieldFamily).take(l));
                let mut inner: Vec<&dyn FieldFamily> = std::iter::repeat(&tframe as &dyn FieldFamily).take(l).collect();
                inner.push(&hf);
                let a = contract_tree(&sh.lie_tree(&uj, &outer)?, n, k, p, l)?;
                let b = contract_tree(&sh.lie_tree(&uj, &inner)?, n, k, p, l)?;
                let lhs = a.sub(&b)?.project_transverse(p)?;
                let prev = crate::quant::divergence(&sh, &cc, &uj, l - 1)?;
                let factor = (l * (q + 2 * k - l)) as f64;
                let rhs = prev.contract(&covector(p, &h))?.scale(&Jet::constant(factor)).project_transverse(p)?;
                let scale = 1.0 + rhs.max_abs();
                w.record(max_diff(&lhs, &rhs) / scale, || format!("{label}, k = {k}, l = {l}, m = {}", fmt(&u.m)));
            }
        }
        "nablag1" => {
            let cc = cartan(&inst.conn, spec)?;
            let frame = Frame::full(&cc);
            let f = random_function(&chart, &mut inst.rng);
            let fh = lift_function(&f, &cc)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let u = inst.bundle_point();
                let uj = u.jets();
                let h: Vec<f64> = (0..q).map(|_| inst.rng.gen_range(-1.0..1.0)).collect();
                let hf = Fundamental::covector(&cc, &h);
                let mut outer: Vec<&dyn FieldFamily> = vec![&hf];
                outer.extend(std::iter::repeat(&frame as &dyn FieldFamily).take(k));
                let mut inner: Vec<&dyn FieldFamily> = std::iter::repeat(&frame as &dyn FieldFamily).take(k).collect();
                inner.push(&hf);
                let a = assemble_derivative(&fh.lie_tree(&uj, &outer)?, n, k, 1)?.swap_remove(0);
                let b = assemble_derivative(&fh.lie_tree(&uj, &inner)?, n, k, 1)?.swap_remove(0);
                let lower = invariant_derivative(&fh, &cc, &uj, k - 1)?.swap_remove(0);
                let hv = SymTensor::vector(covector(p, &h), Variance::Covariant);
                let rhs = lower.sym_product(&hv)?.scale(&Jet::constant(-((k * (k - 1)) as f64)));
                let lhs = a.sub(&b)?;
                let scale = 1.0 + rhs.max_abs().max(lhs.max_abs());
                w.record(max_diff(&lhs, &rhs) / scale, || format!("{label}, k = {k}, m = {}", fmt(&u.m)));
            }
        }
        "invalg" => {
            let cc = cartan(&inst.conn, spec)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let sh = lift_symbol(&s, &cc)?;
                let u = inst.bundle_point();
                let uj = u.jets();
                let mut alg = LieG::zero(p, q);
                for (a, b) in crate::jetgroup::block_pattern(p, q) {
                    alg.m0.set(a, b, inst.rng.gen_range(-1.0..1.0));
                }
                for j in p..n {
                    alg.xi[j] = inst.rng.gen_range(-1.0..1.0);
                }
                let fam = Fundamental::new(&cc, &alg);
                let lie = sh.lie_tree(&uj, &[&fam])?.swap_remove(0);
                let lie = SymTensor::from_components(n, k, Variance::Contravariant, lie)?;
                let rho = rho_derivative(&sh.tensor(&uj)?, &alg.m0)?;
                let sum = lie.add(&rho)?;
                w.record(sum.max_abs() / (1.0 + rho.max_abs()), || {
                    format!("{label}, k = {k}, m = {}", fmt(&u.m))
                });
            }
        }
        "prop-inv" => {
            let cc = cartan(&inst.conn, spec)?;
            let f = random_foliated_function(&chart, &mut inst.rng);
            let fh = lift_function(&f, &cc)?;
            for i in 0..spec.points {
                let r = degree_for(spec, i);
                let u = inst.bundle_point();
                let t = invariant_derivative(&fh, &cc, &u.jets(), r)?.swap_remove(0);
                let mut worst: f64 = 0.0;
                for (g, v) in t.indexed() {
                    if g.exponents()[..p].iter().any(|&e| e > 0) {
                        worst = worst.max(v.value().abs());
                    }
                }
                w.record(worst / (1.0 + t.max_abs()), || format!("{label}, r = {r}, m = {}", fmt(&u.m)));
            }
        }
        "remark-pairing" => {
            let cc = cartan(&inst.conn, spec)?;
            let f = random_foliated_function(&chart, &mut inst.rng);
            let fh = lift_function(&f, &cc)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let sh = lift_symbol(&s, &cc)?;
                let u = inst.bundle_point();
                let uj = u.jets();
                for l in 0..=k {
                    let d = crate::quant::divergence(&sh, &cc, &uj, l)?;
                    let g = invariant_derivative(&fh, &cc, &uj, k - l)?.swap_remove(0);
                    let full = d.pair(&g)?.value();
                    let proj = d.project_transverse(p)?.pair(&g.project_transverse(p)?)?.value();
                    w.record(rel(full, proj), || format!("{label}, k = {k}, l = {l}, m = {}", fmt(&u.m)));
                }
            }
        }
        "fiber-independence" => {
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let f = random_foliated_function(&chart, &mut inst.rng);
                let qz = Quantizer::new(cartan(&inst.conn, spec)?, s)?;
                let u = inst.bundle_point();
                let base = qz.apply(&f, &u.m)?;
                let moved = qz.apply_at(&f, &u.jets())?.value();
                w.record(rel(moved, base), || format!("{label}, k = {k}, m = {}", fmt(&u.m)));
            }
        }
        "principal-symbol" => {
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let qz = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?;
                let m = inst.point();
                let table = qz.at(&m)?.operator()?;
                let sv = s.eval_at(&m)?;
                let err = table
                    .top()
                    .iter()
                    .zip(sv.components())
                    .fold(0.0f64, |acc, (a, b)| acc.max(rel(*a, *b)));
                w.record(err, || format!("{label}, k = {k}, m = {}", fmt(&m)));
            }
        }
        "k0-multiplication" => {
            for _ in 0..spec.points {
                let s = random_symbol(&chart, 0, &mut inst.rng)?;
                let f = random_function(&chart, &mut inst.rng);
                let qz = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?;
                let m = inst.point();
                let got = qz.apply(&f, &m)?;
                let want = s.eval_at(&m)?.components()[0] * f.eval_at(&m)?;
                w.record((got - want).abs(), || format!("{label}, m = {}", fmt(&m)));
            }
        }
        "k1-derivation" => {
            for _ in 0..spec.points {
                let s = random_symbol(&chart, 1, &mut inst.rng)?;
                let f = random_function(&chart, &mut inst.rng);
                let qz = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?;
                let m = inst.point();
                let got = qz.apply(&f, &m)?;
                let sv = s.eval_at(&m)?;
                let h = 1e-5;
                let mut want = 0.0;
                for i in 0..n {
                    let mut a = m.clone();
                    let mut b = m.clone();
                    a[i] += h;
                    b[i] -= h;
                    let e = MultiIndex::from_tuple(n, &[i]);
                    want += sv.get(&e) * (f.eval_at(&a)? - f.eval_at(&b)?) / (2.0 * h);
                }
                w.record(rel(got, want), || format!("{label}, m = {}", fmt(&m)));
            }
        }
        "projective-invariance" => {
            let forms: Vec<OneForm> = (0..5)
                .map(|_| random_foliated_form(&chart, &mut inst.rng))
                .collect::<Result<_>>()?;
            let shifted: Vec<AdaptedConnection> = forms
                .iter()
                .map(|a| projective_shift(&inst.conn, a))
                .collect::<Result<_>>()?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let f = random_foliated_function(&chart, &mut inst.rng);
                let m = inst.point();
                let base = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?.apply(&f, &m)?;
                let other = &shifted[i % shifted.len()];
                let moved = Quantizer::new(cartan(other, spec)?, s)?.apply(&f, &m)?;
                w.record(rel(moved, base), || format!("{label}, form #{}, k = {k}, m = {}", i % 5, fmt(&m)));
            }
        }
        "naturality-pushforward" => {
            let phi = natural_diffeo(&chart, 0.3, 0.2)?;
            let pushed = inst.conn.pushforward(&phi)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let f = random_foliated_function(&chart, &mut inst.rng);
                let m = inst.point();
                let base = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?.apply(&f, &m)?;
                let qz = Quantizer::new(cartan(&pushed, spec)?, s.pushforward(&phi)?)?;
                let image = phi.forward(&m)?;
                let moved = qz.apply(&f.pushforward(&phi)?, &image)?;
                w.record(rel(moved, base), || format!("{label}, k = {k}, m = {}", fmt(&m)));
            }
        }
        "foliatedness-of-output" => {
            if p == 0 {
                return Ok(w);
            }
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let f = random_foliated_function(&chart, &mut inst.rng);
                let m = inst.point();
                let qz = Quantizer::new(cartan(&inst.conn, spec)?, s)?;
                let d = qz.x_derivative(&f, &m)?;
                let scale = 1.0 + qz.apply(&f, &m)?.abs();
                w.record(d / scale, || format!("{label}, k = {k}, m = {}", fmt(&m)));
            }
        }
        "commutation" => {
            let fconn = induce_foliated(&inst.conn)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let s = random_symbol(&chart, k, &mut inst.rng)?;
                let f = random_foliated_function(&chart, &mut inst.rng);
                let m = inst.point();
                let a = Quantizer::new(cartan(&inst.conn, spec)?, s.clone())?.apply(&f, &m)?;
                let b = Quantizer::foliated(&fconn, &reduce_symbol(&s)?)?.apply(&f.reduce()?, &m[p..])?;
                w.record(rel(a, b), || format!("{label}, k = {k}, m = {}", fmt(&m)));
            }
        }
        "p0-consistency" => {
            let fconn = induce_foliated(&inst.conn)?;
            let flat_chart = fconn.chart().clone();
            let adapted0 = fconn.as_connection().clone();
            let fol = FoliatedConnection::new(flat_chart.clone(), adapted0.field().clone())?;
            let acc = cartan(&adapted0, spec)?;
            let fcc = foliated_cartan(&fol)?;
            for i in 0..spec.points {
                let k = degree_for(spec, i);
                let y = flat_chart.sample_with(&mut inst.rng);
                let u = BundlePoint::random(y.clone(), 0, q, &mut inst.rng);
                let ma = acc.omega_matrix(&u.jets())?;
                let mf = fcc.omega_matrix(&u.jets())?;
                let mut err = ma
                    .iter()
                    .zip(&mf)
                    .fold(0.0f64, |m, (a, b)| m.max((a.value() - b.value()).abs()));
                let sa = random_symbol(&flat_chart, k, &mut inst.rng)?;
                let sf = SymbolField::new(flat_chart.clone(), k, ConnKind::Foliated, sa.field().clone())?;
                let f = random_foliated_function(&flat_chart, &mut inst.rng);
                let a = Quantizer::new(acc.clone(), sa)?.apply(&f, &y)?;
                let b = Quantizer::new(fcc.clone(), sf)?.apply(&f, &y)?;
                err = err.max(rel(a, b));
                w.record(err, || format!("{label}, k = {k}, y = {}", fmt(&y)));
            }
        }
        other => return Err(Error::UnknownSuite(other.to_string())),
    }
    Ok(w)
}

fn q1_rejection() -> Worst {
    let mut w = Worst::default();
    for p in 0..=2 {
        let rejected = matches!(FoliatedChart::cube(p, 1, 1.0), Err(Error::CodimensionOne { q: 1 }));
        w.record(if rejected { 0.0 } else { 1.0 }, || format!("p={p} q=1"));
    }
    w
}

pub fn run_suite(spec: &CheckSpec) -> Result<CheckReport> {
    if !SUITES.contains(&spec.name.as_str()) {
        return Err(Error::UnknownSuite(spec.name.clone()));
    }
    let worst = if spec.name == "q1-rejection" {
        q1_rejection()
    } else {
        if let Some(&(_, q)) = spec.dims.iter().find(|(_, q)| *q < 2) {
            return Err(Error::CodimensionOne { q });
        }
        let mut seeds = Vec::new();
        for (d, &(p, q)) in spec.dims.iter().enumerate() {
            for c in 0..spec.connections {
                let s = spec
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((d * 1000 + c) as u64);
                seeds.push((p, q, c, s));
            }
        }
        let results: Vec<Result<Worst>> = seeds
            .par_iter()
            .map(|&(p, q, c, s)| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let conn = random_connection(p, q, &mut rng)?;
                let mut inst = Instance {
                    p,
                    q,
                    index: c,
                    conn,
                    rng,
                };
                run_instance(spec, &mut inst)
            })
            .collect();
        let mut total = Worst::default();
        for r in results {
            total.merge(r?);
        }
        total
    };
    Ok(CheckReport {
        name: spec.name.clone(),
        passed: worst.value <= spec.tolerance,
        worst_residual: worst.value,
        tolerance: spec.tolerance,
        worst_instance: worst.what,
        samples: worst.samples,
    })
}

/// Runs every suite in registry order.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    SUITES
        .iter()
        .map(|name| run_suite(&CheckSpec::new(name, seed)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete_and_unique() {
        assert_eq!(SUITES.len(), 23);
        let mut s = SUITES.to_vec();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 23);
        assert!(CheckSpec::new("nope", 1).is_err());
    }

    #[test]
    fn random_connections_are_adapted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (p, q) in GRID {
            let c = random_connection(*p, *q, &mut rng).unwrap();
            assert!(crate::chart::validate_adapted(&c).unwrap().is_valid(1e-12));
        }
    }

    #[test]
    fn quick_normality() {
        let spec = CheckSpec::new("normality", 3).unwrap().scaled(1, 2);
        let r = run_suite(&spec).unwrap();
        assert!(r.passed, "{r:?}");
        let bad = run_suite(&spec.with_mutation(Mutation::FlipDeformationSign)).unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn q1_suite_passes() {
        assert!(run_suite(&CheckSpec::new("q1-rejection", 0).unwrap()).unwrap().passed);
    }

    #[test]
    fn cartan_suites_reject_codimension_one() {
        let mut spec = CheckSpec::new("normality", 0).unwrap();
        spec.dims = vec![(1, 1)];
        assert!(matches!(run_suite(&spec), Err(Error::CodimensionOne { q: 1 })));
    }
}
