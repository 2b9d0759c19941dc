//! Property tests for the algebraic and geometric invariants.

use foliquant::cartan::{BundlePoint, CartanConn};
use foliquant::chart::{curvature, induce_foliated, projective_shift, OneForm, Pushforward};
use foliquant::exprlang::{BinOp, Func, Node, ScalarFieldExpr};
use foliquant::jetgroup::{act, block_pattern, include_h, project_group, G2Element, HElement, Jet2Frame, LieG};
use foliquant::mat::Mat;
use foliquant::symtensor::{count, SymTensor, Variance};
use foliquant::taylor::{linear_solve, seed, Jet};
use foliquant::verify::{natural_diffeo, random_connection, random_foliated_form};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn tensor(dim: usize, degree: usize, variance: Variance, rng: &mut ChaCha8Rng) -> SymTensor<f64> {
    let comps = (0..count(dim, degree)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SymTensor::from_components(dim, degree, variance, comps).unwrap()
}

fn tensors_close(a: &SymTensor<f64>, b: &SymTensor<f64>, tol: f64) -> bool {
    let scale = 1.0 + a.max_abs().max(b.max_abs());
    a.components().iter().zip(b.components()).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sym_product_commutes_and_associates(dim in 1usize..=5, a in 0usize..=2, b in 0usize..=2, c in 0usize..=1, s in any::<u64>()) {
        let mut r = rng(s);
        let x = tensor(dim, a, Variance::Covariant, &mut r);
        let y = tensor(dim, b, Variance::Covariant, &mut r);
        let z = tensor(dim, c, Variance::Covariant, &mut r);
        let xy = x.sym_product(&y).unwrap();
        prop_assert!(tensors_close(&xy, &y.sym_product(&x).unwrap(), 1e-12));
        let left = xy.sym_product(&z).unwrap();
        let right = x.sym_product(&y.sym_product(&z).unwrap()).unwrap();
        prop_assert!(tensors_close(&left, &right, 1e-12));
    }

    #[test]
    fn contraction_is_directional_derivative(dim in 1usize..=4, k in 1usize..=4, s in any::<u64>()) {
        let mut r = rng(s);
        let t = tensor(dim, k, Variance::Contravariant, &mut r);
        let a: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let eta: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let moved: Vec<Jet> = a.iter().zip(&eta).map(|(x, e)| Jet::variable(*x, 0, *e).unwrap()).collect();
        let tj = t.map(|v| Jet::constant(*v));
        let derivative = tj.evaluate(&moved).coeff(1);
        let contracted = t.contract(&eta).unwrap().evaluate(&a);
        prop_assert!(rel_close(derivative, contracted, 1e-12), "{derivative} {contracted}");
    }

    #[test]
    fn projection_respects_products(p in 0usize..=2, q in 1usize..=3, a in 0usize..=2, b in 0usize..=2, s in any::<u64>()) {
        let mut r = rng(s);
        let x = tensor(q, a, Variance::Contravariant, &mut r).embed_transverse(p);
        let y = tensor(q, b, Variance::Contravariant, &mut r).embed_transverse(p);
        let lhs = x.sym_product(&y).unwrap().project_transverse(p).unwrap();
        let rhs = x.project_transverse(p).unwrap().sym_product(&y.project_transverse(p).unwrap()).unwrap();
        prop_assert!(tensors_close(&lhs, &rhs, 1e-12));
    }
}

fn node_strategy(n: usize) -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (0u32..100).prop_map(|v| Node::Num(v as f64 / 8.0)),
        (0..n).prop_map(Node::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (inner.clone(), inner.clone(), prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)])
                .prop_map(|(a, b, op)| Node::Bin(op, Box::new(a), Box::new(b))),
            (inner.clone(), 0i32..4).prop_map(|(a, e)| Node::Pow(Box::new(a), e)),
            (inner, prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)])
                .prop_map(|(a, f)| Node::Call(f, Box::new(a))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_parse_is_a_fixed_point(node in node_strategy(3)) {
        let e = ScalarFieldExpr::from_node(node, 1, 2);
        let printed = e.to_string();
        let reparsed = ScalarFieldExpr::parse(&printed, 1, 2).unwrap();
        prop_assert_eq!(reparsed.to_string(), printed.clone());
        let again = ScalarFieldExpr::parse(&reparsed.to_string(), 1, 2).unwrap();
        prop_assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn jet_evaluation_matches_finite_differences(node in node_strategy(3), s in any::<u64>()) {
        let e = ScalarFieldExpr::from_node(node, 1, 2);
        let mut r = rng(s);
        let x: Vec<f64> = (0..3).map(|_| r.gen_range(-0.8..0.8)).collect();
        let i = r.gen_range(0..3);
        let mut dir = vec![0.0; 3];
        dir[i] = 1.0;
        let jets = seed(&x, &[dir], 1).unwrap();
        let ad = e.evaluate(&jets).unwrap().coeff(1);
        let h = 1e-6;
        let (mut a, mut b) = (x.clone(), x.clone());
        a[i] += h;
        b[i] -= h;
        let (fa, fb) = (e.evaluate(&a).unwrap(), e.evaluate(&b).unwrap());
        prop_assume!(fa.abs().max(fb.abs()) < 1e12);
        let fd = (fa - fb) / (2.0 * h);
        // cancellation in the difference quotient grows with |f| / h
        let roundoff = 1e-14 * fa.abs().max(fb.abs()) / h;
        prop_assert!((ad - fd).abs() <= 1e-6 * (1.0 + ad.abs()) + roundoff, "{ad} {fd} for {e}");
    }
}

fn smooth(u: &[Jet]) -> Jet {
    let s = u[0].clone() * u[1].clone();
    let e = foliquant::taylor::Scalar::exp(&u[1]);
    let c = foliquant::taylor::Scalar::sin(&s);
    c + e * u[0].clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_jets_match_finite_differences(x in -1.0f64..1.0, y in -1.0f64..1.0, dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
        let pt = [x, y];
        let dir = vec![dx, dy];
        let u = seed(&pt, &[dir.clone()], 2).unwrap();
        let v = smooth(&u);
        let first = v.coeff(1);
        let second = v.coeff(3);
        let real = |t: f64| smooth(&[Jet::constant(x + t * dx), Jet::constant(y + t * dy)]).value();
        let h = 1e-4;
        let fd1 = (real(h) - real(-h)) / (2.0 * h);
        let fd2 = (real(h) - 2.0 * real(0.0) + real(-h)) / (h * h);
        prop_assert!(rel_close(first, fd1, 1e-5));
        prop_assert!(rel_close(second, fd2, 1e-5), "{second} {fd2}");
    }

    #[test]
    fn truncation_is_consistent(x in -1.0f64..1.0, y in -1.0f64..1.0, order in 2usize..=5) {
        let dir = vec![0.7, -0.3];
        let hi = smooth(&seed(&[x, y], &[dir.clone()], order).unwrap()).without(order - 1);
        let lo = smooth(&seed(&[x, y], &[dir], order - 1).unwrap());
        prop_assert_eq!(hi.coeffs(), lo.coeffs());
    }

    #[test]
    fn linear_solve_is_exact_in_every_coefficient(n in 1usize..=5, s in any::<u64>()) {
        let mut r = rng(s);
        let t = seed(&[0.0], &[vec![1.0], vec![1.0]], 1).unwrap().remove(0);
        let entry = |r: &mut ChaCha8Rng, diag: bool| {
            let c = if diag { 3.0 } else { 0.0 } + r.gen_range(-1.0..1.0);
            Jet::constant(c) + Jet::constant(r.gen_range(-1.0..1.0)) * t.clone()
                + Jet::constant(r.gen_range(-1.0..1.0)) * t.clone() * t.clone()
        };
        let a: Vec<Jet> = (0..n * n).map(|i| entry(&mut r, i % (n + 1) == 0)).collect();
        let b: Vec<Jet> = (0..n).map(|_| entry(&mut r, false)).collect();
        let x = linear_solve(&a, &b).unwrap();
        for i in 0..n {
            let mut lhs = Jet::zero();
            for j in 0..n {
                lhs += &(&a[i * n + j] * &x[j]);
            }
            let res = lhs - b[i].clone();
            prop_assert!(res.max_abs_coeff() < 1e-12);
        }
    }
}

fn random_h(p: usize, q: usize, r: &mut ChaCha8Rng) -> HElement<f64> {
    BundlePoint::random(vec![0.0; p + q], p, q, r).h
}

fn random_g2(n: usize, r: &mut ChaCha8Rng) -> G2Element {
    let noise: Vec<f64> = (0..n * n).map(|_| r.gen_range(-0.3..0.3)).collect();
    let lin = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + noise[i * n + j]);
    let mut quad = vec![0.0; n * n * n];
    for i in 0..n {
        for k in 0..n {
            for l in k..n {
                let v = r.gen_range(-1.0..1.0);
                quad[i * n * n + k * n + l] = v;
                quad[i * n * n + l * n + k] = v;
            }
        }
    }
    G2Element { lin, quad }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frame_action_is_a_right_action(n in 1usize..=4, s in any::<u64>()) {
        let mut r = rng(s);
        let base = random_g2(n, &mut r);
        let frame = Jet2Frame { base: vec![0.5; n], lin: base.lin.clone(), quad: base.quad.clone() };
        let g = random_g2(n, &mut r);
        let h = random_g2(n, &mut r);
        let lhs = act(&frame, &g.compose(&h));
        let rhs = act(&act(&frame, &g), &h);
        for (a, b) in lhs.quad.iter().zip(&rhs.quad) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!((lhs.lin.get(i, j) - rhs.lin.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn included_elements_preserve_the_foliation(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        prop_assert!(include_h(&random_h(p, q, &mut r)).preserves_foliation(p, 1e-12));
    }

    #[test]
    fn projection_is_a_homomorphism(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let a = random_h(p, q, &mut r);
        let b = random_h(p, q, &mut r);
        let lhs = project_group(&a.mul(&b));
        let rhs = project_group(&a).mul(&project_group(&b));
        for (x, y) in lhs.coords().iter().zip(rhs.coords()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bracket_respects_the_grading(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let n = p + q;
        let minus = |r: &mut ChaCha8Rng| {
            let mut g = LieG::zero(p, q);
            for i in 0..n { g.v[i] = r.gen_range(-1.0..1.0); }
            g
        };
        let zero = |r: &mut ChaCha8Rng| {
            let mut g = LieG::zero(p, q);
            for (i, j) in block_pattern(p, q) { g.m0.set(i, j, r.gen_range(-1.0..1.0)); }
            g
        };
        let plus = |r: &mut ChaCha8Rng| {
            let mut g = LieG::zero(p, q);
            for j in p..n { g.xi[j] = r.gen_range(-1.0..1.0); }
            g
        };
        let grade = |g: &LieG<f64>| -> (f64, f64, f64) {
            let m0 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max(g.m0.get(i, j).abs()));
            (
                g.v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
                m0,
                g.xi.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            )
        };
        let (a, b) = (minus(&mut r), minus(&mut r));
        prop_assert!(a.commutator(&b).max_abs() < 1e-12);
        let (v, m, x) = grade(&zero(&mut r).commutator(&minus(&mut r)));
        prop_assert!(m < 1e-12 && x < 1e-12 && v >= 0.0);
        let (v, _, x) = grade(&plus(&mut r).commutator(&minus(&mut r)));
        prop_assert!(v < 1e-12 && x < 1e-12);
        let (a, b) = (plus(&mut r), plus(&mut r));
        prop_assert!(a.commutator(&b).max_abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shift_commutes_with_induction(p in 1usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, q, &mut r).unwrap();
        let alpha = random_foliated_form(conn.chart(), &mut r).unwrap();
        let a = induce_foliated(&projective_shift(&conn, &alpha).unwrap()).unwrap();
        let b = induce_foliated(&conn).unwrap().shift(&alpha.transverse()).unwrap();
        for y in a.chart().sample_points(5) {
            let ga = a.as_connection().christoffel_at(&y).unwrap();
            let gb = b.as_connection().christoffel_at(&y).unwrap();
            for (x, z) in ga.iter().zip(&gb) {
                prop_assert!((x - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_shift_keeps_curvature(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, q, &mut r).unwrap();
        let same = projective_shift(&conn, &OneForm::zero(conn.chart().clone())).unwrap();
        for m in conn.chart().sample_points(3) {
            let mj: Vec<Jet> = m.iter().map(|&v| Jet::constant(v)).collect();
            let a = curvature(&conn, &mj).unwrap();
            let b = curvature(&same, &mj).unwrap();
            for (x, z) in a.iter().zip(&b) {
                prop_assert!((x.value() - z.value()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pushforward_respects_composition(p in 1usize..=2, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, 2, &mut r).unwrap();
        let first = natural_diffeo(conn.chart(), 0.2, 0.1).unwrap();
        let second = natural_diffeo(first.target(), -0.1, 0.15).unwrap();
        let composed = second.after(&first).unwrap();
        let stepwise = conn.pushforward(&first).unwrap().pushforward(&second).unwrap();
        let direct = conn.pushforward(&composed).unwrap();
        for m in conn.chart().sample_points(4) {
            let y = composed.forward(&m).unwrap();
            let a = stepwise.christoffel_at(&y).unwrap();
            let b = direct.christoffel_at(&y).unwrap();
            for (x, z) in a.iter().zip(&b) {
                prop_assert!((x - z).abs() < 1e-9, "{x} {z}");
            }
        }
    }

    #[test]
    fn omega_is_a_bijection(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, q, &mut r).unwrap();
        let cc = CartanConn::adapted(&conn).unwrap();
        let m = conn.chart().sample_with(&mut r);
        let u = BundlePoint::random(m, p, q, &mut r).jets();
        let coords: Vec<Jet> = (0..cc.dim()).map(|_| Jet::constant(r.gen_range(-1.0..1.0))).collect();
        let a = LieG::from_coords(p, q, &coords);
        let xi = cc.omega_inverse(&u, &a).unwrap();
        let back = cc.omega_at(&u, &xi).unwrap();
        prop_assert!(back.sub(&a).max_abs() < 1e-10);
    }

    #[test]
    fn tangential_directions_lie_in_the_projected_kernel(p in 1usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, q, &mut r).unwrap();
        let cc = CartanConn::adapted(&conn).unwrap();
        let n = p + q;
        let m = conn.chart().sample_with(&mut r);
        let u = BundlePoint::random(m, p, q, &mut r).jets();
        let mut kernel: Vec<usize> = (0..p).collect();
        for (slot, (i, _)) in block_pattern(p, q).into_iter().enumerate() {
            if i < p {
                kernel.push(n + slot);
            }
        }
        for c in kernel {
            let mut e = vec![Jet::zero(); cc.dim()];
            e[c] = Jet::constant(1.0);
            let w = cc.omega_at(&u, &e).unwrap().project();
            prop_assert!(w.max_abs() < 1e-12, "direction {c}: {}", w.max_abs());
        }
    }

    #[test]
    fn shifted_connections_stay_normal(p in 0usize..=2, q in 2usize..=3, s in any::<u64>()) {
        let mut r = rng(s);
        let conn = random_connection(p, q, &mut r).unwrap();
        let alpha = random_foliated_form(conn.chart(), &mut r).unwrap();
        let shifted = projective_shift(&conn, &alpha).unwrap();
        let m = conn.chart().sample_with(&mut r);
        let u = BundlePoint::random(m, p, q, &mut r).coords();
        prop_assert!(CartanConn::adapted(&conn).unwrap().check_normal(&u).unwrap().worst() < 1e-9);
        prop_assert!(CartanConn::adapted(&shifted).unwrap().check_normal(&u).unwrap().worst() < 1e-9);
    }
}
