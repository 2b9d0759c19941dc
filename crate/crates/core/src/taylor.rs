//! Hyper-dual jet numbers and nested Lie derivatives.
//!
//! A [`Jet`] with `L` levels is an element of `R[e_0, .., e_{L-1}] / (e_i^2)`.
//! Nesting one univariate dual number per level is isomorphic to this ring,
//! so a single runtime type covers every nesting depth. Coefficients are
//! indexed by subsets of levels encoded as bitmasks.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Maximum number of perturbation levels a jet may carry.
pub const CAPACITY: usize = 6;

/// Scalar ring used by expression evaluation and the geometric pipeline.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn standard(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    /// Exact zero, including every perturbation coefficient.
    fn is_zero(&self) -> bool;

    fn powi(&self, n: i32) -> Self {
        let mut base = self.clone();
        let mut e = n.unsigned_abs();
        let mut acc = Self::from_f64(1.0);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        if n < 0 {
            Self::from_f64(1.0) / acc
        } else {
            acc
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn standard(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
}

#[derive(Clone, PartialEq)]
pub struct Jet {
    levels: usize,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.levels == 0 {
            write!(f, "Jet({})", self.c[0])
        } else {
            write!(f, "Jet[{}]{:?}", self.levels, self.c)
        }
    }
}

impl Default for Jet {
    fn default() -> Self {
        Jet::constant(0.0)
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { levels: 0, c: vec![v] }
    }

    pub fn zero() -> Self {
        Jet::constant(0.0)
    }

    /// Builds a jet from its full coefficient vector (length `2^levels`).
    pub fn from_coeffs(levels: usize, c: Vec<f64>) -> Self {
        assert_eq!(c.len(), 1 << levels, "coefficient vector length");
        Jet { levels, c }
    }

    /// `value + slope * e_level`.
    pub fn variable(value: f64, level: usize, slope: f64) -> Result<Self> {
        if level >= CAPACITY {
            return Err(Error::CapacityExceeded {
                requested: level + 1,
                capacity: CAPACITY,
            });
        }
        let mut c = vec![0.0; 1 << (level + 1)];
        c[0] = value;
        c[1 << level] = slope;
        Ok(Jet { levels: level + 1, c })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Coefficient of the monomial `prod_{i in mask} e_i`.
    pub fn coeff(&self, mask: usize) -> f64 {
        self.c.get(mask).copied().unwrap_or(0.0)
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Adds `slope * e_level` to `self`; the level must be above the ones in use.
    pub fn perturbed(&self, level: usize, slope: &Jet) -> Result<Jet> {
        if level >= CAPACITY {
            return Err(Error::CapacityExceeded {
                requested: level + 1,
                capacity: CAPACITY,
            });
        }
        debug_assert!(self.levels <= level && slope.levels <= level);
        let mut c = vec![0.0; 1 << (level + 1)];
        c[..self.c.len()].copy_from_slice(&self.c);
        let off = 1 << level;
        c[off..off + slope.c.len()].copy_from_slice(&slope.c);
        Ok(Jet { levels: level + 1, c })
    }

    /// Coefficient of `e_level` as a jet in the remaining levels.
    pub fn derivative(&self, level: usize) -> Jet {
        if level >= self.levels {
            return Jet::zero();
        }
        let bit = 1 << level;
        let low = bit - 1;
        let mut c = vec![0.0; 1 << (self.levels - 1)];
        for (i, v) in self.c.iter().enumerate() {
            if i & bit != 0 {
                let j = (i & low) | ((i >> 1) & !low);
                c[j] = *v;
            }
        }
        Jet { levels: self.levels - 1, c }.trimmed()
    }

    /// Drops `e_level` (sets it to zero), keeping the other levels.
    pub fn without(&self, level: usize) -> Jet {
        if level >= self.levels {
            return self.clone();
        }
        let bit = 1 << level;
        let low = bit - 1;
        let mut c = vec![0.0; 1 << (self.levels - 1)];
        for (i, v) in self.c.iter().enumerate() {
            if i & bit == 0 {
                let j = (i & low) | ((i >> 1) & !low);
                c[j] = *v;
            }
        }
        Jet { levels: self.levels - 1, c }.trimmed()
    }

    /// Removes trailing levels whose coefficients are all zero.
    fn trimmed(mut self) -> Jet {
        while self.levels > 0 {
            let half = 1 << (self.levels - 1);
            if self.c[half..].iter().all(|v| *v == 0.0) {
                self.c.truncate(half);
                self.levels -= 1;
            } else {
                break;
            }
        }
        self
    }

    fn scale(&self, s: f64) -> Jet {
        Jet {
            levels: self.levels,
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let levels = self.levels.max(other.levels);
        let n = 1 << levels;
        let c = (0..n)
            .map(|i| f(self.coeff(i), other.coeff(i)))
            .collect();
        Jet { levels, c }
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        if self.levels == 0 {
            return other.scale(self.c[0]);
        }
        if other.levels == 0 {
            return self.scale(other.c[0]);
        }
        let levels = self.levels.max(other.levels);
        let n = 1usize << levels;
        let (a, b) = (&self.c, &other.c);
        let mut c = vec![0.0; n];
        for (s, out) in c.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut t = s;
            loop {
                let u = s ^ t;
                if t < a.len() && u < b.len() {
                    acc += a[t] * b[u];
                }
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            *out = acc;
        }
        Jet { levels, c }
    }

    /// Applies a function given its derivatives at the standard part:
    /// `f(a + n) = sum_j f^(j)(a) n^j / j!`, exact since `n^(L+1) = 0`.
    pub fn compose(&self, derivs: impl Fn(usize) -> f64) -> Jet {
        let mut out = Jet::constant(derivs(0));
        if self.levels == 0 {
            return out;
        }
        let mut nil = self.clone();
        nil.c[0] = 0.0;
        let mut power = Jet::constant(1.0);
        let mut fact = 1.0;
        for j in 1..=self.levels {
            power = power.mul_jet(&nil);
            fact *= j as f64;
            out = &out + &power.scale(derivs(j) / fact);
        }
        out
    }

    pub fn recip(&self) -> Result<Jet> {
        let a = self.c[0];
        if a == 0.0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.compose(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(j) / a.powi(j as i32 + 1)
        }))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|v| v as f64).product()
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    fn standard(&self) -> f64 {
        self.c[0]
    }
    fn sin(&self) -> Self {
        let a = self.c[0];
        self.compose(|j| match j % 4 {
            0 => a.sin(),
            1 => a.cos(),
            2 => -a.sin(),
            _ => -a.cos(),
        })
    }
    fn cos(&self) -> Self {
        let a = self.c[0];
        self.compose(|j| match j % 4 {
            0 => a.cos(),
            1 => -a.sin(),
            2 => -a.cos(),
            _ => a.sin(),
        })
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(|_| e)
    }
    fn is_zero(&self) -> bool {
        self.c.iter().all(|v| *v == 0.0)
    }
}

impl Add<&Jet> for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.zip(rhs, |a, b| a + b)
    }
}
impl Sub<&Jet> for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.zip(rhs, |a, b| a - b)
    }
}
impl Mul<&Jet> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.mul_jet(rhs)
    }
}
/// Panics on a zero standard part; use [`Jet::recip`] for a checked division.
impl Div<&Jet> for &Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        if rhs.levels == 0 {
            return self.scale(1.0 / rhs.c[0]);
        }
        self.mul_jet(&rhs.recip().expect("jet division by zero"))
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet { (&self).$m(&rhs) }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet { (&self).$m(rhs) }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet { self.$m(&rhs) }
        }
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet { (&self).$m(&Jet::constant(rhs)) }
        }
        impl $tr<f64> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet { self.$m(&Jet::constant(rhs)) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul, Div div);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        if rhs.levels <= self.levels {
            for (a, b) in self.c.iter_mut().zip(&rhs.c) {
                *a += b;
            }
        } else {
            *self = &*self + rhs;
        }
    }
}
impl AddAssign<Jet> for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self += &rhs;
    }
}
impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        *self = &*self - rhs;
    }
}
impl MulAssign<&Jet> for Jet {
    fn mul_assign(&mut self, rhs: &Jet) {
        *self = &*self * rhs;
    }
}

/// Seeds `point` along `directions`, each direction repeated over `order`
/// levels so that mixed derivatives up to `order` per direction are exact.
pub fn seed(point: &[f64], directions: &[Vec<f64>], order: usize) -> Result<Vec<Jet>> {
    let levels = directions.len() * order;
    if levels > CAPACITY {
        return Err(Error::CapacityExceeded {
            requested: levels,
            capacity: CAPACITY,
        });
    }
    for d in directions {
        if d.len() != point.len() {
            return Err(Error::PointDimension {
                expected: point.len(),
                found: d.len(),
            });
        }
    }
    Ok(point
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut c = vec![0.0; 1 << levels];
            c[0] = x;
            for (d, dir) in directions.iter().enumerate() {
                for r in 0..order {
                    c[1 << (d * order + r)] = dir[i];
                }
            }
            Jet { levels, c }.trimmed()
        })
        .collect())
}

/// Number of levels in use across a slice of jets.
pub fn depth(xs: &[Jet]) -> usize {
    xs.iter().map(Jet::levels).max().unwrap_or(0)
}

/// LU factorization of a square jet matrix with partial pivoting on
/// standard parts.
pub struct JetLu {
    n: usize,
    lu: Vec<Jet>,
    perm: Vec<usize>,
}

impl JetLu {
    pub fn new(a: &[Jet], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.value().abs())).max(1.0);
        for k in 0..n {
            let (piv, best) = (k..n)
                .map(|r| (r, lu[r * n + k].value().abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= 1e-13 * scale {
                return Err(Error::Singular { pivot: best });
            }
            if piv != k {
                for c in 0..n {
                    lu.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
            }
            let inv = lu[k * n + k].recip()?;
            for r in k + 1..n {
                if lu[r * n + k].max_abs_coeff() == 0.0 {
                    continue;
                }
                let f = &lu[r * n + k] * &inv;
                for c in k + 1..n {
                    if lu[k * n + c].max_abs_coeff() != 0.0 {
                        let t = &f * &lu[k * n + c];
                        lu[r * n + c] -= &t;
                    }
                }
                lu[r * n + k] = f;
            }
        }
        Ok(JetLu { n, lu, perm })
    }

    pub fn solve(&self, b: &[Jet]) -> Vec<Jet> {
        let n = self.n;
        let mut x: Vec<Jet> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for r in 0..n {
            for c in 0..r {
                if self.lu[r * n + c].max_abs_coeff() != 0.0 {
                    let t = &self.lu[r * n + c] * &x[c];
                    x[r] -= &t;
                }
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                if self.lu[r * n + c].max_abs_coeff() != 0.0 {
                    let t = &self.lu[r * n + c] * &x[c];
                    x[r] -= &t;
                }
            }
            x[r] = &x[r] / &self.lu[r * n + r];
        }
        x
    }
}

/// Solves `A x = b` for a row-major square jet matrix.
pub fn linear_solve(a: &[Jet], b: &[Jet]) -> Result<Vec<Jet>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "matrix has {} entries, rhs has {}",
            a.len(),
            n
        )));
    }
    Ok(JetLu::new(a, n)?.solve(b))
}

/// A function on coordinate space with vector values.
pub trait MultiFn: Sync {
    fn eval(&self, u: &[Jet]) -> Result<Vec<Jet>>;
}

impl<F> MultiFn for F
where
    F: Fn(&[Jet]) -> Result<Vec<Jet>> + Sync,
{
    fn eval(&self, u: &[Jet]) -> Result<Vec<Jet>> {
        self(u)
    }
}

/// A family of vector fields sharing work at each point.
pub trait FieldFamily: Sync {
    fn count(&self) -> usize;
    fn eval_all(&self, u: &[Jet]) -> Result<Vec<Vec<Jet>>>;
}

/// A single vector field given as a closure.
pub struct SingleField<F>(pub F);

impl<F> FieldFamily for SingleField<F>
where
    F: Fn(&[Jet]) -> Result<Vec<Jet>> + Sync,
{
    fn count(&self) -> usize {
        1
    }
    fn eval_all(&self, u: &[Jet]) -> Result<Vec<Vec<Jet>>> {
        Ok(vec![(self.0)(u)?])
    }
}

/// Lie derivatives `L_{V_{i_0}} ∘ … ∘ L_{V_{i_{r-1}}} f (u)` for every tuple
/// with `V_{i_d}` drawn from `families[d]`. Entries are ordered with the
/// first family's index most significant; each entry is `f`'s value vector.
pub fn lie_tree(
    f: &dyn MultiFn,
    u: &[Jet],
    families: &[&dyn FieldFamily],
) -> Result<Vec<Vec<Jet>>> {
    let Some((first, rest)) = families.split_first() else {
        return Ok(vec![f.eval(u)?]);
    };
    let level = depth(u);
    if level + families.len() > CAPACITY {
        return Err(Error::CapacityExceeded {
            requested: level + families.len(),
            capacity: CAPACITY,
        });
    }
    let dirs = first.eval_all(u)?;
    let mut out = Vec::new();
    for dir in &dirs {
        let shifted: Vec<Jet> = u
            .iter()
            .zip(dir)
            .map(|(x, d)| x.perturbed(level, d))
            .collect::<Result<_>>()?;
        for vals in lie_tree(f, &shifted, rest)? {
            out.push(vals.iter().map(|v| v.derivative(level)).collect());
        }
    }
    Ok(out)
}

/// `L_{V_1} ∘ … ∘ L_{V_k} f` at a real point for scalar `f`.
pub fn nested_derivative<F>(
    f: F,
    point: &[f64],
    fields: &[&dyn FieldFamily],
) -> Result<f64>
where
    F: Fn(&[Jet]) -> Result<Jet> + Sync,
{
    for fam in fields {
        if fam.count() != 1 {
            return Err(Error::Shape("nested_derivative takes single fields".into()));
        }
    }
    let u: Vec<Jet> = point.iter().map(|&x| Jet::constant(x)).collect();
    let g = |v: &[Jet]| f(v).map(|s| vec![s]);
    let vals = lie_tree(&g, &u, fields)?;
    Ok(vals[0][0].value())
}
