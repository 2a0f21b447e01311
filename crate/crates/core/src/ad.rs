//! Forward-mode automatic differentiation with a fixed number of seed
//! directions.
//!
//! Residual code is written once, generic over [`Scalar`], and evaluated
//! either with plain `f64` (Newton residuals) or with [`Dual<N>`] to pull out
//! exact Jacobian blocks. A block is obtained by seeding the variables of
//! interest, evaluating, and reading the derivative slots; every other input is
//! lifted as a constant.

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of seed directions used throughout the crate. Every Jacobian block
/// we need (local state, element displacements, material parameters) has at
/// most six columns.
pub const SEEDS: usize = 6;

/// Arithmetic needed by the residual kernels.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// `self` raised to a constant power.
    fn powf(self, e: f64) -> Self;
    /// `self` raised to a power that may itself carry derivatives.
    fn pow(self, e: Self) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::cst(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::cst(1.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn pow(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

/// A value together with `N` directional derivatives.
#[derive(Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    #[inline]
    pub const fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// A variable whose derivative is carried in slot `slot`.
    #[inline]
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; N];
        d[slot] = 1.0;
        Self { v, d }
    }

    /// Applies `f(v)` with derivative `df = f'(v)` by the chain rule.
    #[inline]
    fn chain(self, fv: f64, df: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= df;
        }
        Self { v: fv, d }
    }
}

impl<const N: usize> fmt::Debug for Dual<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {:?}ε", self.v, self.d)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Self { v: self.v * rhs.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * rhs.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for x in &mut self.d {
            *x = -*x;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for x in &mut self.d {
            *x *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize> Add<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn add(self, rhs: Dual<N>) -> Dual<N> {
        rhs + self
    }
}

impl<const N: usize> Sub<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn sub(self, rhs: Dual<N>) -> Dual<N> {
        -rhs + self
    }
}

impl<const N: usize> Mul<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn mul(self, rhs: Dual<N>) -> Dual<N> {
        rhs * self
    }
}

impl<const N: usize> Div<Dual<N>> for f64 {
    type Output = Dual<N>;
    #[inline]
    fn div(self, rhs: Dual<N>) -> Dual<N> {
        Dual::constant(self) / rhs
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> DivAssign for Dual<N> {
    #[inline]
    fn div_assign(&mut self, rhs: Self) {
        *self = *self / rhs;
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        if e == 0.0 {
            return Self::constant(1.0);
        }
        let p = self.v.powf(e);
        self.chain(p, e * self.v.powf(e - 1.0))
    }
    #[inline]
    fn pow(self, e: Self) -> Self {
        // d(x^e) = e x^(e-1) dx + x^e ln(x) de; the ln term only when e varies.
        let p = self.v.powf(e.v);
        let dx = if e.v == 0.0 { 0.0 } else { e.v * self.v.powf(e.v - 1.0) };
        // at a zero base the exponent derivative tends to zero (for e > 0)
        let de = if p == 0.0 || e.d.iter().all(|&x| x == 0.0) { 0.0 } else { p * self.v.ln() };
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = dx * self.d[i] + de * e.d[i];
        }
        Self { v: p, d }
    }
}

/// Lifts `values` to duals, seeding the entries listed in `which` in
/// successive derivative slots. Unlisted entries are constants.
///
/// Panics if `which` has more than `N` entries or an index is out of range.
pub fn seed<const N: usize>(values: &[f64], which: &[usize]) -> Vec<Dual<N>> {
    assert!(which.len() <= N, "more seeded variables than derivative slots");
    let mut out: Vec<Dual<N>> = values.iter().map(|&v| Dual::constant(v)).collect();
    for (slot, &i) in which.iter().enumerate() {
        out[i] = Dual::variable(values[i], slot);
    }
    out
}

/// Seeds every entry of a fixed-size array.
#[inline]
pub fn seed_all<const N: usize>(values: &[f64; N]) -> [Dual<N>; N] {
    std::array::from_fn(|i| Dual::variable(values[i], i))
}

/// Lifts a fixed-size array as constants.
#[inline]
pub fn lift<T: Scalar, const M: usize>(values: &[f64; M]) -> [T; M] {
    values.map(T::cst)
}

/// Dense Jacobian of `f` at `x` (rows = outputs, columns = inputs), in
/// row-major `Vec<Vec<f64>>`. Inputs are processed in chunks of `N` seeds.
pub fn jacobian<const N: usize, F>(f: F, x: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(&[Dual<N>]) -> Vec<Dual<N>>,
{
    let mut jac: Vec<Vec<f64>> = Vec::new();
    let mut start = 0;
    while start < x.len() || (x.is_empty() && jac.is_empty()) {
        let end = (start + N).min(x.len());
        let which: Vec<usize> = (start..end).collect();
        let out = f(&seed::<N>(x, &which));
        if jac.is_empty() {
            jac = vec![vec![0.0; x.len()]; out.len()];
        }
        for (row, o) in jac.iter_mut().zip(&out) {
            for (slot, col) in (start..end).enumerate() {
                row[col] = o.d[slot];
            }
        }
        if x.is_empty() {
            break;
        }
        start = end;
    }
    jac
}
