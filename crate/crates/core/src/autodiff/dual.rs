//! Forward-mode dual numbers.
//!
//! `Dual<T>` carries a value and one tangent component. Nesting gives
//! `Dual2 = Dual<Dual<f64>>`, whose four real components are
//! (value, d1, d2, d1d2): a directional derivative of an expression that
//! itself contains a directional derivative.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Numeric type the generic kernels (networks, ODE right-hand sides) are
/// written against. Implemented by `f64` and by `Dual<T>` for any `T: Scalar`.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
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
    + 'static
{
    fn from_f64(v: f64) -> Self;
    /// Innermost real value.
    fn real(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// True when every component is finite.
    fn is_finite(&self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn sigmoid(self) -> Self {
        ((-self).exp() + 1.0).recip()
    }
    fn silu(self) -> Self {
        self * self.sigmoid()
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn real(&self) -> f64 {
        *self
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
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
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
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value plus one tangent component.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual<T = f64> {
    pub value: T,
    pub deriv: T,
}

/// Second-order nested dual: components (value, d1, d2, d1d2).
pub type Dual2 = Dual<Dual<f64>>;

impl<T: Scalar> Dual<T> {
    pub fn new(value: T, deriv: T) -> Self {
        Self { value, deriv }
    }

    pub fn constant(value: T) -> Self {
        Self { value, deriv: T::zero() }
    }

    /// Chain rule for a unary function with value `fv` and slope `dfv`.
    #[inline]
    fn chain(self, fv: T, dfv: T) -> Self {
        Self { value: fv, deriv: self.deriv * dfv }
    }
}

impl Dual2 {
    pub fn from_parts(value: f64, d1: f64, d2: f64, d12: f64) -> Self {
        Dual { value: Dual::new(value, d2), deriv: Dual::new(d1, d12) }
    }

    /// Tangent along the outer direction.
    pub fn d1(&self) -> f64 {
        self.deriv.value
    }

    /// Tangent along the inner direction.
    pub fn d2(&self) -> f64 {
        self.value.deriv
    }

    /// Mixed second-order component.
    pub fn d12(&self) -> f64 {
        self.deriv.deriv
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self { value: self.value + rhs.value, deriv: self.deriv + rhs.deriv }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self { value: self.value - rhs.value, deriv: self.deriv - rhs.deriv }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self {
            value: self.value * rhs.value,
            deriv: self.value * rhs.deriv + self.deriv * rhs.value,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.value.recip();
        let q = self.value * inv;
        Self { value: q, deriv: (self.deriv - q * rhs.deriv) * inv }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { value: -self.value, deriv: -self.deriv }
    }
}

impl<T: Scalar> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Self { value: self.value + rhs, deriv: self.deriv }
    }
}

impl<T: Scalar> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Self { value: self.value - rhs, deriv: self.deriv }
    }
}

impl<T: Scalar> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Self { value: self.value * rhs, deriv: self.deriv * rhs }
    }
}

impl<T: Scalar> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        Self { value: self.value / rhs, deriv: self.deriv / rhs }
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }

    fn real(&self) -> f64 {
        self.value.real()
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.value.ln(), self.value.recip())
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, -(t * t) + 1.0)
    }

    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, (s * 2.0).recip())
    }

    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        self.chain(self.value.powi(n), self.value.powi(n - 1) * n as f64)
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.deriv.is_finite()
    }

    fn sigmoid(self) -> Self {
        let s = self.value.sigmoid();
        self.chain(s, s * (-s + 1.0))
    }

    fn silu(self) -> Self {
        let s = self.value.sigmoid();
        let slope = s * ((self.value * (-s + 1.0)) + 1.0);
        self.chain(self.value * s, slope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let a = Dual::new(3.0, 2.0);
        let b = Dual::new(-1.5, 0.5);
        let c = a * b;
        assert_eq!(c.value, -4.5);
        assert_eq!(c.deriv, 3.0 * 0.5 + 2.0 * -1.5);
    }

    #[test]
    fn quotient_rule() {
        let a = Dual::new(1.0, 1.0);
        let b = Dual::new(2.0, 0.0);
        let c = a / b;
        assert!((c.deriv - 0.5).abs() < 1e-15);
        let d = Dual::constant(1.0) / Dual::new(2.0, 1.0);
        assert!((d.deriv + 0.25).abs() < 1e-15);
    }

    #[test]
    fn second_directional_derivative_of_cube() {
        // d²/dt² (2 + t)³ at t = 0 is 6·2 = 12
        let x = Dual2::from_parts(2.0, 1.0, 1.0, 0.0);
        let y = x * x * x;
        assert_eq!(y.d12(), 12.0);
        assert_eq!(y.d1(), 12.0);
        assert_eq!(y.real(), 8.0);
        let y = x.powi(3);
        assert_eq!(y.d12(), 12.0);
    }

    #[test]
    fn collapsed_outer_tangent_matches_dual() {
        let x = 0.37;
        let inner = Dual::new(x, 1.3);
        let outer = Dual2::from_parts(x, 0.0, 1.3, 0.0);
        let f1 = (inner.silu() * inner.tanh()).exp() / (inner + 2.0).ln();
        let f2 = (outer.silu() * outer.tanh()).exp() / (outer + 2.0).ln();
        assert!((f1.value - f2.value.value).abs() < 1e-15);
        assert!((f1.deriv - f2.value.deriv).abs() < 1e-15);
        assert_eq!(f2.deriv, Dual::new(0.0, 0.0));
    }

    #[test]
    fn elementary_slopes() {
        let h = 1e-6;
        let fns: [fn(Dual) -> Dual; 7] = [
            |x| x.exp(),
            |x| x.ln(),
            |x| x.tanh(),
            |x| x.sigmoid(),
            |x| x.silu(),
            |x| x.sqrt(),
            |x| x.sin() * x.cos(),
        ];
        for f in fns {
            let x = 0.8;
            let d = f(Dual::new(x, 1.0)).deriv;
            let fd = (f(Dual::constant(x + h)).value - f(Dual::constant(x - h)).value) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8, "{d} vs {fd}");
        }
    }
}
