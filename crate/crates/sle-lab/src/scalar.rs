//! Scalar modes for all series and module computations.
//!
//! Two carriers implement the same [`Scalar`] interface:
//!
//! * [`Rat`] — exact Gaussian rationals `a + b i` with arbitrary-precision
//!   rational `a`, `b`; used by every symbolic verification suite so that
//!   algebraic identities can be asserted with zero tolerance.
//! * [`Cf64`] — IEEE double-precision complex numbers; used by the Monte
//!   Carlo simulation pipeline.
//!
//! A pipeline picks one mode through a type parameter and can never silently
//! mix the two.

use num::bigint::BigInt;
use num::complex::Complex64;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use std::fmt;

/// Common interface of the two scalar modes.
///
/// All operations are by-reference; implementations are exact for [`Rat`]
/// and IEEE double for [`Cf64`].
pub trait Scalar: Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_int(n: i64) -> Self;
    /// Exact ratio `p/q`; panics on `q == 0`.
    fn from_ratio(p: i64, q: i64) -> Self;
    /// The imaginary unit.
    fn imag_unit() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Multiplicative inverse; `None` for zero (and for non-invertible
    /// elements of more general coefficient rings).
    fn inv(&self) -> Option<Self>;
    fn div(&self, rhs: &Self) -> Option<Self> {
        rhs.inv().map(|r| self.mul(&r))
    }
    /// Lossy embedding into `ℂ` (used for numeric evaluation and reports).
    fn to_c64(&self) -> Complex64;
    /// Modulus of the complex embedding (diagnostics only).
    fn modulus(&self) -> f64 {
        self.to_c64().norm()
    }
}

/// Exact Gaussian rational `re + im·i`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Rat {
    pub re: BigRational,
    pub im: BigRational,
}

impl Rat {
    pub fn new(re: BigRational, im: BigRational) -> Self {
        Rat { re, im }
    }

    pub fn from_big(re: BigRational) -> Self {
        Rat { re, im: BigRational::zero() }
    }

    pub fn ratio(p: i64, q: i64) -> Self {
        assert!(q != 0, "zero denominator");
        Rat::from_big(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    pub fn int(n: i64) -> Self {
        Rat::from_big(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    /// Integer power (negative allowed for nonzero values).
    pub fn pow(&self, e: i64) -> Self {
        if e == 0 {
            return Rat::int(1);
        }
        let base = if e < 0 {
            self.inv().expect("zero base with negative exponent")
        } else {
            self.clone()
        };
        let mut acc = Rat::int(1);
        for _ in 0..e.unsigned_abs() {
            acc = acc.mul(&base);
        }
        acc
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", self.re)
        } else if self.re.is_zero() {
            write!(f, "{}i", self.im)
        } else if self.im.is_negative() {
            write!(f, "{}{}i", self.re, self.im)
        } else {
            write!(f, "{}+{}i", self.re, self.im)
        }
    }
}

impl Scalar for Rat {
    fn zero() -> Self {
        Rat::int(0)
    }
    fn one() -> Self {
        Rat::int(1)
    }
    fn from_int(n: i64) -> Self {
        Rat::int(n)
    }
    fn from_ratio(p: i64, q: i64) -> Self {
        Rat::ratio(p, q)
    }
    fn imag_unit() -> Self {
        Rat { re: BigRational::zero(), im: BigRational::one() }
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
    fn add(&self, rhs: &Self) -> Self {
        Rat { re: &self.re + &rhs.re, im: &self.im + &rhs.im }
    }
    fn sub(&self, rhs: &Self) -> Self {
        Rat { re: &self.re - &rhs.re, im: &self.im - &rhs.im }
    }
    fn mul(&self, rhs: &Self) -> Self {
        Rat {
            re: &self.re * &rhs.re - &self.im * &rhs.im,
            im: &self.re * &rhs.im + &self.im * &rhs.re,
        }
    }
    fn neg(&self) -> Self {
        Rat { re: -self.re.clone(), im: -self.im.clone() }
    }
    fn inv(&self) -> Option<Self> {
        if Scalar::is_zero(self) {
            return None;
        }
        let norm = &self.re * &self.re + &self.im * &self.im;
        Some(Rat { re: &self.re / &norm, im: -(&self.im / &norm) })
    }
    fn to_c64(&self) -> Complex64 {
        fn f(r: &BigRational) -> f64 {
            r.to_f64().unwrap_or_else(|| {
                // Fall back to a quotient of float approximations for
                // rationals whose parts overflow f64.
                let n = r.numer().to_f64().unwrap_or(f64::INFINITY);
                let d = r.denom().to_f64().unwrap_or(f64::INFINITY);
                n / d
            })
        }
        Complex64::new(f(&self.re), f(&self.im))
    }
}

/// Double-precision complex scalar.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Cf64(pub Complex64);

impl Cf64 {
    pub fn new(re: f64, im: f64) -> Self {
        Cf64(Complex64::new(re, im))
    }

    pub fn real(re: f64) -> Self {
        Cf64(Complex64::new(re, 0.0))
    }
}

impl fmt::Display for Cf64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Scalar for Cf64 {
    fn zero() -> Self {
        Cf64(Complex64::new(0.0, 0.0))
    }
    fn one() -> Self {
        Cf64(Complex64::new(1.0, 0.0))
    }
    fn from_int(n: i64) -> Self {
        Cf64(Complex64::new(n as f64, 0.0))
    }
    fn from_ratio(p: i64, q: i64) -> Self {
        assert!(q != 0, "zero denominator");
        Cf64(Complex64::new(p as f64 / q as f64, 0.0))
    }
    fn imag_unit() -> Self {
        Cf64(Complex64::new(0.0, 1.0))
    }
    fn is_zero(&self) -> bool {
        self.0.re == 0.0 && self.0.im == 0.0
    }
    fn add(&self, rhs: &Self) -> Self {
        Cf64(self.0 + rhs.0)
    }
    fn sub(&self, rhs: &Self) -> Self {
        Cf64(self.0 - rhs.0)
    }
    fn mul(&self, rhs: &Self) -> Self {
        Cf64(self.0 * rhs.0)
    }
    fn neg(&self) -> Self {
        Cf64(-self.0)
    }
    fn inv(&self) -> Option<Self> {
        if Scalar::is_zero(self) {
            None
        } else {
            Some(Cf64(self.0.finv()))
        }
    }
    fn to_c64(&self) -> Complex64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rat_field_ops() {
        let a = Rat::ratio(3, 4);
        let b = Rat { re: BigRational::new(BigInt::from(1), BigInt::from(2)), im: BigRational::one() };
        let prod = a.mul(&b);
        assert_eq!(prod, Rat { re: BigRational::new(BigInt::from(3), BigInt::from(8)), im: BigRational::new(BigInt::from(3), BigInt::from(4)) });
        let inv = b.inv().unwrap();
        assert_eq!(b.mul(&inv), Rat::int(1));
        assert_eq!(Rat::int(0).inv(), None);
    }

    #[test]
    fn rat_imag_unit_squares_to_minus_one() {
        let i = <Rat as Scalar>::imag_unit();
        assert_eq!(i.mul(&i), Rat::int(-1));
    }

    #[test]
    fn rat_pow() {
        let half = Rat::ratio(1, 2);
        assert_eq!(half.pow(3), Rat::ratio(1, 8));
        assert_eq!(half.pow(-2), Rat::int(4));
        assert_eq!(half.pow(0), Rat::int(1));
    }

    #[test]
    fn cf64_ops() {
        let a = Cf64::new(1.0, 2.0);
        let inv = a.inv().unwrap();
        let prod = a.mul(&inv);
        assert!((prod.0 - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }
}
