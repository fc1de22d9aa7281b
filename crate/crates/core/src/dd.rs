//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s
//! giving about 32 significant decimal digits.
//!
//! Its purpose is the finite-difference oracle. A central difference of an
//! `O(1)` loss in `f64` carries roundoff near `1e-16 / h`, which swamps the
//! derivative of any coordinate whose gradient is below about `1e-7`.
//! Evaluating the same formula in [`Dd`] pushes that floor down by sixteen
//! orders of magnitude.
//!
//! Arithmetic, `sqrt`, `exp`, `ln`, `tanh` and `powf` are computed to full
//! double-double accuracy. Trigonometric and other functions the kernels
//! never call are evaluated at `f64` accuracy. Text formatting shows the
//! value rounded to `f64`.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Dd { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn square(self) -> Self {
        self * self
    }

    /// `sinh` by its Taylor series; used for `|x| < 0.5`.
    fn sinh_small(self) -> Self {
        let x2 = self.square();
        let mut term = self;
        let mut sum = self;
        let mut k = 1.0;
        loop {
            term = term * x2 / Dd::from_f64((k + 1.0) * (k + 2.0));
            sum += term;
            k += 2.0;
            if term.hi.abs() <= 1e-34 * sum.hi.abs() {
                return sum;
            }
        }
    }
}

impl PartialEq for Dd {
    fn eq(&self, other: &Self) -> bool {
        self.hi == other.hi && self.lo == other.lo
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        if !s1.is_finite() {
            return Dd::from_f64(s1);
        }
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Dd::renorm(s1, s2 + t2)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Dd::from_f64(p);
        }
        Dd::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi == 0.0 {
            return Dd::from_f64(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        Dd::renorm(q1, q2) + Dd::from_f64(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, b: Dd) -> Dd {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {
        $(impl $tr for Dd {
            fn $f(&mut self, b: Dd) {
                *self = *self $op b;
            }
        })*
    };
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl Zero for Dd {
    fn zero() -> Self {
        Dd::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd::from_f64(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = num_traits::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dd::from_f64)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.trunc().hi.to_i64().map(|h| h + self.trunc().lo as i64)
    }
    fn to_u64(&self) -> Option<u64> {
        self.to_i64().and_then(|v| u64::try_from(v).ok())
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(Dd::renorm(hi, (n - hi as i64) as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        Some(Dd::renorm(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Dd::from_f64(n))
    }
}

impl NumCast for Dd {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Dd::from_f64)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
    }
}

impl fmt::LowerExp for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerExp::fmt(&(self.hi + self.lo), f)
    }
}

impl FromStr for Dd {
    type Err = std::num::ParseFloatError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Dd::from_f64)
    }
}

/// Applies an `f64` function to the leading component.
macro_rules! via_f64 {
    ($($f:ident),*) => {
        $(fn $f(self) -> Self {
            Dd::from_f64(self.to_f64_lossy().$f())
        })*
    };
}

impl Float for Dd {
    fn nan() -> Self {
        Dd::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        Dd::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Dd::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Dd::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Dd::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Dd::from_f64(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Dd::from_f64(f64::EPSILON * f64::EPSILON)
    }
    fn max_value() -> Self {
        Dd::from_f64(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let hi = self.hi.floor();
        if hi == self.hi {
            Dd::renorm(hi, self.lo.floor())
        } else {
            Dd::from_f64(hi)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        (self + Dd::from_f64(0.5)).floor()
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Dd::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Dd::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base.square();
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Self) -> Self {
        if self.hi == 0.0 {
            return Dd::from_f64(self.hi.powf(n.hi));
        }
        if self.hi < 0.0 {
            return Dd::nan();
        }
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::from_f64(self.hi.sqrt());
        }
        // One Newton step on the f64 root doubles the precision.
        let q = self.hi.sqrt();
        let (sq, err) = two_prod(q, q);
        let r = (self - Dd { hi: sq, lo: err }).hi / (2.0 * q);
        Dd::renorm(q, r)
    }
    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::infinity();
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        // x = k·ln2 + r, |r| ≤ ln2/2; e^r = (e^{r/1024})^1024.
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).scale_pow2(-10);
        let mut term = r;
        let mut sum = Dd::one() + r;
        let mut i = 2.0;
        while term.hi.abs() > 1e-35 {
            term = term * r / Dd::from_f64(i);
            sum += term;
            i += 1.0;
        }
        for _ in 0..10 {
            sum = sum.square();
        }
        sum.scale_pow2(k as i32)
    }
    fn exp2(self) -> Self {
        (self * LN2).exp()
    }
    fn ln(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::from_f64(self.hi.ln());
        }
        // Newton on exp: x ← x + a·e^{−x} − 1, started at the f64 log.
        let x = Dd::from_f64(self.hi.ln());
        x + self * (-x).exp() - Dd::one()
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / LN2
    }
    fn log10(self) -> Self {
        self.ln() / Dd::from_f64(10.0).ln()
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Dd::zero()
        }
    }
    fn hypot(self, other: Self) -> Self {
        (self.square() + other.square()).sqrt()
    }
    fn atan2(self, other: Self) -> Self {
        Dd::from_f64(self.to_f64_lossy().atan2(other.to_f64_lossy()))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        if self.hi.abs() < 0.5 {
            // e^x − 1 = 2·sinh(x/2)·e^{x/2}
            let half = self.scale_pow2(-1);
            half.sinh_small().scale_pow2(1) * half.exp()
        } else {
            self.exp() - Dd::one()
        }
    }
    fn ln_1p(self) -> Self {
        (Dd::one() + self).ln()
    }
    fn sinh(self) -> Self {
        if self.hi.abs() < 0.5 {
            self.sinh_small()
        } else {
            let e = self.exp();
            (e - e.recip()).scale_pow2(-1)
        }
    }
    fn cosh(self) -> Self {
        let e = self.exp();
        (e + e.recip()).scale_pow2(-1)
    }
    fn tanh(self) -> Self {
        if self.hi.abs() < 0.5 {
            let s = self.sinh_small();
            s / (Dd::one() + s.square()).sqrt()
        } else {
            let e = self.abs().scale_pow2(1).exp();
            let t = Dd::one() - Dd::from_f64(2.0) / (e + Dd::one());
            if self.hi < 0.0 {
                -t
            } else {
                t
            }
        }
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }

    via_f64!(cbrt, sin, cos, tan, asin, acos, atan, asinh, acosh, atanh);
}

impl Scalar for Dd {
    /// Text output carries only the `f64`-rounded value.
    const SIGNIFICANT_DIGITS: usize = 17;
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Error relative to `max(|b|, 1)`.
    fn close(a: Dd, b: Dd, tol: f64) -> bool {
        ((a - b).abs() / b.abs().max(Dd::one())).hi < tol
    }

    #[test]
    fn arithmetic_beyond_f64() {
        let tiny = Dd::from_f64(1e-20);
        let x = Dd::one() + tiny;
        assert_eq!((x - Dd::one()).hi(), 1e-20);
        let third = Dd::one() / Dd::from_f64(3.0);
        assert!(((third * Dd::from_f64(3.0)) - Dd::one()).abs().hi() < 1e-31);
    }

    #[test]
    fn sqrt_squares_back() {
        let two = Dd::from_f64(2.0);
        assert!((two.sqrt().square() - two).abs().hi() < 1e-30);
    }

    #[test]
    fn exp_ln_inverse() {
        for v in [-30.0, -1.3, -1e-3, 0.2, 1.0, 7.5, 40.0] {
            let x = Dd::from_f64(v) + Dd::from_f64(v * 1e-18);
            assert!(close(x.exp().ln(), x, 1e-28), "{v}");
        }
        // e = 2.71828182845904523536028747135266...
        let e = Dd::one().exp();
        let reference = Dd::from_f64(std::f64::consts::E) + Dd::from_f64(1.445_646_891_729_250_2e-16);
        assert!(close(e, reference, 1e-28));
    }

    #[test]
    fn tanh_matches_definition() {
        for v in [-3.0, -0.4, -1e-6, 0.1, 0.49, 0.51, 2.0, 25.0] {
            let x = Dd::from_f64(v);
            let e2 = x.scale_pow2(1).exp();
            let direct = (e2 - Dd::one()) / (e2 + Dd::one());
            assert!(close(x.tanh(), direct, 1e-28), "{v}");
            assert!((x.tanh().hi() - v.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn powf_inverse_sqrt() {
        let x = Dd::from_f64(1.7) + Dd::from_f64(3e-18);
        let y = x.powf(Dd::from_f64(-0.5));
        assert!(close(y * y * x, Dd::one(), 1e-28));
    }

    #[test]
    fn ordering_and_specials() {
        assert!(Dd::from_f64(1.0) < Dd::one() + Dd::from_f64(1e-25));
        assert!(Dd::from_f64(800.0).exp().is_infinite());
        assert_eq!(Dd::from_f64(-800.0).exp(), Dd::zero());
        assert!(Dd::from_f64(-1.0).ln().is_nan());
        assert_eq!(Dd::from_f64(-2.5).floor().hi(), -3.0);
    }
}
