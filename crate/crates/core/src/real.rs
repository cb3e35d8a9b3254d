//! Scalar abstraction shared by the objective, splitting, agent and simulator code.
//!
//! Everything that touches iterates is generic over [`Real`], so the same
//! protocol can run in plain `f64` or in double-double precision
//! ([`DoubleDouble`]). The latter matters for long rate experiments where the
//! objective gap drops far below what a 53-bit mantissa can resolve around the
//! optimum.

use std::cmp::Ordering;
use std::fmt::{self, Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};
use twofloat::TwoFloat;

pub trait Real:
    Copy
    + Debug
    + Display
    + Default
    + PartialOrd
    + Zero
    + One
    + Neg<Output = Self>
    + Sub<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// Short label used in reports and CSV metadata.
    const LABEL: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn tanh(self) -> Self;
    fn cosh(self) -> Self;
    fn powi(self, k: i32) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    const LABEL: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Unevaluated sum of two `f64`s (about 106 significant bits).
///
/// Addition, multiplication and square root come from `twofloat`. Division is
/// done here by three-term long division, since `twofloat`'s own quotient of
/// two double-doubles is only accurate to `f64` precision.
#[derive(Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct DoubleDouble(TwoFloat);

impl DoubleDouble {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi(), self.lo())
    }
}

impl Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Display::fmt(&self.0, f)
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let b = rhs.0;
        let q1 = self.0.hi() / b.hi();
        if !q1.is_finite() || q1 == 0.0 {
            return Self(TwoFloat::from(q1));
        }
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Self(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self(TwoFloat::from(0.0))
    }
    fn is_zero(&self) -> bool {
        self.hi() == 0.0 && self.lo() == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self(TwoFloat::from(1.0))
    }
}

impl Real for DoubleDouble {
    const LABEL: &'static str = "double-double";

    fn of(v: f64) -> Self {
        Self(TwoFloat::from(v))
    }
    fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
    fn abs(self) -> Self {
        if self.0.partial_cmp(&TwoFloat::from(0.0)) == Some(Ordering::Less) {
            -self
        } else {
            self
        }
    }
    fn sqrt(self) -> Self {
        Self(self.0.sqrt())
    }
    fn exp(self) -> Self {
        Self(self.0.exp())
    }
    fn ln(self) -> Self {
        Self(self.0.ln())
    }
    fn ln_1p(self) -> Self {
        Self(self.0.ln_1p())
    }
    fn tanh(self) -> Self {
        Self(self.0.tanh())
    }
    fn cosh(self) -> Self {
        Self(self.0.cosh())
    }
    fn powi(self, k: i32) -> Self {
        let mut base = if k < 0 { Self::one() / self } else { self };
        let mut e = k.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
    fn is_finite(self) -> bool {
        self.hi().is_finite() && self.lo().is_finite()
    }
}

/// Euclidean norm, accumulated in `T`.
pub fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
