use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::scalar::Real;

/// Forward-mode dual number `value + deriv * eps`, `eps^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualReal {
    pub value: f64,
    pub deriv: f64,
}

impl DualReal {
    pub const fn new(value: f64, deriv: f64) -> Self {
        Self { value, deriv }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// The seeded independent variable.
    pub const fn variable(value: f64) -> Self {
        Self::new(value, 1.0)
    }
}

impl fmt::Display for DualReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}eps", self.value, self.deriv)
    }
}

impl Add for DualReal {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.value + o.value, self.deriv + o.deriv)
    }
}

impl Sub for DualReal {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.value - o.value, self.deriv - o.deriv)
    }
}

impl Mul for DualReal {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.value * o.value,
            self.deriv * o.value + self.value * o.deriv,
        )
    }
}

impl Div for DualReal {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        Self::new(q, (self.deriv - q * o.deriv) / o.value)
    }
}

impl Neg for DualReal {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.value, -self.deriv)
    }
}

impl AddAssign for DualReal {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for DualReal {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for DualReal {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Real for DualReal {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }

    #[inline]
    fn value(self) -> f64 {
        self.value
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        let d = if self.deriv == 0.0 { 0.0 } else { self.deriv / (2.0 * r) };
        Self::new(r, d)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        Self::new(t, self.deriv * (1.0 - t * t))
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        Self::new(self.value * c, self.deriv * c)
    }

    fn is_finite(self) -> bool {
        self.value.is_finite() && self.deriv.is_finite()
    }
}
