use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by `f64`, [`super::Dual`] and [`super::Var`].
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant living in the same context as `self` (e.g. the same tape).
    fn constant(&self, c: f64) -> Self;
    /// The primal `f64` value.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn scale(self, c: f64) -> Self {
        self * self.constant(c)
    }

    fn offset(self, c: f64) -> Self {
        self + self.constant(c)
    }
}

/// A [`Real`] that can be created from nothing; usable as tape values.
pub trait Field: Real {
    fn from_f64(c: f64) -> Self;
}

impl Real for f64 {
    fn constant(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn offset(self, c: f64) -> Self {
        self + c
    }
}

impl Field for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
}
