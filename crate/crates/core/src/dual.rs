//! Forward-mode differentiation with first-order dual numbers.
//!
//! Control laws that need partial derivatives of their own virtual commands
//! are written once against [`Scalar`] and evaluated either on `f64` or on
//! [`Dual`] with a seed direction.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the differentiable control functions.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(self) -> f64;
    fn ln(self) -> Self;
    fn recip(self) -> Self;
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(self) -> f64 {
        self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn recip(self) -> Self {
        f64::recip(self)
    }
}

/// `re + eps * d`, with `d^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Scalar for Dual {
    fn constant(value: f64) -> Self {
        Self { re: value, eps: 0.0 }
    }
    fn value(self) -> f64 {
        self.re
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }
    fn recip(self) -> Self {
        let inv = self.re.recip();
        Self::new(inv, -self.eps * inv * inv)
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        Self::new(self.re * inv, (self.eps * o.re - self.re * o.eps) * inv * inv)
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl Add<f64> for Dual {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self::new(self.re + o, self.eps)
    }
}

impl Sub<f64> for Dual {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self::new(self.re - o, self.eps)
    }
}

impl Mul<f64> for Dual {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.re * o, self.eps * o)
    }
}

impl Div<f64> for Dual {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        Self::new(self.re / o, self.eps / o)
    }
}

/// Value and directional derivative of `f` at `point` along `seed`.
pub fn directional<const N: usize, F>(f: F, point: [f64; N], seed: [f64; N]) -> (f64, f64)
where
    F: Fn([Dual; N]) -> Dual,
{
    let args = std::array::from_fn(|k| Dual::new(point[k], seed[k]));
    let out = f(args);
    (out.re, out.eps)
}

/// Full gradient of `f` at `point`, one forward pass per coordinate.
pub fn gradient<const N: usize, F>(f: F, point: [f64; N]) -> (f64, [f64; N])
where
    F: Fn([Dual; N]) -> Dual,
{
    let mut grad = [0.0; N];
    let mut value = 0.0;
    for (k, g) in grad.iter_mut().enumerate() {
        let mut seed = [0.0; N];
        seed[k] = 1.0;
        let (v, d) = directional(&f, point, seed);
        value = v;
        *g = d;
    }
    (value, grad)
}
