//! Forward-mode dual numbers carrying a full gradient with respect to the
//! state, so one pass over an expression yields a Jacobian row.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by [`Expr::eval`](super::expr::Expr::eval).
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant compatible with the given state values.
    fn constant(v: f64, like: &[Self]) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn pow(self, exponent: &Self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64, _: &[Self]) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pow(self, exponent: &Self) -> Self {
        pow_real(self, *exponent)
    }
}

fn pow_real(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

/// Value plus gradient. An empty gradient stands for the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    /// The `i`-th of `n` independent variables.
    pub fn variable(re: f64, i: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[i] = 1.0;
        Dual { re, grad }
    }

    fn chain(self, re: f64, slope: f64) -> Self {
        let mut grad = self.grad;
        grad.iter_mut().for_each(|g| *g *= slope);
        Dual { re, grad }
    }
}

/// `a·ga + b·gb` with the empty-means-zero convention.
fn combine(ga: Vec<f64>, a: f64, gb: Vec<f64>, b: f64) -> Vec<f64> {
    match (ga.is_empty(), gb.is_empty()) {
        (true, true) => ga,
        (false, true) => ga.into_iter().map(|g| a * g).collect(),
        (true, false) => gb.into_iter().map(|g| b * g).collect(),
        (false, false) => ga.into_iter().zip(gb).map(|(x, y)| a * x + b * y).collect(),
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { re: self.re + o.re, grad: combine(self.grad, 1.0, o.grad, 1.0) }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { re: self.re - o.re, grad: combine(self.grad, 1.0, o.grad, -1.0) }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { re: self.re * o.re, grad: combine(self.grad, o.re, o.grad, self.re) }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.re / o.re;
        Dual { re: q, grad: combine(self.grad, 1.0 / o.re, o.grad, -q / o.re) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let re = -self.re;
        self.chain(re, -1.0)
    }
}

impl Scalar for Dual {
    fn constant(v: f64, _: &[Self]) -> Self {
        Dual { re: v, grad: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.re
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        let r = self.re;
        self.chain(r.ln(), 1.0 / r)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn abs(self) -> Self {
        let r = self.re;
        let slope = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(r.abs(), slope)
    }
    fn pow(self, exponent: &Self) -> Self {
        let (a, b) = (self.re, exponent.re);
        let value = pow_real(a, b);
        let da = if b == 0.0 { 0.0 } else { b * pow_real(a, b - 1.0) };
        if exponent.grad.iter().all(|g| *g == 0.0) {
            return self.chain(value, da);
        }
        // d(a^b) = b a^(b-1) da + a^b ln(a) db
        let db = value * a.ln();
        Dual { re: value, grad: combine(self.grad, da, exponent.grad.clone(), db) }
    }
}
