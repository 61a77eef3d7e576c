//! Multi-tangent forward mode.
//!
//! `Grad<N, S>` carries a value and `N` partial derivatives, all of scalar
//! type `S`. Nesting gives higher orders: `Grad<N, f64>` yields gradients,
//! `Grad<N, Dual>` gradients together with a directional derivative of the
//! gradient (a Hessian-vector product), and `Grad<N, Grad<N, f64>>` dense
//! Hessians. Element-level finite-element work uses these with `N` equal to
//! the (padded) element dof count.

use super::real::Real;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug)]
pub struct Grad<const N: usize, S> {
    pub v: S,
    pub d: [S; N],
}

impl<const N: usize, S: Real> Grad<N, S> {
    pub fn constant(v: S) -> Self {
        Self {
            v,
            d: [S::zero(); N],
        }
    }

    /// Independent variable number `slot` with value `v`.
    pub fn variable(v: S, slot: usize) -> Self {
        let mut d = [S::zero(); N];
        d[slot] = S::cst(1.0);
        Self { v, d }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = *x * df;
        }
        Self { v: f, d }
    }
}

impl<const N: usize, S: Real> Add for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a += *b;
        }
        self
    }
}

impl<const N: usize, S: Real> Sub for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a -= *b;
        }
        self
    }
}

impl<const N: usize, S: Real> Mul for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [S::zero(); N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize, S: Real> Div for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.v.recip();
        let q = self.v * inv;
        let mut d = [S::zero(); N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<const N: usize, S: Real> Neg for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for a in self.d.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<const N: usize, S: Real> Add<f64> for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v = self.v + o;
        self
    }
}

impl<const N: usize, S: Real> Sub<f64> for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v = self.v - o;
        self
    }
}

impl<const N: usize, S: Real> Mul<f64> for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn mul(mut self, o: f64) -> Self {
        self.v = self.v * o;
        for a in self.d.iter_mut() {
            *a = *a * o;
        }
        self
    }
}

impl<const N: usize, S: Real> Div<f64> for Grad<N, S> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<const N: usize, S: Real> AddAssign for Grad<N, S> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize, S: Real> SubAssign for Grad<N, S> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize, S: Real> MulAssign for Grad<N, S> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize, S: Real> Real for Grad<N, S> {
    fn cst(v: f64) -> Self {
        Self::constant(S::cst(v))
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), self.v.recip())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, (s * 2.0).recip())
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        self.chain(self.v.powi(n), self.v.powi(n - 1) * n as f64)
    }
    fn powf(self, p: f64) -> Self {
        self.chain(self.v.powf(p), self.v.powf(p - 1.0) * p)
    }
}
