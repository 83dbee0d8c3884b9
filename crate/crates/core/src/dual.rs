//! Forward-mode dual numbers with a fixed number of tangent slots.
//!
//! The per-point physics closures (friction, EOS, residuals) are written once
//! over [`Real`] and evaluated either on plain `f64` or on [`Dual`] to get
//! exact partial derivatives with respect to the local network outputs.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Minimal scalar interface needed by the physics closures.
pub trait Real:
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
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn abs(self) -> Self;
    fn powf(self, e: f64) -> Self;
    fn log10(self) -> Self;
    fn sqrt(self) -> Self;
    /// Clamp with zero derivative outside `[lo, hi]`.
    fn clamp(self, lo: f64, hi: f64) -> Self;
    /// Apply a scalar function whose value and slope at `self` are already known.
    fn lift(self, v: f64, dv: f64) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn log10(self) -> Self {
        f64::log10(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn lift(self, v: f64, _dv: f64) -> Self {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Independent variable occupying tangent slot `slot`.
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; N];
        d[slot] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self { v: self.v + o, d: self.d }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self { v: self.v - o, d: self.d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn abs(self) -> Self {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.v.abs(), s)
    }
    fn powf(self, e: f64) -> Self {
        let v = self.v.powf(e);
        self.chain(v, e * self.v.powf(e - 1.0))
    }
    fn log10(self) -> Self {
        self.chain(self.v.log10(), 1.0 / (self.v * std::f64::consts::LN_10))
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.v < lo {
            Self::constant(lo)
        } else if self.v > hi {
            Self::constant(hi)
        } else {
            self
        }
    }
    fn lift(self, v: f64, dv: f64) -> Self {
        self.chain(v, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_central_differences() {
        let x = 1.7;
        let cases: Vec<(Box<dyn Fn(Dual<1>) -> Dual<1>>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|a| a.powf(-0.25)), Box::new(|a: f64| a.powf(-0.25))),
            (Box::new(|a| a.log10()), Box::new(|a: f64| a.log10())),
            (Box::new(|a| a.sqrt()), Box::new(|a: f64| a.sqrt())),
            (Box::new(|a| a / (a * a + 1.0)), Box::new(|a: f64| a / (a * a + 1.0))),
            (Box::new(|a| -a.abs() * a), Box::new(|a: f64| -a.abs() * a)),
        ];
        for (fdual, fplain) in cases {
            let got = fdual(Dual::variable(x, 0)).d[0];
            let want = fd(&*fplain, x);
            assert!((got - want).abs() <= 1e-7 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn clamp_kills_derivative_outside_range() {
        let a = Dual::<1>::variable(5.0, 0);
        assert_eq!(a.clamp(0.0, 1.0).d[0], 0.0);
        assert_eq!(a.clamp(0.0, 10.0).d[0], 1.0);
    }
}
