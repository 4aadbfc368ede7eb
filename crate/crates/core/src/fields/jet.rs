//! Truncated Taylor arithmetic: a [`Jet`] holds `f(u), f'(u), ..., f^(N-1)(u) / (N-1)!`.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    /// Normalized Taylor coefficients `c[k] = f^(k)(u) / k!`.
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = v;
        Self { c }
    }

    /// The identity map expanded at `u`.
    pub fn variable(u: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = u;
        if N > 1 {
            c[1] = 1.0;
        }
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: [0.0; N] }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// The `k`-th derivative.
    pub fn derivative(&self, k: usize) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.c[k] * fact
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.c.iter_mut().for_each(|v| *v *= s);
        self
    }

    pub fn recip(&self) -> Self {
        let a = &self.c;
        let mut b = [0.0; N];
        b[0] = 1.0 / a[0];
        for k in 1..N {
            let s: f64 = (1..=k).map(|j| a[j] * b[k - j]).sum();
            b[k] = -s * b[0];
        }
        Self { c: b }
    }

    pub fn exp(&self) -> Self {
        let a = &self.c;
        let mut e = [0.0; N];
        e[0] = a[0].exp();
        for k in 1..N {
            let s: f64 = (1..=k).map(|j| j as f64 * a[j] * e[k - j]).sum();
            e[k] = s / k as f64;
        }
        Self { c: e }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.c[0] += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.c[0] -= rhs;
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut c = [0.0; N];
        for (i, &a) in self.c.iter().enumerate() {
            for (j, &b) in rhs.c.iter().enumerate().take(N - i) {
                c[i + j] += a * b;
            }
        }
        Self { c }
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type J = Jet<5>;

    #[test]
    fn polynomial_derivatives() {
        // u^3 at u = 2: 8, 12, 12, 6, 0
        let u = J::variable(2.0);
        let p = u * u * u;
        let d: Vec<f64> = (0..5).map(|k| p.derivative(k)).collect();
        assert_eq!(d, vec![8.0, 12.0, 12.0, 6.0, 0.0]);
    }

    #[test]
    fn exp_and_recip_match_closed_forms() {
        let u = 0.3;
        let e = (J::variable(u) * 2.0).exp();
        for k in 0..5 {
            let expect = 2f64.powi(k as i32) * (2.0 * u).exp();
            assert!((e.derivative(k) - expect).abs() < 1e-12 * expect);
        }
        // 1/(1+u): derivatives (-1)^k k! / (1+u)^(k+1)
        let r = (J::variable(u) + 1.0).recip();
        let mut fact = 1.0;
        for k in 0..5 {
            if k > 0 {
                fact *= k as f64;
            }
            let expect = (-1f64).powi(k as i32) * fact / (1.0 + u).powi(k as i32 + 1);
            assert!((r.derivative(k) - expect).abs() < 1e-12 * expect.abs());
        }
    }

    #[test]
    fn composite_matches_finite_differences() {
        let g = |u: f64| (1.0 - 1.0 / (1.0 - u * u)).exp();
        let u0 = 0.37;
        let x = J::variable(u0);
        let jet = (J::constant(1.0) - (J::constant(1.0) - x * x).recip()).exp();
        let h = 1e-4;
        let fd1 = (g(u0 + h) - g(u0 - h)) / (2.0 * h);
        let fd2 = (g(u0 + h) - 2.0 * g(u0) + g(u0 - h)) / (h * h);
        assert!((jet.derivative(1) - fd1).abs() < 1e-6);
        assert!((jet.derivative(2) - fd2).abs() < 1e-5);
    }
}
