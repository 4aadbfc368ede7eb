//! Smooth compactly supported test functions with exact derivatives and antiderivative.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::jet::Jet;

type J5 = Jet<5>;

/// Declared boundary behaviour at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BcClass {
    /// `f'(0) = 0`.
    Neumann,
    /// `f'(0) = kappa f(0)`.
    Robin(f64),
    Unconstrained,
}

/// Tolerance used when verifying a declared boundary class.
pub const BC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestFnError {
    #[error("invalid shape parameter {name} = {value}: {reason}")]
    InvalidShape {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("declared boundary class {declared:?} fails at the origin (residual {residual:e})")]
    BoundaryClass { declared: BcClass, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// `psi(s) = exp(1 - 1/(1 - s^2))`, `s = (u - center) / width`, peak value 1.
    Bump { center: f64, width: f64 },
    /// `-psi''` for the bump above; its antiderivative `-psi'` is compactly supported.
    BalancedBump { center: f64, width: f64 },
    /// `(1 + kappa u) chi(u)` with `chi = 1` on `[0, plateau]` and `chi = 0` beyond `cutoff`.
    Robin {
        kappa: f64,
        plateau: f64,
        cutoff: f64,
    },
    /// `phi(u / eps) / eps` with `phi` the normalized bump `exp(-1/(x(1-x)))` on `(0, 1)`.
    Mollifier { eps: f64 },
    Zero,
}

impl Shape {
    fn support(&self) -> (f64, f64) {
        match *self {
            Shape::Bump { center, width } | Shape::BalancedBump { center, width } => {
                (center - width, center + width)
            }
            Shape::Robin { cutoff, .. } => (f64::NEG_INFINITY, cutoff),
            Shape::Mollifier { eps } => (0.0, eps),
            Shape::Zero => (0.0, 0.0),
        }
    }

    /// Derivatives `0..=2` of the function at `u`.
    fn eval(&self, u: f64) -> [f64; 3] {
        let (lo, hi) = self.support();
        if u <= lo || u >= hi {
            return [0.0; 3];
        }
        match *self {
            Shape::Bump { center, width } => {
                let j = bump_jet(u, center, width);
                [j.derivative(0), j.derivative(1), j.derivative(2)]
            }
            Shape::BalancedBump { center, width } => {
                let j = bump_jet(u, center, width);
                [-j.derivative(2), -j.derivative(3), -j.derivative(4)]
            }
            Shape::Robin {
                kappa,
                plateau,
                cutoff,
            } => {
                let x = J5::variable(u);
                let j = (x * kappa + 1.0) * plateau_cutoff(x, plateau, cutoff);
                [j.derivative(0), j.derivative(1), j.derivative(2)]
            }
            Shape::Mollifier { eps } => {
                let x = J5::variable(u) * (1.0 / eps);
                let j = mollifier_base(x) * (1.0 / eps);
                [j.derivative(0), j.derivative(1), j.derivative(2)]
            }
            Shape::Zero => [0.0; 3],
        }
    }

    /// Closed-form antiderivative `F(u) = -int_u^inf f` when one exists.
    fn closed_antiderivative(&self, u: f64) -> Option<f64> {
        match *self {
            Shape::BalancedBump { center, width } => {
                let (lo, hi) = self.support();
                if u <= lo || u >= hi {
                    Some(0.0)
                } else {
                    Some(-bump_jet(u, center, width).derivative(1))
                }
            }
            Shape::Zero => Some(0.0),
            _ => None,
        }
    }
}

fn bump_jet(u: f64, center: f64, width: f64) -> J5 {
    let s = (J5::variable(u) - center) * (1.0 / width);
    (J5::constant(1.0) - (J5::constant(1.0) - s * s).recip()).exp()
}

// exp(-1/r) for r > 0
fn flat_exp(r: J5) -> J5 {
    if r.value() <= 0.0 {
        J5::zero()
    } else {
        (-r.recip()).exp()
    }
}

fn plateau_cutoff(x: J5, plateau: f64, cutoff: f64) -> J5 {
    let r = (x - plateau) * (1.0 / (cutoff - plateau));
    if r.value() <= 0.0 {
        return J5::constant(1.0);
    }
    if r.value() >= 1.0 {
        return J5::zero();
    }
    let a = flat_exp(r);
    let b = flat_exp(J5::constant(1.0) - r);
    b * (a + b).recip()
}

fn mollifier_unnormalized(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (-1.0 / (x * (1.0 - x))).exp()
    }
}

/// Normalizing constant of the mollifier base so that it integrates to one.
pub fn mollifier_normalization() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 1.0 / quadrature::integrate(mollifier_unnormalized, 0.0, 1.0, 1e-15).integral)
}

fn mollifier_base(x: J5) -> J5 {
    let v = x.value();
    if v <= 0.0 || v >= 1.0 {
        return J5::zero();
    }
    let p = x * (J5::constant(1.0) - x);
    (-p.recip()).exp() * mollifier_normalization()
}

/// Tabulated `F(u) = -int_u^R f` on `[0, R]`, interpolated by cubic Hermite with exact slopes `f`.
#[derive(Debug)]
struct AntiderivativeTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Quadrature tolerance for the antiderivative table.
pub const ANTIDERIVATIVE_TOLERANCE: f64 = 1e-10;

impl AntiderivativeTable {
    fn build(shape: &Shape, right: f64) -> Self {
        let cells = ((right * 1024.0).ceil() as usize).max(2048);
        let step = right / cells as f64;
        let f = |u: f64| shape.eval(u)[0];
        let mut values = vec![0.0; cells + 1];
        // per-cell tolerance keeps the accumulated error below the global target
        let tol = ANTIDERIVATIVE_TOLERANCE / cells as f64;
        for i in (0..cells).rev() {
            let a = i as f64 * step;
            let piece = quadrature::integrate(f, a, a + step, tol).integral;
            values[i] = values[i + 1] - piece;
        }
        let slopes = (0..=cells).map(|i| f(i as f64 * step)).collect();
        Self {
            step,
            values,
            slopes,
        }
    }

    fn eval(&self, u: f64) -> f64 {
        let last = self.values.len() - 1;
        let pos = u / self.step;
        if pos >= last as f64 {
            return 0.0;
        }
        let i = (pos.floor().max(0.0) as usize).min(last - 1);
        let s = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}

/// An immutable test function on `[0, inf)`, cheap to clone and share between replicas.
#[derive(Debug, Clone)]
pub struct TestFunction {
    name: String,
    shape: Shape,
    bc: BcClass,
    support_right: f64,
    table: Option<Arc<AntiderivativeTable>>,
}

impl TestFunction {
    fn build(name: String, shape: Shape, bc: BcClass) -> Result<Self, TestFnError> {
        let support_right = shape.support().1.max(0.0);
        let table = if shape.closed_antiderivative(0.0).is_some() {
            None
        } else {
            Some(Arc::new(AntiderivativeTable::build(&shape, support_right)))
        };
        let tf = Self {
            name,
            shape,
            bc,
            support_right,
            table,
        };
        let residual = match bc {
            BcClass::Neumann => tf.df(0.0).abs(),
            BcClass::Robin(kappa) => (tf.df(0.0) - kappa * tf.f(0.0)).abs(),
            BcClass::Unconstrained => 0.0,
        };
        if residual >= BC_TOLERANCE {
            return Err(TestFnError::BoundaryClass {
                declared: bc,
                residual,
            });
        }
        Ok(tf)
    }

    fn check_width(name: &'static str, value: f64) -> Result<(), TestFnError> {
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(TestFnError::InvalidShape {
                name,
                value,
                reason: "must be finite and positive",
            })
        }
    }

    fn check_center(center: f64) -> Result<(), TestFnError> {
        if center >= 0.0 && center.is_finite() {
            Ok(())
        } else {
            Err(TestFnError::InvalidShape {
                name: "center",
                value: center,
                reason: "must be finite and nonnegative",
            })
        }
    }

    /// Standard bump; Neumann when it vanishes near the origin or is centered at it.
    pub fn bump(center: f64, width: f64) -> Result<Self, TestFnError> {
        Self::check_width("width", width)?;
        Self::check_center(center)?;
        let shape = Shape::Bump { center, width };
        let bc = if center - width >= 0.0 || center == 0.0 {
            BcClass::Neumann
        } else {
            BcClass::Unconstrained
        };
        Self::build(format!("bump(c={center},w={width})"), shape, bc)
    }

    /// Minus the second derivative of a bump, which has a compactly supported antiderivative.
    pub fn balanced_bump(center: f64, width: f64) -> Result<Self, TestFnError> {
        Self::check_width("width", width)?;
        Self::check_center(center)?;
        let shape = Shape::BalancedBump { center, width };
        let bc = if center - width >= 0.0 || center == 0.0 {
            BcClass::Neumann
        } else {
            BcClass::Unconstrained
        };
        Self::build(format!("balanced(c={center},w={width})"), shape, bc)
    }

    /// `(1 + kappa u) chi(u)` with plateau up to `width / 3` and support `[0, width)`.
    pub fn robin(kappa: f64, width: f64) -> Result<Self, TestFnError> {
        Self::check_width("width", width)?;
        if !kappa.is_finite() {
            return Err(TestFnError::InvalidShape {
                name: "kappa",
                value: kappa,
                reason: "must be finite",
            });
        }
        let shape = Shape::Robin {
            kappa,
            plateau: width / 3.0,
            cutoff: width,
        };
        let bc = if kappa == 0.0 {
            BcClass::Neumann
        } else {
            BcClass::Robin(kappa)
        };
        Self::build(format!("robin(k={kappa},w={width})"), shape, bc)
    }

    /// The rescaled mollifier `phi_eps`.
    pub fn mollifier(eps: f64) -> Result<Self, TestFnError> {
        Self::check_width("eps", eps)?;
        Self::build(
            format!("mollifier(eps={eps})"),
            Shape::Mollifier { eps },
            BcClass::Neumann,
        )
    }

    pub fn zero() -> Self {
        Self::build("zero".into(), Shape::Zero, BcClass::Neumann).expect("zero function")
    }

    /// Builds from a shape with an explicitly declared class, verified at the origin.
    pub fn with_class(shape: Shape, bc: BcClass) -> Result<Self, TestFnError> {
        Self::build(format!("{shape:?}"), shape, bc)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn bc_class(&self) -> BcClass {
        self.bc
    }

    /// Right end of the support; everything vanishes beyond it.
    pub fn support_right(&self) -> f64 {
        self.support_right
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        self.shape.eval(u)[0]
    }

    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        self.shape.eval(u)[1]
    }

    #[inline]
    pub fn d2f(&self, u: f64) -> f64 {
        self.shape.eval(u)[2]
    }

    /// `(f, f', f'')` at `u`.
    #[inline]
    pub fn derivatives(&self, u: f64) -> [f64; 3] {
        self.shape.eval(u)
    }

    /// `F(u) = -int_u^inf f(y) dy` for `u >= 0`.
    pub fn antiderivative(&self, u: f64) -> f64 {
        if u >= self.support_right {
            return 0.0;
        }
        match &self.table {
            Some(t) => t.eval(u.max(0.0)),
            None => self.shape.closed_antiderivative(u).unwrap_or(0.0),
        }
    }

    /// `int_0^inf g(u) du` for `g` built from this function, by piecewise quadrature.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let right = self.support_right;
        if right <= 0.0 {
            return 0.0;
        }
        let pieces = 64;
        let h = right / pieces as f64;
        (0..pieces)
            .map(|i| {
                let a = i as f64 * h;
                quadrature::integrate(&g, a, a + h, 1e-13).integral
            })
            .sum()
    }

    /// `int_0^inf f^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.integrate(|u| self.f(u).powi(2))
    }

    /// `int_0^inf F^2`.
    pub fn antiderivative_norm_sq(&self) -> f64 {
        self.integrate(|u| self.antiderivative(u).powi(2))
    }

    /// `max |f''|` sampled on a fine grid over the support.
    pub fn sup_second_derivative(&self) -> f64 {
        let m = 20_000;
        (0..=m)
            .map(|i| self.d2f(self.support_right * i as f64 / m as f64).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_examples() -> Vec<TestFunction> {
        vec![
            TestFunction::bump(1.0, 0.5).unwrap(),
            TestFunction::bump(0.0, 1.0).unwrap(),
            TestFunction::balanced_bump(1.0, 0.8).unwrap(),
            TestFunction::robin(2.0, 1.5).unwrap(),
            TestFunction::robin(0.0, 1.5).unwrap(),
            TestFunction::mollifier(0.2).unwrap(),
        ]
    }

    #[test]
    fn interior_bump_is_trivially_neumann() {
        let f = TestFunction::bump(1.0, 0.5).unwrap();
        assert_eq!(f.f(0.0), 0.0);
        assert_eq!(f.df(0.0), 0.0);
        assert_eq!(f.bc_class(), BcClass::Neumann);
        assert_eq!(f.f(1.0), 1.0);
    }

    #[test]
    fn robin_family_boundary_values() {
        let n = TestFunction::robin(0.0, 1.0).unwrap();
        assert_eq!(n.f(0.0), 1.0);
        assert_eq!(n.df(0.0), 0.0);
        assert_eq!(n.bc_class(), BcClass::Neumann);

        let r = TestFunction::robin(2.0, 1.0).unwrap();
        // numerical differentiation oracle, one-sided into the domain
        let h = 1e-6;
        let fd = (-3.0 * r.f(0.0) + 4.0 * r.f(h) - r.f(2.0 * h)) / (2.0 * h);
        assert!((fd - 2.0 * r.f(0.0)).abs() < 1e-8);
        assert!((r.df(0.0) - 2.0 * r.f(0.0)).abs() < BC_TOLERANCE);
    }

    #[test]
    fn wrong_declared_class_is_rejected() {
        let shape = Shape::Robin {
            kappa: 2.0,
            plateau: 0.3,
            cutoff: 1.0,
        };
        assert!(TestFunction::with_class(shape, BcClass::Neumann).is_err());
        assert!(TestFunction::with_class(shape, BcClass::Robin(2.0)).is_ok());
        assert!(TestFunction::bump(1.0, 0.0).is_err());
    }

    #[test]
    fn vanishes_beyond_support() {
        for f in all_examples() {
            let r = f.support_right();
            for u in [r, r + 1e-9, r + 0.5, 10.0 * r + 3.0] {
                assert_eq!(f.derivatives(u), [0.0; 3], "{}", f.name());
                assert_eq!(f.antiderivative(u), 0.0);
            }
        }
    }

    #[test]
    fn antiderivative_derivative_is_f() {
        for f in all_examples() {
            let r = f.support_right();
            let h = 1e-5 * r;
            let scale = (0..200).map(|i| f.f(r * i as f64 / 200.0).abs()).fold(0.0, f64::max);
            for i in 1..50 {
                let u = r * i as f64 / 50.0;
                let fd = (f.antiderivative(u + h) - f.antiderivative(u - h)) / (2.0 * h);
                assert!(
                    (fd - f.f(u)).abs() <= 1e-6 * scale.max(1e-300) + 1e-9,
                    "{} at {u}: {fd} vs {}",
                    f.name(),
                    f.f(u)
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for f in all_examples() {
            let r = f.support_right();
            for i in 1..40 {
                let u = r * i as f64 / 40.0;
                let h = 1e-5 * r;
                let d1 = (f.f(u + h) - f.f(u - h)) / (2.0 * h);
                let d2 = (f.df(u + h) - f.df(u - h)) / (2.0 * h);
                let s1 = 1.0 + f.df(u).abs();
                let s2 = 1.0 + f.d2f(u).abs();
                assert!((d1 - f.df(u)).abs() < 1e-5 * s1, "{} f' at {u}", f.name());
                assert!((d2 - f.d2f(u)).abs() < 1e-5 * s2, "{} f'' at {u}", f.name());
            }
        }
    }

    #[test]
    fn mollifier_is_a_probability_density() {
        for eps in [0.05, 0.2, 1.0] {
            let m = TestFunction::mollifier(eps).unwrap();
            let total = m.integrate(|u| m.f(u));
            assert!((total - 1.0).abs() < 1e-10);
            // F = -h_eps, so F(0) = -1
            assert!((m.antiderivative(0.0) + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn balanced_bump_antiderivative_matches_quadrature() {
        let f = TestFunction::balanced_bump(1.0, 0.8).unwrap();
        for u in [0.3, 0.5, 0.9, 1.2, 1.7] {
            let direct = -quadrature::integrate(|y| f.f(y), u, f.support_right(), 1e-13).integral;
            assert!((f.antiderivative(u) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_function() {
        let z = TestFunction::zero();
        assert_eq!(z.f(0.3), 0.0);
        assert_eq!(z.antiderivative(0.0), 0.0);
        assert_eq!(z.l2_norm_sq(), 0.0);
    }

    #[test]
    fn bump_l2_norm_matches_reference() {
        // int exp(2 - 2/(1-s^2)) ds over (-1,1), scaled by width
        let f = TestFunction::bump(2.0, 0.5).unwrap();
        let base = quadrature::integrate(|s: f64| (2.0 - 2.0 / (1.0 - s * s)).exp(), -1.0 + 1e-12, 1.0 - 1e-12, 1e-14)
            .integral;
        assert!((f.l2_norm_sq() - 0.5 * base).abs() < 1e-10);
    }
}
