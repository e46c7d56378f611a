//! Forward-mode differentiation with dual numbers.
//!
//! A dual number `a + b·ε` with `ε² = 0` carries a value together with one
//! directional-derivative coefficient. Lifting a computation to duals and
//! seeding `ε = 1` on one input yields the exact partial derivative in a
//! single pass; no step-size tuning is involved.
//!
//! The [`Scalar`] trait abstracts over plain `f64` and [`Dual<T>`] so the
//! same evaluation code produces values or derivatives depending on the
//! instantiation. `Dual<Dual<f64>>` nests the construction and is what the
//! extremal solver uses to differentiate residuals that already contain
//! first derivatives.
//!
//! A central-difference fallback ([`fd_derivative`]) is provided as an
//! independent cross-check; it is meant for tests, not production paths.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Failure of a partial numeric operation (the value would be undefined).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of non-positive value {0}")]
    LogNonPositive(f64),
    #[error("square root of negative value {0}")]
    SqrtNegative(f64),
    #[error("{base}^{exponent} is undefined over the reals")]
    PowUndefined { base: f64, exponent: f64 },
}

/// Numeric type the expression evaluator and all derivative kernels work
/// over: either `f64` or a (possibly nested) dual number.
///
/// Partial operations (`div`, `pow`, `ln`, `sqrt`) return a [`NumError`]
/// instead of silently producing NaN, so evaluation failures carry the
/// offending value up to the caller.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Zeroth-order (value) part, used for branching decisions.
    fn value(&self) -> f64;
    /// Structural zero test on all components.
    fn is_structurally_zero(&self) -> bool;

    fn div(self, rhs: Self) -> Result<Self, NumError>;
    fn pow(self, exponent: Self) -> Result<Self, NumError>;
    fn ln(self) -> Result<Self, NumError>;
    fn sqrt(self) -> Result<Self, NumError>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    /// Absolute value. The derivative at 0 is defined as 0, which keeps
    /// the evaluator total.
    fn abs(self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn value(&self) -> f64 {
        *self
    }

    fn is_structurally_zero(&self) -> bool {
        *self == 0.0
    }

    fn div(self, rhs: Self) -> Result<Self, NumError> {
        if rhs == 0.0 {
            Err(NumError::DivisionByZero)
        } else {
            Ok(self / rhs)
        }
    }

    fn pow(self, exponent: Self) -> Result<Self, NumError> {
        let v = self.powf(exponent);
        if v.is_nan() && !self.is_nan() && !exponent.is_nan() {
            Err(NumError::PowUndefined {
                base: self,
                exponent,
            })
        } else {
            Ok(v)
        }
    }

    fn ln(self) -> Result<Self, NumError> {
        if self <= 0.0 {
            Err(NumError::LogNonPositive(self))
        } else {
            Ok(f64::ln(self))
        }
    }

    fn sqrt(self) -> Result<Self, NumError> {
        if self < 0.0 {
            Err(NumError::SqrtNegative(self))
        } else {
            Ok(f64::sqrt(self))
        }
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Dual number `re + im·ε`, `ε² = 0`, generic over the component type so
/// duals can be nested for mixed second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    /// Value part.
    pub re: T,
    /// Derivative (tangent) part.
    pub im: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, im: T) -> Self {
        Dual { re, im }
    }

    /// Lift a value with zero tangent.
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            im: T::from_f64(0.0),
        }
    }

    /// Lift a value with unit tangent — the variable being differentiated.
    pub fn seeded(re: T) -> Self {
        Dual {
            re,
            im: T::from_f64(1.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.im * rhs.re + self.re * rhs.im)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.im)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn is_structurally_zero(&self) -> bool {
        self.re.is_structurally_zero() && self.im.is_structurally_zero()
    }

    fn div(self, rhs: Self) -> Result<Self, NumError> {
        // (a + a'ε)/(c + c'ε) = a/c + (a'c − ac')/c² ε. Structurally
        // constant operands keep an exactly zero tangent, so infinite
        // values cannot leak NaN through 0·inf in the quotient rule.
        let q = self.re.div(rhs.re)?;
        let dq = if self.im.is_structurally_zero() && rhs.im.is_structurally_zero() {
            T::from_f64(0.0)
        } else {
            (self.im * rhs.re - self.re * rhs.im).div(rhs.re * rhs.re)?
        };
        Ok(Dual::new(q, dq))
    }

    fn pow(self, exponent: Self) -> Result<Self, NumError> {
        let base_v = self.re.value();
        let exp_v = exponent.re.value();
        // Constant integer exponents take the power rule: exact where the
        // logarithmic form would round, and valid for negative bases —
        // matching what plain `powf` accepts.
        let const_int_exp = exponent.im.is_structurally_zero() && exp_v.fract() == 0.0;
        if const_int_exp {
            let v = self.re.pow(exponent.re)?;
            let dv = if exp_v == 0.0 || self.im.is_structurally_zero() {
                T::from_f64(0.0)
            } else if exp_v == 1.0 {
                self.im
            } else {
                // e·b^(e−1)·b'  (undefined slope at b = 0 with e < 1)
                let bm1 = self.re.pow(exponent.re - T::from_f64(1.0)).map_err(|_| {
                    NumError::PowUndefined {
                        base: base_v,
                        exponent: exp_v,
                    }
                })?;
                exponent.re * bm1 * self.im
            };
            if !dv.value().is_finite() && !self.im.is_structurally_zero() {
                return Err(NumError::PowUndefined {
                    base: base_v,
                    exponent: exp_v,
                });
            }
            Ok(Dual::new(v, dv))
        } else if base_v > 0.0 {
            // d(b^e) = b^e (e' ln b + e b'/b)
            let v = self.re.pow(exponent.re)?;
            let dv = if self.im.is_structurally_zero() && exponent.im.is_structurally_zero() {
                T::from_f64(0.0)
            } else {
                let ln_b = self.re.ln()?;
                v * (exponent.im * ln_b + exponent.re.div(self.re)? * self.im)
            };
            Ok(Dual::new(v, dv))
        } else {
            // Base <= 0 with a varying or non-integer exponent: the value
            // still follows IEEE pow (negative bases surface as an error
            // through the NaN check), but no real derivative exists, so a
            // seeded tangent is refused.
            let v = self.re.pow(exponent.re)?;
            if self.im.is_structurally_zero() && exponent.im.is_structurally_zero() {
                Ok(Dual::constant(v))
            } else {
                Err(NumError::PowUndefined {
                    base: base_v,
                    exponent: exp_v,
                })
            }
        }
    }

    fn ln(self) -> Result<Self, NumError> {
        let v = self.re.ln()?;
        Ok(Dual::new(v, self.im.div(self.re)?))
    }

    fn sqrt(self) -> Result<Self, NumError> {
        let v = self.re.sqrt()?;
        let dv = if self.im.is_structurally_zero() {
            T::from_f64(0.0)
        } else {
            self.im.div(v + v)?
        };
        Ok(Dual::new(v, dv))
    }

    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.im * self.re.cos())
    }

    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.im * self.re.sin()))
    }

    fn exp(self) -> Self {
        let v = self.re.exp();
        Dual::new(v, self.im * v)
    }

    fn abs(self) -> Self {
        let v = self.re.value();
        if v > 0.0 {
            self
        } else if v < 0.0 {
            -self
        } else {
            // |x|' at 0 := 0
            Dual::constant(self.re.abs())
        }
    }
}

/// ∇f(point)·direction by a single dual pass.
///
/// Both slices must have the same length; `f` receives the point lifted to
/// duals with the tangent seeded along `direction`.
///
/// ```
/// use noether_dt_core::diff::{directional_derivative, Dual, NumError};
///
/// // f(x, y) = x²y at (3, 2), direction (1, 0): df = 2xy = 12
/// let f = |v: &[Dual<f64>]| -> Result<Dual<f64>, NumError> { Ok(v[0] * v[0] * v[1]) };
/// let d = directional_derivative(f, &[3.0, 2.0], &[1.0, 0.0]).unwrap();
/// assert_eq!(d, 12.0);
/// ```
pub fn directional_derivative<T, E, F>(f: F, point: &[T], direction: &[T]) -> Result<T, E>
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Result<Dual<T>, E>,
{
    assert_eq!(
        point.len(),
        direction.len(),
        "point and direction must have equal length"
    );
    let lifted: Vec<Dual<T>> = point
        .iter()
        .zip(direction)
        .map(|(&p, &d)| Dual::new(p, d))
        .collect();
    Ok(f(&lifted)?.im)
}

/// Full gradient: one dual pass per coordinate with a unit seed.
pub fn gradient<T, E, F>(f: F, point: &[T]) -> Result<Vec<T>, E>
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Result<Dual<T>, E>,
{
    let mut out = Vec::with_capacity(point.len());
    let mut lifted: Vec<Dual<T>> = point.iter().map(|&p| Dual::constant(p)).collect();
    for j in 0..point.len() {
        lifted[j].im = T::from_f64(1.0);
        out.push(f(&lifted)?.im);
        lifted[j].im = T::from_f64(0.0);
    }
    Ok(out)
}

/// Jacobian of a vector function; row `i` is the gradient of component `i`.
pub fn jacobian<T, E, F>(f: F, point: &[T], out_dim: usize) -> Result<Vec<Vec<T>>, E>
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Result<Vec<Dual<T>>, E>,
{
    let mut rows: Vec<Vec<T>> = (0..out_dim)
        .map(|_| Vec::with_capacity(point.len()))
        .collect();
    let mut lifted: Vec<Dual<T>> = point.iter().map(|&p| Dual::constant(p)).collect();
    for j in 0..point.len() {
        lifted[j].im = T::from_f64(1.0);
        let col = f(&lifted)?;
        assert_eq!(col.len(), out_dim, "function output dimension changed");
        for (i, v) in col.into_iter().enumerate() {
            rows[i].push(v.im);
        }
        lifted[j].im = T::from_f64(0.0);
    }
    Ok(rows)
}

/// Central difference `(f(p+h·d) − f(p−h·d)) / 2h`.
///
/// Testing oracle only: truncation and cancellation limit it to ~1e-6
/// accuracy at `h = 1e-6`, which is what dual results are compared against.
pub fn fd_derivative<E, F>(f: F, point: &[f64], direction: &[f64], h: f64) -> Result<f64, E>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    assert_eq!(point.len(), direction.len());
    let shift = |sign: f64| -> Vec<f64> {
        point
            .iter()
            .zip(direction)
            .map(|(&p, &d)| p + sign * h * d)
            .collect()
    };
    let fp = f(&shift(1.0))?;
    let fm = f(&shift(-1.0))?;
    Ok((fp - fm) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = Dual<f64>;

    fn ok<T>(v: T) -> Result<T, NumError> {
        Ok(v)
    }

    #[test]
    fn dual_product_rule() {
        // (2 + 1ε)(3 + 0ε) = 6 + 3ε
        let a = D::seeded(2.0);
        let b = D::constant(3.0);
        let p = a * b;
        assert_eq!(p.re, 6.0);
        assert_eq!(p.im, 3.0);
    }

    #[test]
    fn epsilon_squared_vanishes() {
        // (a+bε)(c+dε) = ac + (ad+bc)ε
        let x = D::new(2.0, 5.0);
        let y = D::new(7.0, 11.0);
        let p = x * y;
        assert_eq!(p.re, 14.0);
        assert_eq!(p.im, 2.0 * 11.0 + 5.0 * 7.0);
    }

    #[test]
    fn directional_derivative_of_square() {
        let d = directional_derivative(|v| ok(v[0] * v[0]), &[3.0], &[1.0]).unwrap();
        assert_eq!(d, 6.0);
    }

    #[test]
    fn directional_derivative_of_constant_is_zero() {
        let d = directional_derivative(|_| ok(Dual::constant(4.25)), &[1.0, 2.0], &[1.0, -1.0])
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn directional_derivative_product() {
        // f(x,y) = x·y at (2,5), direction e1 -> y = 5
        let d = directional_derivative(|v| ok(v[0] * v[1]), &[2.0, 5.0], &[1.0, 0.0]).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn gradient_linear() {
        let g = gradient(|v| ok(v[0] + Dual::from_f64(2.0) * v[1]), &[1.0, 1.0]).unwrap();
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn gradient_norm_squared() {
        let g = gradient(
            |v| ok(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]),
            &[1.0, 2.0, 3.0],
        )
        .unwrap();
        assert_eq!(g, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn gradient_sin_product() {
        let g = gradient(|v| ok(v[0].sin() * v[1]), &[0.0, 4.0]).unwrap();
        assert_eq!(g, vec![4.0, 0.0]);
    }

    #[test]
    fn jacobian_identity() {
        let j = jacobian(|v| ok(v.to_vec()), &[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(
            j,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0]
            ]
        );
    }

    #[test]
    fn jacobian_coupled_dynamics_in_control() {
        // F(x,u) = (x2+u1, x1+u2, x2·u1) at x=(1,2,3), u=(4,5);
        // rows of ∂F/∂u are (1,0), (0,1), (x2,0) = (2,0).
        let x = [1.0, 2.0, 3.0];
        let f = |u: &[Dual<f64>]| {
            ok(vec![
                Dual::constant(x[1]) + u[0],
                Dual::constant(x[0]) + u[1],
                Dual::constant(x[1]) * u[0],
            ])
        };
        let j = jacobian(f, &[4.0, 5.0], 3).unwrap();
        assert_eq!(j, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn fd_matches_dual_on_square() {
        let f = |v: &[f64]| -> Result<f64, NumError> { Ok(v[0] * v[0]) };
        let d = fd_derivative(f, &[3.0], &[1.0], 1e-6).unwrap();
        assert!((d - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_exponential_at_zero() {
        let f = |v: &[f64]| -> Result<f64, NumError> { Ok(v[0].exp()) };
        let d = fd_derivative(f, &[0.0], &[1.0], 1e-6).unwrap();
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn division_by_zero_reported() {
        let r = D::seeded(1.0).div(D::constant(0.0));
        assert_eq!(r.unwrap_err(), NumError::DivisionByZero);
    }

    #[test]
    fn ln_domain_error_carries_value() {
        let r = D::seeded(-2.5).ln();
        assert_eq!(r.unwrap_err(), NumError::LogNonPositive(-2.5));
    }

    #[test]
    fn abs_derivative_at_zero_is_zero() {
        let a = D::seeded(0.0).abs();
        assert_eq!(a.re, 0.0);
        assert_eq!(a.im, 0.0);
        let b = D::seeded(-2.0).abs();
        assert_eq!(b.re, 2.0);
        assert_eq!(b.im, -1.0);
    }

    #[test]
    fn integer_pow_handles_negative_base() {
        let x = D::seeded(-2.0);
        let p = x.pow(D::constant(3.0)).unwrap();
        assert_eq!(p.re, -8.0);
        assert_eq!(p.im, 12.0); // 3·(−2)²
    }

    #[test]
    fn fractional_pow_of_negative_base_is_domain_error() {
        let r = D::seeded(-2.0).pow(D::constant(0.5));
        assert!(matches!(r, Err(NumError::PowUndefined { .. })));
    }

    #[test]
    fn general_pow_derivative() {
        // d/dx x^x = x^x (ln x + 1) at x = 2
        let x = D::seeded(2.0);
        let p = x.pow(x).unwrap();
        let expect = 4.0 * (2.0f64.ln() + 1.0);
        assert!((p.im - expect).abs() < 1e-12);
    }

    #[test]
    fn nested_duals_give_second_derivative() {
        // f(x) = x³; f''(x) = 6x. Outer seed differentiates the inner tangent.
        type DD = Dual<Dual<f64>>;
        let x = DD::new(Dual::seeded(2.0), Dual::constant(1.0));
        let y = x * x * x;
        // y.im.im = d/dx (3x²) = 6x = 12
        assert_eq!(y.im.im, 12.0);
    }

    #[test]
    fn linearity_in_direction() {
        let f = |v: &[Dual<f64>]| ok(v[0] * v[0] * v[1] + v[1].sin());
        let p = [1.3, -0.4];
        let d1 = [0.7, 0.2];
        let d2 = [-0.3, 1.1];
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        let g1 = directional_derivative(f, &p, &d1).unwrap();
        let g2 = directional_derivative(f, &p, &d2).unwrap();
        let gs = directional_derivative(f, &p, &sum).unwrap();
        assert!((gs - (2.0 * g1 + 3.0 * g2)).abs() < 1e-12);
    }
}
