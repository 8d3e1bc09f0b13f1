//! Double-pendulum plant, RK4 discretization and finite-difference linearization.
//!
//! The state is `x = (psi1, psi2, dpsi1, dpsi2)` with absolute link angles
//! measured from the hanging position, so `(0, 0, 0, 0)` is the downward and
//! `(pi, pi, 0, 0)` the upright equilibrium. The scalar input is an
//! acceleration acting on the first link.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub type State<T> = Vector4<T>;
pub type StateDerivative<T> = Vector4<T>;
/// One-step state Jacobian `A = df/dx`.
pub type StateJacobian<T> = Matrix4<T>;
/// One-step input Jacobian `B = df/du`.
pub type InputJacobian<T> = Vector4<T>;

pub const STATE_DIM: usize = 4;

/// Default finite-difference step used by [`linearize`].
pub const LINEARIZE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid plant parameter `{name}`: {value} (must be finite and > 0)")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("state became non-finite during integration")]
    Exploded,
    #[error("linearization produced non-finite entries")]
    NonFiniteJacobian,
}

pub fn state<T: Real>(psi1: T, psi2: T, dpsi1: T, dpsi2: T) -> State<T> {
    Vector4::new(psi1, psi2, dpsi1, dpsi2)
}

fn all_finite<T: Real>(x: &State<T>) -> bool {
    x.iter().all(|v| v.finite())
}

/// Link masses [kg], lengths [m] and gravity [m/s^2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams<T> {
    pub m1: T,
    pub m2: T,
    pub l1: T,
    pub l2: T,
    pub g: T,
}

impl<T: Real> PendulumParams<T> {
    pub fn new(m1: T, m2: T, l1: T, l2: T, g: T) -> Result<Self, DynamicsError> {
        let p = Self { m1, m2, l1, l2, g };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("g", self.g),
        ] {
            if !(v.finite() && v > T::zero()) {
                return Err(DynamicsError::InvalidParameter {
                    name,
                    value: v.as_f64(),
                });
            }
        }
        Ok(())
    }

    /// Unit masses and lengths.
    pub fn true_plant() -> Self {
        Self {
            m1: T::one(),
            m2: T::one(),
            l1: T::one(),
            l2: T::one(),
            g: T::lit(9.81),
        }
    }

    /// Mismatched parameters used by the MPC prediction model.
    pub fn prediction_model() -> Self {
        Self {
            m1: T::lit(2.0),
            m2: T::lit(0.5),
            l1: T::lit(1.2),
            l2: T::lit(1.2),
            g: T::lit(9.81),
        }
    }
}

/// Continuous-time vector field `x' = F(x, u)`.
pub trait ContinuousDynamics<T: Real> {
    fn deriv(&self, x: &State<T>, u: T) -> StateDerivative<T>;
}

/// Double-pendulum vector field with the input added to the first link's
/// angular acceleration.
pub fn pendulum_deriv<T: Real>(x: &State<T>, u: T, p: &PendulumParams<T>) -> StateDerivative<T> {
    let (psi1, psi2, w1, w2) = (x[0], x[1], x[2], x[3]);
    let (s1, c1) = psi1.sin_cos();
    let (s2, c2) = psi2.sin_cos();
    let (s21, c21) = (s2 * c1 - c2 * s1, c2 * c1 + s2 * s1);
    let mt = p.m1 + p.m2;

    // (m1 + m2) l1 - m2 l1 c21^2 >= m1 l1 > 0
    let den = mt * p.l1 - p.m2 * p.l1 * c21 * c21;

    let num1 = p.m2 * p.l1 * w1 * w1 * s21 * c21
        + p.m2 * p.g * s2 * c21
        + p.m2 * p.l2 * w2 * w2 * s21
        - mt * p.g * s1;
    let num2 = -p.m2 * p.l2 * w2 * w2 * s21 * c21
        + mt * (p.g * s1 * c21 - p.l1 * w1 * w1 * s21 - p.g * s2);

    let acc1 = num1 / den + u;
    let acc2 = num2 / ((p.l2 / p.l1) * den);
    Vector4::new(w1, w2, acc1, acc2)
}

impl<T: Real> ContinuousDynamics<T> for PendulumParams<T> {
    #[inline]
    fn deriv(&self, x: &State<T>, u: T) -> StateDerivative<T> {
        pendulum_deriv(x, u, self)
    }
}

/// Classical fourth-order Runge-Kutta step with the input held constant.
pub fn rk4_step<T, D>(dynamics: &D, ts: T, x: &State<T>, u: T) -> Result<State<T>, DynamicsError>
where
    T: Real,
    D: ContinuousDynamics<T> + ?Sized,
{
    let half = ts * T::lit(0.5);
    let k1 = dynamics.deriv(x, u);
    let k2 = dynamics.deriv(&(x + k1 * half), u);
    let k3 = dynamics.deriv(&(x + k2 * half), u);
    let k4 = dynamics.deriv(&(x + k3 * ts), u);
    let next = x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (ts / T::lit(6.0));
    if all_finite(&next) {
        Ok(next)
    } else {
        Err(DynamicsError::Exploded)
    }
}

/// Discrete-time map `x_{k+1} = f(x_k, u_k)`.
pub trait DiscreteModel<T: Real> {
    fn step(&self, x: &State<T>, u: T) -> Result<State<T>, DynamicsError>;
}

impl<T: Real, M: DiscreteModel<T> + ?Sized> DiscreteModel<T> for &M {
    fn step(&self, x: &State<T>, u: T) -> Result<State<T>, DynamicsError> {
        (**self).step(x, u)
    }
}

/// A continuous vector field discretized with one RK4 step per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretePlant<T, D = PendulumParams<T>> {
    pub dynamics: D,
    pub ts: T,
}

impl<T: Real, D: ContinuousDynamics<T>> DiscretePlant<T, D> {
    pub fn new(dynamics: D, ts: T) -> Result<Self, DynamicsError> {
        if !(ts.finite() && ts > T::zero()) {
            return Err(DynamicsError::InvalidParameter {
                name: "ts",
                value: ts.as_f64(),
            });
        }
        Ok(Self { dynamics, ts })
    }
}

impl<T: Real, D: ContinuousDynamics<T>> DiscreteModel<T> for DiscretePlant<T, D> {
    #[inline]
    fn step(&self, x: &State<T>, u: T) -> Result<State<T>, DynamicsError> {
        rk4_step(&self.dynamics, self.ts, x, u)
    }
}

/// Affine discrete model `x+ = A x + B u + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel<T: Real> {
    pub a: StateJacobian<T>,
    pub b: InputJacobian<T>,
    pub c: State<T>,
}

impl<T: Real> LinearModel<T> {
    pub fn new(a: StateJacobian<T>, b: InputJacobian<T>) -> Self {
        Self {
            a,
            b,
            c: State::zeros(),
        }
    }
}

impl<T: Real> DiscreteModel<T> for LinearModel<T> {
    fn step(&self, x: &State<T>, u: T) -> Result<State<T>, DynamicsError> {
        let next = self.a * x + self.b * u + self.c;
        if all_finite(&next) {
            Ok(next)
        } else {
            Err(DynamicsError::Exploded)
        }
    }
}

/// Central-difference Jacobians of a discrete model around `(x, u)`.
pub fn linearize<T, M>(
    model: &M,
    x: &State<T>,
    u: T,
    h: T,
) -> Result<(StateJacobian<T>, InputJacobian<T>), DynamicsError>
where
    T: Real,
    M: DiscreteModel<T> + ?Sized,
{
    let inv_2h = T::one() / (h + h);
    let mut a = StateJacobian::zeros();
    for j in 0..STATE_DIM {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let col = (model.step(&xp, u)? - model.step(&xm, u)?) * inv_2h;
        a.set_column(j, &col);
    }
    let b = (model.step(x, u + h)? - model.step(x, u - h)?) * inv_2h;
    if a.iter().chain(b.iter()).all(|v| v.finite()) {
        Ok((a, b))
    } else {
        Err(DynamicsError::NonFiniteJacobian)
    }
}
