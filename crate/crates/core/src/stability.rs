//! Closed-loop stability margin against the envelope
//! `max{rho * chi^k * |x_0 - x_d|, nu}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::State;
use crate::scalar::Real;

/// Margin reported for trajectories whose simulation blew up.
pub const EXPLODED_MARGIN: f64 = -1e3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("invalid envelope: rho = {rho}, chi = {chi}, nu = {nu} (need rho > 0, 0 < chi < 1, nu > 0)")]
    InvalidEnvelope { rho: f64, chi: f64, nu: f64 },
    #[error("trajectory has {states} states and {inputs} inputs")]
    LengthMismatch { states: usize, inputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityEnvelope<T> {
    pub rho: T,
    pub chi: T,
    pub nu: T,
}

impl<T: Real> StabilityEnvelope<T> {
    pub fn new(rho: T, chi: T, nu: T) -> Result<Self, StabilityError> {
        let env = Self { rho, chi, nu };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), StabilityError> {
        let ok = self.rho > T::zero() && self.chi > T::zero() && self.chi < T::one() && self.nu > T::zero();
        if ok && self.rho.finite() && self.nu.finite() {
            Ok(())
        } else {
            Err(StabilityError::InvalidEnvelope {
                rho: self.rho.as_f64(),
                chi: self.chi.as_f64(),
                nu: self.nu.as_f64(),
            })
        }
    }

    /// Bound on `|x_k - x_d|` given the initial distance `d0`.
    pub fn bound(&self, d0: T, k: usize) -> T {
        let decay = self.rho * self.chi.powi(k as i32) * d0;
        if decay > self.nu {
            decay
        } else {
            self.nu
        }
    }
}

pub fn envelope<T: Real>(env: &StabilityEnvelope<T>, d0: T, k: usize) -> T {
    env.bound(d0, k)
}

/// Closed-loop run `x_0..x_M` with the inputs `u_0..u_{M-1}` that produced it.
///
/// An exploded run keeps the finite prefix and records the step at which
/// integration failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T: Real> {
    pub states: Vec<State<T>>,
    pub inputs: Vec<T>,
    pub exploded_at: Option<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(states: Vec<State<T>>, inputs: Vec<T>) -> Result<Self, StabilityError> {
        if states.is_empty() || states.len() != inputs.len() + 1 {
            return Err(StabilityError::LengthMismatch {
                states: states.len(),
                inputs: inputs.len(),
            });
        }
        Ok(Self {
            states,
            inputs,
            exploded_at: None,
        })
    }

    /// Truncated run: the input at index `inputs.len() - 1` led to a non-finite state.
    pub fn exploded(states: Vec<State<T>>, inputs: Vec<T>) -> Result<Self, StabilityError> {
        if states.is_empty() || states.len() != inputs.len() {
            return Err(StabilityError::LengthMismatch {
                states: states.len(),
                inputs: inputs.len(),
            });
        }
        let at = inputs.len() - 1;
        Ok(Self {
            states,
            inputs,
            exploded_at: Some(at),
        })
    }

    /// Number of simulated transitions.
    pub fn run_length(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_exploded(&self) -> bool {
        self.exploded_at.is_some()
    }
}

/// `G_1 = min_k (envelope(|x_0 - x_d|, k) - |x_k - x_d|)` over `k = 0..=M`.
pub fn stability_margin<T: Real>(traj: &Trajectory<T>, env: &StabilityEnvelope<T>, x_d: &State<T>) -> T {
    if traj.is_exploded() {
        return T::lit(EXPLODED_MARGIN);
    }
    let d0 = (traj.states[0] - x_d).norm();
    traj.states
        .iter()
        .enumerate()
        .map(|(k, x)| env.bound(d0, k) - (x - x_d).norm())
        .reduce(|a, b| if b < a { b } else { a })
        .expect("trajectory has at least one state")
}

/// Closed inequality: a zero margin counts as stable.
pub fn is_stable<T: Real>(traj: &Trajectory<T>, env: &StabilityEnvelope<T>, x_d: &State<T>) -> bool {
    stability_margin(traj, env, x_d) >= T::zero()
}
