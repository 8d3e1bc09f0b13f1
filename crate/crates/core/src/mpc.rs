//! Parametrized finite-horizon optimal control problem, solved by single
//! shooting with projected gradient steps onto the input box.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{linearize, DiscreteModel, DynamicsError, State, LINEARIZE_STEP};
use crate::neural_cost::{CostError, NetArchitecture, ParamVector, QuadraticCost, StageCost};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid OCP: {0}")]
    InvalidSpec(String),
    #[error("Riccati iteration did not converge after {iterations} steps; the linearization is likely not stabilizable")]
    RiccatiNotConverged { iterations: usize },
    #[error("input sequence has length {got}, horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once `||u - proj(u - grad)||_inf` falls below this.
    pub gradient_tolerance: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let ok = self.max_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0;
        if ok {
            Ok(())
        } else {
            Err(MpcError::InvalidSpec(format!("bad solver settings {self:?}")))
        }
    }
}

/// Solution of the discrete algebraic Riccati equation and the associated LQR gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    pub p: DMatrix<T>,
    pub gain: DMatrix<T>,
    pub iterations: usize,
}

/// Fixed-point iteration `P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q` from `P = Q`.
pub fn solve_dare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    tol: T,
    max_iterations: usize,
) -> Result<RiccatiSolution<T>, MpcError> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for it in 1..=max_iterations {
        let pa = &p * a;
        let pb = &p * b;
        let s = r + &bt * &pb;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| MpcError::InvalidSpec("R + B'PB is singular".into()))?;
        let gain = &s_inv * (&bt * &pa);
        let next = &at * &pa - (&at * &pb) * &gain + q;
        let next = (&next + next.transpose()) * T::lit(0.5);
        if next.iter().any(|v| !v.finite()) {
            return Err(MpcError::RiccatiNotConverged { iterations: it });
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol {
            let gain = (r + &bt * &p * b)
                .try_inverse()
                .ok_or_else(|| MpcError::InvalidSpec("R + B'PB is singular".into()))?
                * (&bt * &p * a);
            return Ok(RiccatiSolution {
                p,
                gain,
                iterations: it,
            });
        }
    }
    Err(MpcError::RiccatiNotConverged {
        iterations: max_iterations,
    })
}

/// Residual of the DARE, `max |A'PA - A'PB(R+B'PB)^-1 B'PA + Q - P|`.
pub fn dare_residual<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, q: &DMatrix<T>, r: &DMatrix<T>, p: &DMatrix<T>) -> T {
    let at = a.transpose();
    let bt = b.transpose();
    let s = r + &bt * p * b;
    let s_inv = s.try_inverse().expect("R + B'PB invertible");
    let rhs = &at * p * a - &at * p * b * s_inv * &bt * p * a + q;
    (rhs - p).amax()
}

pub const RICCATI_TOLERANCE: f64 = 1e-10;
pub const RICCATI_MAX_ITERATIONS: usize = 100_000;

/// Terminal weight `P` and LQR gain for the model linearized at the set-point.
pub fn terminal_weight<T, M>(model: &M, quad: &QuadraticCost<T>) -> Result<(Matrix4<T>, RiccatiSolution<T>), MpcError>
where
    T: Real,
    M: DiscreteModel<T> + ?Sized,
{
    let (a, b) = linearize(model, &quad.x_d, quad.u_d, T::lit(LINEARIZE_STEP))?;
    let a = DMatrix::from_iterator(4, 4, a.iter().copied());
    let b = DMatrix::from_iterator(4, 1, b.iter().copied());
    let q = DMatrix::from_iterator(4, 4, quad.q.iter().copied());
    let r = DMatrix::from_element(1, 1, quad.r);
    let sol = solve_dare(&a, &b, &q, &r, T::lit(RICCATI_TOLERANCE), RICCATI_MAX_ITERATIONS)?;
    let p = Matrix4::from_iterator(sol.p.iter().copied());
    Ok((p, sol))
}

/// Problem data independent of the cost parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec<T: Real, M> {
    pub horizon: usize,
    pub model: M,
    pub quad: QuadraticCost<T>,
    pub arch: NetArchitecture,
    pub terminal: Matrix4<T>,
    pub u_min: T,
    pub u_max: T,
}

impl<T: Real, M: DiscreteModel<T>> OcpSpec<T, M> {
    pub fn new(
        horizon: usize,
        model: M,
        quad: QuadraticCost<T>,
        arch: NetArchitecture,
        terminal: Matrix4<T>,
        u_min: T,
        u_max: T,
    ) -> Result<Self, MpcError> {
        if horizon == 0 {
            return Err(MpcError::InvalidSpec("horizon must be >= 1".into()));
        }
        if !(u_min < u_max) {
            return Err(MpcError::InvalidSpec(format!(
                "input bounds [{}, {}] are empty",
                u_min.as_f64(),
                u_max.as_f64()
            )));
        }
        arch.validate()?;
        Ok(Self {
            horizon,
            model,
            quad,
            arch,
            terminal,
            u_min,
            u_max,
        })
    }

    /// Builds the spec with the Riccati terminal weight of the prediction model.
    pub fn with_riccati_terminal(
        horizon: usize,
        model: M,
        quad: QuadraticCost<T>,
        arch: NetArchitecture,
        u_min: T,
        u_max: T,
    ) -> Result<Self, MpcError> {
        let (p, _) = terminal_weight(&model, &quad)?;
        Self::new(horizon, model, quad, arch, p, u_min, u_max)
    }

    pub fn instantiate(&self, theta: &ParamVector<T>) -> Result<Ocp<'_, T, M>, MpcError> {
        Ok(Ocp {
            spec: self,
            cost: StageCost::new(self.quad, &self.arch, theta)?,
        })
    }

    fn clamp(&self, u: T) -> T {
        if u < self.u_min {
            self.u_min
        } else if u > self.u_max {
            self.u_max
        } else {
            u
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcpSolution<T: Real> {
    pub inputs: Vec<T>,
    pub states: Vec<State<T>>,
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: T,
}

/// An OCP with its stage cost instantiated for one parameter vector.
#[derive(Debug, Clone)]
pub struct Ocp<'a, T: Real, M> {
    pub spec: &'a OcpSpec<T, M>,
    pub cost: StageCost<T>,
}

impl<T: Real, M: DiscreteModel<T>> Ocp<'_, T, M> {
    fn terminal_cost(&self, x: &State<T>) -> T {
        let dx = x - self.spec.quad.x_d;
        dx.dot(&(self.spec.terminal * dx))
    }

    /// Simulates the prediction model and accumulates `J`.
    pub fn rollout(&self, x0: &State<T>, useq: &[T]) -> Result<(T, Vec<State<T>>), MpcError> {
        if useq.len() != self.spec.horizon {
            return Err(MpcError::HorizonMismatch {
                expected: self.spec.horizon,
                got: useq.len(),
            });
        }
        let mut states = Vec::with_capacity(useq.len() + 1);
        states.push(*x0);
        let mut j = T::zero();
        let mut x = *x0;
        for &u in useq {
            j += self.cost.eval(&x, u);
            x = self.spec.model.step(&x, u)?;
            states.push(x);
        }
        j += self.terminal_cost(&x);
        Ok((j, states))
    }

    /// `J` and `dJ/du` by reverse accumulation through the rollout.
    pub fn cost_and_gradient(&self, x0: &State<T>, useq: &[T]) -> Result<(T, Vec<State<T>>, Vec<T>), MpcError> {
        let (j, states) = self.rollout(x0, useq)?;
        let n = useq.len();
        let h = T::lit(LINEARIZE_STEP);
        let mut grad = vec![T::zero(); n];
        let p = self.spec.terminal;
        let mut costate = (p + p.transpose()) * (states[n] - self.spec.quad.x_d);
        for i in (0..n).rev() {
            let (a, b) = linearize(&self.spec.model, &states[i], useq[i], h)?;
            let (gx, gu) = self.cost.grad(&states[i], useq[i]);
            grad[i] = gu + b.dot(&costate);
            costate = gx + a.transpose() * costate;
        }
        Ok((j, states, grad))
    }

    fn projected_gradient_norm(&self, useq: &[T], grad: &[T]) -> T {
        useq.iter()
            .zip(grad)
            .map(|(&u, &g)| (u - self.spec.clamp(u - g)).abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }

    /// Projected gradient descent with Armijo backtracking. Initial trial steps
    /// follow the Barzilai-Borwein rule.
    pub fn solve(&self, x0: &State<T>, init: Option<&[T]>, cfg: &SolverConfig) -> Result<OcpSolution<T>, MpcError> {
        if !x0.iter().all(|v| v.finite()) {
            return Err(DynamicsError::Exploded.into());
        }
        let n = self.spec.horizon;
        let mut u: Vec<T> = match init {
            Some(w) if w.len() == n => w.iter().map(|&v| self.spec.clamp(v)).collect(),
            Some(w) => {
                return Err(MpcError::HorizonMismatch {
                    expected: n,
                    got: w.len(),
                })
            }
            None => vec![self.spec.clamp(self.spec.quad.u_d); n],
        };
        let tol = T::lit(cfg.gradient_tolerance);
        let c1 = T::lit(cfg.armijo_c);
        let shrink = T::lit(cfg.backtrack_factor);
        let (mut j, mut states, mut g) = self.cost_and_gradient(x0, &u)?;
        let gmax = g.iter().fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
        let mut step = if gmax > T::zero() { T::one() / gmax } else { T::one() };
        let mut pg = self.projected_gradient_norm(&u, &g);
        let mut iterations = 0;
        let mut converged = pg <= tol;

        while !converged && iterations < cfg.max_iterations {
            iterations += 1;
            let mut trial = step;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let cand: Vec<T> = u.iter().zip(&g).map(|(&ui, &gi)| self.spec.clamp(ui - trial * gi)).collect();
                let decrease = g
                    .iter()
                    .zip(cand.iter().zip(&u))
                    .fold(T::zero(), |s, (&gi, (&ci, &ui))| s + gi * (ci - ui));
                if let Ok((jc, _)) = self.rollout(x0, &cand) {
                    if jc <= j + c1 * decrease {
                        accepted = Some(cand);
                        break;
                    }
                }
                trial *= shrink;
            }
            let Some(cand) = accepted else {
                break;
            };
            let (jn, sn, gn) = self.cost_and_gradient(x0, &cand)?;
            let (mut sy, mut yy) = (T::zero(), T::zero());
            for i in 0..n {
                let s = cand[i] - u[i];
                let y = gn[i] - g[i];
                sy += s * y;
                yy += y * y;
            }
            step = if sy > T::zero() { sy / yy } else { trial * T::lit(2.0) };
            u = cand;
            j = jn;
            states = sn;
            g = gn;
            pg = self.projected_gradient_norm(&u, &g);
            converged = pg <= tol;
        }

        Ok(OcpSolution {
            inputs: u,
            states,
            cost: j,
            iterations,
            converged,
            projected_gradient_norm: pg,
        })
    }
}

pub fn rollout_cost<T: Real, M: DiscreteModel<T>>(
    spec: &OcpSpec<T, M>,
    theta: &ParamVector<T>,
    x0: &State<T>,
    useq: &[T],
) -> Result<(T, Vec<State<T>>), MpcError> {
    spec.instantiate(theta)?.rollout(x0, useq)
}

pub fn solve_ocp<T: Real, M: DiscreteModel<T>>(
    spec: &OcpSpec<T, M>,
    theta: &ParamVector<T>,
    x0: &State<T>,
    warm_start: Option<&[T]>,
    cfg: &SolverConfig,
) -> Result<OcpSolution<T>, MpcError> {
    spec.instantiate(theta)?.solve(x0, warm_start, cfg)
}

/// Previous solution shifted by one step with the last input repeated.
pub fn shift_warm_start<T: Real>(prev: &OcpSolution<T>) -> Vec<T> {
    let mut w: Vec<T> = prev.inputs.iter().skip(1).copied().collect();
    if let Some(&last) = prev.inputs.last() {
        w.push(last);
    }
    w
}

/// Receding-horizon controller: one OCP solve per call, first input applied.
#[derive(Debug, Clone)]
pub struct MpcController<'a, T: Real, M> {
    ocp: Ocp<'a, T, M>,
    config: SolverConfig,
    previous: Option<OcpSolution<T>>,
}

impl<'a, T: Real, M: DiscreteModel<T>> MpcController<'a, T, M> {
    pub fn new(spec: &'a OcpSpec<T, M>, theta: &ParamVector<T>, config: SolverConfig) -> Result<Self, MpcError> {
        config.validate()?;
        Ok(Self {
            ocp: spec.instantiate(theta)?,
            config,
            previous: None,
        })
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn step(&mut self, x: &State<T>) -> Result<(T, &OcpSolution<T>), MpcError> {
        let warm = match (&self.previous, self.config.warm_start) {
            (Some(prev), true) => Some(shift_warm_start(prev)),
            _ => None,
        };
        let sol = self.ocp.solve(x, warm.as_deref(), &self.config)?;
        let u = sol.inputs[0];
        let sol = self.previous.insert(sol);
        Ok((u, sol))
    }
}

/// Stateless form of one controller step.
pub fn mpc_policy<T: Real, M: DiscreteModel<T>>(
    spec: &OcpSpec<T, M>,
    theta: &ParamVector<T>,
    x: &State<T>,
    previous: Option<&OcpSolution<T>>,
    cfg: &SolverConfig,
) -> Result<(T, OcpSolution<T>), MpcError> {
    let warm = previous.filter(|_| cfg.warm_start).map(shift_warm_start);
    let sol = solve_ocp(spec, theta, x, warm.as_deref(), cfg)?;
    Ok((sol.inputs[0], sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{state, DiscretePlant, LinearModel, PendulumParams};
    use nalgebra::{Vector4, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pendulum_quad() -> QuadraticCost<f64> {
        QuadraticCost::new(
            Matrix4::from_diagonal(&Vector4::new(10.0, 10.0, 0.1, 0.1)),
            0.01,
            state(PI, PI, 0.0, 0.0),
            0.0,
        )
        .unwrap()
    }

    fn pendulum_spec(horizon: usize) -> OcpSpec<f64, DiscretePlant<f64>> {
        let model = DiscretePlant::new(PendulumParams::prediction_model(), 0.05).unwrap();
        OcpSpec::with_riccati_terminal(horizon, model, pendulum_quad(), NetArchitecture::default(), -50.0, 50.0).unwrap()
    }

    fn spectral_radius(m: &DMatrix<f64>) -> f64 {
        m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn dead_beat_dare_returns_q() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_dare(&a, &b, &q, &r, 1e-12, 100).unwrap();
        assert!((sol.p - q).amax() < 1e-14);
    }

    #[test]
    fn scalar_dare_matches_closed_form() {
        let one = |v| DMatrix::from_element(1, 1, v);
        let sol = solve_dare(&one(0.5), &one(1.0), &one(1.0), &one(1.0), 1e-12, 1000).unwrap();
        let closed = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - closed).abs() < 1e-10);
        assert!((closed - 1.1328).abs() < 1e-4);
    }

    #[test]
    fn pendulum_terminal_weight_is_a_dare_solution() {
        let model = DiscretePlant::new(PendulumParams::prediction_model(), 0.05).unwrap();
        let quad = pendulum_quad();
        let (p, sol) = terminal_weight(&model, &quad).unwrap();
        let (a, b) = linearize(&model, &quad.x_d, 0.0, 1e-6).unwrap();
        let a = DMatrix::from_iterator(4, 4, a.iter().copied());
        let b = DMatrix::from_iterator(4, 1, b.iter().copied());
        let q = DMatrix::from_iterator(4, 4, quad.q.iter().copied());
        let r = DMatrix::from_element(1, 1, quad.r);
        assert!(dare_residual(&a, &b, &q, &r, &sol.p) <= 1e-8);
        assert!(spectral_radius(&(&a - &b * &sol.gain)) < 1.0);
        assert!(SymmetricEigen::new(p).eigenvalues.min() > 0.0);
    }

    #[test]
    fn unstabilizable_linearization_is_reported() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            solve_dare(&a, &b, &one, &one, 1e-10, 500),
            Err(MpcError::RiccatiNotConverged { .. })
        ));
    }

    #[test]
    fn set_point_rollout_is_free() {
        let spec = pendulum_spec(20);
        let theta = ParamVector::zeros(&spec.arch);
        let (j, _) = rollout_cost(&spec, &theta, &spec.quad.x_d, &[0.0; 20]).unwrap();
        assert!(j.abs() < 1e-18);
    }

    #[test]
    fn single_step_rollout_unrolls() {
        let spec = pendulum_spec(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = ParamVector((0..43).map(|_| rng.random_range(-1.0..1.0)).collect());
        let x0 = state(2.0, 3.5, 0.3, -0.1);
        let (j, states) = rollout_cost(&spec, &theta, &x0, &[4.0]).unwrap();
        let cost = StageCost::new(spec.quad, &spec.arch, &theta).unwrap();
        let x1 = spec.model.step(&x0, 4.0).unwrap();
        let dx = x1 - spec.quad.x_d;
        let expected = cost.eval(&x0, 4.0) + dx.dot(&(spec.terminal * dx));
        assert_eq!(states[1], x1);
        assert!((j - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn horizon_mismatch_rejected() {
        let spec = pendulum_spec(5);
        let theta = ParamVector::zeros(&spec.arch);
        assert!(matches!(
            rollout_cost(&spec, &theta, &spec.quad.x_d, &[0.0; 4]),
            Err(MpcError::HorizonMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn solve_at_set_point_stays_put() {
        let spec = pendulum_spec(20);
        let theta = ParamVector::zeros(&spec.arch);
        let sol = solve_ocp(&spec, &theta, &spec.quad.x_d, None, &SolverConfig::default()).unwrap();
        assert!(sol.inputs.iter().all(|u| u.abs() < 1e-9));
        assert!(sol.cost <= 1e-8);
        assert!(sol.converged);
    }

    #[test]
    fn inputs_respect_bounds_from_hanging_start() {
        let spec = pendulum_spec(20);
        let theta = ParamVector::zeros(&spec.arch);
        let sol = solve_ocp(&spec, &theta, &State::zeros(), None, &SolverConfig::default()).unwrap();
        assert!(sol.inputs.iter().all(|u| (-50.0..=50.0).contains(u)));
        // replay the stored prediction
        let mut x = sol.states[0];
        assert_eq!(x, State::zeros());
        for (k, &u) in sol.inputs.iter().enumerate() {
            x = spec.model.step(&x, u).unwrap();
            assert!((x - sol.states[k + 1]).amax() <= 1e-12);
        }
    }

    #[test]
    fn converged_solution_is_locally_optimal() {
        let spec = pendulum_spec(10);
        let theta = ParamVector::zeros(&spec.arch);
        let x0 = state(PI - 0.2, PI + 0.1, 0.0, 0.3);
        let cfg = SolverConfig {
            max_iterations: 2000,
            ..SolverConfig::default()
        };
        let ocp = spec.instantiate(&theta).unwrap();
        let sol = ocp.solve(&x0, None, &cfg).unwrap();
        assert!(sol.converged, "pg {}", sol.projected_gradient_norm);
        for i in 0..sol.inputs.len() {
            for d in [-1e-3, 1e-3] {
                let mut u = sol.inputs.clone();
                u[i] = (u[i] + d).clamp(-50.0, 50.0);
                let (j, _) = ocp.rollout(&x0, &u).unwrap();
                assert!(j >= sol.cost - 1e-6);
            }
        }
    }

    #[test]
    fn warm_start_shifts_and_repeats() {
        let sol = OcpSolution {
            inputs: vec![1.0, 2.0, 3.0],
            states: vec![],
            cost: 0.0,
            iterations: 0,
            converged: true,
            projected_gradient_norm: 0.0,
        };
        assert_eq!(shift_warm_start(&sol), vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn policy_is_deterministic_and_zero_at_set_point() {
        let spec = pendulum_spec(20);
        let theta = ParamVector::zeros(&spec.arch);
        let cfg = SolverConfig::default();
        let (u, _) = mpc_policy(&spec, &theta, &spec.quad.x_d, None, &cfg).unwrap();
        assert_eq!(u, 0.0);
        let x = state(2.5, 3.0, 0.5, -0.5);
        let (u1, s1) = mpc_policy(&spec, &theta, &x, None, &cfg).unwrap();
        let (u2, s2) = mpc_policy(&spec, &theta, &x, None, &cfg).unwrap();
        assert_eq!(u1.to_bits(), u2.to_bits());
        assert_eq!(s1, s2);
    }

    #[test]
    fn linear_plant_first_input_is_lqr() {
        let a = Matrix4::new(
            1.0, 0.1, 0.0, 0.0, //
            0.0, 1.0, 0.1, 0.0, //
            0.0, 0.0, 0.9, 0.1, //
            0.0, 0.0, 0.0, 0.95,
        );
        let b = Vector4::new(0.0, 0.0, 0.0, 0.1);
        let model = LinearModel::new(a, b);
        let quad = QuadraticCost::new(Matrix4::identity(), 1.0, State::zeros(), 0.0).unwrap();
        let (_, ric) = terminal_weight(&model, &quad).unwrap();
        let spec = OcpSpec::with_riccati_terminal(50, model, quad, NetArchitecture::default(), -1e6, 1e6).unwrap();
        let x0 = state(1.0, -0.5, 0.3, 0.2);
        let cfg = SolverConfig {
            max_iterations: 5000,
            gradient_tolerance: 1e-9,
            ..SolverConfig::default()
        };
        let sol = solve_ocp(&spec, &ParamVector::zeros(&spec.arch), &x0, None, &cfg).unwrap();
        let lqr = -(0..4).map(|j| ric.gain[(0, j)] * x0[j]).sum::<f64>();
        assert!((sol.inputs[0] - lqr).abs() < 1e-4, "{} vs {}", sol.inputs[0], lqr);
    }
}
