use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{state, DiscretePlant, PendulumParams, State};
use crate::gp::FitOptions;
use crate::mpc::{OcpSpec, SolverConfig};
use crate::neural_cost::{NetArchitecture, QuadraticCost};
use crate::safe_bo::{BoConfig, Domain, ObjectiveTransform, SurrogateMode};
use crate::stability::StabilityEnvelope;

use super::HarnessError;

pub type Mat4 = [[f64; 4]; 4];

pub fn diag(d: [f64; 4]) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        m[i][i] = d[i];
    }
    m
}

pub fn to_matrix(m: &Mat4) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub rho: f64,
    pub chi: f64,
    pub nu: f64,
}

/// Parameter box, centred at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBox {
    pub initial_halfwidth: f64,
    pub growth: f64,
    pub cap_halfwidth: f64,
    /// Safe seeds are drawn from the initial box shrunk by this factor.
    pub seed_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub pool_size: usize,
    pub refine_top: usize,
    pub local_search_passes: usize,
    pub objective_transform: ObjectiveTransform,
    pub gp_fit: FitOptions,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        let bo = BoConfig::default();
        Self {
            pool_size: bo.pool_size,
            refine_top: bo.refine_top,
            local_search_passes: bo.local_search_passes,
            objective_transform: bo.objective_transform,
            gp_fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub true_plant: PendulumParams<f64>,
    pub prediction_model: PendulumParams<f64>,
    pub ts: f64,
    pub x0: [f64; 4],
    pub x_d: [f64; 4],
    pub u_d: f64,
    /// Closed-loop episode length `M`.
    pub episode_length: usize,
    pub horizon: usize,
    pub q: Mat4,
    pub r: f64,
    pub v: Mat4,
    pub w: f64,
    pub z: Mat4,
    pub u_min: f64,
    pub u_max: f64,
    pub architecture: NetArchitecture,
    pub envelope: EnvelopeConfig,
    pub beta: f64,
    pub delta: f64,
    pub tau: f64,
    pub theta_box: ThetaBox,
    pub n_init: usize,
    pub n_iter: usize,
    pub seed: u64,
    /// Seed generation aborts once at least `min_seed_draws` draws have an
    /// acceptance rate below this.
    pub acceptance_floor: f64,
    pub min_seed_draws: usize,
    pub solver: SolverConfig,
    pub acquisition: AcquisitionConfig,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let v = diag([10.0, 10.0, 0.1, 0.1]);
        let mut z = v;
        z.iter_mut().flatten().for_each(|e| *e *= 10.0);
        Self {
            true_plant: PendulumParams::true_plant(),
            prediction_model: PendulumParams::prediction_model(),
            ts: 0.05,
            x0: [0.0; 4],
            x_d: [PI, PI, 0.0, 0.0],
            u_d: 0.0,
            episode_length: 150,
            horizon: 20,
            q: diag([10.0, 10.0, 0.1, 0.1]),
            r: 0.01,
            v,
            w: 0.01,
            z,
            u_min: -50.0,
            u_max: 50.0,
            architecture: NetArchitecture::default(),
            envelope: EnvelopeConfig {
                rho: 2.5,
                chi: 0.985,
                nu: 0.2,
            },
            beta: 2.0,
            delta: 0.046,
            tau: 0.1,
            theta_box: ThetaBox {
                initial_halfwidth: 1.0,
                growth: 1.05,
                cap_halfwidth: 5.0,
                seed_scale: 0.5,
            },
            n_init: 100,
            n_iter: 400,
            seed: 0,
            acceptance_floor: 0.01,
            min_seed_draws: 100,
            solver: SolverConfig::default(),
            acquisition: AcquisitionConfig::default(),
            output_dir: None,
        }
    }
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn psd(name: &str, m: &Mat4) -> Result<(), HarnessError> {
    let m = to_matrix(m);
    if (m - m.transpose()).abs().max() > 1e-12 {
        return Err(bad(format!("{name} is not symmetric")));
    }
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().any(|e| *e < -1e-12) {
        return Err(bad(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.plant()?;
        self.spec()?;
        self.stability_envelope()?;
        self.domain()?;
        self.bo_config(0).validate().map_err(|e| bad(e.to_string()))?;
        psd("v", &self.v)?;
        psd("z", &self.z)?;
        if !(self.w >= 0.0) {
            return Err(bad("w must be nonnegative"));
        }
        if self.episode_length == 0 {
            return Err(bad("episode_length must be positive"));
        }
        if self.n_init == 0 {
            return Err(bad("n_init must be at least 1 (the baseline)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(bad("delta must lie in (0, 1)"));
        }
        if !(self.acceptance_floor > 0.0 && self.acceptance_floor <= 1.0) {
            return Err(bad("acceptance_floor must lie in (0, 1]"));
        }
        let tb = &self.theta_box;
        if !(tb.seed_scale > 0.0 && tb.seed_scale <= 1.0) {
            return Err(bad("theta_box.seed_scale must lie in (0, 1]"));
        }
        if self.x0.iter().chain(&self.x_d).any(|v| !v.is_finite()) || !self.u_d.is_finite() {
            return Err(bad("x0, x_d and u_d must be finite"));
        }
        Ok(())
    }

    pub fn x0(&self) -> State<f64> {
        state(self.x0[0], self.x0[1], self.x0[2], self.x0[3])
    }

    pub fn x_d(&self) -> State<f64> {
        state(self.x_d[0], self.x_d[1], self.x_d[2], self.x_d[3])
    }

    pub fn plant(&self) -> Result<DiscretePlant<f64>, HarnessError> {
        DiscretePlant::new(self.true_plant, self.ts).map_err(|e| bad(format!("true_plant: {e}")))
    }

    pub fn model(&self) -> Result<DiscretePlant<f64>, HarnessError> {
        DiscretePlant::new(self.prediction_model, self.ts).map_err(|e| bad(format!("prediction_model: {e}")))
    }

    pub fn quadratic_cost(&self) -> Result<QuadraticCost<f64>, HarnessError> {
        QuadraticCost::new(to_matrix(&self.q), self.r, self.x_d(), self.u_d).map_err(|e| bad(e.to_string()))
    }

    pub fn spec(&self) -> Result<OcpSpec<f64, DiscretePlant<f64>>, HarnessError> {
        self.solver.validate().map_err(|e| bad(e.to_string()))?;
        OcpSpec::with_riccati_terminal(
            self.horizon,
            self.model()?,
            self.quadratic_cost()?,
            self.architecture.clone(),
            self.u_min,
            self.u_max,
        )
        .map_err(|e| bad(e.to_string()))
    }

    pub fn stability_envelope(&self) -> Result<StabilityEnvelope<f64>, HarnessError> {
        let e = self.envelope;
        StabilityEnvelope::new(e.rho, e.chi, e.nu).map_err(|e| bad(e.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.architecture.param_count()
    }

    pub fn domain(&self) -> Result<Domain, HarnessError> {
        let tb = &self.theta_box;
        Domain::symmetric(self.param_count(), tb.initial_halfwidth, tb.cap_halfwidth, tb.growth).map_err(|e| bad(e.to_string()))
    }

    pub fn bo_config(&self, seed: u64) -> BoConfig {
        let a = &self.acquisition;
        BoConfig {
            beta: self.beta,
            tau: self.tau,
            pool_size: a.pool_size,
            refine_top: a.refine_top,
            local_search_passes: a.local_search_passes,
            objective_transform: a.objective_transform,
            objective_surrogate: SurrogateMode::Fitted(a.gp_fit.clone()),
            constraint_surrogate: SurrogateMode::Fitted(a.gp_fit.clone()),
            objective_sentinel: super::SENTINEL_COST,
            seed,
        }
    }
}
