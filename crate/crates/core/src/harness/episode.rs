use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{state, DiscreteModel, DynamicsError, State};
use crate::mpc::{MpcController, MpcError};
use crate::neural_cost::ParamVector;
use crate::stability::{stability_margin, StabilityEnvelope, Trajectory, EXPLODED_MARGIN};

use super::config::{to_matrix, ExperimentConfig};
use super::{HarnessError, SENTINEL_COST};

/// `sum_k |x_k - x_d|_V^2 + |u_k - u_d|_W^2` plus `|x_M - x_d|_Z^2`.
///
/// The stage sum covers every stored state, the final one included; the
/// terminal weight is added on top of it.
pub fn performance(
    traj: &Trajectory<f64>,
    v: &Matrix4<f64>,
    w: f64,
    z: &Matrix4<f64>,
    x_d: &State<f64>,
    u_d: f64,
) -> Result<f64, HarnessError> {
    if traj.is_exploded() {
        return Ok(SENTINEL_COST);
    }
    if traj.states.len() != traj.inputs.len() + 1 {
        return Err(HarnessError::Dimension(format!(
            "{} states for {} inputs",
            traj.states.len(),
            traj.inputs.len()
        )));
    }
    let mut g = 0.0;
    for x in &traj.states {
        let dx = x - x_d;
        g += dx.dot(&(v * dx));
    }
    for u in &traj.inputs {
        g += w * (u - u_d) * (u - u_d);
    }
    let dx = traj.states.last().expect("nonempty") - x_d;
    g += dx.dot(&(z * dx));
    Ok(g)
}

/// Why an episode stopped before `M` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// The plant produced a non-finite state at this step.
    Exploded { step: usize },
    /// The controller could not produce an input at this step.
    SolverFailed { step: usize, message: String },
}

impl Truncation {
    pub fn step(&self) -> usize {
        match self {
            Truncation::Exploded { step } | Truncation::SolverFailed { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub theta: Vec<f64>,
    pub trajectory: Trajectory<f64>,
    pub solver: Vec<SolverStats>,
    pub truncation: Option<Truncation>,
    pub g0: f64,
    pub g1: f64,
    pub wall_time_s: f64,
}

impl Episode {
    pub fn is_safe(&self) -> bool {
        self.g1 >= 0.0
    }
}

/// Closed loop of the true plant under the MPC built on the prediction model.
pub fn run_episode(cfg: &ExperimentConfig, theta: &[f64]) -> Result<Episode, HarnessError> {
    let start = Instant::now();
    if theta.len() != cfg.param_count() {
        return Err(HarnessError::Dimension(format!(
            "theta has {} entries, the architecture needs {}",
            theta.len(),
            cfg.param_count()
        )));
    }
    let plant = cfg.plant()?;
    let spec = cfg.spec()?;
    let env = cfg.stability_envelope()?;
    let params = ParamVector(theta.to_vec());
    let mut ctl = MpcController::new(&spec, &params, cfg.solver).map_err(|e| HarnessError::Config(e.to_string()))?;

    let m = cfg.episode_length;
    let mut x = cfg.x0();
    let mut states = vec![x];
    let mut inputs = Vec::with_capacity(m);
    let mut solver = Vec::with_capacity(m);
    let mut truncation = None;
    for k in 0..m {
        let u = match ctl.step(&x) {
            Ok((u, sol)) => {
                solver.push(SolverStats {
                    iterations: sol.iterations,
                    converged: sol.converged,
                    projected_gradient_norm: sol.projected_gradient_norm,
                    cost: sol.cost,
                });
                u
            }
            Err(e @ (MpcError::Dynamics(_) | MpcError::Cost(_))) => {
                truncation = Some(Truncation::SolverFailed {
                    step: k,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(HarnessError::Config(e.to_string())),
        };
        if !(u >= cfg.u_min && u <= cfg.u_max) {
            return Err(HarnessError::Integrity(format!("input {u} at step {k} leaves the bounds")));
        }
        inputs.push(u);
        match plant.step(&x, u) {
            Ok(next) => {
                x = next;
                states.push(x);
            }
            Err(DynamicsError::Exploded) => {
                truncation = Some(Truncation::Exploded { step: k });
                break;
            }
            Err(e) => return Err(HarnessError::Config(e.to_string())),
        }
    }

    let trajectory = Trajectory {
        states,
        inputs,
        exploded_at: truncation.as_ref().map(Truncation::step),
    };
    let (g0, g1) = evaluate_trajectory(cfg, &trajectory, &env)?;
    Ok(Episode {
        theta: theta.to_vec(),
        trajectory,
        solver,
        truncation,
        g0,
        g1,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// `(G_0, G_1)` of a stored trajectory.
pub fn evaluate_trajectory(
    cfg: &ExperimentConfig,
    traj: &Trajectory<f64>,
    env: &StabilityEnvelope<f64>,
) -> Result<(f64, f64), HarnessError> {
    let x_d = cfg.x_d();
    let g0 = performance(traj, &to_matrix(&cfg.v), cfg.w, &to_matrix(&cfg.z), &x_d, cfg.u_d)?;
    let g1 = stability_margin(traj, env, &x_d);
    debug_assert!(!traj.is_exploded() || g1 == EXPLODED_MARGIN);
    Ok((g0, g1))
}

pub const EPISODE_HEADER: [&str; 8] = ["k", "psi1", "psi2", "dpsi1", "dpsi2", "u", "norm", "envelope"];

pub fn write_episode_csv(path: &Path, ep: &Episode, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let env = cfg.stability_envelope()?;
    let x_d = cfg.x_d();
    let traj = &ep.trajectory;
    let d0 = (traj.states[0] - x_d).norm();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(EPISODE_HEADER)?;
    for (k, x) in traj.states.iter().enumerate() {
        let u = traj.inputs.get(k).map(|u| u.to_string()).unwrap_or_default();
        w.write_record([
            k.to_string(),
            x[0].to_string(),
            x[1].to_string(),
            x[2].to_string(),
            x[3].to_string(),
            u,
            (x - x_d).norm().to_string(),
            env.bound(d0, k).to_string(),
        ])?;
    }
    let mut inner = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    inner.flush()?;
    Ok(())
}

/// States and inputs of an episode file. The truncation marker is not stored
/// in the CSV and has to come from the run log.
pub fn read_episode_csv(path: &Path, exploded_at: Option<usize>) -> Result<Trajectory<f64>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| HarnessError::Integrity(format!("{}: {e}", path.display())))
        };
        states.push(state(f(1)?, f(2)?, f(3)?, f(4)?));
        if !rec.get(5).unwrap_or("").is_empty() {
            inputs.push(f(5)?);
        }
    }
    Ok(Trajectory {
        states,
        inputs,
        exploded_at,
    })
}
