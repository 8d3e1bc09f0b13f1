//! Safe Bayesian tuning of a neural-network MPC stage cost for a double
//! pendulum swing-up, with closed-loop stability constraints.
//!
//! Numerical modules are generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the optimizer and harness use.

pub mod dynamics;
pub mod gp;
pub mod harness;
pub mod mpc;
pub mod neural_cost;
pub mod safe_bo;
pub mod scalar;
pub mod stability;

pub use scalar::Real;

pub type PendulumParams = dynamics::PendulumParams<f64>;
pub type Pendulum = dynamics::DiscretePlant<f64>;
pub type PendulumState = dynamics::State<f64>;
pub type LinearModel = dynamics::LinearModel<f64>;
pub type Params = neural_cost::ParamVector<f64>;
pub type NeuralNet = neural_cost::NeuralNet<f64>;
pub type QuadraticCost = neural_cost::QuadraticCost<f64>;
pub type StageCost = neural_cost::StageCost<f64>;
pub type OcpSpec = mpc::OcpSpec<f64, Pendulum>;
pub type OcpSolution = mpc::OcpSolution<f64>;
pub type Gp = gp::GpModel<f64>;
pub type Kernel = gp::Kernel<f64>;
pub type GpDataset = gp::Dataset<f64>;
pub type Envelope = stability::StabilityEnvelope<f64>;
pub type Trajectory = stability::Trajectory<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type Pendulum = crate::dynamics::DiscretePlant<f32>;
    pub type PendulumState = crate::dynamics::State<f32>;
    pub type Params = crate::neural_cost::ParamVector<f32>;
    pub type StageCost = crate::neural_cost::StageCost<f32>;
    pub type Gp = crate::gp::GpModel<f32>;
}
