//! Feedforward network, flat parameter layout and the parametrized stage cost
//! `l_theta(x, u) = l(x, u) + y(x) - y(x_d)`.

use nalgebra::{Cholesky, DMatrix, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{State, STATE_DIM};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("invalid network architecture {0:?}: need >= 2 positive layer sizes, input {STATE_DIM}, output 1")]
    InvalidArchitecture(Vec<usize>),
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter vector contains non-finite entries")]
    NonFinite,
    #[error("state weight Q is not positive semidefinite")]
    StateWeightNotPsd,
    #[error("input weight R must be positive, got {0}")]
    InputWeightNotPositive(f64),
}

/// Layer sizes from input to output. Hidden layers use `tanh`, the output is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetArchitecture {
    layer_sizes: Vec<usize>,
}

impl Default for NetArchitecture {
    fn default() -> Self {
        Self {
            layer_sizes: vec![STATE_DIM, 7, 1],
        }
    }
}

impl NetArchitecture {
    /// Architecture for the stage-cost network (input `STATE_DIM`, scalar output).
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, CostError> {
        let arch = Self::unchecked(layer_sizes);
        arch.validate()?;
        Ok(arch)
    }

    /// Any chain of positive layer sizes; used for networks outside the MPC.
    pub fn unchecked(layer_sizes: Vec<usize>) -> Self {
        Self { layer_sizes }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s.contains(&0) || s[0] != STATE_DIM || s[s.len() - 1] != 1 {
            return Err(CostError::InvalidArchitecture(s.clone()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

pub fn param_count(arch: &NetArchitecture) -> usize {
    arch.param_count()
}

/// Flat parameter vector: per layer (input to output), the row-major weight
/// matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T: Real> ParamVector<T> {
    pub fn zeros(arch: &NetArchitecture) -> Self {
        Self(vec![T::zero(); arch.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// One affine layer `z = W a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Real> {
    pub weights: DMatrix<T>,
    pub bias: Vec<T>,
}

pub fn unpack<T: Real>(arch: &NetArchitecture, theta: &ParamVector<T>) -> Result<Vec<Layer<T>>, CostError> {
    let expected = arch.param_count();
    if theta.len() != expected {
        return Err(CostError::LengthMismatch {
            expected,
            got: theta.len(),
        });
    }
    // FIXME: accepts non-finite entries here; only NeuralNet::new rejects them.
    let mut cursor = theta.as_slice();
    let mut layers = Vec::with_capacity(arch.layer_sizes.len() - 1);
    for w in arch.layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let (wts, rest) = cursor.split_at(n_in * n_out);
        let (bias, rest) = rest.split_at(n_out);
        layers.push(Layer {
            weights: DMatrix::from_row_slice(n_out, n_in, wts),
            bias: bias.to_vec(),
        });
        cursor = rest;
    }
    Ok(layers)
}

pub fn pack<T: Real>(layers: &[Layer<T>]) -> ParamVector<T> {
    let mut out = Vec::new();
    for layer in layers {
        for r in 0..layer.weights.nrows() {
            out.extend(layer.weights.row(r).iter().copied());
        }
        out.extend_from_slice(&layer.bias);
    }
    ParamVector(out)
}

/// Unpacked network ready for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNet<T: Real> {
    layers: Vec<Layer<T>>,
}

impl<T: Real> NeuralNet<T> {
    pub fn new(arch: &NetArchitecture, theta: &ParamVector<T>) -> Result<Self, CostError> {
        if theta.0.iter().any(|v| !v.finite()) {
            return Err(CostError::NonFinite);
        }
        Ok(Self {
            layers: unpack(arch, theta)?,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn forward(&self, x: &[T]) -> T {
        self.forward_activations(x)
            .last()
            .map(|a| a[0])
            .unwrap_or_else(T::zero)
    }

    /// Activations of every layer, input included.
    fn forward_activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &acts[i];
            let z: Vec<T> = (0..layer.weights.nrows())
                .map(|r| {
                    let mut s = layer.bias[r];
                    for (c, a) in input.iter().enumerate() {
                        s += layer.weights[(r, c)] * *a;
                    }
                    if i == last {
                        s
                    } else {
                        s.tanh()
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    /// Output and its gradient with respect to the input.
    pub fn forward_with_grad(&self, x: &[T]) -> (T, Vec<T>) {
        let acts = self.forward_activations(x);
        let last = self.layers.len() - 1;
        let y = acts[last + 1][0];
        // Backpropagate dy/dz through the layers.
        let mut delta = vec![T::one(); acts[last + 1].len()];
        for i in (0..self.layers.len()).rev() {
            let w = &self.layers[i].weights;
            if i != last {
                for (d, a) in delta.iter_mut().zip(&acts[i + 1]) {
                    *d *= T::one() - *a * *a;
                }
            }
            let mut prev = vec![T::zero(); w.ncols()];
            for (r, d) in delta.iter().enumerate() {
                for (c, p) in prev.iter_mut().enumerate() {
                    *p += w[(r, c)] * *d;
                }
            }
            delta = prev;
        }
        (y, delta)
    }
}

pub fn nn_forward<T: Real>(arch: &NetArchitecture, theta: &ParamVector<T>, x: &State<T>) -> Result<T, CostError> {
    Ok(NeuralNet::new(arch, theta)?.forward(x.as_slice()))
}

pub fn nn_cost<T: Real>(
    arch: &NetArchitecture,
    theta: &ParamVector<T>,
    x: &State<T>,
    x_d: &State<T>,
) -> Result<T, CostError> {
    let net = NeuralNet::new(arch, theta)?;
    Ok(net.forward(x.as_slice()) - net.forward(x_d.as_slice()))
}

/// Nominal quadratic stage cost around the set-point `(x_d, u_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost<T: Real> {
    pub q: Matrix4<T>,
    pub r: T,
    pub x_d: State<T>,
    pub u_d: T,
}

impl<T: Real> QuadraticCost<T> {
    pub fn new(q: Matrix4<T>, r: T, x_d: State<T>, u_d: T) -> Result<Self, CostError> {
        if !(r.finite() && r > T::zero()) {
            return Err(CostError::InputWeightNotPositive(r.as_f64()));
        }
        let sym = (q + q.transpose()) * T::lit(0.5);
        if (q - sym).amax() > T::lit(1e-9) * (T::one() + q.amax()) {
            return Err(CostError::StateWeightNotPsd);
        }
        let shifted = sym + Matrix4::identity() * T::lit(1e-9) * (T::one() + q.amax());
        if Cholesky::new(shifted).is_none() {
            return Err(CostError::StateWeightNotPsd);
        }
        Ok(Self { q, r, x_d, u_d })
    }

    pub fn eval(&self, x: &State<T>, u: T) -> T {
        let dx = x - self.x_d;
        let du = u - self.u_d;
        dx.dot(&(self.q * dx)) + self.r * du * du
    }
}

/// `l_theta` with the network unpacked once and `y(x_d)` cached.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost<T: Real> {
    pub quad: QuadraticCost<T>,
    net: NeuralNet<T>,
    y_d: T,
    zero_net: bool,
}

impl<T: Real> StageCost<T> {
    pub fn new(quad: QuadraticCost<T>, arch: &NetArchitecture, theta: &ParamVector<T>) -> Result<Self, CostError> {
        let net = NeuralNet::new(arch, theta)?;
        let y_d = net.forward(quad.x_d.as_slice());
        let zero_net = theta.0.iter().all(|v| *v == T::zero());
        Ok(Self {
            quad,
            net,
            y_d,
            zero_net,
        })
    }

    pub fn eval(&self, x: &State<T>, u: T) -> T {
        let nominal = self.quad.eval(x, u);
        if self.zero_net {
            return nominal;
        }
        nominal + self.net.forward(x.as_slice()) - self.y_d
    }

    /// Gradients with respect to the state and the input.
    pub fn grad(&self, x: &State<T>, u: T) -> (State<T>, T) {
        let dx = x - self.quad.x_d;
        let two = T::lit(2.0);
        let sym = self.quad.q + self.quad.q.transpose();
        let mut gx = sym * dx;
        if !self.zero_net {
            let (_, g_net) = self.net.forward_with_grad(x.as_slice());
            for (gi, ni) in gx.iter_mut().zip(g_net) {
                *gi += ni;
            }
        }
        let gu = two * self.quad.r * (u - self.quad.u_d);
        (gx, gu)
    }
}

pub fn stage_cost<T: Real>(
    qc: &QuadraticCost<T>,
    arch: &NetArchitecture,
    theta: &ParamVector<T>,
    x: &State<T>,
    u: T,
) -> Result<T, CostError> {
    Ok(StageCost::new(*qc, arch, theta)?.eval(x, u))
}

pub fn stage_cost_grad<T: Real>(
    qc: &QuadraticCost<T>,
    arch: &NetArchitecture,
    theta: &ParamVector<T>,
    x: &State<T>,
    u: T,
) -> Result<(State<T>, T), CostError> {
    Ok(StageCost::new(*qc, arch, theta)?.grad(x, u))
}
