//! Gaussian-process regression with a Matérn-5/2 ARD kernel.
//!
//! Targets can be standardized before conditioning; all reported means,
//! variances and bounds are in the original target units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("input {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("confidence level delta = {0} outside (0, 1)")]
    InvalidDelta(f64),
    #[error("cannot fit hyperparameters on an empty dataset")]
    EmptyDataset,
}

const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Matérn-5/2 covariance with per-dimension lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel<T> {
    pub signal_variance: T,
    pub lengthscales: Vec<T>,
}

impl<T: Real> Kernel<T> {
    pub fn new(signal_variance: T, lengthscales: Vec<T>) -> Result<Self, GpError> {
        let k = Self {
            signal_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn isotropic(signal_variance: T, lengthscale: T, dim: usize) -> Result<Self, GpError> {
        Self::new(signal_variance, vec![lengthscale; dim])
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.signal_variance > T::zero() && self.signal_variance.finite()) {
            return Err(GpError::InvalidHyperparameter(format!(
                "signal variance {}",
                self.signal_variance.as_f64()
            )));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > T::zero() && l.finite())) {
            return Err(GpError::InvalidHyperparameter("lengthscales must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Lengthscale-scaled Euclidean distance.
    pub fn scaled_distance(&self, a: &[T], b: &[T]) -> T {
        let mut s = T::zero();
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (*x - *y) / *l;
            s += d * d;
        }
        s.sqrt()
    }

    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let r = self.scaled_distance(a, b);
        let s5r = T::lit(5.0).sqrt() * r;
        self.signal_variance * (T::one() + s5r + T::lit(5.0 / 3.0) * r * r) * (-s5r).exp()
    }
}

pub fn kernel_eval<T: Real>(kern: &Kernel<T>, a: &[T], b: &[T]) -> T {
    kern.eval(a, b)
}

/// Training inputs, targets and observation-noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<T>,
    pub noise_variance: T,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<T>, noise_variance: T) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        if noise_variance < T::zero() {
            return Err(GpError::InvalidHyperparameter("negative noise variance".into()));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            for (i, x) in inputs.iter().enumerate() {
                if x.len() != d {
                    return Err(GpError::DimensionMismatch {
                        index: i,
                        expected: d,
                        got: x.len(),
                    });
                }
            }
        }
        Ok(Self {
            inputs,
            targets,
            noise_variance,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Affine map between raw targets and the zero-mean GP's working units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub offset: T,
    pub scale: T,
}

impl<T: Real> Standardization<T> {
    pub fn identity() -> Self {
        Self {
            offset: T::zero(),
            scale: T::one(),
        }
    }

    /// Sample mean and standard deviation; a degenerate spread keeps unit scale.
    pub fn from_targets(y: &[T]) -> Self {
        if y.is_empty() {
            return Self::identity();
        }
        let n = T::from_usize(y.len()).unwrap();
        let mean = y.iter().fold(T::zero(), |s, v| s + *v) / n;
        let var = y.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / n;
        let sd = var.sqrt();
        let scale = if sd > T::lit(1e-12) * (T::one() + mean.abs()) { sd } else { T::one() };
        Self { offset: mean, scale }
    }
}

/// Conditioned GP with a cached Cholesky factor of `K + sigma^2 I`.
#[derive(Debug, Clone)]
pub struct GpModel<T: Real> {
    pub kernel: Kernel<T>,
    /// Noise variance in working (standardized) units.
    pub noise_variance: T,
    pub standardization: Standardization<T>,
    inputs: Vec<Vec<T>>,
    targets: Vec<T>,
    chol: Option<Cholesky<T, Dyn>>,
    alpha: DVector<T>,
    jitter: T,
    log_evidence: T,
}

fn kernel_matrix<T: Real>(kernel: &Kernel<T>, inputs: &[Vec<T>], diag: T) -> DMatrix<T> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel.signal_variance + diag;
        for j in 0..i {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

impl<T: Real> GpModel<T> {
    /// Conditions the GP on `dataset` with fixed hyperparameters. `noise_variance`
    /// of the dataset is taken in raw target units.
    pub fn condition(kernel: Kernel<T>, dataset: &Dataset<T>, standardize: bool) -> Result<Self, GpError> {
        kernel.validate()?;
        for (i, x) in dataset.inputs.iter().enumerate() {
            if x.len() != kernel.dim() {
                return Err(GpError::DimensionMismatch {
                    index: i,
                    expected: kernel.dim(),
                    got: x.len(),
                });
            }
        }
        let st = if standardize {
            Standardization::from_targets(&dataset.targets)
        } else {
            Standardization::identity()
        };
        let noise = dataset.noise_variance / (st.scale * st.scale);
        Self::condition_working(kernel, noise, st, dataset.inputs.clone(), dataset.targets.clone())
    }

    fn condition_working(
        kernel: Kernel<T>,
        noise_variance: T,
        standardization: Standardization<T>,
        inputs: Vec<Vec<T>>,
        targets: Vec<T>,
    ) -> Result<Self, GpError> {
        let n = inputs.len();
        let y = DVector::from_iterator(
            n,
            targets.iter().map(|v| (*v - standardization.offset) / standardization.scale),
        );
        if n == 0 {
            return Ok(Self {
                kernel,
                noise_variance,
                standardization,
                inputs,
                targets,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: T::zero(),
                log_evidence: T::zero(),
            });
        }
        let base = kernel_matrix(&kernel, &inputs, noise_variance);
        for &jit in JITTER_LADDER.iter() {
            let jitter = T::lit(jit) * kernel.signal_variance.max(T::one());
            let mut k = base.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            let Some(chol) = Cholesky::new(k) else { continue };
            let alpha = chol.solve(&y);
            let log_det = chol.l_dirty().diagonal().iter().fold(T::zero(), |s, v| s + v.ln());
            let nf = T::from_usize(n).unwrap();
            let log_evidence =
                -T::lit(0.5) * y.dot(&alpha) - log_det - T::lit(0.5) * nf * T::two_pi().ln();
            if !log_evidence.finite() {
                continue;
            }
            return Ok(Self {
                kernel,
                noise_variance,
                standardization,
                inputs,
                targets,
                chol: Some(chol),
                alpha,
                jitter,
                log_evidence,
            });
        }
        Err(GpError::NotPositiveDefinite {
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_evidence(&self) -> T {
        self.log_evidence
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Posterior mean and variance before clamping, in working units.
    pub fn posterior_working(&self, x: &[T]) -> (T, T) {
        let prior = self.kernel.signal_variance;
        let Some(chol) = &self.chol else {
            return (T::zero(), prior);
        };
        let kstar = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.kernel.eval(x, xi)));
        let mean = kstar.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        (mean, prior - v.dot(&v))
    }

    /// Posterior mean and variance in raw target units; variance clamped at zero.
    pub fn posterior(&self, x: &[T]) -> (T, T) {
        let (m, v) = self.posterior_working(x);
        let st = self.standardization;
        let v = if v > T::zero() { v } else { T::zero() };
        (st.offset + st.scale * m, v * st.scale * st.scale)
    }

    /// `(m - beta * sd, m + beta * sd)`.
    pub fn bounds(&self, x: &[T], beta: T) -> (T, T) {
        let (m, v) = self.posterior(x);
        let w = beta * v.sqrt();
        (m - w, m + w)
    }
}

pub fn posterior<T: Real>(model: &GpModel<T>, x: &[T]) -> (T, T) {
    model.posterior(x)
}

/// Confidence scaling and the probability level it is associated with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confidence {
    pub beta: f64,
    pub delta: f64,
}

impl Confidence {
    pub fn new(beta: f64, delta: f64) -> Result<Self, GpError> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(GpError::InvalidHyperparameter(format!("beta = {beta}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(GpError::InvalidDelta(delta));
        }
        Ok(Self { beta, delta })
    }
}

pub fn bounds<T: Real>(model: &GpModel<T>, x: &[T], conf: &Confidence) -> (T, T) {
    model.bounds(x, T::lit(conf.beta))
}

/// `beta(delta) = B + R * sqrt(gamma + 1 + ln(1/delta))` for an RKHS-norm bound `B`,
/// `R`-sub-Gaussian noise and maximum information gain `gamma`.
pub fn confidence_beta(rkhs_bound: f64, noise_scale: f64, info_gain: f64, delta: f64) -> Result<f64, GpError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(GpError::InvalidDelta(delta));
    }
    if rkhs_bound < 0.0 || noise_scale < 0.0 || info_gain < 0.0 {
        return Err(GpError::InvalidHyperparameter("beta inputs must be nonnegative".into()));
    }
    Ok(rkhs_bound + noise_scale * (info_gain + 1.0 + (1.0 / delta).ln()).sqrt())
}

/// Settings for evidence maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub fixed_starts: usize,
    pub random_starts: usize,
    pub evaluations_per_start: usize,
    pub seed: u64,
    /// Fit the noise variance; otherwise the dataset's value is kept.
    pub fit_noise: bool,
    pub standardize: bool,
    /// Bounds on the noise variance in standardized units.
    pub min_noise_variance: f64,
    pub max_noise_variance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_starts: 8,
            random_starts: 8,
            evaluations_per_start: 100,
            seed: 0,
            fit_noise: true,
            standardize: true,
            min_noise_variance: 1e-6,
            max_noise_variance: 1.0,
        }
    }
}

const LOG_SIGNAL_RANGE: (f64, f64) = (-6.0, 6.0);
const LOG_LENGTH_RANGE: (f64, f64) = (-7.0, 7.0);

/// Log-space hyperparameter vector `[ln sf2, ln l_1..ln l_d, ln noise]`.
#[derive(Debug, Clone)]
struct HyperSearch<'a, T: Real> {
    inputs: &'a [Vec<T>],
    targets: &'a [T],
    st: Standardization<T>,
    dim: usize,
    fixed_noise: Option<T>,
    noise_range: (f64, f64),
    evaluations: usize,
}

impl<T: Real> HyperSearch<'_, T> {
    fn clamp(&self, p: &mut [f64]) {
        p[0] = p[0].clamp(LOG_SIGNAL_RANGE.0, LOG_SIGNAL_RANGE.1);
        for v in &mut p[1..=self.dim] {
            *v = v.clamp(LOG_LENGTH_RANGE.0, LOG_LENGTH_RANGE.1);
        }
        if self.fixed_noise.is_none() {
            let last = self.dim + 1;
            p[last] = p[last].clamp(self.noise_range.0, self.noise_range.1);
        }
    }

    fn build(&self, p: &[f64]) -> Result<GpModel<T>, GpError> {
        let kernel = Kernel::new(
            T::lit(p[0].exp()),
            p[1..=self.dim].iter().map(|v| T::lit(v.exp())).collect(),
        )?;
        let noise = match self.fixed_noise {
            Some(n) => n,
            None => T::lit(p[self.dim + 1].exp()),
        };
        GpModel::condition_working(kernel, noise, self.st, self.inputs.to_vec(), self.targets.to_vec())
    }

    fn evidence(&mut self, p: &[f64]) -> f64 {
        self.evaluations += 1;
        match self.build(p) {
            Ok(m) => m.log_evidence().as_f64(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Coordinate directions: a joint lengthscale shift, the signal variance,
    /// the noise (if fitted) and then each lengthscale.
    fn directions(&self) -> Vec<Vec<f64>> {
        let n = self.dim + 2;
        let unit = |i: usize| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        };
        let mut dirs = Vec::new();
        let mut shared = vec![0.0; n];
        shared[1..=self.dim].iter_mut().for_each(|v| *v = 1.0);
        dirs.push(shared);
        dirs.push(unit(0));
        if self.fixed_noise.is_none() {
            dirs.push(unit(self.dim + 1));
        }
        if self.dim > 1 {
            dirs.extend((1..=self.dim).map(unit));
        }
        dirs
    }

    /// Golden-section refinement along coordinate directions within a budget.
    fn refine(&mut self, start: Vec<f64>, budget: usize) -> (Vec<f64>, f64) {
        const GOLD: f64 = 0.618_033_988_749_895;
        const EVALS_PER_LINE: usize = 5;
        let mut best = start;
        self.clamp(&mut best);
        let begin = self.evaluations;
        let mut best_val = self.evidence(&best);
        let dirs = self.directions();
        let mut width = 2.0;
        'outer: loop {
            for dir in &dirs {
                if self.evaluations - begin + EVALS_PER_LINE > budget {
                    break 'outer;
                }
                let at = |t: f64, s: &Self| {
                    let mut p: Vec<f64> = best.iter().zip(dir).map(|(b, d)| b + t * d).collect();
                    s.clamp(&mut p);
                    p
                };
                let (mut lo, mut hi) = (-width, width);
                let mut c = hi - GOLD * (hi - lo);
                let mut d = lo + GOLD * (hi - lo);
                let pc = at(c, self);
                let pd = at(d, self);
                let mut fc = self.evidence(&pc);
                let mut fd = self.evidence(&pd);
                for _ in 2..EVALS_PER_LINE {
                    if fc > fd {
                        hi = d;
                        d = c;
                        fd = fc;
                        c = hi - GOLD * (hi - lo);
                        let p = at(c, self);
                        fc = self.evidence(&p);
                    } else {
                        lo = c;
                        c = d;
                        fc = fd;
                        d = lo + GOLD * (hi - lo);
                        let p = at(d, self);
                        fd = self.evidence(&p);
                    }
                }
                let (t, f) = if fc > fd { (c, fc) } else { (d, fd) };
                if f > best_val {
                    best = at(t, self);
                    best_val = f;
                }
            }
            width = (width * 0.5).max(0.05);
        }
        (best, best_val)
    }
}

/// Evidence maximization over `(sf2, lengthscales, noise)` by multi-start
/// coordinate-wise golden-section search in log space. `init` sets the centre
/// of the start grid; the result is deterministic given `opts.seed`.
pub fn fit<T: Real>(dataset: &Dataset<T>, init: &Kernel<T>, opts: &FitOptions) -> Result<GpModel<T>, GpError> {
    if dataset.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    init.validate()?;
    let dim = init.dim();
    for (i, x) in dataset.inputs.iter().enumerate() {
        if x.len() != dim {
            return Err(GpError::DimensionMismatch {
                index: i,
                expected: dim,
                got: x.len(),
            });
        }
    }
    let st = if opts.standardize {
        Standardization::from_targets(&dataset.targets)
    } else {
        Standardization::identity()
    };
    let fixed_noise = (!opts.fit_noise).then(|| dataset.noise_variance / (st.scale * st.scale));
    let noise_floor = opts.min_noise_variance.max(1e-12);
    let noise_range = (noise_floor.ln(), opts.max_noise_variance.max(noise_floor).ln());
    let mut search = HyperSearch {
        inputs: &dataset.inputs,
        targets: &dataset.targets,
        st,
        dim,
        fixed_noise,
        noise_range,
        evaluations: 0,
    };

    let base_sf = init.signal_variance.as_f64().ln();
    let base_ls: Vec<f64> = init.lengthscales.iter().map(|l| l.as_f64().ln()).collect();
    let length_factors = [0.25f64, 0.5, 1.0, 2.0];
    let noise_levels = [1e-4f64, 1e-1];
    let mut starts = Vec::new();
    for i in 0..opts.fixed_starts {
        let lf = length_factors[i % length_factors.len()].ln();
        let nl = noise_levels[(i / length_factors.len()) % noise_levels.len()];
        let mut p = Vec::with_capacity(dim + 2);
        p.push(base_sf);
        p.extend(base_ls.iter().map(|l| l + lf));
        p.push(nl.max(noise_floor).ln());
        starts.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for i in 0..opts.random_starts {
        let mut p = starts.get(i % starts.len().max(1)).cloned().unwrap_or_else(|| {
            let mut p = vec![base_sf];
            p.extend(base_ls.iter().copied());
            p.push(noise_levels[0].ln());
            p
        });
        for v in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += z;
        }
        starts.push(p);
    }
    if starts.is_empty() {
        let mut p = vec![base_sf];
        p.extend(base_ls.iter().copied());
        p.push(noise_levels[0].ln());
        starts.push(p);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let (p, v) = search.refine(s, opts.evaluations_per_start.max(1));
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((p, v));
        }
    }
    let (p, v) = best.expect("at least one start");
    if !v.is_finite() {
        return Err(GpError::NotPositiveDefinite {
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        });
    }
    search.build(&p)
}

/// Log marginal likelihood of `dataset` under fixed hyperparameters.
pub fn log_evidence<T: Real>(kernel: &Kernel<T>, dataset: &Dataset<T>, standardize: bool) -> Result<T, GpError> {
    Ok(GpModel::condition(kernel.clone(), dataset, standardize)?.log_evidence())
}
