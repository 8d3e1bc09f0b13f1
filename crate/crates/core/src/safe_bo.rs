//! Constraint-aware Bayesian optimization: expected improvement on the
//! objective surrogate plus a log barrier on each constraint's lower
//! confidence bound.
//!
//! The objective is minimized; constraints are satisfied when `g_i >= 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{fit, Dataset, FitOptions, GpError, GpModel, Kernel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("dataset has no row satisfying all constraints")]
    NoSafeRow,
    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid BO configuration: {0}")]
    InvalidConfig(String),
}

/// Box `Theta_n` that grows around its centre up to a cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cap_lower: Vec<f64>,
    pub cap_upper: Vec<f64>,
    pub growth: f64,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cap_lower: Vec<f64>, cap_upper: Vec<f64>, growth: f64) -> Result<Self, BoError> {
        let n = lower.len();
        if n == 0 || upper.len() != n || cap_lower.len() != n || cap_upper.len() != n {
            return Err(BoError::InvalidDomain("bound vectors must share a nonzero length".into()));
        }
        for i in 0..n {
            if !(lower[i] < upper[i]) {
                return Err(BoError::InvalidDomain(format!("lower >= upper in coordinate {i}")));
            }
            if cap_lower[i] > lower[i] || cap_upper[i] < upper[i] {
                return Err(BoError::InvalidDomain(format!("coordinate {i} exceeds the cap")));
            }
        }
        if !(growth >= 1.0 && growth.is_finite()) {
            return Err(BoError::InvalidDomain(format!("growth {growth} must be >= 1")));
        }
        Ok(Self {
            lower,
            upper,
            cap_lower,
            cap_upper,
            growth,
        })
    }

    /// Symmetric box `[-half, half]^dim` with a symmetric cap.
    pub fn symmetric(dim: usize, half: f64, cap: f64, growth: f64) -> Result<Self, BoError> {
        Self::new(vec![-half; dim], vec![half; dim], vec![-cap; dim], vec![cap; dim], growth)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (i, v) in theta.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn halfwidths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn mean_halfwidth(&self) -> f64 {
        self.halfwidths().iter().sum::<f64>() / self.dim() as f64
    }

    /// `centre +- growth * halfwidth`, clipped to the cap.
    pub fn expanded(&self) -> Domain {
        let mut next = self.clone();
        for i in 0..self.dim() {
            let c = 0.5 * (self.lower[i] + self.upper[i]);
            let h = 0.5 * (self.upper[i] - self.lower[i]) * self.growth;
            next.lower[i] = (c - h).max(self.cap_lower[i]);
            next.upper[i] = (c + h).min(self.cap_upper[i]);
        }
        next
    }
}

/// One evaluated parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRow {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl BoRow {
    pub fn is_safe(&self) -> bool {
        self.constraints.iter().all(|g| *g >= 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoDataset {
    pub rows: Vec<BoRow>,
}

impl BoDataset {
    pub fn push(&mut self, row: BoRow) -> Result<(), BoError> {
        if let Some(first) = self.rows.first() {
            if row.theta.len() != first.theta.len() {
                return Err(BoError::DimensionMismatch {
                    expected: first.theta.len(),
                    got: row.theta.len(),
                });
            }
            if row.constraints.len() != first.constraints.len() {
                return Err(BoError::DimensionMismatch {
                    expected: first.constraints.len(),
                    got: row.constraints.len(),
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.first().map_or(0, |r| r.constraints.len())
    }

    /// Best safe row by objective; earliest wins ties.
    pub fn best_safe(&self) -> Option<(usize, &BoRow)> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_safe() && r.objective.is_finite())
            .fold(None, |best: Option<(usize, &BoRow)>, (i, r)| match best {
                Some((_, b)) if b.objective <= r.objective => best,
                _ => Some((i, r)),
            })
    }
}

/// Acquisition value, or a marker that some barrier argument is nonpositive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    Value(f64),
    Infeasible,
}

impl Acquisition {
    pub fn value(self) -> Option<f64> {
        match self {
            Acquisition::Value(v) => Some(v),
            Acquisition::Infeasible => None,
        }
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a Gaussian prediction `N(mean, sd^2)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * std_normal_cdf(z) + sd * std_normal_pdf(z)).max(gap.max(0.0))
}

/// `ln(m - beta * sd)` of a constraint surrogate.
pub fn barrier_term(constraint: &GpModel<f64>, theta: &[f64], beta: f64) -> Acquisition {
    let (lcb, _) = constraint.bounds(theta, beta);
    if lcb > 0.0 {
        Acquisition::Value(lcb.ln())
    } else {
        Acquisition::Infeasible
    }
}

/// How a surrogate obtains its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    /// Evidence maximization on every refit.
    Fitted(FitOptions),
    /// Fixed kernel and noise variance, no target standardization.
    Fixed { kernel: Kernel<f64>, noise_variance: f64 },
}

impl Default for SurrogateMode {
    fn default() -> Self {
        SurrogateMode::Fitted(FitOptions::default())
    }
}

/// Transform applied to objective values before the surrogate sees them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveTransform {
    Identity,
    #[default]
    Log,
}

impl ObjectiveTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ObjectiveTransform::Identity => v,
            ObjectiveTransform::Log => v.max(1e-300).ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub beta: f64,
    pub tau: f64,
    pub pool_size: usize,
    /// Number of best pool candidates refined by coordinate search; safe
    /// dataset rows are always refined.
    pub refine_top: usize,
    pub local_search_passes: usize,
    pub objective_transform: ObjectiveTransform,
    pub objective_surrogate: SurrogateMode,
    pub constraint_surrogate: SurrogateMode,
    /// Objective values at or above this are treated as failed runs.
    pub objective_sentinel: f64,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            tau: 0.1,
            pool_size: 4096,
            refine_top: 8,
            local_search_passes: 4,
            objective_transform: ObjectiveTransform::Log,
            objective_surrogate: SurrogateMode::default(),
            constraint_surrogate: SurrogateMode::default(),
            objective_sentinel: 1e12,
            seed: 0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(BoError::InvalidConfig(format!("beta = {}", self.beta)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(BoError::InvalidConfig(format!("tau = {}", self.tau)));
        }
        if self.pool_size == 0 {
            return Err(BoError::InvalidConfig("pool_size must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted hyperparameters of one surrogate, for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub log_evidence: f64,
    pub offset: f64,
    pub scale: f64,
}

impl SurrogateSummary {
    fn of(gp: &GpModel<f64>) -> Self {
        Self {
            signal_variance: gp.kernel.signal_variance,
            lengthscales: gp.kernel.lengthscales.clone(),
            noise_variance: gp.noise_variance,
            log_evidence: gp.log_evidence(),
            offset: gp.standardization.offset,
            scale: gp.standardization.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub row: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
}

/// Iteration state of the tuning loop.
#[derive(Debug, Clone)]
pub struct TuneState {
    pub config: BoConfig,
    pub dataset: BoDataset,
    pub domain: Domain,
    pub objective_gp: Option<GpModel<f64>>,
    pub constraint_gps: Vec<GpModel<f64>>,
    pub incumbent: Incumbent,
    pub iteration: usize,
    rng: ChaCha8Rng,
    best_transformed: f64,
}

impl TuneState {
    pub fn new(config: BoConfig, dataset: BoDataset, domain: Domain) -> Result<Self, BoError> {
        config.validate()?;
        if let Some(r) = dataset.rows.iter().find(|r| r.theta.len() != domain.dim()) {
            return Err(BoError::DimensionMismatch {
                expected: domain.dim(),
                got: r.theta.len(),
            });
        }
        let (row, best) = dataset.best_safe().ok_or(BoError::NoSafeRow)?;
        let incumbent = Incumbent {
            row,
            theta: best.theta.clone(),
            objective: best.objective,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            dataset,
            domain,
            objective_gp: None,
            constraint_gps: Vec::new(),
            incumbent,
            iteration: 0,
            rng,
            best_transformed: f64::INFINITY,
        })
    }

    fn surrogate(&self, mode: &SurrogateMode, inputs: Vec<Vec<f64>>, targets: Vec<f64>, salt: u64) -> Result<GpModel<f64>, BoError> {
        match mode {
            SurrogateMode::Fixed { kernel, noise_variance } => {
                let ds = Dataset::new(inputs, targets, *noise_variance)?;
                Ok(GpModel::condition(kernel.clone(), &ds, false)?)
            }
            SurrogateMode::Fitted(opts) => {
                let ds = Dataset::new(inputs, targets, opts.min_noise_variance)?;
                let init = Kernel::new(
                    1.0,
                    self.domain.halfwidths().iter().map(|h| h.max(1e-6)).collect(),
                )?;
                let mut opts = opts.clone();
                opts.seed = self.config.seed ^ (salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ (self.iteration as u64);
                Ok(fit(&ds, &init, &opts)?)
            }
        }
    }

    /// Refits every surrogate on the current dataset.
    pub fn refit(&mut self) -> Result<(), BoError> {
        let cfg = self.config.clone();
        let usable: Vec<&BoRow> = self
            .dataset
            .rows
            .iter()
            .filter(|r| r.objective.is_finite() && r.objective < cfg.objective_sentinel)
            .collect();
        let inputs: Vec<Vec<f64>> = usable.iter().map(|r| r.theta.clone()).collect();
        let targets: Vec<f64> = usable.iter().map(|r| cfg.objective_transform.apply(r.objective)).collect();
        self.best_transformed = cfg.objective_transform.apply(self.incumbent.objective);
        self.objective_gp = Some(self.surrogate(&cfg.objective_surrogate, inputs, targets, 0)?);

        let all_inputs: Vec<Vec<f64>> = self.dataset.rows.iter().map(|r| r.theta.clone()).collect();
        let mut gps = Vec::with_capacity(self.dataset.n_constraints());
        for c in 0..self.dataset.n_constraints() {
            let raw: Vec<f64> = self.dataset.rows.iter().map(|r| r.constraints[c]).collect();
            let targets = clip_failed_constraints(&raw);
            gps.push(self.surrogate(&cfg.constraint_surrogate, all_inputs.clone(), targets, c as u64 + 1)?);
        }
        self.constraint_gps = gps;
        Ok(())
    }

    pub fn objective_summary(&self) -> Option<SurrogateSummary> {
        self.objective_gp.as_ref().map(SurrogateSummary::of)
    }

    pub fn constraint_summaries(&self) -> Vec<SurrogateSummary> {
        self.constraint_gps.iter().map(SurrogateSummary::of).collect()
    }
}

/// Failed runs report a huge negative margin; pull such outliers in to the
/// spread of the regular observations so they do not swamp standardization.
fn clip_failed_constraints(raw: &[f64]) -> Vec<f64> {
    let typical = raw
        .iter()
        .filter(|v| v.is_finite() && **v > crate::stability::EXPLODED_MARGIN)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = -2.0 * typical.max(1e-3);
    raw.iter()
        .map(|v| if v.is_finite() { v.max(floor) } else { floor })
        .collect()
}

/// `EI(theta) + tau * sum_i ln(lcb_i(theta))`, with EI divided by the
/// objective surrogate's standardization scale.
pub fn constrained_acquisition(state: &TuneState, theta: &[f64]) -> Acquisition {
    let mut barrier = 0.0;
    for gp in &state.constraint_gps {
        match barrier_term(gp, theta, state.config.beta) {
            Acquisition::Value(v) => barrier += v,
            Acquisition::Infeasible => return Acquisition::Infeasible,
        }
    }
    let ei = match &state.objective_gp {
        // in standardized objective units
        Some(gp) => {
            let (m, v) = gp.posterior(theta);
            expected_improvement(m, v.sqrt(), state.best_transformed) / gp.standardization.scale
        }
        None => 0.0,
    };
    Acquisition::Value(ei + state.config.tau * barrier)
}

/// Additive-recurrence low-discrepancy points in `[0, 1)^dim` with a random shift.
pub fn quasi_random_pool(dim: usize, count: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    // phi_d is the unique positive root of x^(d+1) = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
    (1..=count)
        .map(|i| {
            (0..dim)
                .map(|j| (shift[j] + alpha[j] * i as f64).fract())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub theta: Vec<f64>,
    pub acquisition: Option<f64>,
    /// No feasible candidate was found; the most uncertain safe row was reused.
    pub fallback: bool,
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn coordinate_search(state: &TuneState, start: &[f64], start_val: f64) -> (Vec<f64>, f64) {
    let dom = &state.domain;
    let mut x = start.to_vec();
    let mut best = start_val;
    let mut steps: Vec<f64> = dom.halfwidths().iter().map(|h| 0.2 * h).collect();
    for _ in 0..state.config.local_search_passes {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[j] = (cand[j] + dir * steps[j]).clamp(dom.lower[j], dom.upper[j]);
                if cand[j] == x[j] {
                    continue;
                }
                if let Acquisition::Value(v) = constrained_acquisition(state, &cand) {
                    if v > best {
                        best = v;
                        x = cand;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    (x, best)
}

/// Maximizes the constrained acquisition over a quasi-random pool plus the
/// safe dataset rows, refining the best pool entries by coordinate search.
pub fn propose_next(state: &mut TuneState) -> Proposal {
    let dim = state.domain.dim();
    let shift: Vec<f64> = (0..dim).map(|_| state.rng.random::<f64>()).collect();
    let unit = quasi_random_pool(dim, state.config.pool_size, &shift);
    let dom = &state.domain;
    let mut candidates: Vec<Vec<f64>> = unit
        .into_iter()
        .map(|u| u.iter().enumerate().map(|(j, t)| dom.lower[j] + t * (dom.upper[j] - dom.lower[j])).collect())
        .collect();
    for row in state.dataset.rows.iter().filter(|r| r.is_safe()) {
        let mut t = row.theta.clone();
        dom.project(&mut t);
        candidates.push(t);
    }

    let scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| constrained_acquisition(state, c).value().map(|v| (i, v)))
        .collect();

    if scored.is_empty() {
        return fallback_proposal(state);
    }

    // best pool entries plus every feasible dataset row get refined
    let pool = state.config.pool_size;
    let mut ranked: Vec<(usize, f64)> = scored.iter().copied().filter(|(i, _)| *i < pool).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(state.config.refine_top);
    ranked.extend(scored.iter().copied().filter(|(i, _)| *i >= pool));
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    for &(idx, val) in &ranked {
        let (x, v) = coordinate_search(state, &candidates[idx], val);
        if best.as_ref().is_none_or(|(_, bv, bi)| better((v, idx), (*bv, *bi))) {
            best = Some((x, v, idx));
        }
    }
    let (theta, value, _) = best.expect("non-empty ranking");
    Proposal {
        theta,
        acquisition: Some(value),
        fallback: false,
    }
}

fn fallback_proposal(state: &TuneState) -> Proposal {
    let pick = state
        .dataset
        .rows
        .iter()
        .filter(|r| r.is_safe())
        .map(|r| {
            let var = state.objective_gp.as_ref().map_or(0.0, |gp| gp.posterior(&r.theta).1);
            (r, var)
        })
        .fold(None, |best: Option<(&BoRow, f64)>, (r, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((r, v)),
        });
    let mut theta = pick.map(|(r, _)| r.theta.clone()).unwrap_or_else(|| state.incumbent.theta.clone());
    state.domain.project(&mut theta);
    Proposal {
        theta,
        acquisition: None,
        fallback: true,
    }
}

pub fn expand_domain(state: &TuneState) -> Domain {
    state.domain.expanded()
}

/// Closed-loop evaluation of a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

pub trait Evaluator {
    fn evaluate(&mut self, theta: &[f64]) -> Observation;
}

impl<F: FnMut(&[f64]) -> Observation> Evaluator for F {
    fn evaluate(&mut self, theta: &[f64]) -> Observation {
        self(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub proposal: Proposal,
    pub observation: Observation,
    pub safe: bool,
    pub incumbent: Incumbent,
    pub domain_halfwidth: f64,
    pub objective_surrogate: Option<SurrogateSummary>,
    pub constraint_surrogates: Vec<SurrogateSummary>,
}

/// One loop iteration: refit, propose, evaluate, append, update incumbent and domain.
pub fn bo_step<E: Evaluator + ?Sized>(state: &mut TuneState, evaluator: &mut E) -> Result<StepRecord, BoError> {
    state.refit()?;
    let proposal = propose_next(state);
    let observation = evaluator.evaluate(&proposal.theta);
    if observation.constraints.len() != state.dataset.n_constraints() {
        return Err(BoError::DimensionMismatch {
            expected: state.dataset.n_constraints(),
            got: observation.constraints.len(),
        });
    }
    let row = BoRow {
        theta: proposal.theta.clone(),
        objective: observation.objective,
        constraints: observation.constraints.clone(),
    };
    let safe = row.is_safe();
    let domain_halfwidth = state.domain.mean_halfwidth();
    state.dataset.push(row)?;
    let last = state.dataset.len() - 1;
    if safe && observation.objective < state.incumbent.objective {
        state.incumbent = Incumbent {
            row: last,
            theta: proposal.theta.clone(),
            objective: observation.objective,
        };
    }
    state.domain = expand_domain(state);
    let record = StepRecord {
        iteration: state.iteration,
        proposal,
        observation,
        safe,
        incumbent: state.incumbent.clone(),
        domain_halfwidth,
        objective_surrogate: state.objective_summary(),
        constraint_surrogates: state.constraint_summaries(),
    };
    state.iteration += 1;
    Ok(record)
}
