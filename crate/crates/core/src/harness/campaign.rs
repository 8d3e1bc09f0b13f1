use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::safe_bo::{bo_step, BoDataset, BoRow, Incumbent, Observation, StepRecord, TuneState};
use crate::stability::EXPLODED_MARGIN;

use super::config::ExperimentConfig;
use super::episode::{evaluate_trajectory, read_episode_csv, run_episode, write_episode_csv, Episode, Truncation};
use super::{HarnessError, REPLAY_TOLERANCE, SENTINEL_COST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    SeedDraw,
    Proposal,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: usize,
    pub phase: Phase,
    /// Part of the BO dataset.
    pub in_dataset: bool,
    pub theta: Vec<f64>,
    pub g0: f64,
    pub g1: f64,
    pub truncation: Option<Truncation>,
    pub solver_iterations: usize,
    pub unconverged_solves: usize,
    pub wall_time_s: f64,
}

impl EpisodeRecord {
    fn of(id: usize, phase: Phase, in_dataset: bool, ep: &Episode) -> Self {
        Self {
            id,
            phase,
            in_dataset,
            theta: ep.theta.clone(),
            g0: ep.g0,
            g1: ep.g1,
            truncation: ep.truncation.clone(),
            solver_iterations: ep.solver.iter().map(|s| s.iterations).sum(),
            unconverged_solves: ep.solver.iter().filter(|s| !s.converged).count(),
            wall_time_s: ep.wall_time_s,
        }
    }

    pub fn is_safe(&self) -> bool {
        self.g1 >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSetSummary {
    pub draws: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub episode: usize,
    pub step: StepRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline_g0: f64,
    pub incumbent: Incumbent,
    pub incumbent_episode: usize,
    /// Incumbent `G_0` after each iteration.
    pub curve: Vec<f64>,
    pub proposal_violations: usize,
    pub probed_violations: usize,
    pub probed_episodes: usize,
    pub fallbacks: usize,
    pub completed_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub objective: String,
    pub sentinel_cost: f64,
    pub exploded_margin: f64,
    pub notes: Vec<String>,
}

impl Default for RunHeader {
    fn default() -> Self {
        Self {
            objective: "minimize G0, the weighted state and input deviation of the closed loop".into(),
            sentinel_cost: SENTINEL_COST,
            exploded_margin: EXPLODED_MARGIN,
            notes: vec![
                "episode_length, x0, v, w, z and the envelope constants are configuration defaults, not measured values".into(),
                "runs that explode or lose the controller get G0 = sentinel_cost and G1 = exploded_margin".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub config: ExperimentConfig,
    pub seed_set: Option<SeedSetSummary>,
    pub episodes: Vec<EpisodeRecord>,
    pub iterations: Vec<IterationRecord>,
    pub summary: Option<Summary>,
}

impl RunLog {
    pub fn episode(&self, id: usize) -> Option<&EpisodeRecord> {
        self.episodes.iter().find(|e| e.id == id)
    }
}

/// Every probed seed episode in draw order, plus the accepted subset.
#[derive(Debug, Clone)]
pub struct SeedSet {
    pub dataset: BoDataset,
    pub episodes: Vec<Episode>,
    /// Index into `episodes` for each dataset row.
    pub accepted: Vec<usize>,
    pub summary: SeedSetSummary,
}

/// Rejection sampling of safe parameter vectors; draw 0 is `theta = 0`.
pub fn generate_safe_seed(cfg: &ExperimentConfig) -> Result<SeedSet, HarnessError> {
    cfg.validate()?;
    let dim = cfg.param_count();
    let baseline = run_episode(cfg, &vec![0.0; dim])?;
    if !baseline.is_safe() {
        return Err(HarnessError::Unsafe(format!(
            "baseline theta = 0 violates the stability envelope (G1 = {})",
            baseline.g1
        )));
    }
    let row = |ep: &Episode| BoRow {
        theta: ep.theta.clone(),
        objective: ep.g0,
        constraints: vec![ep.g1],
    };
    let mut dataset = BoDataset::default();
    dataset.push(row(&baseline))?;
    let mut episodes = vec![baseline];
    let mut accepted = vec![0];

    let half = cfg.theta_box.initial_halfwidth * cfg.theta_box.seed_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws = 1usize;
    while accepted.len() < cfg.n_init {
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..=half)).collect();
        let ep = run_episode(cfg, &theta)?;
        draws += 1;
        if ep.is_safe() {
            dataset.push(row(&ep))?;
            accepted.push(episodes.len());
        }
        episodes.push(ep);
        let rate = accepted.len() as f64 / draws as f64;
        if draws >= cfg.min_seed_draws && rate < cfg.acceptance_floor && accepted.len() < cfg.n_init {
            return Err(HarnessError::Unsafe(format!(
                "seed acceptance rate {rate:.4} after {draws} draws is below {}; shrink theta_box.seed_scale",
                cfg.acceptance_floor
            )));
        }
    }
    let summary = SeedSetSummary {
        draws,
        accepted: accepted.len(),
        acceptance_rate: accepted.len() as f64 / draws as f64,
    };
    Ok(SeedSet {
        dataset,
        episodes,
        accepted,
        summary,
    })
}

fn episode_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("episodes").join(format!("ep_{id}.csv"))
}

/// Writes `run.json` through a temporary file so a crash never leaves a torn log.
pub fn write_run_log(dir: &Path, log: &RunLog) -> Result<(), HarnessError> {
    let tmp = dir.join("run.json.tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut f, log)?;
        f.flush()?;
        f.get_ref().sync_all()?;
    }
    fs::rename(&tmp, dir.join("run.json"))?;
    Ok(())
}

pub fn load_run_log(dir: &Path) -> Result<RunLog, HarnessError> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Integrity(format!("{}: {e}", path.display())))
}

fn prepare_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.join("episodes"))?;
    Ok(())
}

/// Runs one episode and stores it as a single-episode log.
pub fn simulate(cfg: &ExperimentConfig, theta: &[f64], dir: &Path) -> Result<(RunLog, Episode), HarnessError> {
    cfg.validate()?;
    prepare_dir(dir)?;
    let ep = run_episode(cfg, theta)?;
    write_episode_csv(&episode_path(dir, 0), &ep, cfg)?;
    let log = RunLog {
        header: RunHeader::default(),
        config: cfg.clone(),
        seed_set: None,
        episodes: vec![EpisodeRecord::of(0, Phase::Simulate, false, &ep)],
        iterations: Vec::new(),
        summary: None,
    };
    write_run_log(dir, &log)?;
    Ok((log, ep))
}

pub fn tune(cfg: &ExperimentConfig, dir: &Path) -> Result<RunLog, HarnessError> {
    tune_with_progress(cfg, dir, |_| {})
}

/// Full campaign. `run.json` is rewritten and `curve.csv` appended after every
/// iteration; `progress` sees each new iteration record.
pub fn tune_with_progress(
    cfg: &ExperimentConfig,
    dir: &Path,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<RunLog, HarnessError> {
    cfg.validate()?;
    prepare_dir(dir)?;
    let seeds = generate_safe_seed(cfg)?;

    let mut log = RunLog {
        header: RunHeader::default(),
        config: cfg.clone(),
        seed_set: Some(seeds.summary.clone()),
        episodes: Vec::new(),
        iterations: Vec::new(),
        summary: None,
    };
    for (id, ep) in seeds.episodes.iter().enumerate() {
        let phase = if id == 0 { Phase::Baseline } else { Phase::SeedDraw };
        let in_dataset = seeds.accepted.contains(&id);
        write_episode_csv(&episode_path(dir, id), ep, cfg)?;
        log.episodes.push(EpisodeRecord::of(id, phase, in_dataset, ep));
    }
    let mut row_episode = seeds.accepted.clone();
    let baseline_g0 = seeds.episodes[0].g0;
    drop(seeds.episodes);

    let mut state = TuneState::new(cfg.bo_config(cfg.seed.wrapping_add(1)), seeds.dataset, cfg.domain()?)?;
    let mut summary = Summary {
        baseline_g0,
        incumbent: state.incumbent.clone(),
        incumbent_episode: row_episode[state.incumbent.row],
        curve: Vec::new(),
        proposal_violations: 0,
        probed_violations: log.episodes.iter().filter(|e| !e.is_safe()).count(),
        probed_episodes: log.episodes.len(),
        fallbacks: 0,
        completed_iterations: 0,
    };
    log.summary = Some(summary.clone());
    write_run_log(dir, &log)?;

    let curve_path = dir.join("curve.csv");
    let mut curve = BufWriter::new(File::create(&curve_path)?);
    writeln!(curve, "iteration,incumbent_g0,proposal_g1,violation")?;
    curve.flush()?;
    let mut curve = OpenOptions::new().append(true).open(&curve_path)?;

    for n in 0..cfg.n_iter {
        let mut last: Option<Result<Episode, HarnessError>> = None;
        let mut evaluator = |theta: &[f64]| {
            let res = run_episode(cfg, theta);
            let obs = match &res {
                Ok(ep) => Observation {
                    objective: ep.g0,
                    constraints: vec![ep.g1],
                },
                Err(_) => Observation {
                    objective: SENTINEL_COST,
                    constraints: vec![EXPLODED_MARGIN],
                },
            };
            last = Some(res);
            obs
        };
        let step = bo_step(&mut state, &mut evaluator)?;
        let ep = last.expect("evaluator was called")?;

        let id = log.episodes.len();
        write_episode_csv(&episode_path(dir, id), &ep, cfg)?;
        log.episodes.push(EpisodeRecord::of(id, Phase::Proposal, true, &ep));
        row_episode.push(id);

        summary.incumbent = state.incumbent.clone();
        summary.incumbent_episode = row_episode[state.incumbent.row];
        summary.curve.push(state.incumbent.objective);
        summary.proposal_violations += usize::from(!step.safe);
        summary.probed_violations += usize::from(!step.safe);
        summary.probed_episodes += 1;
        summary.fallbacks += usize::from(step.proposal.fallback);
        summary.completed_iterations = n + 1;
        let record = IterationRecord { n, episode: id, step };
        progress(&record);
        writeln!(
            curve,
            "{},{},{},{}",
            n,
            summary.incumbent.objective,
            record.step.observation.constraints[0],
            u8::from(!record.step.safe)
        )?;
        curve.flush()?;
        log.iterations.push(record);
        log.summary = Some(summary.clone());
        write_run_log(dir, &log)?;
    }
    Ok(log)
}

fn check(label: &str, id: usize, stored: f64, fresh: f64) -> Result<(), HarnessError> {
    if (stored - fresh).abs() > REPLAY_TOLERANCE {
        return Err(HarnessError::Integrity(format!(
            "episode {id}: {label} stored {stored} but recomputed {fresh}"
        )));
    }
    Ok(())
}

/// Re-simulates a stored episode from the logged config and theta, and checks
/// it against both the log entry and the stored trajectory file.
pub fn replay(dir: &Path, id: usize) -> Result<Episode, HarnessError> {
    let log = load_run_log(dir)?;
    let rec = log
        .episode(id)
        .ok_or_else(|| HarnessError::Integrity(format!("episode {id} is not in the log")))?;
    log.config.validate().map_err(|e| HarnessError::Integrity(format!("episode {id}: logged config is invalid: {e}")))?;
    let cfg = &log.config;

    let stored = read_episode_csv(&episode_path(dir, id), rec.truncation.as_ref().map(Truncation::step))?;
    let (g0_file, g1_file) = evaluate_trajectory(cfg, &stored, &cfg.stability_envelope()?)?;
    check("G0 (trajectory file)", id, rec.g0, g0_file)?;
    check("G1 (trajectory file)", id, rec.g1, g1_file)?;

    let ep = run_episode(cfg, &rec.theta)?;
    if ep.truncation.as_ref().map(Truncation::step) != rec.truncation.as_ref().map(Truncation::step) {
        return Err(HarnessError::Integrity(format!(
            "episode {id}: truncation {:?} recorded, {:?} on replay",
            rec.truncation, ep.truncation
        )));
    }
    check("G0", id, rec.g0, ep.g0)?;
    check("G1", id, rec.g1, ep.g1)?;
    if ep.trajectory.states.len() != stored.states.len() {
        return Err(HarnessError::Integrity(format!("episode {id}: trajectory length differs from the stored file")));
    }
    Ok(ep)
}
