use std::fs;

use nalgebra::Matrix4;
use safetune::dynamics::{rk4_step, state};
use safetune::harness::{
    diag, generate_safe_seed, load_run_log, performance, read_episode_csv, replay, run_episode, simulate, tune, write_run_log,
    ExperimentConfig, HarnessError, Phase, SENTINEL_COST,
};
use safetune::stability::Trajectory;

fn quick() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.episode_length = 25;
    cfg.horizon = 10;
    cfg.n_init = 3;
    cfg.n_iter = 2;
    cfg.acquisition.pool_size = 256;
    cfg.acquisition.gp_fit.evaluations_per_start = 30;
    cfg.solver.max_iterations = 60;
    cfg
}

#[test]
fn performance_term_by_term() {
    let xd = state(0.0, 0.0, 0.0, 0.0);
    let traj = Trajectory::new(vec![state(1.0, 0.0, 0.0, 0.0), xd], vec![2.0]).unwrap();
    let i = Matrix4::identity();
    assert_eq!(performance(&traj, &i, 1.0, &i, &xd, 0.0).unwrap(), 5.0);

    let at_rest = Trajectory::new(vec![xd; 4], vec![0.5; 3]).unwrap();
    assert_eq!(performance(&at_rest, &i, 3.0, &i, &xd, 0.5).unwrap(), 0.0);
}

#[test]
fn performance_is_linear_in_v() {
    let xd = state(1.0, -1.0, 0.0, 0.0);
    let states = vec![state(0.0, 0.0, 1.0, 2.0), state(0.5, -0.2, 0.3, 0.1), state(0.9, -0.9, 0.0, 0.1)];
    let traj = Trajectory::new(states, vec![1.0, -3.0]).unwrap();
    let v = Matrix4::from_diagonal(&nalgebra::Vector4::new(2.0, 1.0, 0.5, 0.1));
    let zero = Matrix4::zeros();
    let base = performance(&traj, &v, 0.0, &zero, &xd, 0.0).unwrap();
    let doubled = performance(&traj, &(v * 2.0), 0.0, &zero, &xd, 0.0).unwrap();
    assert_eq!(doubled, 2.0 * base);
    let with_inputs = performance(&traj, &v, 0.1, &zero, &xd, 0.0).unwrap();
    assert!((with_inputs - base - 0.1 * 10.0).abs() < 1e-12);
}

#[test]
fn exploded_trajectory_gets_sentinel_cost() {
    let xd = state(0.0, 0.0, 0.0, 0.0);
    let traj = Trajectory::exploded(vec![xd, xd], vec![0.0, 1.0]).unwrap();
    let i = Matrix4::identity();
    assert_eq!(performance(&traj, &i, 1.0, &i, &xd, 0.0).unwrap(), SENTINEL_COST);
}

#[test]
fn bad_trajectory_shape_is_an_error() {
    let xd = state(0.0, 0.0, 0.0, 0.0);
    let traj = Trajectory {
        states: vec![xd; 3],
        inputs: vec![0.0],
        exploded_at: None,
    };
    let i = Matrix4::identity();
    assert!(matches!(performance(&traj, &i, 1.0, &i, &xd, 0.0), Err(HarnessError::Dimension(_))));
}

#[test]
fn episodes_are_deterministic_and_replay_through_the_plant() {
    let cfg = quick();
    let theta: Vec<f64> = (0..43).map(|i| ((i * 7) % 11) as f64 / 10.0 - 0.5).collect();
    let a = run_episode(&cfg, &theta).unwrap();
    let b = run_episode(&cfg, &theta).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!((a.g0, a.g1), (b.g0, b.g1));
    assert_eq!(a.trajectory.states.len(), cfg.episode_length + 1);
    let mut x = cfg.x0();
    for (k, u) in a.trajectory.inputs.iter().enumerate() {
        assert!((cfg.u_min..=cfg.u_max).contains(u));
        x = rk4_step(&cfg.true_plant, cfg.ts, &x, *u).unwrap();
        assert_eq!(x, a.trajectory.states[k + 1]);
    }
}

#[test]
fn baseline_is_safe_under_default_config() {
    let cfg = ExperimentConfig::default();
    let ep = run_episode(&cfg, &vec![0.0; 43]).unwrap();
    assert!(ep.g1 >= 0.0, "baseline margin {}", ep.g1);
    assert!(ep.truncation.is_none());
}

#[test]
fn single_seed_is_the_baseline() {
    let mut cfg = quick();
    cfg.n_init = 1;
    let seeds = generate_safe_seed(&cfg).unwrap();
    assert_eq!(seeds.dataset.len(), 1);
    assert!(seeds.dataset.rows[0].theta.iter().all(|t| *t == 0.0));
    assert_eq!(seeds.summary.draws, 1);
}

#[test]
fn seed_rows_are_all_safe() {
    let mut cfg = quick();
    cfg.n_init = 4;
    cfg.theta_box.seed_scale = 1.0;
    cfg.theta_box.initial_halfwidth = 4.0;
    cfg.theta_box.cap_halfwidth = 4.0;
    let seeds = generate_safe_seed(&cfg).unwrap();
    assert_eq!(seeds.dataset.len(), 4);
    assert!(seeds.dataset.rows.iter().all(|r| r.constraints[0] >= 0.0));
    assert!(seeds.summary.draws >= 4);
    assert!(seeds.dataset.rows[1..].iter().all(|r| r.theta.iter().all(|t| t.abs() <= 4.0)));
}

#[test]
fn unsafe_baseline_aborts_with_exit_code_three() {
    let mut cfg = quick();
    cfg.envelope.rho = 1.0;
    cfg.envelope.nu = 0.01;
    let err = generate_safe_seed(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::Unsafe(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn low_acceptance_is_reported() {
    let mut cfg = quick();
    cfg.episode_length = 60;
    cfg.n_init = 8;
    cfg.min_seed_draws = 8;
    cfg.acceptance_floor = 0.95;
    cfg.theta_box.initial_halfwidth = 50.0;
    cfg.theta_box.cap_halfwidth = 50.0;
    cfg.theta_box.seed_scale = 1.0;
    match generate_safe_seed(&cfg) {
        Err(HarnessError::Unsafe(msg)) => assert!(msg.contains("acceptance")),
        other => panic!("expected an acceptance error, got {:?}", other.map(|s| s.summary)),
    }
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, r#"{"episode_length": 10, "bogus": 1}"#).unwrap();
    let err = ExperimentConfig::load(&p).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    fs::write(&p, r#"{"ts": -0.1}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&p), Err(HarnessError::Config(_))));
    fs::write(&p, r#"{"v": [[1,0,0,0],[0,-1,0,0],[0,0,1,0],[0,0,0,1]]}"#).unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
    fs::write(&p, r#"{"envelope": {"rho": 2.0, "chi": 1.5, "nu": 0.1}}"#).unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
    fs::write(&p, "{}").unwrap();
    assert_eq!(ExperimentConfig::load(&p).unwrap(), ExperimentConfig::default());
}

#[test]
fn default_protocol_constants() {
    let cfg = ExperimentConfig::default();
    assert_eq!((cfg.episode_length, cfg.horizon, cfg.n_init, cfg.n_iter), (150, 20, 100, 400));
    assert_eq!(cfg.v, diag([10.0, 10.0, 0.1, 0.1]));
    assert_eq!(cfg.z, diag([100.0, 100.0, 1.0, 1.0]));
    assert_eq!((cfg.w, cfg.u_min, cfg.u_max), (0.01, -50.0, 50.0));
    assert_eq!(cfg.param_count(), 43);
    assert_eq!((cfg.beta, cfg.delta), (2.0, 0.046));
}

#[test]
fn zero_iterations_log_holds_only_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.n_iter = 0;
    let log = tune(&cfg, dir.path()).unwrap();
    assert!(log.iterations.is_empty());
    let s = log.summary.unwrap();
    assert_eq!(s.completed_iterations, 0);
    assert!(s.incumbent.objective <= s.baseline_g0);
    assert!(log.episodes.iter().all(|e| e.phase != Phase::Proposal));
    assert_eq!(fs::read_to_string(dir.path().join("curve.csv")).unwrap().lines().count(), 1);
}

#[test]
fn campaign_log_replays_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let log = tune(&cfg, dir.path()).unwrap();
    let s = log.summary.as_ref().unwrap();
    assert_eq!(log.iterations.len(), 2);
    assert!(s.incumbent.objective <= s.baseline_g0);
    assert_eq!(log, load_run_log(dir.path()).unwrap());
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(curve.starts_with("iteration,incumbent_g0,proposal_g1,violation"));

    for e in &log.episodes {
        let ep = replay(dir.path(), e.id).unwrap();
        assert_eq!((ep.g0, ep.g1), (e.g0, e.g1));
        let stored = read_episode_csv(&dir.path().join(format!("episodes/ep_{}.csv", e.id)), None).unwrap();
        assert_eq!(stored.states, ep.trajectory.states);
        assert_eq!(stored.inputs, ep.trajectory.inputs);
    }

    let mut tampered = log.clone();
    tampered.config.ts = 0.051;
    write_run_log(dir.path(), &tampered).unwrap();
    let err = replay(dir.path(), 0).unwrap_err();
    assert!(matches!(err, HarnessError::Integrity(ref m) if m.contains("episode 0")), "{err}");
    assert_eq!(err.exit_code(), 4);

    let mut bad_value = log.clone();
    bad_value.episodes[1].g0 += 1e-6;
    write_run_log(dir.path(), &bad_value).unwrap();
    assert!(matches!(replay(dir.path(), 1), Err(HarnessError::Integrity(_))));
}

#[test]
fn truncated_episode_replays_with_its_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.x0 = [0.0, 0.0, 1e153, 0.0];
    let (log, ep) = simulate(&cfg, &vec![0.0; 43], dir.path()).unwrap();
    let trunc = ep.truncation.clone().expect("run must be truncated");
    assert_eq!(ep.g0, SENTINEL_COST);
    assert_eq!(ep.g1, safetune::stability::EXPLODED_MARGIN);
    let again = replay(dir.path(), 0).unwrap();
    assert_eq!(again.truncation.unwrap().step(), trunc.step());
    assert_eq!(log.episodes[0].truncation, Some(trunc));
}
