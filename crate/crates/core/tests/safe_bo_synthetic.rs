use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetune::safe_bo::{
    bo_step, constrained_acquisition, Acquisition, BoConfig, BoDataset, BoRow, Domain, ObjectiveTransform, Observation, TuneState,
};

const TARGET: [f64; 2] = [0.9, 0.9];
const CENTRE: [f64; 2] = [0.4, 0.4];
const RADIUS: f64 = 0.3;

fn objective(t: &[f64]) -> f64 {
    (t[0] - TARGET[0]).powi(2) + (t[1] - TARGET[1]).powi(2)
}

fn disk(t: &[f64]) -> f64 {
    RADIUS * RADIUS - (t[0] - CENTRE[0]).powi(2) - (t[1] - CENTRE[1]).powi(2)
}

fn observe(t: &[f64]) -> Observation {
    Observation {
        objective: objective(t),
        constraints: vec![disk(t)],
    }
}

fn grid_optimum() -> [f64; 2] {
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 0..=1000 {
        for j in 0..=1000 {
            let t = [i as f64 / 1000.0, j as f64 / 1000.0];
            if disk(&t) >= 0.0 && objective(&t) < best.0 {
                best = (objective(&t), t);
            }
        }
    }
    best.1
}

fn initial_state(seed: u64) -> TuneState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = BoDataset::default();
    ds.push(BoRow {
        theta: CENTRE.to_vec(),
        objective: objective(&CENTRE),
        constraints: vec![disk(&CENTRE)],
    })
    .unwrap();
    while ds.len() < 3 {
        let t = vec![rng.random_range(0.2..0.6), rng.random_range(0.2..0.6)];
        if disk(&t) >= 0.0 {
            let o = observe(&t);
            ds.push(BoRow {
                theta: t,
                objective: o.objective,
                constraints: o.constraints,
            })
            .unwrap();
        }
    }
    let cfg = BoConfig {
        objective_transform: ObjectiveTransform::Identity,
        pool_size: 1024,
        seed,
        ..BoConfig::default()
    };
    let dom = Domain::new(vec![0.0; 2], vec![1.0; 2], vec![0.0; 2], vec![1.0; 2], 1.0).unwrap();
    TuneState::new(cfg, ds, dom).unwrap()
}

#[test]
fn disk_constrained_bowl_reaches_grid_optimum() {
    let opt = grid_optimum();
    let mut hits = 0;
    for seed in 0..10 {
        let mut s = initial_state(seed);
        let mut eval = observe;
        for _ in 0..50 {
            let rec = bo_step(&mut s, &mut eval).unwrap();
            assert!(s.domain.contains(&rec.proposal.theta));
        }
        let inc = &s.incumbent.theta;
        let dist = ((inc[0] - opt[0]).powi(2) + (inc[1] - opt[1]).powi(2)).sqrt();
        hits += usize::from(dist <= 0.1);
    }
    assert!(hits >= 8, "{hits}/10 seeds within 0.1 of the constrained optimum");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let run = |seed| {
        let mut s = initial_state(seed);
        let mut eval = observe;
        for _ in 0..8 {
            bo_step(&mut s, &mut eval).unwrap();
        }
        s.dataset
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn incumbent_is_safe_and_monotone() {
    let mut s = initial_state(2);
    let mut eval = observe;
    let mut prev = s.incumbent.objective;
    for _ in 0..15 {
        let rec = bo_step(&mut s, &mut eval).unwrap();
        assert!(s.dataset.rows[rec.incumbent.row].is_safe());
        assert!(rec.incumbent.objective <= prev);
        prev = rec.incumbent.objective;
    }
}

#[test]
fn evaluator_failures_enter_as_violations() {
    let mut s = initial_state(1);
    let mut eval = |_: &[f64]| Observation {
        objective: 1e12,
        constraints: vec![-1e3],
    };
    let before = s.incumbent.clone();
    let rec = bo_step(&mut s, &mut eval).unwrap();
    assert!(!rec.safe);
    assert_eq!(s.dataset.len(), 4);
    assert_eq!(s.incumbent, before);
    // the loop keeps going
    bo_step(&mut s, &mut observe).unwrap();
}

fn fitted_state() -> TuneState {
    let mut s = initial_state(0);
    let mut eval = observe;
    for _ in 0..5 {
        bo_step(&mut s, &mut eval).unwrap();
    }
    s.refit().unwrap();
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn infeasible_exactly_where_a_lower_bound_is_nonpositive(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        thread_local!(static STATE: TuneState = fitted_state());
        STATE.with(|s| {
            let t = [x, y];
            let (lcb, _) = s.constraint_gps[0].bounds(&t, s.config.beta);
            match constrained_acquisition(s, &t) {
                Acquisition::Infeasible => assert!(lcb <= 0.0),
                Acquisition::Value(v) => {
                    assert!(lcb > 0.0);
                    assert!(v.is_finite());
                }
            }
        });
    }
}

#[test]
fn expansion_from_unit_halfwidth() {
    let mut d = Domain::symmetric(43, 1.0, 100.0, 1.05).unwrap();
    for _ in 0..10 {
        d = d.expanded();
    }
    assert!(d.halfwidths().iter().all(|h| (h - 1.05f64.powi(10)).abs() < 1e-12));
}
