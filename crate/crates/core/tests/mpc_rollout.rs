mod common;

use common::{central_difference, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetune::dynamics::{rk4_step, state, DiscretePlant, PendulumParams, State};
use safetune::harness::ExperimentConfig;
use safetune::mpc::{rollout_cost, solve_ocp, MpcController, OcpSpec, SolverConfig};
use safetune::neural_cost::{NeuralNet, ParamVector};

fn random_instance(rng: &mut ChaCha8Rng, horizon: usize) -> (OcpSpec<f64, DiscretePlant<f64>>, ParamVector<f64>, State<f64>, Vec<f64>) {
    let mut cfg = ExperimentConfig::default();
    cfg.horizon = horizon;
    let spec = cfg.spec().unwrap();
    let theta = ParamVector((0..43).map(|_| rng.random_range(-1.0..1.0)).collect());
    let x0 = state(
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    );
    let u = (0..horizon).map(|_| rng.random_range(-20.0..20.0)).collect();
    (spec, theta, x0, u)
}

#[test]
fn rollout_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..16);
        let (spec, theta, x0, u) = random_instance(&mut rng, n);
        let ocp = spec.instantiate(&theta).unwrap();
        let (_, _, grad) = ocp.cost_and_gradient(&x0, &u).unwrap();
        let fd = central_difference(|v| ocp.rollout(&x0, v).unwrap().0, &u, 1e-5);
        worst = worst.max(rel_err(&grad, &fd));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn rollout_cost_matches_independent_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(1..25);
        let (spec, theta, x0, u) = random_instance(&mut rng, n);
        let (j, states) = rollout_cost(&spec, &theta, &x0, &u).unwrap();

        let net = NeuralNet::new(&spec.arch, &theta).unwrap();
        let xd = spec.quad.x_d;
        let y_d = net.forward(xd.as_slice());
        let mut x = x0;
        let mut total = 0.0;
        for &ui in &u {
            let dx = x - xd;
            total += dx.dot(&(spec.quad.q * dx)) + spec.quad.r * (ui - spec.quad.u_d).powi(2);
            total += net.forward(x.as_slice()) - y_d;
            x = rk4_step(&PendulumParams::prediction_model(), 0.05, &x, ui).unwrap();
        }
        let dx = x - xd;
        total += dx.dot(&(spec.terminal * dx));
        assert!((j - total).abs() <= 1e-9 * total.abs().max(1.0), "{j} vs {total}");
        assert_eq!(*states.last().unwrap(), x);
    }
}

#[test]
fn returned_states_replay_through_the_prediction_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (spec, theta, x0, _) = random_instance(&mut rng, 20);
    let sol = solve_ocp(&spec, &theta, &x0, None, &SolverConfig::default()).unwrap();
    assert_eq!(sol.states[0], x0);
    let p = PendulumParams::prediction_model();
    for (i, u) in sol.inputs.iter().enumerate() {
        assert!((-50.0..=50.0).contains(u));
        let next = rk4_step(&p, 0.05, &sol.states[i], *u).unwrap();
        assert!((next - sol.states[i + 1]).amax() <= 1e-12);
    }
}

#[test]
fn warm_start_needs_no_more_iterations_on_a_settled_loop() {
    let cfg = ExperimentConfig::default();
    let spec = cfg.spec().unwrap();
    let theta = ParamVector::zeros(&spec.arch);
    let solver = SolverConfig {
        max_iterations: 2000,
        ..SolverConfig::default()
    };
    let plant = DiscretePlant::new(PendulumParams::prediction_model(), 0.05).unwrap();
    // settle near the upright position under the nominal model
    let mut ctl = MpcController::new(&spec, &theta, solver).unwrap();
    let mut x = state(3.0, 3.2, 0.0, 0.0);
    for _ in 0..40 {
        let (u, _) = ctl.step(&x).unwrap();
        x = safetune::dynamics::DiscreteModel::step(&plant, &x, u).unwrap();
    }
    let (_, warm) = ctl.step(&x).unwrap();
    let warm_iters = warm.iterations;
    let cold = solve_ocp(&spec, &theta, &x, None, &solver).unwrap();
    assert!(warm.converged);
    assert!(warm_iters <= cold.iterations, "warm {warm_iters} cold {}", cold.iterations);
}
