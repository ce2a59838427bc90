use magidde::bench::{simulate_dataset, SimulationSpec};
use magidde::models::builtin;
use magidde::pipeline::{prepare, InferenceConfig};
use magidde::posterior::HistoryScheme;
use magidde::solver::{solve, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn history_schemes_agree_near_the_truth_on_a_fine_grid() {
    let model = builtin("hutchinson-log").unwrap();
    let mut spec = SimulationSpec::from_truth(model.as_ref(), 1, 5, InferenceConfig::default()).unwrap();
    spec.inference.level = 3;
    let obs = simulate_dataset(model.as_ref(), &spec, 0).unwrap();
    let linear = prepare(model.clone(), &obs, &spec.inference).unwrap().posterior;
    assert_eq!(linear.grid().len(), 121);
    let mut conditional = linear.clone();
    conditional.set_scheme(HistoryScheme::ConditionalExpectation);

    let grid = linear.grid().times.clone();
    let truth = solve(
        model.as_ref(),
        &spec.theta,
        &spec.x0,
        spec.t_end,
        &SolverConfig {
            step: 0.01,
            output_times: grid.clone(),
        },
    )
    .unwrap()
    .component(0);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let jitter = Normal::new(0.0, 0.01).unwrap();
    let (mut diff, mut manifold) = (0.0, 0.0);
    for _ in 0..20 {
        let x: Vec<f64> = truth.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        let theta: Vec<f64> = spec.theta.iter().map(|t| t * (1.0 + jitter.sample(&mut rng))).collect();
        let z = linear.pack(&[x], &theta, &[0.1]).unwrap();
        let a = linear.log_density(&z);
        let b = conditional.log_density(&z);
        assert!(a.is_finite() && b.is_finite());
        diff += (a - b).abs();
        manifold += linear.terms(&z).unwrap().manifold.abs();
    }
    assert!(
        diff <= 0.01 * manifold,
        "scheme difference {} vs manifold magnitude {}",
        diff / 20.0,
        manifold / 20.0
    );
}
