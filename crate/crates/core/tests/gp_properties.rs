use magidde::gp::{
    build_cache, fit_hyperparameters, log_marginal_likelihood, sample_path, ComponentObservations, NoiseLevel,
};
use magidde::kernels::{build_kernel_set, matern, matern_derivatives, MaternParams, Smoothness};
use nalgebra::{Cholesky, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn sorted_grid(raw: Vec<f64>) -> Vec<f64> {
    let mut g = raw;
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    g
}

fn nu_strategy() -> impl Strategy<Value = Smoothness> {
    prop_oneof![Just(Smoothness::Nu201), Just(Smoothness::Nu25)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_matrix_is_positive_definite(
        raw in prop::collection::vec(0.0f64..50.0, 1..200),
        var in 0.01f64..100.0,
        bw in 0.1f64..20.0,
        nu in nu_strategy(),
    ) {
        let grid = sorted_grid(raw);
        let p = MaternParams::new(var, bw, nu).unwrap();
        let set = build_kernel_set(&grid, &grid, &p).unwrap();
        let mut k = set.k.clone();
        for i in 0..grid.len() {
            k[(i, i)] += 1e-10;
        }
        prop_assert!(Cholesky::new(k).is_some());
        prop_assert!((&set.k - set.k.transpose()).amax() == 0.0);
        prop_assert!((&set.kpp - set.kpp.transpose()).amax() <= 1e-12 * set.kpp.amax());
        prop_assert!((&set.pk - set.kp.transpose()).amax() <= 1e-12 * (1.0 + set.kp.amax()));
        for i in 0..grid.len() {
            prop_assert_eq!(set.kp[(i, i)], 0.0);
        }
    }

    #[test]
    fn derivatives_match_central_differences(
        raw in prop::collection::vec(0.0f64..20.0, 20),
        var in 0.1f64..10.0,
        bw in 0.5f64..10.0,
        nu in nu_strategy(),
    ) {
        let p = MaternParams::new(var, bw, nu).unwrap();
        let (h, h2) = (1e-6, 1e-4);
        let mut worst: f64 = 0.0;
        for (a, &s) in raw.iter().enumerate() {
            for &t in &raw[a + 1..] {
                if (s - t).abs() < 1e-2 {
                    continue;
                }
                let d = matern_derivatives(s, t, &p).unwrap();
                let k = |s: f64, t: f64| matern(s, t, &p).unwrap();
                let ds = (k(s + h, t) - k(s - h, t)) / (2.0 * h);
                let dt = (k(s, t + h) - k(s, t - h)) / (2.0 * h);
                let dsdt = (k(s + h2, t + h2) - k(s + h2, t - h2) - k(s - h2, t + h2) + k(s - h2, t - h2)) / (4.0 * h2 * h2);
                for (an, fd) in [(d.ds, ds), (d.dt, dt), (d.dsdt, dsdt)] {
                    worst = worst.max((an - fd).abs() / (1.0 + an.abs()));
                }
            }
        }
        prop_assert!(worst <= 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn cache_invariants(
        raw in prop::collection::vec(0.0f64..30.0, 2..60),
        var in 0.1f64..10.0,
        bw in 0.5f64..10.0,
        nu in nu_strategy(),
    ) {
        let grid = sorted_grid(raw);
        let p = MaternParams::new(var, bw, nu).unwrap();
        let cache = build_cache(&grid, &p).unwrap();
        let set = build_kernel_set(&grid, &grid, &p).unwrap();

        let residual = &cache.m * &cache.c - &set.pk;
        prop_assert!(residual.norm() <= 1e-8 * (1.0 + set.pk.norm()), "m C residual {}", residual.norm());

        prop_assert!((&cache.zeta - cache.zeta.transpose()).amax() == 0.0);
        let eig = SymmetricEigen::new(cache.zeta.clone());
        let trace = cache.zeta.trace().abs();
        prop_assert!(eig.eigenvalues.min() >= -1e-8 * trace, "min eigenvalue {}", eig.eigenvalues.min());

        for i in 0..grid.len() {
            prop_assert!(cache.zeta[(i, i)] <= set.kpp[(i, i)] * (1.0 + 1e-10));
        }
        prop_assert!(cache.log_det_c.is_finite() && cache.log_det_zeta.is_finite());
        prop_assert_eq!(build_cache(&grid, &p).unwrap(), cache);
    }
}

fn simulated(seed: u64, p: &MaternParams, sd: f64, n: usize) -> ComponentObservations {
    let times: Vec<f64> = (0..n).map(|i| 30.0 * i as f64 / (n - 1) as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let values = sample_path(&times, p, &mut rng)
        .unwrap()
        .into_iter()
        .map(|v| v + noise.sample(&mut rng))
        .collect();
    ComponentObservations::new(times, values, NoiseLevel::Unknown).unwrap()
}

#[test]
fn hyperparameters_are_recovered_from_simulated_paths() {
    let truth = MaternParams::new(1.0, 2.0, Smoothness::Nu25).unwrap();
    let mut hits = 0;
    for seed in 0..50 {
        let fit = fit_hyperparameters(&simulated(seed, &truth, 0.1, 61), Smoothness::Nu25).unwrap();
        let ok = fit.params.variance.ln().abs() <= 0.7 && (fit.params.bandwidth / 2.0).ln().abs() <= 0.7;
        hits += ok as usize;
    }
    assert!(hits >= 45, "{hits}/50 seeds recovered");
}

#[test]
fn doubling_observations_quadruples_the_variance() {
    let truth = MaternParams::new(1.0, 2.0, Smoothness::Nu25).unwrap();
    let obs = simulated(3, &truth, 0.1, 61);
    let doubled = ComponentObservations::new(
        obs.times.clone(),
        obs.values.iter().map(|v| 2.0 * v).collect(),
        NoiseLevel::Unknown,
    )
    .unwrap();
    let a = fit_hyperparameters(&obs, Smoothness::Nu25).unwrap();
    let b = fit_hyperparameters(&doubled, Smoothness::Nu25).unwrap();
    assert!(
        (b.params.variance / (4.0 * a.params.variance) - 1.0).abs() <= 0.05,
        "{a:?} {b:?}"
    );
    assert!(
        (b.params.bandwidth / a.params.bandwidth - 1.0).abs() <= 0.05,
        "{a:?} {b:?}"
    );
}

#[test]
fn fit_is_invariant_to_time_reversal() {
    let truth = MaternParams::new(1.0, 2.0, Smoothness::Nu25).unwrap();
    for seed in [1, 7] {
        let obs = simulated(seed, &truth, 0.1, 31);
        let end = *obs.times.last().unwrap();
        let reversed = ComponentObservations::new(
            obs.times.iter().rev().map(|t| end - t).collect(),
            obs.values.iter().rev().copied().collect(),
            NoiseLevel::Unknown,
        )
        .unwrap();
        let a = fit_hyperparameters(&obs, Smoothness::Nu25).unwrap();
        let b = fit_hyperparameters(&reversed, Smoothness::Nu25).unwrap();
        assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-3 * (1.0 + a.log_likelihood.abs()));
        assert!(
            (a.params.variance / b.params.variance - 1.0).abs() <= 0.02,
            "{a:?} {b:?}"
        );
        assert!(
            (a.params.bandwidth / b.params.bandwidth - 1.0).abs() <= 0.02,
            "{a:?} {b:?}"
        );
    }
}

#[test]
fn fit_beats_every_multistart_box_corner() {
    let truth = MaternParams::new(1.0, 2.0, Smoothness::Nu25).unwrap();
    let obs = simulated(11, &truth, 0.1, 31);
    let fit = fit_hyperparameters(&obs, Smoothness::Nu25).unwrap();
    let centered = ComponentObservations::new(
        obs.times.clone(),
        obs.values.iter().map(|v| v - fit.mean).collect(),
        NoiseLevel::Unknown,
    )
    .unwrap();
    let var = obs.sample_variance();
    for phi1 in [0.01 * var, var, 100.0 * var] {
        for phi2 in [1.0, 5.0, 30.0] {
            for s2 in [1e-6 * var, 1e-2 * var, var] {
                let p = MaternParams::new(phi1, phi2, Smoothness::Nu25).unwrap();
                let ll = log_marginal_likelihood(&centered, &p, s2).unwrap();
                assert!(
                    fit.log_likelihood >= ll - 1e-9,
                    "({phi1}, {phi2}, {s2}): {ll} > {}",
                    fit.log_likelihood
                );
            }
        }
    }
}
