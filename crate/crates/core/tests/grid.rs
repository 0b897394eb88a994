use approx::assert_abs_diff_eq;

use bread::ais::Direction;
use bread::grid::*;
use bread::path::AnnealingSchedule;

fn linear(t: usize) -> AnnealingSchedule {
    AnnealingSchedule::linear(t).unwrap()
}

#[test]
fn barrier_geometry() {
    let grid = barrier_target();
    let e3 = 3f64.exp();
    let mass = 9.0 * e3 / (9.0 * e3 + 27.0 + 13.0 * (-10f64).exp());
    assert_abs_diff_eq!(dominant_mode_mass(&grid), mass, epsilon = 1e-14);
    assert!((mass - 0.870).abs() < 0.0005);
    assert_abs_diff_eq!(
        grid.log_partition(),
        (9.0 * e3 + 27.0 + 13.0 * (-10f64).exp()).ln(),
        epsilon = 1e-12
    );
    let barrier = grid.log_potential()[grid.index(3, 0)];
    let dominant = grid.log_potential()[grid.index(0, 6)];
    assert_eq!(barrier - dominant, -13.0);
    assert_eq!(
        grid.log_potential().iter().filter(|g| **g == -10.0).count(),
        13
    );
}

#[test]
fn random_target_determinism_and_errors() {
    let a = random_grid_target(2.0, 5).unwrap();
    let b = random_grid_target(2.0, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, random_grid_target(2.0, 6).unwrap());
    assert!(random_grid_target(0.0, 1).is_err());
    assert!(random_grid_target(-1.0, 1).is_err());
}

#[test]
fn near_flat_random_target_is_easy() {
    let grid = random_grid_target(1e-6, 3).unwrap();
    assert!(exact_final_jeffreys(&grid, &linear(10)) < 1e-3);
}

#[test]
fn flat_grid_marginals_are_uniform() {
    let grid = GridDistribution::flat(7, 7);
    let s = linear(20);
    for chain in [
        forward_chain_marginals(&grid, &s),
        reverse_chain_marginals(&grid, &s),
    ] {
        for m in &chain.marginals {
            for p in m {
                assert_abs_diff_eq!(*p, 1.0 / 49.0, epsilon = 1e-14);
            }
        }
    }
    let a = exact_analysis(&grid, &s);
    assert_abs_diff_eq!(a.chain_jeffreys, 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(a.final_jeffreys, 0.0, epsilon = 1e-14);
    assert_eq!(exact_expected_logw(&grid, &s, Direction::Forward), 0.0);
}

#[test]
fn marginals_normalized_and_pairwise_consistent() {
    let grid = random_grid_target(2.0, 9).unwrap();
    let s = linear(30);
    let fwd = forward_chain_marginals(&grid, &s);
    let rev = reverse_chain_marginals(&grid, &s);
    let target = grid.probabilities();
    for (a, b) in rev.marginals.last().unwrap().iter().zip(&target) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    for chain in [&fwd, &rev] {
        for m in &chain.marginals {
            assert_abs_diff_eq!(m.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
        for t in [0, 10, 28] {
            let pair = chain.pairwise(&grid, t).unwrap();
            for i in 0..grid.cells() {
                assert_abs_diff_eq!(pair.row(i).sum(), chain.marginals[t][i], epsilon = 1e-10);
                assert_abs_diff_eq!(
                    pair.column(i).sum(),
                    chain.marginals[t + 1][i],
                    epsilon = 1e-10
                );
            }
        }
        assert!(chain.pairwise(&grid, 29).is_err());
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[test]
fn long_chain_approaches_target() {
    // reference values from an independent dense-matrix computation
    let grid = barrier_target();
    let target = grid.probabilities();
    let tv = |t| {
        let fwd = forward_chain_marginals(&grid, &linear(t));
        total_variation(fwd.marginals.last().unwrap(), &target)
    };
    let (tv3, tv4) = (tv(1000), tv(10_000));
    assert_abs_diff_eq!(tv3, 0.469_984, epsilon = 1e-5);
    assert_abs_diff_eq!(tv4, 0.319_237, epsilon = 1e-5);
    assert!(tv4 < tv3);
}

#[test]
fn exact_identities_hold() {
    for grid in [
        barrier_target(),
        random_grid_target(2.0, 1).unwrap(),
        random_grid_target(10.0, 1).unwrap(),
    ] {
        for t in [10, 100, 1000] {
            let s = linear(t);
            let a = exact_analysis(&grid, &s);
            assert_abs_diff_eq!(
                a.log_ratio - a.expected_log_weight_forward,
                a.chain_kl_forward,
                epsilon = 1e-8
            );
            assert_abs_diff_eq!(
                -a.log_ratio - a.expected_log_weight_reverse,
                a.chain_kl_reverse,
                epsilon = 1e-8
            );
            assert!(a.final_jeffreys <= a.chain_jeffreys + 1e-12);
            assert!(a.final_kl_forward <= a.chain_kl_forward + 1e-12);
            assert!(a.final_kl_reverse <= a.chain_kl_reverse + 1e-12);
            assert_abs_diff_eq!(
                a.final_jeffreys,
                exact_final_jeffreys(&grid, &s),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                a.expected_log_weight_forward,
                exact_expected_logw(&grid, &s, Direction::Forward),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                a.expected_log_weight_reverse,
                exact_expected_logw(&grid, &s, Direction::Reverse),
                epsilon = 1e-12
            );
        }
    }
}
