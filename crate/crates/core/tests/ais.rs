use approx::assert_abs_diff_eq;

use bread::ais::*;
use bread::error::Error;
use bread::grid::{barrier_target, exact_analysis, GridDistribution};
use bread::numerics::log_mean_exp;
use bread::path::{AnnealingSchedule, GeometricPath};
use bread::transitions::{neighbor_mh_matrix, ChainRng, GridNeighborMh, RandomWalkMh};

fn three_state_path() -> (GeometricPath<usize>, Vec<f64>, Vec<f64>) {
    let f1 = vec![0.3, -0.4, 0.8];
    let ft = vec![1.5, -2.0, 0.1];
    let (a, b) = (f1.clone(), ft.clone());
    (
        GeometricPath::new(move |x: &usize| a[*x], move |x: &usize| b[*x]),
        f1,
        ft,
    )
}

fn sample_from_logs(logs: &[f64], rng: &mut ChainRng) -> usize {
    use rand::Rng;
    let lz = bread::numerics::log_sum_exp(logs).unwrap();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logs.iter().enumerate() {
        acc += (l - lz).exp();
        if u < acc {
            return i;
        }
    }
    logs.len() - 1
}

#[test]
fn identical_endpoints_give_zero_weights() {
    let path = GeometricPath::new(|x: &usize| -(*x as f64), |x: &usize| -(*x as f64));
    let kernel = GridNeighborMh::new(3, 1);
    let s = AnnealingSchedule::linear(2).unwrap();
    let fwd = forward_ais(
        &path,
        &s,
        &kernel,
        |rng| sample_from_logs(&[0.0, -1.0, -2.0], rng),
        8,
        1,
    )
    .unwrap();
    assert!(fwd.log_weights.iter().flatten().all(|w| *w == 0.0));
    let s = AnnealingSchedule::linear(20).unwrap();
    let out = bdmc(
        &path,
        &s,
        &kernel,
        |rng| sample_from_logs(&[0.0, -1.0, -2.0], rng),
        &[0],
        8,
        2,
    )
    .unwrap();
    assert_eq!(out.result.lower, 0.0);
    assert_eq!(out.result.upper, 0.0);
    assert_eq!(jeffreys_gap(&out.result).unwrap(), 0.0);
}

#[test]
fn pure_importance_sampling_is_unbiased_by_enumeration() {
    let (path, f1, ft) = three_state_path();
    let z1: f64 = f1.iter().map(|v| v.exp()).sum();
    let zt: f64 = ft.iter().map(|v| v.exp()).sum();
    let expected: f64 = (0..3)
        .map(|x| {
            let p1 = f1[x].exp() / z1;
            let e = path.endpoints(&x);
            p1 * e.log_ratio(0.0, 1.0).exp()
        })
        .sum();
    assert_abs_diff_eq!(expected, zt / z1, epsilon = 1e-14);
}

/// Sum over every trajectory `x_1 … x_{T-1}` of its probability times its
/// weight, using exact kernel matrices.
fn enumerate_expected_weight(f1: &[f64], ft: &[f64], betas: &[f64], direction: Direction) -> f64 {
    let n = f1.len();
    let log_f = |beta: f64, x: usize| (1.0 - beta) * f1[x] + beta * ft[x];
    let betas: Vec<f64> = match direction {
        Direction::Forward => betas.to_vec(),
        Direction::Reverse => betas.iter().rev().copied().collect(),
    };
    let start: Vec<f64> = (0..n).map(|x| log_f(betas[0], x)).collect();
    let z0: f64 = start.iter().map(|v| v.exp()).sum();
    let kernels: Vec<_> = betas
        .iter()
        .map(|&b| {
            let logs: Vec<f64> = (0..n).map(|x| log_f(b, x)).collect();
            neighbor_mh_matrix(n, 1, &logs).unwrap()
        })
        .collect();
    let stages = betas.len();
    let mut total = 0.0;
    let paths = n.pow((stages - 1) as u32);
    for code in 0..paths {
        let mut xs = Vec::with_capacity(stages - 1);
        let mut c = code;
        for _ in 0..stages - 1 {
            xs.push(c % n);
            c /= n;
        }
        let mut prob = start[xs[0]].exp() / z0;
        for t in 1..stages - 1 {
            prob *= kernels[t][(xs[t - 1], xs[t])];
        }
        let log_w: f64 = (1..stages)
            .map(|t| log_f(betas[t], xs[t - 1]) - log_f(betas[t - 1], xs[t - 1]))
            .sum();
        total += prob * log_w.exp();
    }
    total
}

#[test]
fn enumerated_chains_are_unbiased_in_both_directions() {
    let (_, f1, ft) = three_state_path();
    let z1: f64 = f1.iter().map(|v| v.exp()).sum();
    let zt: f64 = ft.iter().map(|v| v.exp()).sum();
    for stages in 2..=4 {
        let s = AnnealingSchedule::linear(stages).unwrap();
        let fwd = enumerate_expected_weight(&f1, &ft, s.betas(), Direction::Forward);
        let rev = enumerate_expected_weight(&f1, &ft, s.betas(), Direction::Reverse);
        assert_abs_diff_eq!(fwd, zt / z1, epsilon = 1e-10);
        assert_abs_diff_eq!(rev, z1 / zt, epsilon = 1e-10);
    }
}

#[test]
fn sampled_three_state_weights_are_unbiased() {
    let (path, f1, ft) = three_state_path();
    let z1: f64 = f1.iter().map(|v| v.exp()).sum();
    let zt: f64 = ft.iter().map(|v| v.exp()).sum();
    let s = AnnealingSchedule::linear(4).unwrap();
    let kernel = GridNeighborMh::new(3, 1);
    let chains = 200_000;
    let run = forward_ais(
        &path,
        &s,
        &kernel,
        |rng| sample_from_logs(&f1, rng),
        chains,
        3,
    )
    .unwrap();
    let w: Vec<f64> = run.final_log_weights().iter().map(|l| l.exp()).collect();
    let (mean, se) = bread::numerics::mean_and_std_err(&w);
    assert!((mean - zt / z1).abs() < 4.0 * se, "{mean} vs {}", zt / z1);
}

#[test]
fn reverse_requires_target_sample() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(10).unwrap();
    let err = reverse_ais(&grid.path(), &s, &grid.kernel(), &[], 4, 0);
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
    let err = reverse_ais(&grid.path(), &s, &grid.kernel(), &[1, 2], 4, 0);
    assert!(err.is_err());
}

#[test]
fn reverse_with_identical_endpoints_is_zero() {
    let grid = GridDistribution::flat(7, 7);
    let s = AnnealingSchedule::linear(50).unwrap();
    let run = reverse_ais(&grid.path(), &s, &grid.kernel(), &[3], 5, 9).unwrap();
    assert!(run.shared_initial_state);
    assert_eq!(run.log_estimate(), 0.0);
}

#[test]
fn zero_density_initial_state_is_an_error() {
    let path = GeometricPath::new(
        |x: &usize| if *x == 0 { f64::NEG_INFINITY } else { 0.0 },
        |_: &usize| 0.0,
    );
    let s = AnnealingSchedule::linear(3).unwrap();
    let res = forward_ais(&path, &s, &GridNeighborMh::new(3, 1), |_| 0usize, 1, 0);
    assert!(matches!(res, Err(Error::InvalidState(_))));
}

#[test]
fn first_weight_column_is_zero_and_runs_are_deterministic() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(100).unwrap();
    let run = |seed| {
        forward_ais(
            &grid.path(),
            &s,
            &grid.kernel(),
            |rng| grid.sample_uniform(rng),
            16,
            seed,
        )
        .unwrap()
    };
    let a = run(42);
    let b = run(42);
    assert!(a.log_weights.iter().all(|w| w[0] == 0.0));
    assert_eq!(a.log_weights, b.log_weights);
    assert_eq!(a.final_states, b.final_states);
    assert_ne!(a.log_weights, run(43).log_weights);
}

#[test]
fn barrier_sampled_mean_matches_oracle() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(100).unwrap();
    let exact = exact_analysis(&grid, &s).expected_log_weight_forward;
    let run = forward_ais(
        &grid.path(),
        &s,
        &grid.kernel(),
        |rng| grid.sample_uniform(rng),
        16,
        7,
    )
    .unwrap();
    let (mean, se) = bread::numerics::mean_and_std_err(&run.final_log_weights());
    assert!(
        (mean - exact).abs() < 4.0 * se,
        "{mean} vs {exact} (se {se})"
    );
}

#[test]
fn bound_tails_obey_markov() {
    // a stochastic bound is wrong by more than b nats with probability < e^{-b}
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(100).unwrap();
    let truth = grid.log_partition();
    let log_z1 = grid.log_initial_partition();
    let trials = 400u64;
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for seed in 0..trials {
        let fwd = forward_ais(
            &grid.path(),
            &s,
            &grid.kernel(),
            |rng| grid.sample_uniform(rng),
            1,
            seed,
        )
        .unwrap();
        lower.push(log_z1 + fwd.log_estimate());
        let mut rng = chain_rng(seed, Direction::Reverse, 10_000);
        let x = grid.sample_exact(&mut rng);
        let rev = reverse_ais(&grid.path(), &s, &grid.kernel(), &[x], 1, seed).unwrap();
        upper.push(log_z1 - rev.log_estimate());
    }
    for b in [0.25f64, 0.5, 1.0, 2.0] {
        let p = (-b).exp();
        let slack = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
        let over = lower.iter().filter(|&&l| l > truth + b).count() as f64 / trials as f64;
        let under = upper.iter().filter(|&&u| u < truth - b).count() as f64 / trials as f64;
        assert!(over < p + slack, "lower bound exceeds truth by {b}: {over}");
        assert!(
            under < p + slack,
            "upper bound undershoots truth by {b}: {under}"
        );
    }
}

#[test]
fn barrier_gap_tracks_oracle() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(1000).unwrap();
    let exact = exact_analysis(&grid, &s);
    let gaps: Vec<f64> = (0..50)
        .map(|seed| {
            let mut rng = chain_rng(seed, Direction::Reverse, 10_000);
            let samples: Vec<usize> = (0..16).map(|_| grid.sample_exact(&mut rng)).collect();
            let out = bdmc(
                &grid.path(),
                &s,
                &grid.kernel(),
                |rng| grid.sample_uniform(rng),
                &samples,
                16,
                seed,
            )
            .unwrap();
            out.result.mean_chain_gap()
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean - 1.184).abs() < 0.15 * 1.184, "mean gap {mean}");
    assert!(
        mean >= exact.final_jeffreys,
        "mean gap {mean} < J {}",
        exact.final_jeffreys
    );
}

#[test]
fn barrier_gap_exceeds_j_at_t100() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(100).unwrap();
    let exact = exact_analysis(&grid, &s);
    let gaps: Vec<f64> = (0..50)
        .map(|seed| {
            let mut rng = chain_rng(seed, Direction::Reverse, 10_000);
            let samples: Vec<usize> = (0..16).map(|_| grid.sample_exact(&mut rng)).collect();
            bdmc(
                &grid.path(),
                &s,
                &grid.kernel(),
                |rng| grid.sample_uniform(rng),
                &samples,
                16,
                seed,
            )
            .unwrap()
            .result
            .mean_chain_gap()
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        mean >= exact.final_jeffreys,
        "{mean} < {}",
        exact.final_jeffreys
    );
}

#[test]
fn one_sided_bounds() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(1000).unwrap();
    let exact = exact_analysis(&grid, &s);
    let log_r = exact.log_ratio;
    // single-chain runs averaged over seeds estimate the chain-level KL
    let seeds = 300u64;
    let mut fwd_sum = 0.0;
    let mut rev_sum = 0.0;
    for seed in 0..seeds {
        let fwd = forward_ais(
            &grid.path(),
            &s,
            &grid.kernel(),
            |rng| grid.sample_uniform(rng),
            1,
            seed,
        )
        .unwrap();
        let mut rng = chain_rng(seed, Direction::Reverse, 10_000);
        let x = grid.sample_exact(&mut rng);
        let rev = reverse_ais(&grid.path(), &s, &grid.kernel(), &[x], 1, seed).unwrap();
        fwd_sum += one_sided_kl_bound(&fwd, log_r, BoundSide::Upper).unwrap();
        rev_sum += one_sided_kl_bound(&rev, log_r, BoundSide::Lower).unwrap();
        assert!(one_sided_kl_bound(&fwd, log_r, BoundSide::Lower).is_err());
        assert!(one_sided_kl_bound(&rev, log_r, BoundSide::Upper).is_err());
    }
    let (fwd_mean, rev_mean) = (fwd_sum / seeds as f64, rev_sum / seeds as f64);
    assert!(
        fwd_mean >= exact.final_kl_forward,
        "{fwd_mean} vs {}",
        exact.final_kl_forward
    );
    assert!(
        rev_mean >= exact.final_kl_reverse,
        "{rev_mean} vs {}",
        exact.final_kl_reverse
    );

    let fwd = forward_ais(
        &grid.path(),
        &s,
        &grid.kernel(),
        |rng| grid.sample_uniform(rng),
        4,
        1,
    )
    .unwrap();
    assert_eq!(
        one_sided_kl_bound(&fwd, fwd.log_estimate(), BoundSide::Upper).unwrap(),
        0.0
    );
}

#[test]
fn mismatched_configurations_are_rejected() {
    let grid = barrier_target();
    let a = AnnealingSchedule::linear(10).unwrap();
    let b = AnnealingSchedule::linear(20).unwrap();
    let fwd = forward_ais(
        &grid.path(),
        &a,
        &grid.kernel(),
        |rng| grid.sample_uniform(rng),
        2,
        0,
    )
    .unwrap();
    let rev = reverse_ais(&grid.path(), &b, &grid.kernel(), &[2], 2, 0).unwrap();
    let result = BdmcResult::from_runs(&fwd, &rev).unwrap();
    assert!(jeffreys_gap(&result).is_err());
    assert!(BdmcResult::from_runs(&rev, &fwd).is_err());
    let rev = reverse_ais(
        &grid.path(),
        &a,
        &grid.kernel().with_steps_per_stage(2),
        &[2],
        2,
        0,
    )
    .unwrap();
    assert!(jeffreys_gap(&BdmcResult::from_runs(&fwd, &rev).unwrap()).is_err());
}

#[test]
fn stage_bounds() {
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(30).unwrap();
    let run = forward_ais(
        &grid.path(),
        &s,
        &grid.kernel(),
        |rng| grid.sample_uniform(rng),
        8,
        0,
    )
    .unwrap();
    let log_z1 = grid.log_initial_partition();
    let curve = stochastic_bounds(&run, log_z1, None).unwrap();
    assert_eq!(curve.points.len(), 30);
    assert_eq!(curve.points[0].bound, log_z1);
    assert_eq!(curve.points[29].bound, log_z1 + run.log_estimate());
    let some = stochastic_bounds(&run, 0.0, Some(&[1, 10, 30])).unwrap();
    assert_eq!(some.stages(), vec![1, 10, 30]);
    assert!(stochastic_bounds(&run, 0.0, Some(&[0])).is_err());
    assert!(stochastic_bounds(&run, 0.0, Some(&[10, 5])).is_err());
}

#[test]
fn averaging_more_chains_tightens_lower_bound() {
    // paired seeds: the first chains of the larger run coincide with the smaller run
    let grid = barrier_target();
    let s = AnnealingSchedule::linear(100).unwrap();
    let mut small = 0.0;
    let mut large = 0.0;
    for seed in 0..40 {
        let run = forward_ais(
            &grid.path(),
            &s,
            &grid.kernel(),
            |rng| grid.sample_uniform(rng),
            64,
            seed,
        )
        .unwrap();
        let w = run.final_log_weights();
        small += log_mean_exp(&w[..4]).unwrap();
        large += log_mean_exp(&w).unwrap();
    }
    assert!(large > small);
}

#[test]
fn continuous_chains_run_with_random_walk() {
    let path = GeometricPath::new(
        |x: &Vec<f64>| bread::numerics::normal_log_pdf(x[0], 0.0, 1.0),
        |x: &Vec<f64>| {
            bread::numerics::normal_log_pdf(x[0], 0.0, 1.0)
                + bread::numerics::normal_log_pdf(1.0, x[0], 1.0)
        },
    );
    let s = AnnealingSchedule::linear(200).unwrap();
    let kernel = RandomWalkMh::new(0.5).unwrap();
    let run = forward_ais(
        &path,
        &s,
        &kernel,
        |rng| {
            use rand_distr::{Distribution, StandardNormal};
            vec![StandardNormal.sample(rng)]
        },
        64,
        5,
    )
    .unwrap();
    // marginal of y = 1 under y ~ N(0, 2)
    let truth = bread::numerics::normal_log_pdf(1.0, 0.0, 2f64.sqrt());
    assert!((run.log_estimate() - truth).abs() < 0.1);
}
