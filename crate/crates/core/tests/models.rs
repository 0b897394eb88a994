use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use statrs::distribution::{ContinuousCDF, Normal};

use bread::error::Error;
use bread::models::*;
use bread::numerics::{chol_log_det, cholesky, normal_log_pdf, HALF_LN_2PI};
use bread::transitions::ChainRng;

fn fd_check<M: Model>(model: &M, data: &M::Data, seed: u64) {
    let mut rng = ChainRng::seed_from_u64(seed);
    for _ in 0..5 {
        let theta = model.sample_params(&mut rng);
        let analytic: Vec<f64> = model
            .grad_log_prior(&theta)
            .unwrap()
            .iter()
            .zip(model.grad_log_likelihood(&theta, data).unwrap())
            .map(|(a, b)| a + b)
            .collect();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += h;
                down[i] -= h;
                (model.log_joint(&up, data).unwrap() - model.log_joint(&down, data).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let err: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        assert!(
            err / scale < 1e-5,
            "{}: relative error {}",
            model.name(),
            err / scale
        );
    }
}

fn regression(noise: NoisePrior, n: usize, d: usize) -> LinRegModel {
    LinRegModel::new(LinRegModel::random_design(n, d, 11).unwrap(), noise).unwrap()
}

#[test]
fn regression_gradients() {
    for noise in [
        NoisePrior::Fixed { scale: 0.7 },
        NoisePrior::default_inverse_gaussian(),
        NoisePrior::default_half_cauchy(),
    ] {
        let model = regression(noise, 30, 4);
        let y = simulate_dataset(&model, 1).data;
        fd_check(&model, &y, 2);
    }
}

#[test]
fn matrix_factorization_gradients() {
    for rep in [Representation::Uncollapsed, Representation::Collapsed] {
        let model = MatrixFactorization::with_scales(6, 2, 5, 1.3, 0.8, 0.9, rep).unwrap();
        let y = simulate_dataset(&model, 3).data;
        fd_check(&model, &y, 4);
    }
}

#[test]
fn regression_without_observations() {
    let model =
        LinRegModel::new(DMatrix::zeros(0, 2), NoisePrior::default_inverse_gaussian()).unwrap();
    let sim = simulate_dataset(&model, 5);
    assert!(sim.data.is_empty());
    assert_eq!(sim.params.len(), 3);
    assert_eq!(model.log_likelihood(&sim.params, &sim.data), 0.0);
    // w = 0, s = 1: two standard normals at 0, IG(1, 1) at 1, Jacobian e^0
    let lp = model.log_prior(&[0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(lp, -3.0 * HALF_LN_2PI, epsilon = 1e-14);
    let fixed = model.fixed_noise(1.0).unwrap();
    assert_eq!(fixed.log_marginal_likelihood(&[]).unwrap(), 0.0);
}

#[test]
fn simulation_is_deterministic() {
    let model = regression(NoisePrior::default_half_cauchy(), 20, 3);
    assert_eq!(simulate_dataset(&model, 9), simulate_dataset(&model, 9));
    assert_ne!(simulate_dataset(&model, 9), simulate_dataset(&model, 10));
}

#[test]
fn noise_priors_are_normalized() {
    // trapezoid rule over u = ln s on [-30, 30]
    for noise in [
        NoisePrior::default_inverse_gaussian(),
        NoisePrior::default_half_cauchy(),
    ] {
        let model = LinRegModel::new(DMatrix::zeros(0, 1), noise).unwrap();
        let (lo, hi, m) = (-30.0, 30.0, 600_000);
        let h = (hi - lo) / m as f64;
        let total: f64 = (0..=m)
            .map(|i| {
                let u = lo + i as f64 * h;
                let wgt = if i == 0 || i == m { 0.5 } else { 1.0 };
                wgt * (model.log_prior(&[0.0, u]) - normal_log_pdf(0.0, 0.0, 1.0)).exp()
            })
            .sum::<f64>()
            * h;
        // the half-Cauchy tail beyond e^30 carries about 2c/(π e^30)
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn prior_density_matches_closed_forms() {
    let ig = NoisePrior::InverseGaussian {
        mean: 2.0,
        shape: 3.0,
    };
    let s: f64 = 1.5;
    let expected = (3.0 / (2.0 * std::f64::consts::PI * s.powi(3))).sqrt().ln()
        - 3.0 * (s - 2.0).powi(2) / (2.0 * 4.0 * s);
    assert_abs_diff_eq!(ig.log_density(s).0, expected, epsilon = 1e-14);
    let hc = NoisePrior::HalfCauchy { scale: 5.0 };
    let expected = (2.0 / (std::f64::consts::PI * 5.0 * (1.0 + 0.09f64))).ln();
    assert_abs_diff_eq!(hc.log_density(s).0, expected, epsilon = 1e-14);
}

#[test]
fn invalid_regressions_are_rejected() {
    let raw = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
    assert!(LinRegModel::new(raw.clone(), NoisePrior::default_half_cauchy()).is_err());
    let mut x = raw;
    standardize_columns(&mut x).unwrap();
    assert!(LinRegModel::new(x.clone(), NoisePrior::Fixed { scale: 0.0 }).is_err());
    assert!(LinRegModel::new(DMatrix::zeros(3, 0), NoisePrior::default_half_cauchy()).is_err());
    let mut flat = DMatrix::from_element(4, 1, 2.0);
    assert!(standardize_columns(&mut flat).is_err());
    let model = LinRegModel::new(x, NoisePrior::default_half_cauchy()).unwrap();
    assert!(model.log_marginal_likelihood(&[0.0; 3]).is_err());
    assert!(model.fix_hyperparameters(&[]).is_err());
    assert!(model.log_joint(&[0.0], &vec![0.0; 3]).is_err());
}

#[test]
fn conjugate_evidence_matches_dual_route() {
    // log p(y) = log p(w) + log p(y | w) − log p(w | y) at any w
    let model = regression(NoisePrior::Fixed { scale: 0.6 }, 25, 3);
    let y = simulate_dataset(&model, 8).data;
    let (mean, cov) = model.conjugate_posterior(&y).unwrap();
    let w = [0.3, -0.2, 0.5];
    let diff = DVector::from_column_slice(&w) - &mean;
    let chol = cholesky(&cov, "cov").unwrap();
    let log_post =
        -0.5 * diff.dot(&chol.solve(&diff)) - 0.5 * chol_log_det(&chol) - 3.0 * HALF_LN_2PI;
    let via_bayes = model.log_joint(&w, &y).unwrap() - log_post;
    assert_abs_diff_eq!(
        model.log_marginal_likelihood(&y).unwrap(),
        via_bayes,
        epsilon = 1e-9
    );
}

#[test]
fn simulated_parameters_are_calibrated() {
    // rank of w within the closed-form posterior CDF is uniform
    let model = regression(NoisePrior::Fixed { scale: 1.0 }, 5, 1);
    let runs = 10_000;
    let mut ranks: Vec<f64> = (0..runs)
        .map(|seed| {
            let sim = simulate_dataset(&model, seed);
            let (mean, cov) = model.conjugate_posterior(&sim.data).unwrap();
            Normal::new(mean[0], cov[(0, 0)].sqrt())
                .unwrap()
                .cdf(sim.params[0])
        })
        .collect();
    ranks.sort_by(f64::total_cmp);
    let n = runs as f64;
    let ks = ranks
        .iter()
        .enumerate()
        .map(|(i, &u)| (u - i as f64 / n).max((i + 1) as f64 / n - u))
        .fold(0.0, f64::max);
    // Kolmogorov critical value at level 1e-3
    assert!(ks < 1.949 / n.sqrt(), "KS statistic {ks}");
}

#[test]
fn hyperparameters_round_trip() {
    let model = regression(NoisePrior::default_inverse_gaussian(), 10, 2);
    let theta = [0.1, 0.2, 0.5f64.ln()];
    assert_abs_diff_eq!(model.hyperparameters(&theta)[0], 0.5, epsilon = 1e-15);
    let fixed = model.fix_hyperparameters(&[0.5]).unwrap();
    assert_eq!(fixed.dim(), 2);
    assert_eq!(fixed.noise(), NoisePrior::Fixed { scale: 0.5 });
    let lifted = model.attach_hyperparameters(&theta[..2], &[0.5]);
    assert_abs_diff_eq!(lifted[2], theta[2], epsilon = 1e-15);
    let y = simulate_dataset(&fixed, 1).data;
    assert_abs_diff_eq!(
        model.log_likelihood(&theta, &y),
        fixed.log_likelihood(&theta[..2], &y),
        epsilon = 1e-12
    );
}

#[test]
fn mf_closed_form_at_zero() {
    let model =
        MatrixFactorization::with_scales(4, 2, 3, 2.0, 0.5, 1.5, Representation::Uncollapsed)
            .unwrap();
    let u = DMatrix::zeros(4, 2);
    let v = DMatrix::zeros(2, 3);
    let y = DMatrix::zeros(4, 3);
    let expected = -8.0 * (HALF_LN_2PI + 2f64.ln())
        - 6.0 * (HALF_LN_2PI + 0.5f64.ln())
        - 12.0 * (HALF_LN_2PI + 1.5f64.ln());
    assert_abs_diff_eq!(
        model.log_joint_uncollapsed(&u, &v, &y).unwrap(),
        expected,
        epsilon = 1e-12
    );
    // V = 0 leaves independent N(0, σ²) entries
    let y = DMatrix::from_fn(4, 3, |i, j| i as f64 - j as f64 * 0.5);
    let independent: f64 = y.iter().map(|&v| normal_log_pdf(v, 0.0, 1.5)).sum();
    assert_abs_diff_eq!(
        model.log_likelihood_collapsed(&v, &y).unwrap(),
        independent,
        epsilon = 1e-12
    );
}

#[test]
fn mf_rejects_bad_shapes() {
    assert!(MatrixFactorization::new(5, 5, 10, Representation::Collapsed).is_err());
    assert!(MatrixFactorization::new(5, 0, 10, Representation::Collapsed).is_err());
    let model = MatrixFactorization::new(4, 2, 3, Representation::Uncollapsed).unwrap();
    let res = model.log_joint_uncollapsed(
        &DMatrix::zeros(4, 3),
        &DMatrix::zeros(2, 3),
        &DMatrix::zeros(4, 3),
    );
    assert!(matches!(res, Err(Error::InvalidArgument(_))));
    assert!(model
        .log_likelihood_collapsed(&DMatrix::zeros(2, 3), &DMatrix::zeros(3, 3))
        .is_err());
}

#[test]
fn mf_scalar_case() {
    // N = D = K = 1 is not allowed (K < min(N, D)), so check the scalar
    // expansion of one entry inside a 2×2 rank-1 model
    let model =
        MatrixFactorization::with_scales(2, 1, 2, 1.0, 1.0, 0.5, Representation::Uncollapsed)
            .unwrap();
    let (u, v, y) = (0.7, -1.2, 0.4);
    let um = DMatrix::from_row_slice(2, 1, &[u, 0.0]);
    let vm = DMatrix::from_row_slice(1, 2, &[v, 0.0]);
    let ym = DMatrix::from_row_slice(2, 2, &[y, 0.0, 0.0, 0.0]);
    let ln_2pi = 2.0 * HALF_LN_2PI;
    let scalar = -0.5 * ln_2pi
        - u * u / 2.0
        - 0.5 * ln_2pi
        - v * v / 2.0
        - 0.5 * ln_2pi
        - 0.5f64.ln()
        - (y - u * v).powi(2) / (2.0 * 0.25);
    let rest = -2.0 * HALF_LN_2PI - 3.0 * (HALF_LN_2PI + 0.5f64.ln());
    assert_abs_diff_eq!(
        model.log_joint_uncollapsed(&um, &vm, &ym).unwrap(),
        scalar + rest,
        epsilon = 1e-12
    );
}

/// `log ∫ p(U) p(Y | U, V) dU` row by row: the integrand is Gaussian in
/// each row of `U`, so the integral equals its value at the row-wise
/// maximizer times the Gaussian normalizer of the row precision.
fn marginalize_u(model: &MatrixFactorization, v: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let k = model.rank;
    let precision =
        DMatrix::identity(k, k) / model.sigma_u.powi(2) + v * v.transpose() / model.sigma.powi(2);
    let chol = cholesky(&precision, "row precision").unwrap();
    let u_star = chol
        .solve(&(v * y.transpose() / model.sigma.powi(2)))
        .transpose();
    let peak = model.log_joint_uncollapsed(&u_star, v, y).unwrap() - model.log_prior_v(v);
    peak + model.rows as f64 * (k as f64 * HALF_LN_2PI - 0.5 * chol_log_det(&chol))
}

#[test]
fn collapsing_matches_analytic_marginalization() {
    let model =
        MatrixFactorization::with_scales(7, 3, 5, 1.4, 0.9, 0.6, Representation::Uncollapsed)
            .unwrap();
    let collapsed = model.with_representation(Representation::Collapsed);
    let mut rng = ChainRng::seed_from_u64(21);
    for _ in 0..10 {
        let theta = model.sample_params(&mut rng);
        let v = model.unpack_v(&theta);
        let y = model.sample_data(&theta, &mut rng);
        let direct = collapsed.log_likelihood_collapsed(&v, &y).unwrap();
        assert_abs_diff_eq!(direct, marginalize_u(&model, &v, &y), epsilon = 1e-8);
    }
}
