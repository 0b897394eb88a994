use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use bread::path::*;

#[test]
fn linear_schedule_values() {
    assert_eq!(AnnealingSchedule::linear(2).unwrap().betas(), &[0.0, 1.0]);
    assert_eq!(
        AnnealingSchedule::linear(5).unwrap().betas(),
        &[0.0, 0.25, 0.5, 0.75, 1.0]
    );
    let s = AnnealingSchedule::linear(100).unwrap();
    assert_eq!(s.betas()[50], 50.0 / 99.0);
    assert!(AnnealingSchedule::linear(1).is_err());
    assert!(AnnealingSchedule::linear(0).is_err());
}

#[test]
fn custom_schedule_validation() {
    assert!(AnnealingSchedule::new(vec![0.0, 0.3, 0.3, 1.0]).is_ok());
    assert!(AnnealingSchedule::new(vec![0.0, 0.5, 0.4, 1.0]).is_err());
    assert!(AnnealingSchedule::new(vec![0.1, 1.0]).is_err());
    assert!(AnnealingSchedule::new(vec![0.0, 0.9]).is_err());
    assert!(AnnealingSchedule::new(vec![0.0, f64::NAN, 1.0]).is_err());
}

#[test]
fn schedule_serde_is_compact_for_linear() {
    let s = AnnealingSchedule::linear(1000).unwrap();
    let json = serde_json::to_string(&s).unwrap();
    assert_eq!(json, r#"{"kind":"linear","stages":1000}"#);
    let back: AnnealingSchedule = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s);
    let bad: std::result::Result<AnnealingSchedule, _> =
        serde_json::from_str(r#"{"kind":"custom","betas":[0.5,1.0]}"#);
    assert!(bad.is_err());
}

fn gaussian_path() -> GeometricPath<f64> {
    // f_1 = N(0, 1) density, f_T = f_1 · exp(−x²)
    let log_n = |x: &f64| -0.5 * x * x - bread::numerics::HALF_LN_2PI;
    GeometricPath::new(log_n, move |x: &f64| log_n(x) - x * x)
}

#[test]
fn log_f_endpoints_and_midpoint() {
    let path = gaussian_path();
    let x = 0.7;
    let f1 = -0.5 * x * x - bread::numerics::HALF_LN_2PI;
    assert_eq!(path.log_f_at(0.0, &x).unwrap(), f1);
    assert_eq!(path.log_f_at(1.0, &x).unwrap(), f1 - x * x);
    // exponent: −x²/2 − β x², at β = 1/2: −x²
    assert_abs_diff_eq!(
        path.log_f_at(0.5, &x).unwrap(),
        -x * x - bread::numerics::HALF_LN_2PI,
        epsilon = 1e-14
    );
    assert!(path.log_f_at(1.5, &x).is_err());
    assert!(path.log_f_at(-0.1, &x).is_err());
}

#[test]
fn infinite_endpoint_with_zero_coefficient_drops_out() {
    let path = GeometricPath::new(|_: &f64| f64::NEG_INFINITY, |_: &f64| -2.0);
    assert_eq!(path.log_f_at(1.0, &0.0).unwrap(), -2.0);
    assert_eq!(path.log_f_at(0.5, &0.0).unwrap(), f64::NEG_INFINITY);
    let path = GeometricPath::new(|_: &f64| -1.0, |_: &f64| f64::NEG_INFINITY);
    assert_eq!(path.log_f_at(0.0, &0.0).unwrap(), -1.0);
    assert_eq!(path.log_f_at(0.01, &0.0).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn nan_density_becomes_neg_inf() {
    let path = GeometricPath::new(|_: &f64| 0.0, |_: &f64| f64::NAN);
    assert_eq!(path.log_f_at(0.3, &0.0).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn gradient_composes_linearly() {
    let path = gaussian_path().with_gradients(|x: &f64| (vec![-x], vec![-3.0 * x]));
    let g = path.grad_log_f(0.25, &2.0).unwrap();
    assert_abs_diff_eq!(g[0], 0.75 * -2.0 + 0.25 * -6.0, epsilon = 1e-15);
    assert!(gaussian_path().grad_log_f(0.5, &1.0).is_none());
}

proptest! {
    #[test]
    fn log_f_is_linear_in_beta(x in -5.0f64..5.0, b in 0.0f64..0.5, h in 0.0f64..0.25) {
        let path = gaussian_path();
        let l0 = path.log_f_at(b, &x).unwrap();
        let l1 = path.log_f_at(b + h, &x).unwrap();
        let l2 = path.log_f_at(b + 2.0 * h, &x).unwrap();
        prop_assert!(((l2 - l1) - (l1 - l0)).abs() < 1e-12);
    }
}
