//! Log-space arithmetic and closed-form divergences.
//!
//! Every density, weight and divergence in this crate is measured in nats.
//! A [`LogValue`] is either finite or `-inf` (log of zero); NaN never escapes
//! an operation in this module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Natural logarithm of a nonnegative quantity.
pub type LogValue = f64;

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Maps NaN to `-inf`, logging a warning. A NaN log-density behaves like a
/// zero-density point, so Metropolis proposals landing there are rejected.
#[inline]
pub fn sanitize_log(value: f64) -> LogValue {
    if value.is_nan() {
        log::warn!("log-density evaluated to NaN; treating as -inf");
        f64::NEG_INFINITY
    } else {
        value
    }
}

/// `log Σ exp(v_i)`, max-shifted.
pub fn log_sum_exp(values: &[LogValue]) -> Result<LogValue> {
    if values.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty list"));
    }
    let max = values
        .iter()
        .copied()
        .map(sanitize_log)
        .fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|&v| (sanitize_log(v) - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `log((1/K) Σ exp(v_i))`: the log of an arithmetic mean of weights.
pub fn log_mean_exp(values: &[LogValue]) -> Result<LogValue> {
    let total = log_sum_exp(values)?;
    Ok(total - (values.len() as f64).ln())
}

/// Log density of `N(x; mean, sd²)`.
#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

/// Arithmetic mean and standard error of the mean.
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Discrete `D_KL(p ‖ q)` over aligned probability vectors. Terms with
/// `p_i = 0` contribute nothing; `p_i > 0 = q_i` yields `+inf`.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            if qi <= 0.0 {
                f64::INFINITY
            } else {
                pi * (pi.ln() - qi.ln())
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// Cholesky factorization that reports failure as a numeric-domain error.
pub fn cholesky(matrix: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !matrix.is_square() {
        return Err(Error::NumericDomain(format!("{what} is not square")));
    }
    Cholesky::new(matrix.clone())
        .ok_or_else(|| Error::NumericDomain(format!("{what} is not positive definite")))
}

/// `log det A` from a Cholesky factor.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

fn check_spd(cov: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NumericDomain(format!("{what} is not symmetric")));
    }
    cholesky(cov, what)
}

/// Closed-form `D_KL(N(m1, c1) ‖ N(m2, c2))`.
pub fn gaussian_kl(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let k = mean1.len();
    if mean2.len() != k || cov1.nrows() != k || cov2.nrows() != k {
        return Err(Error::invalid(format!(
            "dimension mismatch: means {} / {}, covariances {} / {}",
            k,
            mean2.len(),
            cov1.nrows(),
            cov2.nrows()
        )));
    }
    let chol1 = check_spd(cov1, "first covariance")?;
    let chol2 = check_spd(cov2, "second covariance")?;
    let trace = chol2.solve(cov1).trace();
    let diff = mean2 - mean1;
    let maha = diff.dot(&chol2.solve(&diff));
    let kl = 0.5 * (trace + maha - k as f64 + chol_log_det(&chol2) - chol_log_det(&chol1));
    Ok(kl.max(0.0))
}

/// Jeffreys divergence `D_KL(1 ‖ 2) + D_KL(2 ‖ 1)` between two Gaussians.
pub fn gaussian_jeffreys(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    Ok(gaussian_kl(mean1, cov1, mean2, cov2)? + gaussian_kl(mean2, cov2, mean1, cov1)?)
}

/// Serde adapter that writes non-finite log values as the strings `"-inf"`,
/// `"inf"` and `"nan"`, since JSON has no literal for them.
pub mod serde_log {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Number(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("not a log value: {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| to_repr(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(from_repr)
                .collect()
        }
    }
}
