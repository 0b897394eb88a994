//! Annealing schedules and geometric paths between an initial density `f_1`
//! and a target `f_T`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{sanitize_log, LogValue};

/// Inverse temperatures `β_1 = 0 ≤ … ≤ β_T = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct AnnealingSchedule {
    betas: Vec<f64>,
    linear: bool,
}

/// Serialized form: linear schedules are stored by their length only.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ScheduleSpec {
    Linear { stages: usize },
    Custom { betas: Vec<f64> },
}

impl AnnealingSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::invalid(format!(
                "a schedule needs at least 2 stages, got {}",
                betas.len()
            )));
        }
        if betas[0] != 0.0 || *betas.last().unwrap() != 1.0 {
            return Err(Error::invalid(
                "schedule must start at beta = 0 and end at beta = 1",
            ));
        }
        if betas.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::invalid("schedule must be non-decreasing"));
        }
        Ok(Self {
            betas,
            linear: false,
        })
    }

    /// `β_t = (t − 1) / (T − 1)`.
    pub fn linear(stages: usize) -> Result<Self> {
        if stages < 2 {
            return Err(Error::invalid(format!(
                "a schedule needs at least 2 stages, got {stages}"
            )));
        }
        let denom = (stages - 1) as f64;
        let betas = (0..stages).map(|i| i as f64 / denom).collect();
        Ok(Self {
            betas,
            linear: true,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Number of distributions `T`.
    pub fn stages(&self) -> usize {
        self.betas.len()
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }
}

impl TryFrom<ScheduleSpec> for AnnealingSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        match spec {
            ScheduleSpec::Linear { stages } => Self::linear(stages),
            ScheduleSpec::Custom { betas } => Self::new(betas),
        }
    }
}

impl From<AnnealingSchedule> for ScheduleSpec {
    fn from(schedule: AnnealingSchedule) -> Self {
        if schedule.linear {
            ScheduleSpec::Linear {
                stages: schedule.betas.len(),
            }
        } else {
            ScheduleSpec::Custom {
                betas: schedule.betas,
            }
        }
    }
}

/// Both endpoint log-densities evaluated at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Endpoints {
    pub initial: LogValue,
    pub target: LogValue,
}

impl Endpoints {
    /// `(1 − β) log f_1 + β log f_T`; an infinite endpoint with a zero
    /// coefficient drops out.
    #[inline]
    pub fn log_f(&self, beta: f64) -> LogValue {
        let a = if beta == 1.0 {
            0.0
        } else {
            (1.0 - beta) * self.initial
        };
        let b = if beta == 0.0 { 0.0 } else { beta * self.target };
        sanitize_log(a + b)
    }

    /// `log f_to(x) − log f_from(x)`, the per-stage AIS weight increment.
    #[inline]
    pub fn log_ratio(&self, beta_from: f64, beta_to: f64) -> LogValue {
        if self.initial.is_finite() && self.target.is_finite() {
            return (beta_to - beta_from) * (self.target - self.initial);
        }
        let to = self.log_f(beta_to);
        let from = self.log_f(beta_from);
        if to == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            sanitize_log(to - from)
        }
    }
}

type EvalFn<S> = Arc<dyn Fn(&S) -> Endpoints + Send + Sync>;
type GradFn<S> = Arc<dyn Fn(&S) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// The family `f_β(x) = f_1(x)^{1−β} f_T(x)^β`.
#[derive(Clone)]
pub struct GeometricPath<S> {
    eval: EvalFn<S>,
    grad: Option<GradFn<S>>,
}

impl<S> fmt::Debug for GeometricPath<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeometricPath")
            .field("differentiable", &self.grad.is_some())
            .finish()
    }
}

impl<S> GeometricPath<S> {
    pub fn new<F1, FT>(log_initial: F1, log_target: FT) -> Self
    where
        F1: Fn(&S) -> f64 + Send + Sync + 'static,
        FT: Fn(&S) -> f64 + Send + Sync + 'static,
    {
        Self::from_endpoints(move |x| Endpoints {
            initial: sanitize_log(log_initial(x)),
            target: sanitize_log(log_target(x)),
        })
    }

    /// Builds a path from a function evaluating both endpoints at once, so
    /// shared terms (such as a prior) are computed a single time.
    pub fn from_endpoints<F>(eval: F) -> Self
    where
        F: Fn(&S) -> Endpoints + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            grad: None,
        }
    }

    /// Attaches gradients of `(log f_1, log f_T)`.
    pub fn with_gradients<G>(mut self, grad: G) -> Self
    where
        G: Fn(&S) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    #[inline]
    pub fn endpoints(&self, x: &S) -> Endpoints {
        (self.eval)(x)
    }

    pub fn log_initial(&self, x: &S) -> LogValue {
        self.endpoints(x).initial
    }

    pub fn log_target(&self, x: &S) -> LogValue {
        self.endpoints(x).target
    }

    pub fn log_f_at(&self, beta: f64, x: &S) -> Result<LogValue> {
        check_beta(beta)?;
        Ok(self.endpoints(x).log_f(beta))
    }

    pub fn is_differentiable(&self) -> bool {
        self.grad.is_some()
    }

    /// Gradient of `log f_β`, composed linearly from the endpoint gradients.
    pub fn grad_log_f(&self, beta: f64, x: &S) -> Option<Vec<f64>> {
        let grad = self.grad.as_ref()?;
        let (g1, gt) = grad(x);
        Some(
            g1.iter()
                .zip(&gt)
                .map(|(a, b)| (1.0 - beta) * a + beta * b)
                .collect(),
        )
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta = {beta} is outside [0, 1]")))
    }
}

/// Path from the prior `p(θ)` to the unnormalized posterior `p(θ) p(y | θ)`.
/// `Z_1 = 1` and `Z_T = p(y)`.
pub fn posterior_path<M>(model: Arc<M>, data: Arc<M::Data>) -> GeometricPath<Vec<f64>>
where
    M: Model + 'static,
{
    let eval_model = Arc::clone(&model);
    let eval_data = Arc::clone(&data);
    let path = GeometricPath::from_endpoints(move |theta: &Vec<f64>| {
        let prior = sanitize_log(eval_model.log_prior(theta));
        if prior == f64::NEG_INFINITY {
            return Endpoints {
                initial: prior,
                target: prior,
            };
        }
        let lik = sanitize_log(eval_model.log_likelihood(theta, &eval_data));
        Endpoints {
            initial: prior,
            target: prior + lik,
        }
    });
    if !model.is_differentiable() {
        return path;
    }
    path.with_gradients(move |theta: &Vec<f64>| {
        let gp = model
            .grad_log_prior(theta)
            .expect("differentiable model returns a prior gradient");
        let gl = model
            .grad_log_likelihood(theta, &data)
            .expect("differentiable model returns a likelihood gradient");
        let gt = gp.iter().zip(&gl).map(|(a, b)| a + b).collect();
        (gp, gt)
    })
}
