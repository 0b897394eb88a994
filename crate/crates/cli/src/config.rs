//! Experiment configuration: a JSON document whose fields the command-line
//! flags override.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bread::grid::{barrier_target, random_grid_target, GridDistribution};
use bread::models::{LinRegModel, MatrixFactorization, NoisePrior, Representation};
use bread::protocol::ProtocolConfig;
use bread::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub stages: Option<Vec<usize>>,
    pub chains: Option<usize>,
    pub kernel: Option<KernelSpec>,
    pub target: Option<TargetSpec>,
    pub model: Option<ModelSpec>,
    pub data: Option<PathBuf>,
    pub target_column: Option<String>,
    pub protocol: Option<ProtocolConfig>,
    pub record_timings: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }
}

/// A toy distribution on the 7×7 grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Barrier,
    Random { sigma: f64, seed: u64 },
}

impl TargetSpec {
    pub fn build(&self) -> anyhow::Result<GridDistribution> {
        Ok(match self {
            TargetSpec::Barrier => barrier_target(),
            TargetSpec::Random { sigma, seed } => random_grid_target(*sigma, *seed)?,
        })
    }

    pub fn name(&self) -> String {
        match self {
            TargetSpec::Barrier => "barrier".into(),
            TargetSpec::Random { sigma, seed } => format!("random(sigma={sigma}, seed={seed})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Regression on a random standardized design.
    Linreg {
        observations: usize,
        features: usize,
        noise: NoisePrior,
        design_seed: u64,
    },
    Mf {
        rows: usize,
        rank: usize,
        cols: usize,
        representation: Representation,
    },
}

pub enum BuiltModel {
    Linreg(LinRegModel),
    Mf(MatrixFactorization),
}

impl ModelSpec {
    pub fn build(&self) -> anyhow::Result<BuiltModel> {
        Ok(match *self {
            ModelSpec::Linreg {
                observations,
                features,
                noise,
                design_seed,
            } => BuiltModel::Linreg(LinRegModel::new(
                LinRegModel::random_design(observations, features, design_seed)?,
                noise,
            )?),
            ModelSpec::Mf {
                rows,
                rank,
                cols,
                representation,
            } => BuiltModel::Mf(MatrixFactorization::new(rows, rank, cols, representation)?),
        })
    }
}

pub fn parse_noise(kind: &str, scale: Option<f64>) -> Result<NoisePrior, UsageError> {
    let prior = match kind {
        "fixed" => NoisePrior::Fixed {
            scale: scale.unwrap_or(1.0),
        },
        "inverse-gaussian" => NoisePrior::default_inverse_gaussian(),
        "half-cauchy" => match scale {
            Some(scale) => NoisePrior::HalfCauchy { scale },
            None => NoisePrior::default_half_cauchy(),
        },
        other => {
            return Err(UsageError(format!(
                "unknown noise prior `{other}` (expected fixed, inverse-gaussian or half-cauchy)"
            )))
        }
    };
    prior.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(prior)
}

/// Flags that adjust a kernel. Numeric overrides must fit the kernel kind.
#[derive(Clone, Debug, Default)]
pub struct KernelFlags {
    pub kind: Option<String>,
    pub step_size: Option<f64>,
    pub leapfrog_steps: Option<usize>,
    pub scale: Option<f64>,
    pub steps_per_stage: Option<usize>,
}

impl KernelFlags {
    pub fn apply(&self, base: KernelSpec) -> Result<KernelSpec, UsageError> {
        let mut spec = match self.kind.as_deref() {
            None => base,
            Some("hmc") => KernelSpec::default_hmc(),
            Some("random-walk") => KernelSpec::default_random_walk(),
            Some(other) => {
                return Err(UsageError(format!(
                    "unknown kernel `{other}` (expected hmc or random-walk)"
                )))
            }
        };
        match &mut spec {
            KernelSpec::Hmc {
                step_size,
                leapfrog_steps,
                steps_per_stage,
            } => {
                if self.scale.is_some() {
                    return Err(UsageError(
                        "--scale applies to the random-walk kernel".into(),
                    ));
                }
                set(step_size, self.step_size);
                set(leapfrog_steps, self.leapfrog_steps);
                set(steps_per_stage, self.steps_per_stage);
            }
            KernelSpec::RandomWalkMh {
                scale,
                steps_per_stage,
            } => {
                if self.step_size.is_some() || self.leapfrog_steps.is_some() {
                    return Err(UsageError(
                        "--step-size and --leapfrog-steps apply to the hmc kernel".into(),
                    ));
                }
                set(scale, self.scale);
                set(steps_per_stage, self.steps_per_stage);
            }
            KernelSpec::GridNeighborMh { steps_per_stage } => {
                set(steps_per_stage, self.steps_per_stage)
            }
        }
        Ok(spec)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
