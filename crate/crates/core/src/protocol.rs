//! The end-to-end validation protocol: estimate hyperparameters on real
//! data, simulate a matched dataset, bound the sampler's error on the
//! simulation with BDMC, and compare forward-AIS curves between the real
//! and simulated datasets.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ais::{
    derive_seed, forward_ais, reverse_ais, AisRun, BdmcResult, BoundCurve, BoundPoint, Direction,
};
use crate::error::{Error, Result};
use crate::models::{Model, Simulation};
use crate::numerics::{mean_and_std_err, LogValue};
use crate::path::{posterior_path, AnnealingSchedule, GeometricPath};
use crate::record::{persist_run, table_hash, RunRecord, SCHEMA_VERSION};
use crate::transitions::{ChainRng, Kernel, KernelSpec, Point, VectorKernel};

/// Study of how the number of refresh steps used to initialize reverse AIS
/// affects the upper bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefreshStudyConfig {
    pub steps: Vec<usize>,
    pub seeds: usize,
    pub stages: usize,
    pub chains: usize,
}

impl Default for RefreshStudyConfig {
    fn default() -> Self {
        Self {
            steps: vec![10, 100, 1000, 10000],
            seeds: 20,
            stages: 1000,
            chains: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Values of `T` to sweep, strictly increasing.
    pub stage_sweep: Vec<usize>,
    pub chains: usize,
    /// MCMC steps for hyperparameter estimation on the real data.
    pub estimation_budget: usize,
    /// Posterior-invariant steps applied to the simulated parameters before
    /// they seed reverse AIS, when the model has free hyperparameters.
    pub reverse_refresh_steps: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Simulate at these hyperparameters instead of the estimated ones.
    pub simulation_hyperparameters: Option<Vec<f64>>,
    /// Consistency passes when the largest aligned residual is at most this
    /// fraction of the simulated curve's total rise.
    pub consistency_threshold: f64,
    pub refresh_study: Option<RefreshStudyConfig>,
    /// Include wall-clock times in outputs. Off by default because timings
    /// make otherwise deterministic outputs differ between runs.
    pub record_timings: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            stage_sweep: vec![10, 100, 1000],
            chains: 16,
            estimation_budget: 2000,
            reverse_refresh_steps: 100,
            kernel: KernelSpec::default_hmc(),
            seed: 0,
            simulation_hyperparameters: None,
            consistency_threshold: 0.25,
            refresh_study: None,
            record_timings: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_sweep.is_empty() {
            return Err(Error::invalid("stage sweep is empty"));
        }
        if self.stage_sweep.iter().any(|&t| t < 2) {
            return Err(Error::invalid("every T in the sweep must be at least 2"));
        }
        if self.stage_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("stage sweep must be strictly increasing"));
        }
        if self.chains == 0 || self.estimation_budget == 0 {
            return Err(Error::invalid(
                "chain count and estimation budget must be positive",
            ));
        }
        if !(self.consistency_threshold > 0.0) {
            return Err(Error::invalid("consistency threshold must be positive"));
        }
        if let Some(study) = &self.refresh_study {
            if study.steps.is_empty() || study.seeds < 2 || study.stages < 2 || study.chains == 0 {
                return Err(Error::invalid(
                    "refresh study needs steps, at least two seeds, T ≥ 2 and one chain",
                ));
            }
        }
        VectorKernel::from_spec(self.kernel).map(|_| ())
    }
}

/// Sub-seed labels: `derive_seed(config.seed, LABEL)` seeds each stage, so a
/// stage can be rerun on its own. `SWEEP + i` seeds the i-th stage count.
pub const ESTIMATION: u64 = 1;
pub const SIMULATION: u64 = 2;
pub const REFRESH: u64 = 3;
pub const STUDY: u64 = 4;
pub const SWEEP: u64 = 100;

fn data_is_empty<M: Model>(model: &M, data: &M::Data) -> bool {
    model.data_table(data).rows.is_empty()
}

/// Runs `steps` applications of `kernel` at the posterior, calling `visit`
/// after each one. Stops with a protocol error if the chain leaves the
/// region of finite density.
fn posterior_chain(
    path: &GeometricPath<Vec<f64>>,
    kernel: &VectorKernel,
    start: Vec<f64>,
    steps: usize,
    rng: &mut ChainRng,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let mut point = Point::evaluate(path, start);
    if !point.log.target.is_finite() {
        return Err(Error::Protocol(format!(
            "chain start has log density {} at {:?}",
            point.log.target, point.state
        )));
    }
    for i in 0..steps {
        point = kernel.step(path, 1.0, point, rng)?;
        if !point.log.target.is_finite() || point.state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol(format!(
                "chain diverged at step {i}: log density {}, state {:?}",
                point.log.target, point.state
            )));
        }
        visit(i, &point.state);
    }
    Ok(point.state)
}

/// Posterior mean of the hyperparameters over the second half of an MCMC
/// chain of length `budget` on `data`. Models without free hyperparameters
/// return an empty vector.
pub fn estimate_hyperparameters<M: Model + 'static>(
    model: &Arc<M>,
    data: &Arc<M::Data>,
    budget: usize,
    kernel: KernelSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    if budget == 0 {
        return Err(Error::invalid("estimation budget must be positive"));
    }
    if data_is_empty(model.as_ref(), data) {
        return Err(Error::invalid(
            "cannot estimate hyperparameters from an empty dataset",
        ));
    }
    let h = model.hyper_dim();
    if h == 0 {
        return Ok(Vec::new());
    }
    let kernel = VectorKernel::from_spec(kernel)?;
    let path = posterior_path(Arc::clone(model), Arc::clone(data));
    let mut rng = ChainRng::seed_from_u64(seed);
    let start = model.inference_start(data, &mut rng);
    let burn = budget / 2;
    let mut sum = vec![0.0; h];
    posterior_chain(&path, &kernel, start, budget, &mut rng, |i, theta| {
        if i >= burn {
            for (s, v) in sum.iter_mut().zip(model.hyperparameters(theta)) {
                *s += v;
            }
        }
    })?;
    let kept = (budget - burn) as f64;
    Ok(sum.into_iter().map(|s| s / kept).collect())
}

/// Ancestral simulation with the hyperparameters held at `eta`. The returned
/// parameters are in `model`'s own coordinates, hyperparameters included.
pub fn simulate_matched<M: Model>(
    model: &M,
    eta: &[f64],
    seed: u64,
) -> Result<Simulation<M::Data>> {
    let fixed = model.fix_hyperparameters(eta)?;
    let mut rng = ChainRng::seed_from_u64(seed);
    let theta = fixed.sample_params(&mut rng);
    let data = fixed.sample_data(&theta, &mut rng);
    Ok(Simulation {
        params: model.attach_hyperparameters(&theta, eta),
        data,
    })
}

/// `steps` applications of a kernel leaving `p(θ, η | data)` invariant,
/// starting at `start`.
pub fn refresh_posterior_sample<M: Model + 'static>(
    model: &Arc<M>,
    data: &Arc<M::Data>,
    start: &[f64],
    steps: usize,
    kernel: KernelSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Ok(start.to_vec());
    }
    let kernel = VectorKernel::from_spec(kernel)?;
    let path = posterior_path(Arc::clone(model), Arc::clone(data));
    let mut rng = ChainRng::seed_from_u64(seed);
    posterior_chain(&path, &kernel, start.to_vec(), steps, &mut rng, |_, _| {})
}

/// Upper-bound estimates for one refresh length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefreshSummary {
    pub steps: usize,
    pub mean: f64,
    pub std_err: f64,
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub estimates: Vec<LogValue>,
}

impl RefreshSummary {
    /// `mean ± 2 std_err`
    pub fn interval(&self) -> (f64, f64) {
        (
            self.mean - 2.0 * self.std_err,
            self.mean + 2.0 * self.std_err,
        )
    }
}

/// Whether every pair of ±2 standard-error intervals overlaps.
pub fn intervals_overlap(summaries: &[RefreshSummary]) -> bool {
    summaries.iter().all(|a| {
        summaries.iter().all(|b| {
            let (alo, ahi) = a.interval();
            let (blo, bhi) = b.interval();
            alo <= bhi && blo <= ahi
        })
    })
}

/// For each refresh length `L`, refreshes `start` for `L` steps and runs
/// reverse AIS from the result, once per seed.
pub fn fixed_hyperparameter_study<M: Model + 'static>(
    model: &Arc<M>,
    data: &Arc<M::Data>,
    start: &[f64],
    study: &RefreshStudyConfig,
    kernel: KernelSpec,
    seed: u64,
) -> Result<Vec<RefreshSummary>> {
    let path = posterior_path(Arc::clone(model), Arc::clone(data));
    let schedule = AnnealingSchedule::linear(study.stages)?;
    let ais_kernel = VectorKernel::from_spec(kernel)?;
    study
        .steps
        .iter()
        .map(|&steps| {
            let estimates = (0..study.seeds)
                .into_par_iter()
                .map(|s| {
                    let run_seed = derive_seed(derive_seed(seed, steps as u64), s as u64);
                    let init =
                        refresh_posterior_sample(model, data, start, steps, kernel, run_seed)?;
                    let run = reverse_ais(
                        &path,
                        &schedule,
                        &ais_kernel,
                        &[init],
                        study.chains,
                        run_seed,
                    )?;
                    Ok(-run.log_estimate())
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std_err) = mean_and_std_err(&estimates);
            Ok(RefreshSummary {
                steps,
                mean,
                std_err,
                estimates,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Shape comparison of two forward-AIS curves after aligning them at the
/// largest `T`. The pass/fail threshold is a heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub stages: Vec<usize>,
    /// Aligned real minus aligned simulated bound at each `T`.
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub residuals: Vec<f64>,
    #[serde(with = "crate::numerics::serde_log")]
    pub max_abs_residual: f64,
    /// Nats each curve still has to climb to its value at the largest `T`.
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub remaining_real: Vec<f64>,
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub remaining_simulated: Vec<f64>,
    /// `remaining_real / remaining_simulated`, absent where the latter is 0.
    pub remaining_ratio: Vec<Option<f64>>,
    #[serde(with = "crate::numerics::serde_log")]
    pub simulated_rise: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

pub fn consistency_report(
    real: &BoundCurve,
    simulated: &BoundCurve,
    threshold: f64,
) -> Result<ConsistencyReport> {
    let stages = real.stages();
    if stages != simulated.stages() {
        return Err(Error::invalid(format!(
            "curves have different T grids: {:?} vs {:?}",
            stages,
            simulated.stages()
        )));
    }
    if stages.is_empty() {
        return Err(Error::invalid("curves are empty"));
    }
    let (r, s) = (real.bounds(), simulated.bounds());
    let (r_end, s_end) = (*r.last().unwrap(), *s.last().unwrap());
    let remaining_real: Vec<f64> = r.iter().map(|v| r_end - v).collect();
    let remaining_simulated: Vec<f64> = s.iter().map(|v| s_end - v).collect();
    let residuals: Vec<f64> = remaining_simulated
        .iter()
        .zip(&remaining_real)
        .map(|(rs, rr)| {
            let d = rs - rr;
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .collect();
    let max_abs_residual = residuals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let remaining_ratio = remaining_real
        .iter()
        .zip(&remaining_simulated)
        .map(|(a, b)| (*b != 0.0 && (a / b).is_finite()).then(|| a / b))
        .collect();
    let simulated_rise = s_end - s[0];
    let verdict = if max_abs_residual <= threshold * simulated_rise.max(0.0) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ConsistencyReport {
        stages,
        residuals,
        max_abs_residual,
        remaining_real,
        remaining_simulated,
        remaining_ratio,
        simulated_rise,
        threshold,
        verdict,
    })
}

/// Bounds at one `T` on the simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub stages: usize,
    #[serde(with = "crate::numerics::serde_log")]
    pub lower: LogValue,
    #[serde(with = "crate::numerics::serde_log")]
    pub upper: LogValue,
    #[serde(with = "crate::numerics::serde_log")]
    pub gap: f64,
    #[serde(with = "crate::numerics::serde_log")]
    pub mean_chain_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreadReport {
    pub schema_version: u32,
    pub model: String,
    pub config: ProtocolConfig,
    pub eta_real: Vec<f64>,
    pub eta_simulated: Vec<f64>,
    pub real_data_hash: String,
    pub simulated_data_hash: String,
    /// Reverse chains all started from the one simulated parameter draw.
    pub shared_reverse_start: bool,
    pub forward_real: BoundCurve,
    pub forward_simulated: BoundCurve,
    pub reverse_simulated: BoundCurve,
    pub gaps: Vec<GapPoint>,
    pub consistency: ConsistencyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_study: Option<Vec<RefreshSummary>>,
    pub runs: Vec<RunRecord>,
}

impl BreadReport {
    pub fn gap_at(&self, stages: usize) -> Option<&GapPoint> {
        self.gaps.iter().find(|g| g.stages == stages)
    }
}

struct Recorder<'a> {
    store: Option<&'a Path>,
    model: String,
    record_timings: bool,
    runs: Vec<RunRecord>,
}

impl Recorder<'_> {
    fn add<S>(&mut self, label: String, hash: &str, run: &AisRun<S>) -> Result<BoundPoint> {
        let record = RunRecord::from_run(label, self.model.clone(), hash, run, self.record_timings);
        if let Some(store) = self.store {
            persist_run(&record, store)?;
        }
        self.runs.push(record);
        let bound = match run.direction {
            Direction::Forward => run.log_estimate(),
            Direction::Reverse => -run.log_estimate(),
        };
        Ok(BoundPoint {
            stages: run.stages(),
            bound,
            direction: run.direction,
            wall_time_secs: self.record_timings.then_some(run.wall_time.as_secs_f64()),
        })
    }
}

/// Runs the full protocol. Each AIS run is persisted to `store`, if given,
/// as soon as it finishes, so a failure part way keeps earlier results.
pub fn run_bread<M: Model + 'static>(
    model: Arc<M>,
    real_data: Arc<M::Data>,
    config: &ProtocolConfig,
    store: Option<&Path>,
) -> Result<BreadReport> {
    config.validate()?;
    let kernel = VectorKernel::from_spec(config.kernel)?;
    let seed = config.seed;

    let eta_real = estimate_hyperparameters(
        &model,
        &real_data,
        config.estimation_budget,
        config.kernel,
        derive_seed(seed, ESTIMATION),
    )?;
    log::info!("estimated hyperparameters {eta_real:?}");
    let eta_sim = config
        .simulation_hyperparameters
        .clone()
        .unwrap_or_else(|| eta_real.clone());
    let sim = simulate_matched(model.as_ref(), &eta_sim, derive_seed(seed, SIMULATION))?;
    let sim_data = Arc::new(sim.data);

    let exact_start = model.hyper_dim() == 0;
    let reverse_starts: Vec<Vec<f64>> = if exact_start {
        vec![sim.params.clone()]
    } else {
        (0..config.chains)
            .into_par_iter()
            .map(|k| {
                refresh_posterior_sample(
                    &model,
                    &sim_data,
                    &sim.params,
                    config.reverse_refresh_steps,
                    config.kernel,
                    derive_seed(derive_seed(seed, REFRESH), k as u64),
                )
            })
            .collect::<Result<_>>()?
    };

    let real_hash = table_hash(&model.data_table(&real_data));
    let sim_hash = table_hash(&model.data_table(&sim_data));
    let real_path = posterior_path(Arc::clone(&model), Arc::clone(&real_data));
    let sim_path = posterior_path(Arc::clone(&model), Arc::clone(&sim_data));
    let mut recorder = Recorder {
        store,
        model: model.name().to_string(),
        record_timings: config.record_timings,
        runs: Vec::new(),
    };
    let mut forward_real = BoundCurve::new(Direction::Forward);
    let mut forward_sim = BoundCurve::new(Direction::Forward);
    let mut reverse_sim = BoundCurve::new(Direction::Reverse);
    let mut gaps = Vec::new();

    for (i, &stages) in config.stage_sweep.iter().enumerate() {
        let schedule = AnnealingSchedule::linear(stages)?;
        let base = derive_seed(seed, SWEEP + i as u64);
        let prior = |rng: &mut ChainRng| model.sample_params(rng);

        let run = forward_ais(
            &real_path,
            &schedule,
            &kernel,
            prior,
            config.chains,
            derive_seed(base, 0),
        )?;
        forward_real.push(recorder.add(format!("forward/real/T={stages}"), &real_hash, &run)?)?;

        let fwd = forward_ais(
            &sim_path,
            &schedule,
            &kernel,
            prior,
            config.chains,
            derive_seed(base, 1),
        )?;
        forward_sim.push(recorder.add(
            format!("forward/simulated/T={stages}"),
            &sim_hash,
            &fwd,
        )?)?;
        let rev = reverse_ais(
            &sim_path,
            &schedule,
            &kernel,
            &reverse_starts,
            config.chains,
            derive_seed(base, 2),
        )?;
        reverse_sim.push(recorder.add(
            format!("reverse/simulated/T={stages}"),
            &sim_hash,
            &rev,
        )?)?;

        let bdmc = BdmcResult::from_runs(&fwd, &rev)?;
        log::info!(
            "T={stages}: lower {:.4}, upper {:.4}",
            bdmc.lower,
            bdmc.upper
        );
        gaps.push(GapPoint {
            stages,
            lower: bdmc.lower,
            upper: bdmc.upper,
            gap: bdmc.gap,
            mean_chain_gap: bdmc.mean_chain_gap(),
        });
    }

    let consistency =
        consistency_report(&forward_real, &forward_sim, config.consistency_threshold)?;
    let refresh_study = match &config.refresh_study {
        Some(study) if !exact_start => Some(fixed_hyperparameter_study(
            &model,
            &sim_data,
            &sim.params,
            study,
            config.kernel,
            derive_seed(seed, STUDY),
        )?),
        _ => None,
    };

    Ok(BreadReport {
        schema_version: SCHEMA_VERSION,
        model: model.name().to_string(),
        config: config.clone(),
        eta_real,
        eta_simulated: eta_sim,
        real_data_hash: real_hash,
        simulated_data_hash: sim_hash,
        shared_reverse_start: exact_start && config.chains > 1,
        forward_real,
        forward_simulated: forward_sim,
        reverse_simulated: reverse_sim,
        gaps,
        consistency,
        refresh_study,
        runs: recorder.runs,
    })
}
