//! Forward and reverse annealed importance sampling, bidirectional Monte
//! Carlo, and the bound and gap estimators built on them.
//!
//! A forward run starts each chain from an exact draw of `p_1`, and at every
//! stage first multiplies the weight by `f_t(x_{t-1}) / f_{t-1}(x_{t-1})`, then
//! applies the kernel that leaves `p_t` invariant. The weight after stage `t`
//! is an unbiased estimate of `Z_t / Z_1`, so its logarithm is a stochastic
//! lower bound on `log Z_t / Z_1`.
//!
//! A reverse run is a forward run over the reversed sequence of
//! distributions, started from an exact draw of `p_T`; negating its log
//! weight gives a stochastic upper bound on `log Z_T / Z_1`.
//!
//! Every chain owns a ChaCha stream derived from `(seed, direction, chain)`,
//! so runs are bit-identical regardless of how chains are scheduled across
//! threads.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_mean_exp, LogValue};
use crate::path::{AnnealingSchedule, GeometricPath};
use crate::transitions::{ChainRng, Kernel, KernelSpec, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    fn stream_offset(self) -> u64 {
        match self {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        }
    }
}

/// Which side of `log Z_T / Z_1` a reference bound lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// RNG for one chain of one run.
pub fn chain_rng(seed: u64, direction: Direction, chain: usize) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(2 * chain as u64 + direction.stream_offset());
    rng
}

/// Mixes a master seed with a label into an independent sub-seed.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Output of one AIS run.
#[derive(Clone, Debug)]
pub struct AisRun<S> {
    pub direction: Direction,
    /// `log_weights[k][t]` is the cumulative log weight of chain `k` after
    /// stage `t + 1`; column 0 is identically zero.
    pub log_weights: Vec<Vec<LogValue>>,
    pub final_states: Vec<S>,
    pub schedule: AnnealingSchedule,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Reverse chains started from one shared target sample.
    pub shared_initial_state: bool,
    pub wall_time: Duration,
}

impl<S> AisRun<S> {
    pub fn chains(&self) -> usize {
        self.log_weights.len()
    }

    pub fn stages(&self) -> usize {
        self.schedule.stages()
    }

    /// Per-chain log weights after stage `stage` (1-based).
    pub fn log_weights_at(&self, stage: usize) -> Vec<LogValue> {
        self.log_weights.iter().map(|w| w[stage - 1]).collect()
    }

    pub fn final_log_weights(&self) -> Vec<LogValue> {
        self.log_weights_at(self.stages())
    }

    /// `log R̂`: log of the chain-averaged final weight.
    pub fn log_estimate(&self) -> LogValue {
        log_mean_exp(&self.final_log_weights()).expect("a run has at least one chain")
    }

    /// Average of the per-chain final log weights.
    pub fn mean_log_weight(&self) -> LogValue {
        let w = self.final_log_weights();
        w.iter().sum::<f64>() / w.len() as f64
    }
}

fn check_chains(chains: usize) -> Result<()> {
    if chains == 0 {
        Err(Error::invalid("at least one chain is required"))
    } else {
        Ok(())
    }
}

fn run_chain<S, K>(
    path: &GeometricPath<S>,
    betas: &[f64],
    kernel: &K,
    initial: S,
    rng: &mut ChainRng,
) -> Result<(Vec<LogValue>, S)>
where
    K: Kernel<S> + ?Sized,
{
    let mut point = Point::evaluate(path, initial);
    if point.log.log_f(betas[0]) == f64::NEG_INFINITY {
        return Err(Error::InvalidState(
            "initial state has zero density under the first distribution".into(),
        ));
    }
    let mut log_weights = Vec::with_capacity(betas.len());
    log_weights.push(0.0);
    let mut acc = 0.0;
    for t in 1..betas.len() {
        acc += point.log.log_ratio(betas[t - 1], betas[t]);
        log_weights.push(acc);
        if acc == f64::NEG_INFINITY {
            // zero weight: the chain can no longer contribute
            log_weights.resize(betas.len(), f64::NEG_INFINITY);
            break;
        }
        point = kernel.transition(path, betas[t], point, rng)?;
    }
    Ok((log_weights, point.state))
}

fn run_chains<S, K, I>(
    path: &GeometricPath<S>,
    betas: &[f64],
    kernel: &K,
    direction: Direction,
    chains: usize,
    seed: u64,
    init: I,
) -> Result<(Vec<Vec<LogValue>>, Vec<S>)>
where
    S: Send,
    K: Kernel<S> + ?Sized,
    I: Fn(usize, &mut ChainRng) -> S + Sync,
{
    let results: Vec<(Vec<LogValue>, S)> = (0..chains)
        .into_par_iter()
        .map(|k| {
            let mut rng = chain_rng(seed, direction, k);
            let x0 = init(k, &mut rng);
            run_chain(path, betas, kernel, x0, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// Forward AIS with `chains` independent chains, each started from
/// `init_sampler`, which must draw exactly from `p_1`.
pub fn forward_ais<S, K, I>(
    path: &GeometricPath<S>,
    schedule: &AnnealingSchedule,
    kernel: &K,
    init_sampler: I,
    chains: usize,
    seed: u64,
) -> Result<AisRun<S>>
where
    S: Send,
    K: Kernel<S> + ?Sized,
    I: Fn(&mut ChainRng) -> S + Sync,
{
    check_chains(chains)?;
    let start = Instant::now();
    let (log_weights, final_states) = run_chains(
        path,
        schedule.betas(),
        kernel,
        Direction::Forward,
        chains,
        seed,
        |_, rng| init_sampler(rng),
    )?;
    Ok(AisRun {
        direction: Direction::Forward,
        log_weights,
        final_states,
        schedule: schedule.clone(),
        kernel: kernel.spec(),
        seed,
        shared_initial_state: false,
        wall_time: start.elapsed(),
    })
}

/// Reverse AIS. `target_samples` holds either one exact draw from `p_T`,
/// shared by every chain, or one independent draw per chain.
pub fn reverse_ais<S, K>(
    path: &GeometricPath<S>,
    schedule: &AnnealingSchedule,
    kernel: &K,
    target_samples: &[S],
    chains: usize,
    seed: u64,
) -> Result<AisRun<S>>
where
    S: Clone + Send + Sync,
    K: Kernel<S> + ?Sized,
{
    check_chains(chains)?;
    let shared = match target_samples.len() {
        0 => return Err(Error::invalid("reverse AIS needs a sample from the target")),
        1 => true,
        n if n == chains => false,
        n => {
            return Err(Error::invalid(format!(
                "{n} target samples for {chains} chains; pass one shared sample or one per chain"
            )))
        }
    };
    let start = Instant::now();
    let betas: Vec<f64> = schedule.betas().iter().rev().copied().collect();
    let (log_weights, final_states) = run_chains(
        path,
        &betas,
        kernel,
        Direction::Reverse,
        chains,
        seed,
        |k, _| target_samples[if shared { 0 } else { k }].clone(),
    )?;
    Ok(AisRun {
        direction: Direction::Reverse,
        log_weights,
        final_states,
        schedule: schedule.clone(),
        kernel: kernel.spec(),
        seed,
        shared_initial_state: shared && chains > 1,
        wall_time: start.elapsed(),
    })
}

/// Paired stochastic bounds on `log Z_T / Z_1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdmcResult {
    /// `log R̂`
    #[serde(with = "crate::numerics::serde_log")]
    pub lower: LogValue,
    /// `log R̂_rev^{-1}`
    #[serde(with = "crate::numerics::serde_log")]
    pub upper: LogValue,
    /// `upper − lower`
    #[serde(with = "crate::numerics::serde_log")]
    pub gap: f64,
    /// Per-chain `log w` of the forward run.
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub forward_chain_bounds: Vec<LogValue>,
    /// Per-chain `−log w` of the reverse run.
    #[serde(with = "crate::numerics::serde_log::vec")]
    pub reverse_chain_bounds: Vec<LogValue>,
    pub forward_schedule: AnnealingSchedule,
    pub reverse_schedule: AnnealingSchedule,
    pub forward_kernel: KernelSpec,
    pub reverse_kernel: KernelSpec,
    pub shared_target_sample: bool,
}

impl BdmcResult {
    pub fn from_runs<S>(forward: &AisRun<S>, reverse: &AisRun<S>) -> Result<Self> {
        if forward.direction != Direction::Forward || reverse.direction != Direction::Reverse {
            return Err(Error::invalid("BDMC needs one forward and one reverse run"));
        }
        let lower = forward.log_estimate();
        let upper = -reverse.log_estimate();
        Ok(Self {
            lower,
            upper,
            gap: upper - lower,
            forward_chain_bounds: forward.final_log_weights(),
            reverse_chain_bounds: reverse.final_log_weights().iter().map(|w| -w).collect(),
            forward_schedule: forward.schedule.clone(),
            reverse_schedule: reverse.schedule.clone(),
            forward_kernel: forward.kernel,
            reverse_kernel: reverse.kernel,
            shared_target_sample: reverse.shared_initial_state,
        })
    }

    pub fn stages(&self) -> usize {
        self.forward_schedule.stages()
    }

    /// Mean per-chain upper bound minus mean per-chain lower bound. Its
    /// expectation is exactly the chain-level Jeffreys divergence; the
    /// chain-averaged `gap` is tighter but biased downwards for `K > 1`.
    pub fn mean_chain_gap(&self) -> f64 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        mean(&self.reverse_chain_bounds) - mean(&self.forward_chain_bounds)
    }

    /// Whether `value` lies inside `[lower, upper]`.
    pub fn sandwiches(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// A BDMC result with the two runs it was assembled from.
#[derive(Clone, Debug)]
pub struct Bdmc<S> {
    pub result: BdmcResult,
    pub forward: AisRun<S>,
    pub reverse: AisRun<S>,
}

/// Forward and reverse AIS over the same path, schedule and kernel. Both
/// directions use `seed`; their chain streams are disjoint.
#[allow(clippy::too_many_arguments)]
pub fn bdmc<S, K, I>(
    path: &GeometricPath<S>,
    schedule: &AnnealingSchedule,
    kernel: &K,
    init_sampler: I,
    target_samples: &[S],
    chains: usize,
    seed: u64,
) -> Result<Bdmc<S>>
where
    S: Clone + Send + Sync,
    K: Kernel<S> + ?Sized,
    I: Fn(&mut ChainRng) -> S + Sync,
{
    let forward = forward_ais(path, schedule, kernel, init_sampler, chains, seed)?;
    let reverse = reverse_ais(path, schedule, kernel, target_samples, chains, seed)?;
    let result = BdmcResult::from_runs(&forward, &reverse)?;
    Ok(Bdmc {
        result,
        forward,
        reverse,
    })
}

/// `B̂`: the BDMC gap. In expectation it upper-bounds the Jeffreys divergence
/// between `p_T` and the law of the forward chain's final state.
pub fn jeffreys_gap(result: &BdmcResult) -> Result<f64> {
    if result.forward_schedule != result.reverse_schedule {
        return Err(Error::invalid(
            "forward and reverse runs used different schedules",
        ));
    }
    if result.forward_kernel != result.reverse_kernel {
        return Err(Error::invalid(
            "forward and reverse runs used different kernels",
        ));
    }
    Ok(result.gap)
}

/// Expectation-level bound on a one-sided KL divergence from a single
/// direction of AIS and a trusted bound on `log Z_T / Z_1` from elsewhere:
/// a forward run with an upper reference bounds `D_KL(q_fwd(x_T) ‖ p_T)`;
/// a reverse run with a lower reference bounds `D_KL(p_T ‖ q_fwd(x_T))`.
pub fn one_sided_kl_bound<S>(run: &AisRun<S>, reference: LogValue, side: BoundSide) -> Result<f64> {
    match (run.direction, side) {
        (Direction::Forward, BoundSide::Upper) => Ok(reference - run.log_estimate()),
        (Direction::Reverse, BoundSide::Lower) => Ok(-run.log_estimate() - reference),
        (direction, side) => Err(Error::invalid(format!(
            "a {direction:?} run needs a reference bound on the other side, not {side:?}"
        ))),
    }
}

/// One point of a bound curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    /// Number of distributions `T` (or stage index, for per-stage curves).
    pub stages: usize,
    #[serde(with = "crate::numerics::serde_log")]
    pub bound: LogValue,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// Bounds of one direction as a function of `T`; `T` strictly increases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub direction: Direction,
    pub points: Vec<BoundPoint>,
}

impl BoundCurve {
    pub fn new(direction: Direction) -> Self {
        Self {
            direction,
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, point: BoundPoint) -> Result<()> {
        if point.direction != self.direction {
            return Err(Error::invalid(
                "bound point direction does not match its curve",
            ));
        }
        if let Some(last) = self.points.last() {
            if point.stages <= last.stages {
                return Err(Error::invalid(format!(
                    "curve stages must increase: {} after {}",
                    point.stages, last.stages
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn stages(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.stages).collect()
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bound).collect()
    }
}

/// Per-stage bounds from one run. For a forward run the point at stage `t`
/// is `log Z_1 + log mean_k w_t^{(k)}`, a stochastic lower bound on
/// `log Z_t`. For a reverse run it is `log Z_1 − log mean_k w̃_t^{(k)}`;
/// at the last stage this is a stochastic upper bound on `log Z_T`.
/// `stages` selects 1-based stages; `None` emits all of them.
pub fn stochastic_bounds<S>(
    run: &AisRun<S>,
    known_log_z1: LogValue,
    stages: Option<&[usize]>,
) -> Result<BoundCurve> {
    let all: Vec<usize>;
    let stages = match stages {
        Some(s) => s,
        None => {
            all = (1..=run.stages()).collect();
            &all
        }
    };
    let mut curve = BoundCurve::new(run.direction);
    for &t in stages {
        if t == 0 || t > run.stages() {
            return Err(Error::invalid(format!(
                "stage {t} outside 1..={}",
                run.stages()
            )));
        }
        let lme = log_mean_exp(&run.log_weights_at(t))?;
        let bound = match run.direction {
            Direction::Forward => known_log_z1 + lme,
            Direction::Reverse => known_log_z1 - lme,
        };
        curve.push(BoundPoint {
            stages: t,
            bound,
            direction: run.direction,
            wall_time_secs: None,
        })?;
    }
    Ok(curve)
}
