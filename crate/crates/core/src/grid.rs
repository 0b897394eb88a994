//! Exact analysis of AIS on small grids.
//!
//! On a finite state space both the forward and the reverse annealing chains
//! are Markov chains whose marginals can be propagated exactly, one stage at
//! a time. From those marginals we obtain the final-state Jeffreys
//! divergence `J`, the chain-level divergence `B`, and the expected log
//! weights of either direction.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ais::Direction;
use crate::error::{Error, Result};
use crate::numerics::{discrete_kl, log_sum_exp};
use crate::path::{AnnealingSchedule, GeometricPath};
use crate::transitions::{ChainRng, GridNeighborMh, NeighborKernel};

pub const DEFAULT_SIDE: usize = 7;

/// Unnormalized distribution `f(x) = exp(g(x))` over the cells of a
/// row-major grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDistribution {
    width: usize,
    height: usize,
    log_potential: Vec<f64>,
}

impl GridDistribution {
    pub fn new(width: usize, height: usize, log_potential: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if log_potential.len() != width * height {
            return Err(Error::invalid(format!(
                "{} potentials for a {width}x{height} grid",
                log_potential.len()
            )));
        }
        if let Some(i) = log_potential.iter().position(|g| !g.is_finite()) {
            return Err(Error::invalid(format!(
                "log-potential of cell {i} is not finite"
            )));
        }
        Ok(Self {
            width,
            height,
            log_potential,
        })
    }

    pub fn flat(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height]).expect("flat grid is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.log_potential.len()
    }

    pub fn log_potential(&self) -> &[f64] {
        &self.log_potential
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn log_partition(&self) -> f64 {
        log_sum_exp(&self.log_potential).expect("grid is non-empty")
    }

    /// `log Z_1` of the flat initial distribution.
    pub fn log_initial_partition(&self) -> f64 {
        (self.cells() as f64).ln()
    }

    pub fn tempered_log_potential(&self, beta: f64) -> Vec<f64> {
        self.log_potential.iter().map(|g| beta * g).collect()
    }

    /// Normalized `p_β ∝ exp(β g)`.
    pub fn tempered_probabilities(&self, beta: f64) -> Vec<f64> {
        let logs = self.tempered_log_potential(beta);
        let lz = log_sum_exp(&logs).expect("grid is non-empty");
        logs.iter().map(|l| (l - lz).exp()).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.tempered_probabilities(1.0)
    }

    /// Geometric path from the uniform distribution (`β = 0`) to `f`.
    pub fn path(&self) -> GeometricPath<usize> {
        let g = self.log_potential.clone();
        GeometricPath::new(|_: &usize| 0.0, move |x: &usize| g[*x])
    }

    pub fn kernel(&self) -> GridNeighborMh {
        GridNeighborMh::new(self.width, self.height)
    }

    pub fn sample_uniform(&self, rng: &mut ChainRng) -> usize {
        rng.random_range(0..self.cells())
    }

    /// Exact draw from the normalized target.
    pub fn sample_exact(&self, rng: &mut ChainRng) -> usize {
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    fn kernel_at(&self, beta: f64) -> NeighborKernel {
        NeighborKernel::build(self.width, self.height, &self.tempered_log_potential(beta))
    }
}

/// Grid whose log-potential entries are i.i.d. `N(0, σ²)`.
pub fn random_grid_target(sigma: f64, seed: u64) -> Result<GridDistribution> {
    random_grid_target_sized(DEFAULT_SIDE, DEFAULT_SIDE, sigma, seed)
}

pub fn random_grid_target_sized(
    width: usize,
    height: usize,
    sigma: f64,
    seed: u64,
) -> Result<GridDistribution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChainRng::seed_from_u64(seed);
    let g = (0..width * height)
        .map(|_| normal.sample(&mut rng))
        .collect();
    GridDistribution::new(width, height, g)
}

pub const BARRIER_LOG_POTENTIAL: f64 = -10.0;
pub const DOMINANT_MODE_LOG_POTENTIAL: f64 = 3.0;

/// Four 3×3 modes separated by a cross-shaped barrier along the centre row
/// and column; the upper-right mode is `e^3` times heavier than the others.
pub fn barrier_target() -> GridDistribution {
    let side = DEFAULT_SIDE;
    let mid = side / 2;
    let mut g = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            g[row * side + col] = if row == mid || col == mid {
                BARRIER_LOG_POTENTIAL
            } else if row < mid && col > mid {
                DOMINANT_MODE_LOG_POTENTIAL
            } else {
                0.0
            };
        }
    }
    GridDistribution::new(side, side, g).expect("barrier grid is valid")
}

/// Probability mass of the upper-right quadrant of a 7×7 grid.
pub fn dominant_mode_mass(grid: &GridDistribution) -> f64 {
    let p = grid.probabilities();
    let mid = grid.height() / 2;
    (0..mid)
        .flat_map(|row| (mid + 1..grid.width()).map(move |col| (row, col)))
        .map(|(row, col)| p[grid.index(row, col)])
        .sum()
}

/// Single-site marginals of one annealing chain, indexed in forward time
/// (`marginals[0]` is the law of `x_1`). Pairwise marginals are produced on
/// demand from adjacent single-site marginals and the stage kernel.
#[derive(Clone, Debug)]
pub struct ChainMarginals {
    pub direction: Direction,
    pub betas: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
}

impl ChainMarginals {
    pub fn stages(&self) -> usize {
        self.marginals.len()
    }

    /// Joint law of `(x_t, x_{t+1})` (0-based `t`), rows indexed by `x_t`.
    pub fn pairwise(&self, grid: &GridDistribution, t: usize) -> Result<DMatrix<f64>> {
        if t + 1 >= self.stages() {
            return Err(Error::invalid(format!(
                "pairwise marginal {t} requested from a chain of {} stages",
                self.stages()
            )));
        }
        let k = grid.kernel_at(self.betas[t + 1]);
        let n = grid.cells();
        let mut out = DMatrix::zeros(n, n);
        match self.direction {
            Direction::Forward => {
                let m = &self.marginals[t];
                for i in 0..n {
                    out[(i, i)] = m[i] * k.stay[i];
                    for &(j, p) in &k.moves[i] {
                        out[(i, j)] = m[i] * p;
                    }
                }
            }
            Direction::Reverse => {
                // x_t is drawn from x_{t+1} by the kernel at stage t+1
                let r = &self.marginals[t + 1];
                for j in 0..n {
                    out[(j, j)] = r[j] * k.stay[j];
                    for &(i, p) in &k.moves[j] {
                        out[(i, j)] = r[j] * p;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Law of the forward chain: `x_1` uniform, `x_{t+1} ~ K_{t+1}(x_t, ·)`.
pub fn forward_chain_marginals(
    grid: &GridDistribution,
    schedule: &AnnealingSchedule,
) -> ChainMarginals {
    let betas = schedule.betas().to_vec();
    let n = grid.cells();
    let mut marginals = Vec::with_capacity(betas.len());
    marginals.push(vec![1.0 / n as f64; n]);
    for &beta in &betas[1..] {
        let next = grid.kernel_at(beta).propagate(marginals.last().unwrap());
        marginals.push(next);
    }
    ChainMarginals {
        direction: Direction::Forward,
        betas,
        marginals,
    }
}

/// Law of the reverse chain: `x_T ~ p_T`, then `x_t ~ K_{t+1}(x_{t+1}, ·)`.
pub fn reverse_chain_marginals(
    grid: &GridDistribution,
    schedule: &AnnealingSchedule,
) -> ChainMarginals {
    let betas = schedule.betas().to_vec();
    let stages = betas.len();
    let mut marginals = vec![Vec::new(); stages];
    marginals[stages - 1] = grid.probabilities();
    for t in (0..stages - 1).rev() {
        // reversible kernel: p · K is the law after one step from p
        marginals[t] = grid.kernel_at(betas[t + 1]).propagate(&marginals[t + 1]);
    }
    ChainMarginals {
        direction: Direction::Reverse,
        betas,
        marginals,
    }
}

/// Every exact quantity for one (grid, schedule) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactAnalysis {
    pub stages: usize,
    /// `D_J(p_T, q_fwd(x_T))`
    pub final_jeffreys: f64,
    /// `D_J(q_fwd, q_rev)` over whole chains
    pub chain_jeffreys: f64,
    pub chain_kl_forward: f64,
    pub chain_kl_reverse: f64,
    pub final_kl_forward: f64,
    pub final_kl_reverse: f64,
    pub expected_log_weight_forward: f64,
    pub expected_log_weight_reverse: f64,
    /// `log Z_T − log Z_1`
    pub log_ratio: f64,
    pub final_marginal: Vec<f64>,
}

/// One pass over the chain: reverse marginals are stored, forward marginals
/// are streamed, and pairwise terms are accumulated stage by stage.
pub fn exact_analysis(grid: &GridDistribution, schedule: &AnnealingSchedule) -> ExactAnalysis {
    let betas = schedule.betas();
    let stages = betas.len();
    let g = grid.log_potential();
    let reverse = reverse_chain_marginals(grid, schedule).marginals;
    let target = &reverse[stages - 1];

    let mut m = vec![1.0 / grid.cells() as f64; grid.cells()];
    let mut kl_fwd = discrete_kl(&m, &reverse[0]);
    let mut kl_rev = discrete_kl(&reverse[0], &m);
    let mut logw_fwd = 0.0;
    let mut logw_rev = 0.0;
    let mean_g = |p: &[f64]| p.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();

    for t in 0..stages - 1 {
        let dbeta = betas[t + 1] - betas[t];
        logw_fwd += dbeta * mean_g(&m);
        logw_rev -= dbeta * mean_g(&reverse[t]);

        let k = grid.kernel_at(betas[t + 1]);
        let (r_now, r_next) = (&reverse[t], &reverse[t + 1]);
        let mut accumulate = |i: usize, j: usize, k_ij: f64, k_ji: f64| {
            let fwd_pair = m[i] * k_ij;
            let rev_pair = r_next[j] * k_ji;
            if fwd_pair <= 0.0 && rev_pair <= 0.0 {
                return;
            }
            let log_fwd_cond = k_ij.ln();
            let log_rev_cond = rev_pair.ln() - r_now[i].ln();
            if fwd_pair > 0.0 {
                kl_fwd += fwd_pair * (log_fwd_cond - log_rev_cond);
            }
            if rev_pair > 0.0 {
                kl_rev += rev_pair * (log_rev_cond - log_fwd_cond);
            }
        };
        for i in 0..grid.cells() {
            accumulate(i, i, k.stay[i], k.stay[i]);
            for &(j, k_ij) in &k.moves[i] {
                accumulate(i, j, k_ij, k.prob(j, i));
            }
        }
        m = k.propagate(&m);
    }

    let final_kl_forward = discrete_kl(&m, target);
    let final_kl_reverse = discrete_kl(target, &m);
    ExactAnalysis {
        stages,
        final_jeffreys: final_kl_forward + final_kl_reverse,
        chain_jeffreys: kl_fwd + kl_rev,
        chain_kl_forward: kl_fwd,
        chain_kl_reverse: kl_rev,
        final_kl_forward,
        final_kl_reverse,
        expected_log_weight_forward: logw_fwd,
        expected_log_weight_reverse: logw_rev,
        log_ratio: grid.log_partition() - grid.log_initial_partition(),
        final_marginal: m,
    }
}

/// `J = D_KL(p_T ‖ q_fwd(x_T)) + D_KL(q_fwd(x_T) ‖ p_T)`.
pub fn exact_final_jeffreys(grid: &GridDistribution, schedule: &AnnealingSchedule) -> f64 {
    let fwd = forward_chain_marginals(grid, schedule);
    let last = fwd.marginals.last().unwrap();
    let target = grid.probabilities();
    discrete_kl(&target, last) + discrete_kl(last, &target)
}

/// `B = D_KL(q_fwd ‖ q_rev) + D_KL(q_rev ‖ q_fwd)` over whole chains.
pub fn exact_chain_jeffreys(grid: &GridDistribution, schedule: &AnnealingSchedule) -> f64 {
    exact_analysis(grid, schedule).chain_jeffreys
}

/// `E[log w]` of a single chain in the given direction.
pub fn exact_expected_logw(
    grid: &GridDistribution,
    schedule: &AnnealingSchedule,
    direction: Direction,
) -> f64 {
    let g = grid.log_potential();
    let betas = schedule.betas();
    let mean_g = |p: &[f64]| p.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    match direction {
        Direction::Forward => {
            let fwd = forward_chain_marginals(grid, schedule);
            (1..betas.len())
                .map(|t| (betas[t] - betas[t - 1]) * mean_g(&fwd.marginals[t - 1]))
                .sum()
        }
        Direction::Reverse => {
            let rev = reverse_chain_marginals(grid, schedule);
            (0..betas.len() - 1)
                .map(|t| (betas[t] - betas[t + 1]) * mean_g(&rev.marginals[t]))
                .sum()
        }
    }
}
