//! Reversible MCMC transition operators, and the exact transition matrix of
//! the grid-neighbour Metropolis–Hastings kernel.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::numerics::LogValue;
use crate::path::{check_beta, Endpoints, GeometricPath};

/// Per-chain random stream.
pub type ChainRng = ChaCha8Rng;

/// Serializable description of a transition kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    GridNeighborMh {
        steps_per_stage: usize,
    },
    RandomWalkMh {
        scale: f64,
        steps_per_stage: usize,
    },
    Hmc {
        step_size: f64,
        leapfrog_steps: usize,
        steps_per_stage: usize,
    },
}

impl KernelSpec {
    pub const DEFAULT_RANDOM_WALK_SCALE: f64 = 0.5;
    pub const DEFAULT_HMC_STEP_SIZE: f64 = 0.05;
    pub const DEFAULT_HMC_LEAPFROG_STEPS: usize = 10;

    pub fn steps_per_stage(&self) -> usize {
        match *self {
            KernelSpec::GridNeighborMh { steps_per_stage }
            | KernelSpec::RandomWalkMh {
                steps_per_stage, ..
            }
            | KernelSpec::Hmc {
                steps_per_stage, ..
            } => steps_per_stage,
        }
    }

    pub fn default_random_walk() -> Self {
        KernelSpec::RandomWalkMh {
            scale: Self::DEFAULT_RANDOM_WALK_SCALE,
            steps_per_stage: 1,
        }
    }

    pub fn default_hmc() -> Self {
        KernelSpec::Hmc {
            step_size: Self::DEFAULT_HMC_STEP_SIZE,
            leapfrog_steps: Self::DEFAULT_HMC_LEAPFROG_STEPS,
            steps_per_stage: 1,
        }
    }
}

/// A state together with its endpoint log-densities.
#[derive(Clone, Debug)]
pub struct Point<S> {
    pub state: S,
    pub log: Endpoints,
}

impl<S> Point<S> {
    pub fn evaluate(path: &GeometricPath<S>, state: S) -> Self {
        let log = path.endpoints(&state);
        Self { state, log }
    }
}

/// A Markov kernel that leaves `p_β` invariant for every `β` on a path.
pub trait Kernel<S>: Send + Sync {
    fn spec(&self) -> KernelSpec;

    /// One application of the kernel targeting `f_β`.
    fn step(
        &self,
        path: &GeometricPath<S>,
        beta: f64,
        current: Point<S>,
        rng: &mut ChainRng,
    ) -> Result<Point<S>>;

    /// `steps_per_stage` applications of [`Kernel::step`].
    fn transition(
        &self,
        path: &GeometricPath<S>,
        beta: f64,
        mut current: Point<S>,
        rng: &mut ChainRng,
    ) -> Result<Point<S>> {
        for _ in 0..self.spec().steps_per_stage() {
            current = self.step(path, beta, current, rng)?;
        }
        Ok(current)
    }
}

/// Metropolis acceptance test for a symmetric proposal.
#[inline]
pub fn metropolis_accept<R: Rng + ?Sized>(
    log_current: LogValue,
    log_proposed: LogValue,
    rng: &mut R,
) -> bool {
    let log_alpha = log_proposed - log_current;
    if log_alpha >= 0.0 {
        return true;
    }
    if log_alpha.is_nan() || log_alpha == f64::NEG_INFINITY {
        return false;
    }
    rng.random::<f64>() < log_alpha.exp()
}

/// Metropolis–Hastings with a symmetric proposal. A proposal of `None`
/// (for example a move off the grid) counts as a rejection.
pub fn mh_step<S, R, F, P>(x: S, log_f: F, propose: P, rng: &mut R) -> Result<S>
where
    R: Rng + ?Sized,
    F: Fn(&S) -> LogValue,
    P: FnOnce(&S, &mut R) -> Option<S>,
{
    let current = crate::numerics::sanitize_log(log_f(&x));
    if current == f64::NEG_INFINITY {
        return Err(Error::InvalidState(
            "Metropolis-Hastings chain is in a zero-density state".into(),
        ));
    }
    match propose(&x, rng) {
        Some(proposal) => {
            let proposed = crate::numerics::sanitize_log(log_f(&proposal));
            if metropolis_accept(current, proposed, rng) {
                Ok(proposal)
            } else {
                Ok(x)
            }
        }
        None => Ok(x),
    }
}

/// Uniform proposal over the four axis-aligned neighbours of a cell of a
/// row-major `width × height` grid. Off-grid moves return `None`.
pub fn grid_neighbor_proposal<R: Rng + ?Sized>(
    cell: usize,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Option<usize> {
    neighbor(cell, width, height, rng.random_range(0..4))
}

#[inline]
fn neighbor(cell: usize, width: usize, height: usize, direction: usize) -> Option<usize> {
    let (row, col) = (cell / width, cell % width);
    match direction {
        0 if row > 0 => Some(cell - width),
        1 if row + 1 < height => Some(cell + width),
        2 if col > 0 => Some(cell - 1),
        3 if col + 1 < width => Some(cell + 1),
        _ => None,
    }
}

fn require_support<S>(current: &Point<S>, beta: f64) -> Result<LogValue> {
    let log_f = current.log.log_f(beta);
    if log_f == f64::NEG_INFINITY {
        Err(Error::InvalidState(format!(
            "chain is in a zero-density state at beta = {beta}"
        )))
    } else {
        Ok(log_f)
    }
}

/// Grid-neighbour Metropolis–Hastings on a row-major grid of cells.
#[derive(Clone, Debug)]
pub struct GridNeighborMh {
    pub width: usize,
    pub height: usize,
    pub steps_per_stage: usize,
}

impl GridNeighborMh {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            steps_per_stage: 1,
        }
    }

    pub fn with_steps_per_stage(mut self, steps: usize) -> Self {
        self.steps_per_stage = steps;
        self
    }
}

impl Kernel<usize> for GridNeighborMh {
    fn spec(&self) -> KernelSpec {
        KernelSpec::GridNeighborMh {
            steps_per_stage: self.steps_per_stage,
        }
    }

    fn step(
        &self,
        path: &GeometricPath<usize>,
        beta: f64,
        current: Point<usize>,
        rng: &mut ChainRng,
    ) -> Result<Point<usize>> {
        let log_current = require_support(&current, beta)?;
        let Some(cell) = grid_neighbor_proposal(current.state, self.width, self.height, rng) else {
            return Ok(current);
        };
        let proposal = Point::evaluate(path, cell);
        if metropolis_accept(log_current, proposal.log.log_f(beta), rng) {
            Ok(proposal)
        } else {
            Ok(current)
        }
    }
}

/// Gaussian random-walk Metropolis on `R^d`.
#[derive(Clone, Debug)]
pub struct RandomWalkMh {
    pub scale: f64,
    pub steps_per_stage: usize,
}

impl RandomWalkMh {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!(
                "random-walk scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            scale,
            steps_per_stage: 1,
        })
    }

    pub fn with_steps_per_stage(mut self, steps: usize) -> Self {
        self.steps_per_stage = steps;
        self
    }
}

impl Kernel<Vec<f64>> for RandomWalkMh {
    fn spec(&self) -> KernelSpec {
        KernelSpec::RandomWalkMh {
            scale: self.scale,
            steps_per_stage: self.steps_per_stage,
        }
    }

    fn step(
        &self,
        path: &GeometricPath<Vec<f64>>,
        beta: f64,
        current: Point<Vec<f64>>,
        rng: &mut ChainRng,
    ) -> Result<Point<Vec<f64>>> {
        let log_current = require_support(&current, beta)?;
        let proposal: Vec<f64> = current
            .state
            .iter()
            .map(|&x| x + self.scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let proposal = Point::evaluate(path, proposal);
        if metropolis_accept(log_current, proposal.log.log_f(beta), rng) {
            Ok(proposal)
        } else {
            Ok(current)
        }
    }
}

/// Result of one HMC transition.
#[derive(Clone, Debug, PartialEq)]
pub struct HmcOutcome {
    pub state: Vec<f64>,
    pub accepted: bool,
    pub divergent: bool,
}

/// One Hamiltonian Monte Carlo transition: resample a unit-mass Gaussian
/// momentum, run `leapfrog_steps` leapfrog steps of size `step_size`, then
/// accept or reject on the change in total energy.
pub fn hmc_step<R, F, G>(
    x: &[f64],
    log_f: F,
    grad_log_f: G,
    step_size: f64,
    leapfrog_steps: usize,
    rng: &mut R,
) -> Result<HmcOutcome>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> LogValue,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if leapfrog_steps == 0 {
        return Err(Error::invalid("HMC needs at least one leapfrog step"));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::invalid(format!(
            "HMC step size must be positive, got {step_size}"
        )));
    }
    let log_current = log_f(x);
    let grad = grad_log_f(x);
    if !log_current.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidState(
            "HMC started from a state with non-finite density or gradient".into(),
        ));
    }
    Ok(leapfrog_transition(
        x,
        log_current,
        grad,
        &log_f,
        &grad_log_f,
        step_size,
        leapfrog_steps,
        rng,
    ))
}

#[allow(clippy::too_many_arguments)]
fn leapfrog_transition<R, F, G>(
    x: &[f64],
    log_current: f64,
    mut grad: Vec<f64>,
    log_f: &F,
    grad_log_f: &G,
    eps: f64,
    steps: usize,
    rng: &mut R,
) -> HmcOutcome
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> LogValue,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let reject = |divergent| HmcOutcome {
        state: x.to_vec(),
        accepted: false,
        divergent,
    };
    let mut momentum: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let kinetic0: f64 = 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();
    let mut position = x.to_vec();

    for (p, g) in momentum.iter_mut().zip(&grad) {
        *p += 0.5 * eps * g;
    }
    for step in 0..steps {
        for (q, p) in position.iter_mut().zip(&momentum) {
            *q += eps * p;
        }
        grad = grad_log_f(&position);
        if grad.iter().any(|g| !g.is_finite()) {
            return reject(true);
        }
        let scale = if step + 1 == steps { 0.5 } else { 1.0 };
        for (p, g) in momentum.iter_mut().zip(&grad) {
            *p += scale * eps * g;
        }
    }

    let log_proposed = crate::numerics::sanitize_log(log_f(&position));
    if !log_proposed.is_finite() {
        return reject(log_proposed == f64::INFINITY);
    }
    let kinetic1: f64 = 0.5 * momentum.iter().map(|p| p * p).sum::<f64>();
    let log_accept = (log_proposed - kinetic1) - (log_current - kinetic0);
    if metropolis_accept(0.0, log_accept, rng) {
        HmcOutcome {
            state: position,
            accepted: true,
            divergent: false,
        }
    } else {
        reject(false)
    }
}

/// Hamiltonian Monte Carlo with fixed step size and trajectory length.
#[derive(Debug)]
pub struct Hmc {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub steps_per_stage: usize,
    divergences: AtomicU64,
}

impl Clone for Hmc {
    fn clone(&self) -> Self {
        Self {
            step_size: self.step_size,
            leapfrog_steps: self.leapfrog_steps,
            steps_per_stage: self.steps_per_stage,
            divergences: AtomicU64::new(self.divergences()),
        }
    }
}

impl Hmc {
    pub fn new(step_size: f64, leapfrog_steps: usize) -> Result<Self> {
        if leapfrog_steps == 0 {
            return Err(Error::invalid("HMC needs at least one leapfrog step"));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::invalid(format!(
                "HMC step size must be positive, got {step_size}"
            )));
        }
        Ok(Self {
            step_size,
            leapfrog_steps,
            steps_per_stage: 1,
            divergences: AtomicU64::new(0),
        })
    }

    pub fn with_steps_per_stage(mut self, steps: usize) -> Self {
        self.steps_per_stage = steps;
        self
    }

    /// Trajectories abandoned because of a non-finite gradient or density.
    pub fn divergences(&self) -> u64 {
        self.divergences.load(Ordering::Relaxed)
    }
}

impl Kernel<Vec<f64>> for Hmc {
    fn spec(&self) -> KernelSpec {
        KernelSpec::Hmc {
            step_size: self.step_size,
            leapfrog_steps: self.leapfrog_steps,
            steps_per_stage: self.steps_per_stage,
        }
    }

    fn step(
        &self,
        path: &GeometricPath<Vec<f64>>,
        beta: f64,
        current: Point<Vec<f64>>,
        rng: &mut ChainRng,
    ) -> Result<Point<Vec<f64>>> {
        let log_current = require_support(&current, beta)?;
        let grad = path
            .grad_log_f(beta, &current.state)
            .ok_or_else(|| Error::invalid("HMC requires a path with gradients"))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidState(
                "non-finite gradient at the current HMC state".into(),
            ));
        }
        let log_f = |x: &[f64]| path.endpoints(&x.to_vec()).log_f(beta);
        let grad_f = |x: &[f64]| {
            path.grad_log_f(beta, &x.to_vec())
                .expect("path gradient checked above")
        };
        let outcome = leapfrog_transition(
            &current.state,
            log_current,
            grad,
            &log_f,
            &grad_f,
            self.step_size,
            self.leapfrog_steps,
            rng,
        );
        if outcome.divergent {
            self.divergences.fetch_add(1, Ordering::Relaxed);
        }
        if outcome.accepted {
            Ok(Point::evaluate(path, outcome.state))
        } else {
            Ok(current)
        }
    }
}

/// Kernel over real vectors selected at runtime from a [`KernelSpec`].
#[derive(Clone, Debug)]
pub enum VectorKernel {
    RandomWalk(RandomWalkMh),
    Hmc(Hmc),
}

impl VectorKernel {
    pub fn from_spec(spec: KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::RandomWalkMh {
                scale,
                steps_per_stage,
            } => Ok(VectorKernel::RandomWalk(
                RandomWalkMh::new(scale)?.with_steps_per_stage(check_steps(steps_per_stage)?),
            )),
            KernelSpec::Hmc {
                step_size,
                leapfrog_steps,
                steps_per_stage,
            } => Ok(VectorKernel::Hmc(
                Hmc::new(step_size, leapfrog_steps)?
                    .with_steps_per_stage(check_steps(steps_per_stage)?),
            )),
            KernelSpec::GridNeighborMh { .. } => Err(Error::invalid(
                "grid-neighbour kernel cannot act on continuous parameters",
            )),
        }
    }
}

fn check_steps(steps: usize) -> Result<usize> {
    if steps == 0 {
        Err(Error::invalid("steps_per_stage must be positive"))
    } else {
        Ok(steps)
    }
}

impl Kernel<Vec<f64>> for VectorKernel {
    fn spec(&self) -> KernelSpec {
        match self {
            VectorKernel::RandomWalk(k) => k.spec(),
            VectorKernel::Hmc(k) => k.spec(),
        }
    }

    fn step(
        &self,
        path: &GeometricPath<Vec<f64>>,
        beta: f64,
        current: Point<Vec<f64>>,
        rng: &mut ChainRng,
    ) -> Result<Point<Vec<f64>>> {
        match self {
            VectorKernel::RandomWalk(k) => k.step(path, beta, current, rng),
            VectorKernel::Hmc(k) => k.step(path, beta, current, rng),
        }
    }
}

/// Sparse form of the grid-neighbour MH kernel: for every cell, the
/// probabilities of moving to each of its in-grid neighbours; the remainder
/// is the probability of staying.
#[derive(Clone, Debug)]
pub(crate) struct NeighborKernel {
    pub moves: Vec<Vec<(usize, f64)>>,
    pub stay: Vec<f64>,
}

impl NeighborKernel {
    pub fn build(width: usize, height: usize, log_f: &[f64]) -> Self {
        let n = width * height;
        debug_assert_eq!(log_f.len(), n);
        let mut moves = Vec::with_capacity(n);
        let mut stay = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<(usize, f64)> = (0..4)
                .filter_map(|dir| neighbor(i, width, height, dir))
                .map(|j| (j, 0.25 * (log_f[j] - log_f[i]).exp().min(1.0)))
                .collect();
            let moved: f64 = row.iter().map(|(_, p)| p).sum();
            stay.push(1.0 - moved);
            moves.push(row);
        }
        Self { moves, stay }
    }

    /// `K(i, j)`.
    #[inline]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.stay[i];
        }
        self.moves[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Row vector times kernel: the marginal after one transition.
    pub fn propagate(&self, marginal: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = marginal
            .iter()
            .zip(&self.stay)
            .map(|(m, s)| m * s)
            .collect();
        for (i, row) in self.moves.iter().enumerate() {
            for &(j, p) in row {
                out[j] += marginal[i] * p;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.stay.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.stay[i];
            for &(j, p) in &self.moves[i] {
                m[(i, j)] = p;
            }
        }
        m
    }
}

/// Exact transition matrix of the grid-neighbour MH kernel for an arbitrary
/// log-density over the cells of a `width × height` grid.
pub fn neighbor_mh_matrix(width: usize, height: usize, log_f: &[f64]) -> Result<DMatrix<f64>> {
    if log_f.len() != width * height {
        return Err(Error::invalid(format!(
            "log-density has {} entries for a {width}x{height} grid",
            log_f.len()
        )));
    }
    if log_f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("grid log-density must be finite"));
    }
    Ok(NeighborKernel::build(width, height, log_f).to_dense())
}

/// Row-stochastic MH matrix targeting `f^β` on a grid distribution.
pub fn transition_matrix(grid: &GridDistribution, beta: f64) -> Result<DMatrix<f64>> {
    check_beta(beta)?;
    let log_f = grid.tempered_log_potential(beta);
    neighbor_mh_matrix(grid.width(), grid.height(), &log_f)
}
