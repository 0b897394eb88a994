//! Annealed importance sampling, bidirectional Monte Carlo, and tools for
//! measuring how far an annealed sampler's output is from its target.

pub mod ais;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod models;
pub mod numerics;
pub mod path;
pub mod protocol;
pub mod record;
pub mod transitions;

pub use ais::{bdmc, forward_ais, reverse_ais, AisRun, Bdmc, BdmcResult, BoundCurve, Direction};
pub use error::{Error, Result};
pub use path::{AnnealingSchedule, GeometricPath};
pub use transitions::{ChainRng, Kernel, KernelSpec};
