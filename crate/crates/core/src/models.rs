//! Benchmark models: Bayesian linear regression and matrix factorization in
//! collapsed and uncollapsed form.
//!
//! Parameters are flat `Vec<f64>` vectors in an unconstrained space; positive
//! scales are stored as logarithms and their priors carry the Jacobian.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Cauchy, Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chol_log_det, cholesky, normal_log_pdf, LogValue, HALF_LN_2PI};
use crate::transitions::ChainRng;

/// Column-labelled numeric table used to export datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// A generative model `p(θ) p(y | θ)` with optional hyperparameters `η`
/// embedded in `θ`.
pub trait Model: Send + Sync + Clone {
    type Data: Clone + fmt::Debug + PartialEq + Send + Sync;

    fn name(&self) -> &str;

    /// Length of the parameter vector.
    fn dim(&self) -> usize;

    fn sample_params(&self, rng: &mut ChainRng) -> Vec<f64>;

    fn sample_data(&self, theta: &[f64], rng: &mut ChainRng) -> Self::Data;

    fn log_prior(&self, theta: &[f64]) -> LogValue;

    fn log_likelihood(&self, theta: &[f64], data: &Self::Data) -> LogValue;

    fn grad_log_prior(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn grad_log_likelihood(&self, _theta: &[f64], _data: &Self::Data) -> Option<Vec<f64>> {
        None
    }

    fn is_differentiable(&self) -> bool {
        false
    }

    /// Number of free hyperparameters carried in `θ`.
    fn hyper_dim(&self) -> usize {
        0
    }

    /// Hyperparameters of `θ` on their natural scale.
    fn hyperparameters(&self, _theta: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// The same model with its hyperparameters held at `eta`.
    fn fix_hyperparameters(&self, eta: &[f64]) -> Result<Self> {
        if eta.is_empty() {
            Ok(self.clone())
        } else {
            Err(Error::invalid(format!(
                "{} has no free hyperparameters",
                self.name()
            )))
        }
    }

    /// Lifts parameters of the fixed-hyperparameter model back into this
    /// model's parameter space.
    fn attach_hyperparameters(&self, theta_fixed: &[f64], _eta: &[f64]) -> Vec<f64> {
        theta_fixed.to_vec()
    }

    /// A reasonable starting point for posterior inference on `data`.
    fn inference_start(&self, _data: &Self::Data, rng: &mut ChainRng) -> Vec<f64> {
        self.sample_params(rng)
    }

    fn data_table(&self, data: &Self::Data) -> DataTable;

    fn log_joint(&self, theta: &[f64], data: &Self::Data) -> Result<LogValue> {
        check_dim(self.dim(), theta)?;
        let value = self.log_prior(theta) + self.log_likelihood(theta, data);
        if value.is_nan() || value == f64::INFINITY {
            return Err(Error::ModelEvaluation(format!(
                "{} log joint is {value} at finite parameters",
                self.name()
            )));
        }
        Ok(value)
    }
}

fn check_dim(expected: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::invalid(format!(
            "parameter vector has length {}, expected {expected}",
            theta.len()
        )));
    }
    Ok(())
}

/// An ancestral draw `θ ~ p(θ)`, `y ~ p(y | θ)`. `params` is an exact
/// posterior sample given `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation<D> {
    pub params: Vec<f64>,
    pub data: D,
}

pub fn simulate_dataset<M: Model>(model: &M, seed: u64) -> Simulation<M::Data> {
    let mut rng = ChainRng::seed_from_u64(seed);
    let params = model.sample_params(&mut rng);
    let data = model.sample_data(&params, &mut rng);
    Simulation { params, data }
}

/// Prior on the observation noise scale `s` of [`LinRegModel`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoisePrior {
    /// `s` is a known constant and not part of `θ`.
    Fixed {
        scale: f64,
    },
    InverseGaussian {
        mean: f64,
        shape: f64,
    },
    /// Cauchy truncated to the positive half-line.
    HalfCauchy {
        scale: f64,
    },
}

impl NoisePrior {
    pub fn default_inverse_gaussian() -> Self {
        NoisePrior::InverseGaussian {
            mean: 1.0,
            shape: 1.0,
        }
    }

    pub fn default_half_cauchy() -> Self {
        NoisePrior::HalfCauchy { scale: 5.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoisePrior::Fixed { scale } => scale > 0.0 && scale.is_finite(),
            NoisePrior::InverseGaussian { mean, shape } => {
                mean > 0.0 && shape > 0.0 && mean.is_finite() && shape.is_finite()
            }
            NoisePrior::HalfCauchy { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid noise prior {self:?}")))
        }
    }

    pub fn is_free(&self) -> bool {
        !matches!(self, NoisePrior::Fixed { .. })
    }

    /// `log p(s)` and `d/ds log p(s)`.
    pub fn log_density(&self, s: f64) -> (f64, f64) {
        match *self {
            NoisePrior::Fixed { .. } => (0.0, 0.0),
            NoisePrior::InverseGaussian { mean, shape } => {
                let lp = 0.5 * shape.ln()
                    - HALF_LN_2PI
                    - 1.5 * s.ln()
                    - shape * (s - mean).powi(2) / (2.0 * mean * mean * s);
                let d = -1.5 / s - shape / (2.0 * mean * mean) * (1.0 - mean * mean / (s * s));
                (lp, d)
            }
            NoisePrior::HalfCauchy { scale } => {
                let lp = std::f64::consts::LN_2
                    - std::f64::consts::PI.ln()
                    - scale.ln()
                    - (s / scale).powi(2).ln_1p();
                (lp, -2.0 * s / (scale * scale + s * s))
            }
        }
    }

    fn sample(&self, rng: &mut ChainRng) -> f64 {
        match *self {
            NoisePrior::Fixed { scale } => scale,
            NoisePrior::InverseGaussian { mean, shape } => InverseGaussian::new(mean, shape)
                .expect("validated parameters")
                .sample(rng),
            NoisePrior::HalfCauchy { scale } => {
                let c = Cauchy::new(0.0, scale).expect("validated parameters");
                loop {
                    let s: f64 = c.sample(rng).abs();
                    if s > 0.0 && s.is_finite() {
                        return s;
                    }
                }
            }
        }
    }
}

/// `y_i ~ N(x_iᵀ w, s²)` with `w_j ~ N(0, 1)` and a prior on `s`.
///
/// `θ = [w_1, …, w_d, ln s]`, or just `w` when the noise is fixed. The
/// design is held by the model; datasets are response vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LinRegModel {
    design: DMatrix<f64>,
    noise: NoisePrior,
}

const STANDARDIZED_TOL: f64 = 1e-8;

/// Centers and scales every column to mean 0 and population std 1. Returns
/// the original means and stds.
pub fn standardize_columns(matrix: &mut DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(Error::invalid("standardization needs at least two rows"));
    }
    let mut means = Vec::with_capacity(matrix.ncols());
    let mut stds = Vec::with_capacity(matrix.ncols());
    for (j, mut col) in matrix.column_iter_mut().enumerate() {
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::invalid(format!("column {j} has zero variance")));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        means.push(mean);
        stds.push(sd);
    }
    Ok((means, stds))
}

impl LinRegModel {
    pub fn new(design: DMatrix<f64>, noise: NoisePrior) -> Result<Self> {
        if design.ncols() == 0 {
            return Err(Error::invalid("design needs at least one column"));
        }
        noise.validate()?;
        let n = design.nrows();
        if n >= 2 {
            for (j, col) in design.column_iter().enumerate() {
                let mean = col.mean();
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                if mean.abs() > STANDARDIZED_TOL || (var.sqrt() - 1.0).abs() > STANDARDIZED_TOL {
                    return Err(Error::invalid(format!(
                        "design column {j} is not standardized (mean {mean:e}, std {})",
                        var.sqrt()
                    )));
                }
            }
        }
        Ok(Self { design, noise })
    }

    /// A standardized Gaussian random design.
    pub fn random_design(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
        let mut rng = ChainRng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        standardize_columns(&mut x)?;
        Ok(x)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn noise(&self) -> NoisePrior {
        self.noise
    }

    pub fn observations(&self) -> usize {
        self.design.nrows()
    }

    pub fn features(&self) -> usize {
        self.design.ncols()
    }

    /// The model with the noise scale fixed at `s`.
    pub fn fixed_noise(&self, s: f64) -> Result<Self> {
        Self::new(self.design.clone(), NoisePrior::Fixed { scale: s })
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64, f64) {
        let d = self.features();
        match self.noise {
            NoisePrior::Fixed { scale } => (&theta[..d], scale.ln(), scale),
            _ => (&theta[..d], theta[d], theta[d].exp()),
        }
    }

    fn residuals(&self, w: &[f64], y: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(y) - &self.design * DVector::from_column_slice(w)
    }

    fn check_data(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.observations() {
            return Err(Error::invalid(format!(
                "{} responses for a design with {} rows",
                y.len(),
                self.observations()
            )));
        }
        Ok(())
    }

    /// Closed-form `log p(y)` when the noise scale is fixed:
    /// `y ~ N(0, X Xᵀ + s² I)`.
    pub fn log_marginal_likelihood(&self, y: &[f64]) -> Result<LogValue> {
        let NoisePrior::Fixed { scale } = self.noise else {
            return Err(Error::invalid(
                "closed-form evidence needs a fixed noise scale",
            ));
        };
        self.check_data(y)?;
        let n = y.len();
        if n == 0 {
            return Ok(0.0);
        }
        let cov =
            &self.design * self.design.transpose() + DMatrix::identity(n, n) * (scale * scale);
        let chol = cholesky(&cov, "marginal covariance")?;
        let y = DVector::from_column_slice(y);
        let alpha = chol.solve(&y);
        Ok(-0.5 * y.dot(&alpha) - 0.5 * chol_log_det(&chol) - n as f64 * HALF_LN_2PI)
    }

    /// Mean and covariance of `w | y` when the noise scale is fixed.
    pub fn conjugate_posterior(&self, y: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let NoisePrior::Fixed { scale } = self.noise else {
            return Err(Error::invalid(
                "closed-form posterior needs a fixed noise scale",
            ));
        };
        self.check_data(y)?;
        let d = self.features();
        let s2 = scale * scale;
        let precision = DMatrix::identity(d, d) + self.design.transpose() * &self.design / s2;
        let chol = cholesky(&precision, "posterior precision")?;
        let cov = chol.inverse();
        let mean = &cov * (self.design.transpose() * DVector::from_column_slice(y)) / s2;
        Ok((mean, cov))
    }
}

impl Model for LinRegModel {
    type Data = Vec<f64>;

    fn name(&self) -> &str {
        "linreg"
    }

    fn dim(&self) -> usize {
        self.features() + usize::from(self.noise.is_free())
    }

    fn sample_params(&self, rng: &mut ChainRng) -> Vec<f64> {
        let mut theta: Vec<f64> = (0..self.features())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        if self.noise.is_free() {
            theta.push(self.noise.sample(rng).ln());
        }
        theta
    }

    fn sample_data(&self, theta: &[f64], rng: &mut ChainRng) -> Vec<f64> {
        let (w, _, s) = self.split(theta);
        let mean = &self.design * DVector::from_column_slice(w);
        mean.iter()
            .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> LogValue {
        let (w, u, s) = self.split(theta);
        let lw: f64 = w.iter().map(|&v| normal_log_pdf(v, 0.0, 1.0)).sum();
        if !self.noise.is_free() {
            return lw;
        }
        if !(s > 0.0 && s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        lw + self.noise.log_density(s).0 + u
    }

    fn log_likelihood(&self, theta: &[f64], y: &Vec<f64>) -> LogValue {
        let (w, u, s) = self.split(theta);
        let r = self.residuals(w, y);
        -(y.len() as f64) * (HALF_LN_2PI + u) - r.norm_squared() / (2.0 * s * s)
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let (w, _, s) = self.split(theta);
        let mut g: Vec<f64> = w.iter().map(|v| -v).collect();
        if self.noise.is_free() {
            g.push(s * self.noise.log_density(s).1 + 1.0);
        }
        Some(g)
    }

    fn grad_log_likelihood(&self, theta: &[f64], y: &Vec<f64>) -> Option<Vec<f64>> {
        let (w, _, s) = self.split(theta);
        let r = self.residuals(w, y);
        let gw = self.design.transpose() * &r / (s * s);
        let mut g: Vec<f64> = gw.iter().copied().collect();
        if self.noise.is_free() {
            g.push(-(y.len() as f64) + r.norm_squared() / (s * s));
        }
        Some(g)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn hyper_dim(&self) -> usize {
        usize::from(self.noise.is_free())
    }

    fn hyperparameters(&self, theta: &[f64]) -> Vec<f64> {
        if self.noise.is_free() {
            vec![self.split(theta).2]
        } else {
            Vec::new()
        }
    }

    fn fix_hyperparameters(&self, eta: &[f64]) -> Result<Self> {
        match (self.noise.is_free(), eta) {
            (false, []) => Ok(self.clone()),
            (true, [s]) => self.fixed_noise(*s),
            _ => Err(Error::invalid(format!(
                "expected {} hyperparameters, got {}",
                self.hyper_dim(),
                eta.len()
            ))),
        }
    }

    fn attach_hyperparameters(&self, theta_fixed: &[f64], eta: &[f64]) -> Vec<f64> {
        let mut theta = theta_fixed.to_vec();
        if self.noise.is_free() {
            theta.push(eta[0].ln());
        }
        theta
    }

    fn inference_start(&self, y: &Vec<f64>, _rng: &mut ChainRng) -> Vec<f64> {
        let mut theta = vec![0.0; self.features()];
        if self.noise.is_free() {
            let n = y.len() as f64;
            let sd = if y.len() >= 2 {
                let mean = y.iter().sum::<f64>() / n;
                (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            } else {
                1.0
            };
            theta.push(if sd > 0.0 { sd.ln() } else { 0.0 });
        }
        theta
    }

    fn data_table(&self, y: &Vec<f64>) -> DataTable {
        let mut columns: Vec<String> = (0..self.features()).map(|j| format!("x{j}")).collect();
        columns.push("y".into());
        let rows = (0..self.observations())
            .map(|i| {
                let mut row: Vec<f64> = self.design.row(i).iter().copied().collect();
                row.push(y[i]);
                row
            })
            .collect();
        DataTable { columns, rows }
    }
}

/// Which parameters a [`MatrixFactorization`] samples explicitly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// `θ = (U, V)`
    Uncollapsed,
    /// `θ = V`, with `U` integrated out.
    Collapsed,
}

/// `Y = U V + noise` with `U: N×K`, `V: K×D` and independent Gaussian
/// entries. Parameters are `U` then `V`, each row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixFactorization {
    pub rows: usize,
    pub rank: usize,
    pub cols: usize,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma: f64,
    pub representation: Representation,
}

impl MatrixFactorization {
    pub fn new(
        rows: usize,
        rank: usize,
        cols: usize,
        representation: Representation,
    ) -> Result<Self> {
        Self::with_scales(rows, rank, cols, 1.0, 1.0, 1.0, representation)
    }

    pub fn with_scales(
        rows: usize,
        rank: usize,
        cols: usize,
        sigma_u: f64,
        sigma_v: f64,
        sigma: f64,
        representation: Representation,
    ) -> Result<Self> {
        if rank == 0 || rank >= rows.min(cols) {
            return Err(Error::invalid(format!(
                "rank {rank} must be positive and below min({rows}, {cols})"
            )));
        }
        for (name, v) in [("sigma_u", sigma_u), ("sigma_v", sigma_v), ("sigma", sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            rows,
            rank,
            cols,
            sigma_u,
            sigma_v,
            sigma,
            representation,
        })
    }

    pub fn with_representation(&self, representation: Representation) -> Self {
        Self {
            representation,
            ..self.clone()
        }
    }

    fn u_len(&self) -> usize {
        self.rows * self.rank
    }

    fn v_len(&self) -> usize {
        self.rank * self.cols
    }

    pub fn unpack_u(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.rank, &theta[..self.u_len()])
    }

    pub fn unpack_v(&self, theta: &[f64]) -> DMatrix<f64> {
        let offset = match self.representation {
            Representation::Uncollapsed => self.u_len(),
            Representation::Collapsed => 0,
        };
        DMatrix::from_row_slice(self.rank, self.cols, &theta[offset..offset + self.v_len()])
    }

    fn check_shapes(
        &self,
        u: Option<&DMatrix<f64>>,
        v: &DMatrix<f64>,
        y: &DMatrix<f64>,
    ) -> Result<()> {
        let bad = |what: &str, m: &DMatrix<f64>, r: usize, c: usize| {
            Error::invalid(format!(
                "{what} is {}×{}, expected {r}×{c}",
                m.nrows(),
                m.ncols()
            ))
        };
        if let Some(u) = u {
            if u.shape() != (self.rows, self.rank) {
                return Err(bad("U", u, self.rows, self.rank));
            }
        }
        if v.shape() != (self.rank, self.cols) {
            return Err(bad("V", v, self.rank, self.cols));
        }
        if y.shape() != (self.rows, self.cols) {
            return Err(bad("Y", y, self.rows, self.cols));
        }
        Ok(())
    }

    fn log_prior_matrix(m: &DMatrix<f64>, sd: f64) -> f64 {
        -(m.len() as f64) * (HALF_LN_2PI + sd.ln()) - m.norm_squared() / (2.0 * sd * sd)
    }

    pub fn log_prior_v(&self, v: &DMatrix<f64>) -> f64 {
        Self::log_prior_matrix(v, self.sigma_v)
    }

    /// `log p(U) + log p(V) + log p(Y | U, V)`.
    pub fn log_joint_uncollapsed(
        &self,
        u: &DMatrix<f64>,
        v: &DMatrix<f64>,
        y: &DMatrix<f64>,
    ) -> Result<LogValue> {
        self.check_shapes(Some(u), v, y)?;
        Ok(Self::log_prior_matrix(u, self.sigma_u)
            + self.log_prior_v(v)
            + self.uncollapsed_likelihood(u, v, y))
    }

    fn uncollapsed_likelihood(&self, u: &DMatrix<f64>, v: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let r = y - u * v;
        Self::log_prior_matrix(&r, self.sigma)
    }

    /// `Σ(V) = σ_u² VᵀV + σ² I`
    pub fn collapsed_covariance(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        v.transpose() * v * self.sigma_u.powi(2)
            + DMatrix::identity(self.cols, self.cols) * self.sigma.powi(2)
    }

    /// `Σ_i log N(y_i; 0, Σ(V))` over the rows of `Y`.
    pub fn log_likelihood_collapsed(&self, v: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LogValue> {
        self.check_shapes(None, v, y)?;
        let chol = cholesky(&self.collapsed_covariance(v), "collapsed covariance")?;
        let solved = chol.solve(&y.transpose());
        let quad = y.transpose().component_mul(&solved).sum();
        let n = self.rows as f64;
        Ok(-0.5 * n * chol_log_det(&chol) - 0.5 * quad - n * self.cols as f64 * HALF_LN_2PI)
    }

    /// `log p(V) + log p(Y | V)`.
    pub fn log_joint_collapsed(&self, v: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LogValue> {
        Ok(self.log_prior_v(v) + self.log_likelihood_collapsed(v, y)?)
    }

    fn collapsed_gradient(&self, v: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let chol = cholesky(&self.collapsed_covariance(v), "collapsed covariance")?;
        let s = chol.inverse();
        let c = y.transpose() * y;
        let g = &s * c * &s * 0.5 - &s * (0.5 * self.rows as f64);
        Ok(v * g * (2.0 * self.sigma_u.powi(2)))
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

impl Model for MatrixFactorization {
    type Data = DMatrix<f64>;

    fn name(&self) -> &str {
        match self.representation {
            Representation::Uncollapsed => "mf-uncollapsed",
            Representation::Collapsed => "mf-collapsed",
        }
    }

    fn dim(&self) -> usize {
        match self.representation {
            Representation::Uncollapsed => self.u_len() + self.v_len(),
            Representation::Collapsed => self.v_len(),
        }
    }

    fn sample_params(&self, rng: &mut ChainRng) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        if self.representation == Representation::Uncollapsed {
            theta.extend(
                (0..self.u_len()).map(|_| self.sigma_u * rng.sample::<f64, _>(StandardNormal)),
            );
        }
        theta
            .extend((0..self.v_len()).map(|_| self.sigma_v * rng.sample::<f64, _>(StandardNormal)));
        theta
    }

    fn sample_data(&self, theta: &[f64], rng: &mut ChainRng) -> DMatrix<f64> {
        let u = match self.representation {
            Representation::Uncollapsed => self.unpack_u(theta),
            Representation::Collapsed => DMatrix::from_fn(self.rows, self.rank, |_, _| {
                self.sigma_u * rng.sample::<f64, _>(StandardNormal)
            }),
        };
        let v = self.unpack_v(theta);
        let noise = DMatrix::from_fn(self.rows, self.cols, |_, _| {
            self.sigma * rng.sample::<f64, _>(StandardNormal)
        });
        u * v + noise
    }

    fn log_prior(&self, theta: &[f64]) -> LogValue {
        let lv = self.log_prior_v(&self.unpack_v(theta));
        match self.representation {
            Representation::Uncollapsed => {
                lv + Self::log_prior_matrix(&self.unpack_u(theta), self.sigma_u)
            }
            Representation::Collapsed => lv,
        }
    }

    fn log_likelihood(&self, theta: &[f64], y: &DMatrix<f64>) -> LogValue {
        let v = self.unpack_v(theta);
        match self.representation {
            Representation::Uncollapsed => {
                self.uncollapsed_likelihood(&self.unpack_u(theta), &v, y)
            }
            Representation::Collapsed => self
                .log_likelihood_collapsed(&v, y)
                .unwrap_or(f64::NEG_INFINITY),
        }
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let mut g = Vec::with_capacity(self.dim());
        let mut push = |m: DMatrix<f64>, sd: f64| g.extend(row_major(&(m / -(sd * sd))));
        if self.representation == Representation::Uncollapsed {
            push(self.unpack_u(theta), self.sigma_u);
        }
        push(self.unpack_v(theta), self.sigma_v);
        Some(g)
    }

    fn grad_log_likelihood(&self, theta: &[f64], y: &DMatrix<f64>) -> Option<Vec<f64>> {
        let v = self.unpack_v(theta);
        match self.representation {
            Representation::Uncollapsed => {
                let u = self.unpack_u(theta);
                let r = (y - &u * &v) / self.sigma.powi(2);
                let gu = &r * v.transpose();
                let gv = u.transpose() * &r;
                Some(row_major(&gu).chain(row_major(&gv)).collect())
            }
            Representation::Collapsed => self
                .collapsed_gradient(&v, y)
                .ok()
                .map(|g| row_major(&g).collect()),
        }
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn data_table(&self, y: &DMatrix<f64>) -> DataTable {
        DataTable {
            columns: (0..self.cols).map(|j| format!("y{j}")).collect(),
            rows: (0..self.rows)
                .map(|i| y.row(i).iter().copied().collect())
                .collect(),
        }
    }
}
