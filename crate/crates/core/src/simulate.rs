//! Synthetic space-time data and the Monte-Carlo rejection-rate harness.
//!
//! Innovations `e_0..e_N` are Gaussian surfaces with covariance
//! `C(s,t,s',t') = (a|t-t'|+1)^{-1/2} exp(-b^2 |s-s'|^2 / (a|t-t'|+1)^c)`,
//! which is separable exactly when `c = 0`. Observations follow the
//! functional MA(1) recursion
//! `X_n(s,t) = sum_{s'} exp(-b^2 (s-s')^2) [e_n(t,s') + e_{n-1}(t,s')]`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_test, BootstrapConfig};
use crate::covariance::{DenseCovariance, FunctionalSample};
use crate::error::{Error, Result};
use crate::grid::{AxisGrid, GridFunction, ProductGrid};
use crate::kernel::KernelSource;
use crate::numerics::{psd_factor, SymmetricMatrix};

/// Parameters of the innovation kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimKernelParams {
    /// Temporal decay.
    pub a: f64,
    /// Spatial scale.
    pub b: f64,
    /// Separability-breaking exponent; `0` gives a separable kernel.
    pub c: f64,
}

impl SimKernelParams {
    /// `a = 3`, `b = 2` and the given `c`.
    pub fn with_c(c: f64) -> Self {
        Self { a: 3.0, b: 2.0, c }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::domain(format!("a = {} must be positive", self.a)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::domain(format!("b = {} must be positive", self.b)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::domain(format!(
                "c = {} must be non-negative",
                self.c
            )));
        }
        Ok(())
    }

    /// `C` at spatial lag `ds` and temporal lag `dt`.
    pub fn kernel(&self, ds: f64, dt: f64) -> f64 {
        let tau = self.a * dt.abs() + 1.0;
        tau.powf(-0.5) * (-self.b * self.b * ds * ds / tau.powf(self.c)).exp()
    }
}

impl Default for SimKernelParams {
    fn default() -> Self {
        Self::with_c(0.0)
    }
}

/// The observation grid: temporal points `1/T..T/T`, spatial points
/// `1/S..(S-1)/S` with `paper_grid` and `1/S..S/S` otherwise.
pub fn sim_grid(n_space: usize, n_time: usize, paper_grid: bool) -> Result<ProductGrid> {
    if n_space < 2 || n_time < 2 {
        return Err(Error::domain(format!(
            "simulation grids need S >= 2 and T >= 2, got S = {n_space}, T = {n_time}"
        )));
    }
    let count = if paper_grid { n_space - 1 } else { n_space };
    Ok(ProductGrid::new(
        AxisGrid::fractional(count, n_space)?,
        AxisGrid::fractional(n_time, n_time)?,
    ))
}

/// The innovation covariance over all pairs of grid points.
pub fn build_sim_cov(params: &SimKernelParams, grid: &ProductGrid) -> Result<DenseCovariance> {
    params.validate()?;
    let sp = grid.spatial.points();
    let tp = grid.temporal.points();
    if sp.iter().chain(tp).any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::domain("simulation grid points must lie in [0, 1]"));
    }
    DenseCovariance::from_fn(grid.clone(), |i, j| {
        let (s, t) = grid.split(i);
        let (s2, t2) = grid.split(j);
        params.kernel(sp[s] - sp[s2], tp[t] - tp[t2])
    })
}

/// Draws Gaussian surfaces `L z` with `L L^T = cov`.
#[derive(Debug, Clone)]
pub struct InnovationSampler {
    grid: ProductGrid,
    factor: DMatrix<f64>,
}

impl InnovationSampler {
    pub fn new(cov: &DenseCovariance) -> Result<Self> {
        let grid = cov.grid().clone();
        let factor = psd_factor(&SymmetricMatrix::new(cov.matrix().clone())?)?;
        Ok(Self { grid, factor })
    }

    pub fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    /// `count` draws as the columns of a `(S*T) x count` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.grid.len();
        let z = DMatrix::from_fn(d, count, |_, _| rng.sample(StandardNormal));
        &self.factor * z
    }
}

/// `count` independent innovation surfaces with covariance `cov`.
pub fn sample_innovations<R: Rng + ?Sized>(
    cov: &DenseCovariance,
    count: usize,
    rng: &mut R,
) -> Result<Vec<GridFunction>> {
    let sampler = InnovationSampler::new(cov)?;
    let draws = sampler.sample(count, rng);
    draws
        .column_iter()
        .map(|col| GridFunction::new(cov.grid().clone(), col.iter().copied().collect()))
        .collect()
}

/// How the spatial arguments of the MA(1) smoothing weight
/// `exp(-b^2 (s - s')^2)` are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ma1Sites {
    /// `s` and `s'` are lattice indices `1..=S`: weight `exp(-b^2 (i - j)^2)`.
    #[default]
    Index,
    /// `s` and `s'` are grid coordinates in `[0, 1]`.
    Coordinate,
    /// `s` is a grid coordinate and `s'` an integer `1..=S`.
    Integer,
}

impl Ma1Sites {
    pub fn name(&self) -> &'static str {
        match self {
            Ma1Sites::Index => "index",
            Ma1Sites::Coordinate => "coordinate",
            Ma1Sites::Integer => "integer",
        }
    }
}

impl std::str::FromStr for Ma1Sites {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "index" => Ok(Ma1Sites::Index),
            "coordinate" => Ok(Ma1Sites::Coordinate),
            "integer" => Ok(Ma1Sites::Integer),
            other => Err(Error::domain(format!(
                "unknown MA(1) site reading '{other}' (expected index, coordinate or integer)"
            ))),
        }
    }
}

/// The `S x S` matrix of MA(1) smoothing weights.
fn ma1_weights(spatial: &AxisGrid, b: f64, sites: Ma1Sites) -> DMatrix<f64> {
    let x = spatial.points();
    let n = x.len();
    DMatrix::from_fn(n, n, |s, s2| {
        let (u, y) = match sites {
            Ma1Sites::Index => (s as f64, s2 as f64),
            Ma1Sites::Coordinate => (x[s], x[s2]),
            Ma1Sites::Integer => (x[s], (s2 + 1) as f64),
        };
        (-b * b * (u - y).powi(2)).exp()
    })
}

/// Applies the MA(1) recursion to innovations stored as the columns of `e`.
fn ma1_matrix(grid: &ProductGrid, e: &DMatrix<f64>, weights: &DMatrix<f64>) -> DMatrix<f64> {
    let (ns, nt) = (grid.n_space(), grid.n_time());
    let n = e.ncols() - 1;
    let wt = weights.transpose();
    let mut x = DMatrix::zeros(ns * nt, n);
    for k in 0..n {
        let sum = e.column(k + 1) + e.column(k);
        let sum = DMatrix::from_column_slice(nt, ns, sum.as_slice());
        let xk = sum * &wt;
        x.column_mut(k).copy_from_slice(xk.as_slice());
    }
    x
}

/// `X_1..X_N` from innovations `e_0..e_N`.
pub fn ma1_process(
    innovations: &[GridFunction],
    params: &SimKernelParams,
    sites: Ma1Sites,
) -> Result<FunctionalSample> {
    if innovations.len() < 2 {
        return Err(Error::domain(
            "the MA(1) recursion needs at least two innovations",
        ));
    }
    let grid = innovations[0].grid().clone();
    if innovations.iter().any(|e| !e.grid().same_shape(&grid)) {
        return Err(Error::domain("innovations live on different grids"));
    }
    let e = DMatrix::from_fn(grid.len(), innovations.len(), |i, k| {
        innovations[k].values()[i]
    });
    let w = ma1_weights(&grid.spatial, params.b, sites);
    FunctionalSample::from_matrix(grid.clone(), ma1_matrix(&grid, &e, &w))
}

fn default_true() -> bool {
    true
}

/// One Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub params: SimKernelParams,
    /// Spatial resolution `S`.
    pub n_space: usize,
    /// Temporal resolution `T`.
    pub n_time: usize,
    /// Sample size `N`.
    pub n: usize,
    pub runs: usize,
    pub bootstrap: BootstrapConfig,
    pub seed: u64,
    /// Use the `S - 1` interior spatial points `1/S..(S-1)/S`.
    #[serde(default = "default_true")]
    pub paper_grid: bool,
    /// Reading of the spatial arguments in the MA(1) weights.
    #[serde(default)]
    pub sites: Ma1Sites,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        sim_grid(self.n_space, self.n_time, self.paper_grid)?;
        if self.n < 2 {
            return Err(Error::domain(format!("N = {} must be at least 2", self.n)));
        }
        if self.runs == 0 {
            return Err(Error::domain("at least one simulation run is required"));
        }
        self.bootstrap.validate()?;
        if self.bootstrap.block_length > self.n {
            return Err(Error::domain(format!(
                "block length {} exceeds N = {}",
                self.bootstrap.block_length, self.n
            )));
        }
        Ok(())
    }
}

/// Generates MA(1) samples for fixed kernel parameters and grid.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: SimKernelParams,
    sampler: InnovationSampler,
    weights: DMatrix<f64>,
}

impl Simulator {
    pub fn new(
        params: SimKernelParams,
        n_space: usize,
        n_time: usize,
        paper_grid: bool,
        sites: Ma1Sites,
    ) -> Result<Self> {
        let grid = sim_grid(n_space, n_time, paper_grid)?;
        let cov = build_sim_cov(&params, &grid)?;
        let sampler = InnovationSampler::new(&cov)?;
        let weights = ma1_weights(&grid.spatial, params.b, sites);
        Ok(Self {
            params,
            sampler,
            weights,
        })
    }

    pub fn params(&self) -> &SimKernelParams {
        &self.params
    }

    pub fn grid(&self) -> &ProductGrid {
        self.sampler.grid()
    }

    /// `n` consecutive observations of the MA(1) series.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<FunctionalSample> {
        if n == 0 {
            return Err(Error::domain("cannot simulate an empty sample"));
        }
        let e = self.sampler.sample(n + 1, rng);
        FunctionalSample::from_matrix(
            self.grid().clone(),
            ma1_matrix(self.grid(), &e, &self.weights),
        )
    }

    /// The sample generated by [`run_experiment`] for `seed`.
    pub fn sample_seeded(&self, n: usize, seed: u64) -> Result<FunctionalSample> {
        self.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// The seed of Monte-Carlo run `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Mean of `decisions`.
    pub rejection_rate: f64,
    /// Decisions of the successful runs, in run order.
    pub decisions: Vec<bool>,
    pub p_values: Vec<f64>,
    pub statistics: Vec<f64>,
    pub failures: Vec<RunFailure>,
    pub wall_time_seconds: f64,
    pub config: SimConfig,
}

/// Runs `config.runs` independent replications of sample generation and
/// testing. Run `i` uses the seed `derive_seed(config.seed, i)` for both
/// its data and its bootstrap weights.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    config.validate()?;
    let sim = Simulator::new(
        config.params,
        config.n_space,
        config.n_time,
        config.paper_grid,
        config.sites,
    )?;
    let outcomes: Vec<Result<(bool, f64, f64)>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(config.seed, run as u64);
            let sample = sim.sample_seeded(config.n, seed)?;
            let boot = BootstrapConfig {
                seed,
                ..config.bootstrap.clone()
            };
            let report = run_test(&sample, &boot)?;
            Ok((report.reject, report.p_value, report.statistic.sup_dev))
        })
        .collect();

    let mut decisions = Vec::with_capacity(config.runs);
    let mut p_values = Vec::with_capacity(config.runs);
    let mut statistics = Vec::with_capacity(config.runs);
    let mut failures = Vec::new();
    for (run, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((reject, p, stat)) => {
                decisions.push(reject);
                p_values.push(p);
                statistics.push(stat);
            }
            Err(e) => failures.push(RunFailure {
                run,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() * 100 > config.runs || decisions.is_empty() {
        return Err(Error::Experiment {
            failed: failures.len(),
            runs: config.runs,
            first: failures[0].message.clone(),
        });
    }
    let rejection_rate = decisions.iter().filter(|&&r| r).count() as f64 / decisions.len() as f64;
    Ok(ExperimentResult {
        rejection_rate,
        decisions,
        p_values,
        statistics,
        failures,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}
