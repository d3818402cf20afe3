//! Dependent Gaussian-multiplier bootstrap for the sup-norm statistic.
//!
//! Replicate `k` draws `(l-1)`-dependent weights `w_1..w_N` with
//! `Cov(w_i, w_j) = max(0, 1 - |i-j|/l)`, forms the bootstrap process
//! `B = (1/N) sum_n w_n (X~_n X~_n^T - C_N)` and evaluates
//! `||B - ((C^x + B)^x - C^x)||`, which equals `||P - P^x||` for
//! `P = C^x + B`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{FunctionalSample, LazyCovariance, WeightedOuterSum};
use crate::error::{Error, Result};
use crate::kernel::{check_budget, KernelSource, KernelSum, DEFAULT_MEMORY_BUDGET};
use crate::separable::{
    approx_product, approx_spca, approx_trace, approximate, ApproxChoice, ApproxKind,
    SeparableKernel,
};
use crate::statistic::{
    sup_deviation, sup_deviation_between, DeviationResult, SearchRegion, DEFAULT_BLOCK_SIZE,
};

/// RNG stream used for multiplier weights.
pub const WEIGHT_STREAM: u64 = 1;

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

fn default_memory_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates `r`.
    pub replicates: usize,
    /// Multiplier dependence length `l`.
    pub block_length: usize,
    pub alpha: f64,
    pub seed: u64,
    pub approx: ApproxChoice,
    /// Tile edge used by sup-norm searches.
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    /// Largest dense `(S*T)^2` matrix the dense code paths may allocate.
    #[serde(default = "default_memory_budget")]
    pub memory_budget: u64,
}

impl BootstrapConfig {
    /// The standard defaults: `r = 400`, `alpha = 0.05` and the block
    /// length from [`default_block_length`].
    pub fn new(n: usize, approx: ApproxChoice, seed: u64) -> Self {
        Self {
            replicates: 400,
            block_length: default_block_length(n),
            alpha: 0.05,
            seed,
            approx,
            block_size: DEFAULT_BLOCK_SIZE,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::domain(
                "at least one bootstrap replicate is required",
            ));
        }
        if self.block_length == 0 {
            return Err(Error::domain("block length must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!(
                "alpha {} is not in (0, 1)",
                self.alpha
            )));
        }
        if self.block_size == 0 {
            return Err(Error::domain("block size must be positive"));
        }
        Ok(())
    }
}

/// Block length for sample size `n`: 2, 2, 3, 4 for `n` = 50, 100, 150, 200
/// and the heuristic `max(1, ceil(n^(1/4)))` otherwise.
pub fn default_block_length(n: usize) -> usize {
    match n {
        50 | 100 => 2,
        150 => 3,
        200 => 4,
        _ => ((n as f64).powf(0.25).ceil() as usize).max(1),
    }
}

/// The multipliers `w_1..w_N` of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierWeights {
    pub values: Vec<f64>,
}

impl MultiplierWeights {
    /// `(w_n - mean(w)) / N`, the coefficients of the bootstrap process
    /// as a weighted outer-product sum over centered observations.
    pub fn process_coefficients(&self) -> Vec<f64> {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|w| (w - mean) / n).collect()
    }
}

/// `w_i = l^{-1/2} sum_{m<l} xi_{i+m}` with `xi` i.i.d. standard normal.
pub fn gen_weights<R: Rng + ?Sized>(n: usize, l: usize, rng: &mut R) -> Result<MultiplierWeights> {
    if l == 0 || l > n {
        return Err(Error::domain(format!(
            "block length {l} must lie in 1..={n}"
        )));
    }
    let xi: Vec<f64> = (0..n + l - 1).map(|_| rng.sample(StandardNormal)).collect();
    let scale = 1.0 / (l as f64).sqrt();
    let values = xi
        .windows(l)
        .map(|w| w.iter().sum::<f64>() * scale)
        .collect();
    Ok(MultiplierWeights { values })
}

/// The RNG stream for replicate `k`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k);
    rng.set_stream(WEIGHT_STREAM);
    rng
}

/// The bootstrap process `B` as a lazily evaluated kernel.
pub fn bootstrap_process<'a>(
    cov: &'a LazyCovariance,
    weights: &MultiplierWeights,
) -> Result<WeightedOuterSum<'a>> {
    if weights.values.len() != cov.n() {
        return Err(Error::domain(format!(
            "{} weights for {} observations",
            weights.values.len(),
            cov.n()
        )));
    }
    cov.reweighted(weights.process_coefficients())
}

/// Values of `B` on arbitrary lists of flat grid indices.
pub fn bootstrap_process_block(
    cov: &LazyCovariance,
    weights: &MultiplierWeights,
    rows: &[usize],
    cols: &[usize],
) -> Result<DMatrix<f64>> {
    let d = cov.grid().len();
    if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= d) {
        return Err(Error::domain(format!(
            "index {bad} out of range for {d} grid points"
        )));
    }
    let b = bootstrap_process(cov, weights)?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        b.block(rows[r]..rows[r] + 1, cols[c]..cols[c] + 1)[(0, 0)]
    }))
}

/// `||B - ((C^x + B)^x - C^x)||` for one set of weights.
///
/// The trace map runs on streamed marginals. Product and SPCA maps work
/// on the materialized perturbed kernel; product falls back to streaming
/// when the dense matrix exceeds `memory_budget`.
pub fn bootstrap_statistic(
    cov: &LazyCovariance,
    sep: &SeparableKernel,
    weights: &MultiplierWeights,
    kind: &ApproxKind,
    block_size: usize,
    memory_budget: u64,
) -> Result<f64> {
    let b = bootstrap_process(cov, weights)?;
    let p = KernelSum::new(sep, &b)?;
    let region = SearchRegion::UpperTriangle;
    let dense_fits = check_budget(p.grid().len(), memory_budget).is_ok();
    match kind {
        ApproxKind::Trace => {
            let px = approx_trace(&p)?;
            Ok(sup_deviation_between(&p, &px, block_size, region)?.0)
        }
        ApproxKind::Product(psi) if dense_fits => {
            let dense = p.materialize(memory_budget)?;
            let px = approx_product(&dense, psi)?;
            Ok(sup_deviation_between(&dense, &px, block_size, region)?.0)
        }
        ApproxKind::Product(psi) => {
            let px = approx_product(&p, psi)?;
            Ok(sup_deviation_between(&p, &px, block_size, region)?.0)
        }
        ApproxKind::Spca => {
            let dense = p.materialize(memory_budget)?;
            let (px, _) = approx_spca(&dense, memory_budget)?;
            Ok(sup_deviation_between(&dense, &px, block_size, region)?.0)
        }
    }
}

/// Outcome of one bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: DeviationResult,
    /// Unscaled bootstrap statistics in replicate order.
    pub boot_values: Vec<f64>,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Replicates whose first weight draw gave a degenerate perturbed kernel.
    pub regenerated_replicates: Vec<usize>,
    pub n_observations: usize,
    pub n_space: usize,
    pub n_time: usize,
    pub config: BootstrapConfig,
    pub elapsed_seconds: f64,
}

impl TestReport {
    /// The empirical `(1 - alpha)` quantile of the stored bootstrap values.
    pub fn quantile_at(&self, alpha: f64) -> f64 {
        let mut sorted = self.boot_values.clone();
        sorted.sort_by(f64::total_cmp);
        empirical_quantile(&sorted, alpha)
    }

    pub fn reject_at(&self, alpha: f64) -> bool {
        self.statistic.sup_dev > self.quantile_at(alpha)
    }
}

/// Order statistic `ceil((1 - alpha) r)` (1-based) of ascending values.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let r = sorted.len();
    assert!(r > 0, "quantile of an empty vector");
    let rank = ((1.0 - alpha) * r as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, r) - 1]
}

/// `(1 + #{k : boot_k >= stat}) / (r + 1)`.
pub fn p_value(boot_values: &[f64], statistic: f64) -> f64 {
    let count = boot_values.iter().filter(|&&b| b >= statistic).count();
    (1 + count) as f64 / (boot_values.len() + 1) as f64
}

/// Runs the full test on `sample`.
pub fn run_test(sample: &FunctionalSample, config: &BootstrapConfig) -> Result<TestReport> {
    let start = Instant::now();
    config.validate()?;
    let n = sample.len();
    if n < 2 || n < config.block_length {
        return Err(Error::domain(format!(
            "need N >= max(2, l) observations, got N = {n}, l = {}",
            config.block_length
        )));
    }
    let cov = LazyCovariance::new(sample)?;
    let kind = config.approx.build(cov.grid());
    let sep = approximate(&cov, &kind, config.memory_budget)?;
    let statistic = sup_deviation(&cov, &sep, config.block_size)?;

    let replicate = |k: usize| -> Result<(f64, bool)> {
        let mut rng = replicate_rng(config.seed, k as u64);
        let eval = |w: &MultiplierWeights| {
            bootstrap_statistic(
                &cov,
                &sep,
                w,
                &kind,
                config.block_size,
                config.memory_budget,
            )
        };
        let first = gen_weights(n, config.block_length, &mut rng)?;
        match eval(&first) {
            Ok(v) => Ok((v, false)),
            Err(e) if e.is_degeneracy() => {
                let retry = gen_weights(n, config.block_length, &mut rng)?;
                eval(&retry)
                    .map(|v| (v, true))
                    .map_err(|source| Error::Replicate {
                        replicate: k,
                        source: Box::new(source),
                    })
            }
            Err(source) => Err(Error::Replicate {
                replicate: k,
                source: Box::new(source),
            }),
        }
    };
    let results: Vec<Result<(f64, bool)>> = (0..config.replicates)
        .into_par_iter()
        .map(replicate)
        .collect();

    let mut boot_values = Vec::with_capacity(config.replicates);
    let mut regenerated_replicates = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        let (v, regenerated) = r?;
        boot_values.push(v);
        if regenerated {
            regenerated_replicates.push(k);
        }
    }

    let mut sorted = boot_values.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = empirical_quantile(&sorted, config.alpha);
    let p_value = p_value(&boot_values, statistic.sup_dev);
    Ok(TestReport {
        reject: statistic.sup_dev > quantile,
        statistic,
        boot_values,
        quantile,
        p_value,
        regenerated_replicates,
        n_observations: n,
        n_space: sample.grid().n_space(),
        n_time: sample.grid().n_time(),
        config: config.clone(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
