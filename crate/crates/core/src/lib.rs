//! Sup-norm separability testing for space-time covariance kernels.
//!
//! Functional observations `X_n(s, t)` are stored on a product grid. The
//! empirical covariance is compared with a separable approximation built
//! from its marginals, and a dependent multiplier bootstrap calibrates the
//! resulting sup-norm statistic.

pub mod bootstrap;
pub mod covariance;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod numerics;
pub mod separable;
pub mod simulate;
pub mod statistic;

pub use bootstrap::{run_test, BootstrapConfig, MultiplierWeights, TestReport};
pub use covariance::{DenseCovariance, FunctionalSample, LazyCovariance, WeightedOuterSum};
pub use error::{Error, Result};
pub use grid::{AxisGrid, GridFunction, MarginalKernel, ProductGrid};
pub use io::{read_sample, write_sample, RunConfig, SampleFormat};
pub use kernel::{KernelSource, KernelSum, DEFAULT_MEMORY_BUDGET};
pub use separable::{
    approximate, ApproxChoice, ApproxKind, PsiChoice, SeparableKernel, SpcaDiagnostics,
};
pub use simulate::{
    run_experiment, ExperimentResult, Ma1Sites, SimConfig, SimKernelParams, Simulator,
};
pub use statistic::{relative_measure, sup_deviation, DeviationResult, RelativeMeasure};
