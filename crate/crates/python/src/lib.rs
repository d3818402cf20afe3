//! Python bindings for the separability test.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use septest::bootstrap::{default_block_length, gen_weights};
use septest::io::{read_sample, write_sample, SampleFormat};
use septest::simulate::{run_experiment, Ma1Sites, SimConfig, SimKernelParams, Simulator};
use septest::statistic::DEFAULT_BLOCK_SIZE;
use septest::{
    approximate, AxisGrid, BootstrapConfig, FunctionalSample, LazyCovariance, MarginalKernel,
    ProductGrid, PsiChoice, SeparableKernel, TestReport, DEFAULT_MEMORY_BUDGET,
};

create_exception!(septest_py, SeptestError, PyException);

fn err(e: septest::Error) -> PyErr {
    SeptestError::new_err(e.to_string())
}

fn choice(approx: &str, psi: &str) -> PyResult<septest::ApproxChoice> {
    let psi: PsiChoice = psi.parse().map_err(err)?;
    septest::ApproxChoice::parse(approx, psi).map_err(err)
}

fn format_for(path: &std::path::Path, format: Option<&str>) -> PyResult<SampleFormat> {
    match format {
        Some(f) => f.parse().map_err(err),
        None => Ok(SampleFormat::from_path(path)),
    }
}

fn kernel_rows(k: &MarginalKernel) -> Vec<Vec<f64>> {
    (0..k.len())
        .map(|i| (0..k.len()).map(|j| k.get(i, j)).collect())
        .collect()
}

/// A sample of `N` surfaces on an `S x T` grid.
#[pyclass(name = "Sample", module = "septest_py")]
struct PySample {
    inner: FunctionalSample,
}

#[pymethods]
impl PySample {
    /// `observations[n][s * T + t]` is observation `n` at grid point `(s, t)`.
    #[new]
    fn new(spatial: Vec<f64>, temporal: Vec<f64>, observations: Vec<Vec<f64>>) -> PyResult<Self> {
        let grid = ProductGrid::new(
            AxisGrid::new(spatial).map_err(err)?,
            AxisGrid::new(temporal).map_err(err)?,
        );
        let inner = FunctionalSample::new(grid, observations).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn read(path: PathBuf, format: Option<&str>) -> PyResult<Self> {
        let fmt = format_for(&path, format)?;
        Ok(Self {
            inner: read_sample(&path, fmt).map_err(err)?,
        })
    }

    #[pyo3(signature = (path, format=None))]
    fn write(&self, path: PathBuf, format: Option<&str>) -> PyResult<()> {
        let fmt = format_for(&path, format)?;
        write_sample(&path, &self.inner, fmt).map_err(err)
    }

    #[getter]
    fn n_space(&self) -> usize {
        self.inner.grid().n_space()
    }

    #[getter]
    fn n_time(&self) -> usize {
        self.inner.grid().n_time()
    }

    #[getter]
    fn spatial(&self) -> Vec<f64> {
        self.inner.grid().spatial.points().to_vec()
    }

    #[getter]
    fn temporal(&self) -> Vec<f64> {
        self.inner.grid().temporal.points().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn observation(&self, n: usize) -> PyResult<Vec<f64>> {
        if n >= self.inner.len() {
            return Err(PyIndexError::new_err(format!(
                "observation {n} out of range"
            )));
        }
        Ok(self.inner.observation(n).to_vec())
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len())
            .map(|n| self.inner.observation(n).to_vec())
            .collect()
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            inner: self.inner.scaled(c),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(S={}, T={}, N={})",
            self.n_space(),
            self.n_time(),
            self.inner.len()
        )
    }
}

/// `factor1(s, s') * factor2(t, t') / normalizer`.
#[pyclass(name = "SeparableKernel", module = "septest_py")]
struct PySeparable {
    inner: SeparableKernel,
}

#[pymethods]
impl PySeparable {
    #[getter]
    fn factor1(&self) -> Vec<Vec<f64>> {
        kernel_rows(self.inner.factor1())
    }

    #[getter]
    fn factor2(&self) -> Vec<Vec<f64>> {
        kernel_rows(self.inner.factor2())
    }

    #[getter]
    fn normalizer(&self) -> f64 {
        self.inner.normalizer()
    }

    fn eval(&self, s: usize, t: usize, s2: usize, t2: usize) -> PyResult<f64> {
        let (ns, nt) = (self.inner.factor1().len(), self.inner.factor2().len());
        if s >= ns || s2 >= ns || t >= nt || t2 >= nt {
            return Err(PyIndexError::new_err("grid index out of range"));
        }
        Ok(self.inner.eval(s, t, s2, t2))
    }
}

#[pyclass(name = "TestReport", module = "septest_py")]
struct PyReport {
    inner: TestReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn statistic(&self) -> f64 {
        self.inner.statistic.sup_dev
    }

    #[getter]
    fn scaled_statistic(&self) -> f64 {
        self.inner.statistic.scaled
    }

    #[getter]
    fn argmax(&self) -> [usize; 4] {
        self.inner.statistic.argmax
    }

    #[getter]
    fn boot_values(&self) -> Vec<f64> {
        self.inner.boot_values.clone()
    }

    #[getter]
    fn quantile(&self) -> f64 {
        self.inner.quantile
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn reject(&self) -> bool {
        self.inner.reject
    }

    #[getter]
    fn regenerated_replicates(&self) -> Vec<usize> {
        self.inner.regenerated_replicates.clone()
    }

    fn reject_at(&self, alpha: f64) -> bool {
        self.inner.reject_at(alpha)
    }

    fn to_json(&self) -> PyResult<String> {
        septest::io::report_to_json(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "TestReport(statistic={:.6e}, quantile={:.6e}, p_value={:.4}, reject={})",
            self.inner.statistic.sup_dev,
            self.inner.quantile,
            self.inner.p_value,
            self.inner.reject
        )
    }
}

/// The separable approximation of the empirical covariance.
#[pyfunction]
#[pyo3(signature = (sample, approx="trace", psi="const"))]
fn separable_approximation(sample: &PySample, approx: &str, psi: &str) -> PyResult<PySeparable> {
    let cov = LazyCovariance::new(&sample.inner).map_err(err)?;
    let kind = choice(approx, psi)?.build(cov.grid());
    let inner = approximate(&cov, &kind, DEFAULT_MEMORY_BUDGET).map_err(err)?;
    Ok(PySeparable { inner })
}

/// `||C_N - C_N^x||` and the grid indices `(s, t, s', t')` where it is attained.
#[pyfunction]
#[pyo3(signature = (sample, approx="trace", psi="const"))]
fn sup_deviation(sample: &PySample, approx: &str, psi: &str) -> PyResult<(f64, [usize; 4])> {
    let cov = LazyCovariance::new(&sample.inner).map_err(err)?;
    let kind = choice(approx, psi)?.build(cov.grid());
    let sep = approximate(&cov, &kind, DEFAULT_MEMORY_BUDGET).map_err(err)?;
    let dev = septest::sup_deviation(&cov, &sep, DEFAULT_BLOCK_SIZE).map_err(err)?;
    Ok((dev.sup_dev, dev.argmax))
}

#[pyfunction]
#[pyo3(signature = (sample, approx="trace", psi="const"))]
fn relative_measure(sample: &PySample, approx: &str, psi: &str) -> PyResult<f64> {
    let cov = LazyCovariance::new(&sample.inner).map_err(err)?;
    let kind = choice(approx, psi)?.build(cov.grid());
    septest::relative_measure(&cov, &kind, DEFAULT_BLOCK_SIZE, DEFAULT_MEMORY_BUDGET)
        .map(|r| r.value)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (sample, approx="trace", psi="const", replicates=400, block_length=None, alpha=0.05, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_test(
    py: Python<'_>,
    sample: &PySample,
    approx: &str,
    psi: &str,
    replicates: usize,
    block_length: Option<usize>,
    alpha: f64,
    seed: u64,
) -> PyResult<PyReport> {
    let n = sample.inner.len();
    let config = BootstrapConfig {
        replicates,
        block_length: block_length.unwrap_or_else(|| default_block_length(n)),
        alpha,
        seed,
        ..BootstrapConfig::new(n, choice(approx, psi)?, seed)
    };
    let inner = py
        .detach(|| septest::run_test(&sample.inner, &config))
        .map_err(err)?;
    Ok(PyReport { inner })
}

/// A sample from the MA(1) space-time model.
#[pyfunction]
#[pyo3(signature = (n_space, n_time, n, a=3.0, b=2.0, c=0.0, seed=0, paper_grid=false, sites="index"))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    n_space: usize,
    n_time: usize,
    n: usize,
    a: f64,
    b: f64,
    c: f64,
    seed: u64,
    paper_grid: bool,
    sites: &str,
) -> PyResult<PySample> {
    let sim = Simulator::new(
        SimKernelParams { a, b, c },
        n_space,
        n_time,
        paper_grid,
        sites.parse::<Ma1Sites>().map_err(err)?,
    )
    .map_err(err)?;
    Ok(PySample {
        inner: sim.sample_seeded(n, seed).map_err(err)?,
    })
}

/// Monte-Carlo rejection rate for one `(S, N, c)` setting.
#[pyfunction]
#[pyo3(signature = (n_space, n, c, n_time=50, runs=100, replicates=400, block_length=None, alpha=0.05, seed=0, approx="trace", psi="const", paper_grid=true, sites="index"))]
#[allow(clippy::too_many_arguments)]
fn experiment<'py>(
    py: Python<'py>,
    n_space: usize,
    n: usize,
    c: f64,
    n_time: usize,
    runs: usize,
    replicates: usize,
    block_length: Option<usize>,
    alpha: f64,
    seed: u64,
    approx: &str,
    psi: &str,
    paper_grid: bool,
    sites: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mut bootstrap = BootstrapConfig::new(n, choice(approx, psi)?, seed);
    bootstrap.replicates = replicates;
    bootstrap.alpha = alpha;
    if let Some(l) = block_length {
        bootstrap.block_length = l;
    }
    let config = SimConfig {
        params: SimKernelParams::with_c(c),
        n_space,
        n_time,
        n,
        runs,
        bootstrap,
        seed,
        paper_grid,
        sites: sites.parse().map_err(err)?,
    };
    let result = py.detach(|| run_experiment(&config)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("rejection_rate", result.rejection_rate)?;
    out.set_item("decisions", result.decisions)?;
    out.set_item("p_values", result.p_values)?;
    out.set_item("failures", result.failures.len())?;
    out.set_item("wall_time_seconds", result.wall_time_seconds)?;
    Ok(out)
}

/// One draw of the `(l-1)`-dependent Gaussian multipliers.
#[pyfunction]
fn multiplier_weights(n: usize, l: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_weights(n, l, &mut rng).map(|w| w.values).map_err(err)
}

#[pyfunction(name = "default_block_length")]
fn py_default_block_length(n: usize) -> usize {
    default_block_length(n)
}

#[pymodule]
fn septest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SeptestError", m.py().get_type::<SeptestError>())?;
    m.add_class::<PySample>()?;
    m.add_class::<PySeparable>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(separable_approximation, m)?)?;
    m.add_function(wrap_pyfunction!(sup_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(relative_measure, m)?)?;
    m.add_function(wrap_pyfunction!(run_test, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    m.add_function(wrap_pyfunction!(multiplier_weights, m)?)?;
    m.add_function(wrap_pyfunction!(py_default_block_length, m)?)?;
    Ok(())
}
