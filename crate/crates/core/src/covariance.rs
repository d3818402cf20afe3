//! The empirical covariance of a functional sample.
//!
//! [`LazyCovariance`] keeps only the centered observations and evaluates
//! `C_N(i, j) = (1/N) sum_n X_n(i) X_n(j)` on demand, block by block. Every
//! marginal summary the separable approximations need (trace, partial
//! traces, partial-product contractions) is accumulated directly from the
//! data in `O(N*S*T + S^2 + T^2)` memory, so the `(S*T)^2` operator is
//! never stored unless [`LazyCovariance::materialize`] is called.
//!
//! Accumulation is observation-major and single-threaded, which makes every
//! result bit-for-bit reproducible.

use std::borrow::Cow;
use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, MarginalKernel, ProductGrid};
use crate::kernel::{check_budget, KernelSource};
use crate::numerics::{full_sym_eig, SymmetricMatrix};

/// `N` observed surfaces on a product grid.
///
/// Observations are the columns of a `(S*T) x N` matrix; each column is a
/// row-major `S x T` surface.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: ProductGrid,
    data: DMatrix<f64>,
    centered: bool,
}

impl FunctionalSample {
    pub fn new(grid: ProductGrid, observations: Vec<Vec<f64>>) -> Result<Self> {
        let d = grid.len();
        if let Some((n, o)) = observations.iter().enumerate().find(|(_, o)| o.len() != d) {
            return Err(Error::domain(format!(
                "observation {n} has {} values, grid has {d}",
                o.len()
            )));
        }
        let n = observations.len();
        let flat: Vec<f64> = observations.into_iter().flatten().collect();
        Self::from_matrix(grid, DMatrix::from_vec(d, n, flat))
    }

    /// Wraps a `(S*T) x N` matrix whose columns are observations.
    pub fn from_matrix(grid: ProductGrid, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(Error::domain(format!(
                "observations have {} values, grid has {}",
                data.nrows(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations contain non-finite values"));
        }
        Ok(Self {
            grid,
            data,
            centered: false,
        })
    }

    pub fn from_functions(functions: Vec<GridFunction>) -> Result<Self> {
        let first = functions
            .first()
            .ok_or_else(|| Error::domain("empty sample"))?;
        let grid = first.grid().clone();
        if functions.iter().any(|f| f.grid() != &grid) {
            return Err(Error::domain("observations live on different grids"));
        }
        Self::new(
            grid,
            functions
                .into_iter()
                .map(GridFunction::into_values)
                .collect(),
        )
    }

    pub fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    /// Number of observations `N`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn observation(&self, n: usize) -> &[f64] {
        let d = self.grid.len();
        &self.data.as_slice()[n * d..(n + 1) * d]
    }

    /// Every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: &self.data * c,
            centered: self.centered,
        }
    }

    /// Subtracts the sample mean surface from every observation.
    pub fn center(&self) -> Result<Self> {
        let n = self.len();
        if n == 0 {
            return Err(Error::domain("cannot center an empty sample"));
        }
        let mut data = self.data.clone();
        let d = self.grid.len();
        for i in 0..d {
            let mean = self.data.row(i).iter().sum::<f64>() / n as f64;
            for v in data.row_mut(i).iter_mut() {
                *v -= mean;
            }
        }
        Ok(Self {
            grid: self.grid.clone(),
            data,
            centered: true,
        })
    }
}

/// The kernel `sum_n c_n x_n(i) x_n(j)` for vectors `x_n` on a grid.
///
/// With `c_n = 1/N` and centered data this is the empirical covariance; the
/// bootstrap process is the same form with `c_n = (w_n - mean(w)) / N`.
#[derive(Debug, Clone)]
pub struct WeightedOuterSum<'a> {
    grid: &'a ProductGrid,
    x: &'a DMatrix<f64>,
    coefs: Cow<'a, [f64]>,
}

impl<'a> WeightedOuterSum<'a> {
    pub fn new(grid: &'a ProductGrid, x: &'a DMatrix<f64>, coefs: Cow<'a, [f64]>) -> Result<Self> {
        if x.nrows() != grid.len() {
            return Err(Error::domain("vectors do not match the grid"));
        }
        if coefs.len() != x.ncols() {
            return Err(Error::domain(format!(
                "{} coefficients for {} vectors",
                coefs.len(),
                x.ncols()
            )));
        }
        Ok(Self { grid, x, coefs })
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    /// Observation `n` as a `T x S` column-major view (column `s` holds the
    /// time series at spatial point `s`).
    fn obs(&self, n: usize) -> DMatrixView<'_, f64> {
        let (s, t) = (self.grid.n_space(), self.grid.n_time());
        let d = s * t;
        DMatrixView::from_slice(&self.x.as_slice()[n * d..(n + 1) * d], t, s)
    }

    /// All observations side by side as a `T x (S*N)` view.
    fn all_obs(&self) -> DMatrixView<'_, f64> {
        let (s, t) = (self.grid.n_space(), self.grid.n_time());
        DMatrixView::from_slice(self.x.as_slice(), t, s * self.x.ncols())
    }

    /// Gathers arbitrary rows and columns; see [`LazyCovariance::eval_cov_block`].
    fn gather_block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let d = self.grid.len();
        if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= d) {
            return Err(Error::domain(format!(
                "index {bad} out of range for {d} grid points"
            )));
        }
        let n = self.x.ncols();
        let xr = DMatrix::from_fn(rows.len(), n, |r, k| self.x[(rows[r], k)]);
        let yc = DMatrix::from_fn(cols.len(), n, |c, k| self.x[(cols[c], k)] * self.coefs[k]);
        Ok(xr * yc.transpose())
    }
}

impl KernelSource for WeightedOuterSum<'_> {
    fn grid(&self) -> &ProductGrid {
        self.grid
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        let xr = self.x.rows(rows.start, rows.len());
        let mut yc = self.x.rows(cols.start, cols.len()).into_owned();
        for (k, c) in self.coefs.iter().enumerate() {
            yc.column_mut(k).scale_mut(*c);
        }
        xr * yc.transpose()
    }

    fn trace(&self) -> f64 {
        let w = self.grid.point_weights();
        let mut total = 0.0;
        for (k, c) in self.coefs.iter().enumerate() {
            let col = self.x.column(k);
            let sq: f64 = col.iter().zip(&w).map(|(v, w)| w * v * v).sum();
            total += c * sq;
        }
        total
    }

    fn partial_trace_spatial(&self) -> MarginalKernel {
        let s = self.grid.n_space();
        let wt = self.grid.temporal.weights();
        let mut acc = DMatrix::zeros(s, s);
        for (k, c) in self.coefs.iter().enumerate() {
            let y = self.obs(k);
            let mut z = y.into_owned();
            for (mut row, w) in z.row_iter_mut().zip(wt) {
                row *= w * c;
            }
            acc += y.transpose() * z;
        }
        MarginalKernel::symmetrized(self.grid.spatial.clone(), acc)
    }

    fn partial_trace_temporal(&self) -> MarginalKernel {
        let s = self.grid.n_space();
        let ws = self.grid.spatial.weights();
        let y = self.all_obs();
        let mut z = y.into_owned();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col *= self.coefs[j / s] * ws[j % s];
        }
        MarginalKernel::symmetrized(self.grid.temporal.clone(), y * z.transpose())
    }

    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel {
        let s = self.grid.n_space();
        let psi_w = psi.weighted();
        let g_all = &psi_w * self.all_obs();
        let mut acc = DMatrix::zeros(s, s);
        for (k, c) in self.coefs.iter().enumerate() {
            let g = g_all.columns(k * s, s);
            acc += (self.obs(k).transpose() * g) * *c;
        }
        MarginalKernel::symmetrized(self.grid.spatial.clone(), acc)
    }

    fn contract_spatial(&self, kernel: &MarginalKernel) -> MarginalKernel {
        let t = self.grid.n_time();
        let kw = kernel.weighted();
        let mut acc = DMatrix::zeros(t, t);
        for (k, c) in self.coefs.iter().enumerate() {
            let y = self.obs(k);
            let h = (y * &kw) * *c;
            acc += h * y.transpose();
        }
        MarginalKernel::symmetrized(self.grid.temporal.clone(), acc)
    }

    fn magnitude_hint(&self) -> f64 {
        self.coefs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let m = self.x.column(k).amax();
                c.abs() * m * m
            })
            .sum()
    }
}

/// The empirical covariance `C_N`, evaluated lazily from centered data.
#[derive(Debug, Clone)]
pub struct LazyCovariance {
    sample: FunctionalSample,
    coefs: Vec<f64>,
}

impl LazyCovariance {
    /// Centers `sample` (unless already centered) and keeps the residuals.
    pub fn new(sample: &FunctionalSample) -> Result<Self> {
        let n = sample.len();
        if n < 2 {
            return Err(Error::domain(format!(
                "covariance estimation needs N >= 2 observations, got {n}"
            )));
        }
        let sample = if sample.is_centered() {
            sample.clone()
        } else {
            sample.center()?
        };
        Ok(Self {
            sample,
            coefs: vec![1.0 / n as f64; n],
        })
    }

    /// Number of observations `N`.
    pub fn n(&self) -> usize {
        self.sample.len()
    }

    pub fn grid(&self) -> &ProductGrid {
        self.sample.grid()
    }

    /// The centered sample `X_n - mean(X)`.
    pub fn centered(&self) -> &FunctionalSample {
        &self.sample
    }

    pub fn as_outer_sum(&self) -> WeightedOuterSum<'_> {
        WeightedOuterSum {
            grid: self.sample.grid(),
            x: self.sample.data(),
            coefs: Cow::Borrowed(&self.coefs),
        }
    }

    /// The kernel `sum_n coefs[n] X_n X_n^T` over the same centered data.
    pub fn reweighted(&self, coefs: Vec<f64>) -> Result<WeightedOuterSum<'_>> {
        WeightedOuterSum::new(self.sample.grid(), self.sample.data(), Cow::Owned(coefs))
    }

    /// `C_N` on arbitrary lists of flat grid indices.
    pub fn eval_cov_block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        self.as_outer_sum().gather_block(rows, cols)
    }

    /// `A_1^pr` and `A_2^pr` of `C_N` for the weight function `psi`.
    pub fn partial_product_marginals(
        &self,
        psi: &MarginalKernel,
    ) -> Result<(MarginalKernel, MarginalKernel)> {
        check_psi(self.grid(), psi)?;
        let a1 = self.contract_temporal(psi);
        let a2 = self.contract_spatial(&a1);
        Ok((a1, a2))
    }
}

pub(crate) fn check_psi(grid: &ProductGrid, psi: &MarginalKernel) -> Result<()> {
    if psi.len() != grid.n_time() {
        return Err(Error::domain(format!(
            "psi has {} points, the temporal axis has {}",
            psi.len(),
            grid.n_time()
        )));
    }
    Ok(())
}

impl KernelSource for LazyCovariance {
    fn grid(&self) -> &ProductGrid {
        self.sample.grid()
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        self.as_outer_sum().block(rows, cols)
    }

    fn trace(&self) -> f64 {
        self.as_outer_sum().trace()
    }

    fn partial_trace_spatial(&self) -> MarginalKernel {
        self.as_outer_sum().partial_trace_spatial()
    }

    fn partial_trace_temporal(&self) -> MarginalKernel {
        self.as_outer_sum().partial_trace_temporal()
    }

    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel {
        self.as_outer_sum().contract_temporal(psi)
    }

    fn contract_spatial(&self, k: &MarginalKernel) -> MarginalKernel {
        self.as_outer_sum().contract_spatial(k)
    }

    fn magnitude_hint(&self) -> f64 {
        self.as_outer_sum().magnitude_hint()
    }
}

/// A fully materialized symmetric kernel matrix over the flat grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCovariance {
    grid: ProductGrid,
    matrix: DMatrix<f64>,
}

impl DenseCovariance {
    /// Wraps a `(S*T) x (S*T)` matrix that is symmetric up to rounding.
    pub fn from_matrix(grid: ProductGrid, matrix: DMatrix<f64>) -> Result<Self> {
        let d = grid.len();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::domain(format!(
                "matrix is {} x {}, grid has {d} points",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let matrix = SymmetricMatrix::new(matrix)?.into_matrix();
        Ok(Self { grid, matrix })
    }

    /// Builds `A(i, j) = f(i, j)` from a function of flat indices, `i <= j`.
    pub fn from_fn(grid: ProductGrid, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let d = grid.len();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self::from_matrix(grid, m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize, s2: usize, t2: usize) -> f64 {
        self.matrix[(self.grid.index(s, t), self.grid.index(s2, t2))]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            matrix: &self.matrix * c,
        }
    }

    /// Smallest eigenvalue of the matrix (without quadrature weights).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let pairs = full_sym_eig(&SymmetricMatrix::symmetrize(self.matrix.clone()))?;
        Ok(pairs.last().map_or(0.0, |p| p.value))
    }
}

impl KernelSource for DenseCovariance {
    fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        self.matrix
            .view((rows.start, cols.start), (rows.len(), cols.len()))
            .into_owned()
    }

    fn materialize(&self, budget_bytes: u64) -> Result<DenseCovariance> {
        check_budget(self.grid.len(), budget_bytes)?;
        Ok(self.clone())
    }

    fn trace(&self) -> f64 {
        let w = self.grid.point_weights();
        (0..w.len()).map(|i| w[i] * self.matrix[(i, i)]).sum()
    }

    fn partial_trace_spatial(&self) -> MarginalKernel {
        let (ns, nt) = (self.grid.n_space(), self.grid.n_time());
        let wt = self.grid.temporal.weights();
        let m = DMatrix::from_fn(ns, ns, |s, s2| {
            (0..nt).map(|t| wt[t] * self.get(s, t, s2, t)).sum()
        });
        MarginalKernel::symmetrized(self.grid.spatial.clone(), m)
    }

    fn partial_trace_temporal(&self) -> MarginalKernel {
        let (ns, nt) = (self.grid.n_space(), self.grid.n_time());
        let ws = self.grid.spatial.weights();
        let m = DMatrix::from_fn(nt, nt, |t, t2| {
            (0..ns).map(|s| ws[s] * self.get(s, t, s, t2)).sum()
        });
        MarginalKernel::symmetrized(self.grid.temporal.clone(), m)
    }

    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel {
        let (ns, nt) = (self.grid.n_space(), self.grid.n_time());
        let pw = psi.weighted();
        let m = DMatrix::from_fn(ns, ns, |s, s2| {
            let mut acc = 0.0;
            for w in 0..nt {
                for w2 in 0..nt {
                    acc += pw[(w, w2)] * self.get(s, w, s2, w2);
                }
            }
            acc
        });
        MarginalKernel::symmetrized(self.grid.spatial.clone(), m)
    }

    fn contract_spatial(&self, k: &MarginalKernel) -> MarginalKernel {
        let (ns, nt) = (self.grid.n_space(), self.grid.n_time());
        let kw = k.weighted();
        let m = DMatrix::from_fn(nt, nt, |t, t2| {
            let mut acc = 0.0;
            for u in 0..ns {
                for u2 in 0..ns {
                    acc += kw[(u, u2)] * self.get(u, t, u2, t2);
                }
            }
            acc
        });
        MarginalKernel::symmetrized(self.grid.temporal.clone(), m)
    }

    fn magnitude_hint(&self) -> f64 {
        self.matrix.amax()
    }
}

impl LazyCovariance {
    /// Materializes `C_N`; fails with a resource error naming the required
    /// bytes when `(S*T)^2` doubles exceed `budget_bytes`.
    pub fn materialize(&self, budget_bytes: u64) -> Result<DenseCovariance> {
        KernelSource::materialize(self, budget_bytes)
    }

    pub fn trace_from_data(&self) -> f64 {
        self.trace()
    }

    pub fn partial_trace_1_from_data(&self) -> MarginalKernel {
        self.partial_trace_spatial()
    }

    pub fn partial_trace_2_from_data(&self) -> MarginalKernel {
        self.partial_trace_temporal()
    }
}
