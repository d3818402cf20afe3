//! Discretized domains, quadrature and sup-norms.
//!
//! Both domains are one-dimensional intervals represented by a strictly
//! increasing list of points with trapezoid weights. A function on the
//! space-time domain is stored row-major as an `S x T` array, so the flat
//! index of `(s, t)` is `s * T + t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trapezoid-rule weights for a strictly increasing list of points.
///
/// A single point gets weight 1; otherwise the weights sum to the length of
/// the interval spanned by the points.
pub fn riemann_weights(points: &[f64]) -> Result<Vec<f64>> {
    check_points(points)?;
    let n = points.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut weights = vec![0.0; n];
    for i in 0..n - 1 {
        let half = 0.5 * (points[i + 1] - points[i]);
        weights[i] += half;
        weights[i + 1] += half;
    }
    Ok(weights)
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::domain("a grid needs at least one point"));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::domain(format!("non-finite grid point {p}")));
    }
    if let Some(i) = (1..points.len()).find(|&i| points[i] <= points[i - 1]) {
        return Err(Error::domain(format!(
            "grid points must be strictly increasing (points[{}] = {} <= points[{}] = {})",
            i,
            points[i],
            i - 1,
            points[i - 1]
        )));
    }
    Ok(())
}

/// Maximum absolute entry of a gridded array.
pub fn sup_norm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("sup-norm of an empty array"));
    }
    let mut max = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::domain("sup-norm of a non-finite array"));
        }
        max = max.max(v.abs());
    }
    Ok(max)
}

/// `sum_i w_i f_i` over one axis.
pub fn integrate_1d(values: &[f64], axis: &AxisGrid) -> Result<f64> {
    if values.len() != axis.len() {
        return Err(Error::domain(format!(
            "integrand has {} values, axis has {} points",
            values.len(),
            axis.len()
        )));
    }
    Ok(values.iter().zip(&axis.weights).map(|(f, w)| f * w).sum())
}

/// `sum_ij w_i w'_j f_ij` for a row-major `a.len() x b.len()` array.
pub fn integrate_2d(values: &[f64], a: &AxisGrid, b: &AxisGrid) -> Result<f64> {
    if values.len() != a.len() * b.len() {
        return Err(Error::domain(format!(
            "integrand has {} values, grid has {} x {} points",
            values.len(),
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for (i, row) in values.chunks_exact(b.len()).enumerate() {
        let inner: f64 = row.iter().zip(&b.weights).map(|(f, w)| f * w).sum();
        total += a.weights[i] * inner;
    }
    Ok(total)
}

/// One discretized axis: points plus quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AxisGrid {
    /// Axis with trapezoid weights.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let weights = riemann_weights(&points)?;
        Ok(Self { points, weights })
    }

    /// Axis with caller-supplied positive weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::domain(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::domain(
                "quadrature weights must be finite and positive",
            ));
        }
        Ok(Self { points, weights })
    }

    /// Points `1/n, 2/n, ..., count/n`.
    pub fn fractional(count: usize, n: usize) -> Result<Self> {
        if count == 0 || n == 0 {
            return Err(Error::domain("fractional grid needs count >= 1 and n >= 1"));
        }
        Self::new((1..=count).map(|i| i as f64 / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total quadrature mass `|K|`.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The space-time grid `K1 x K2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductGrid {
    pub spatial: AxisGrid,
    pub temporal: AxisGrid,
}

impl ProductGrid {
    pub fn new(spatial: AxisGrid, temporal: AxisGrid) -> Self {
        Self { spatial, temporal }
    }

    /// Number of spatial points `S`.
    pub fn n_space(&self) -> usize {
        self.spatial.len()
    }

    /// Number of temporal points `T`.
    pub fn n_time(&self) -> usize {
        self.temporal.len()
    }

    /// Total number of grid points `S * T`.
    pub fn len(&self) -> usize {
        self.n_space() * self.n_time()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, s: usize, t: usize) -> usize {
        s * self.n_time() + t
    }

    #[inline]
    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.n_time(), i % self.n_time())
    }

    /// Quadrature weight of every flat grid index.
    pub fn point_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for ws in self.spatial.weights() {
            for wt in self.temporal.weights() {
                w.push(ws * wt);
            }
        }
        w
    }

    pub(crate) fn same_shape(&self, other: &ProductGrid) -> bool {
        self.n_space() == other.n_space() && self.n_time() == other.n_time()
    }
}

/// A function on the space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: ProductGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: ProductGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "{} values for a {} x {} grid",
                values.len(),
                grid.n_space(),
                grid.n_time()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid function values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[self.grid.index(s, t)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A symmetric kernel on one axis, `A_i(x, x')`.
///
/// Storage is exactly symmetric: constructors mirror the upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalKernel {
    axis: AxisGrid,
    values: DMatrix<f64>,
}

impl MarginalKernel {
    /// Builds a kernel from a matrix that must be symmetric up to rounding.
    pub fn new(axis: AxisGrid, values: DMatrix<f64>) -> Result<Self> {
        let n = axis.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::domain(format!(
                "kernel is {} x {}, axis has {} points",
                values.nrows(),
                values.ncols(),
                n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("kernel values must be finite"));
        }
        let scale = values.amax();
        for i in 0..n {
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::domain(format!(
                        "kernel is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(axis, values))
    }

    /// Averages `values` with its transpose. Used for kernels computed by
    /// contractions that are symmetric only up to rounding.
    pub(crate) fn symmetrized(axis: AxisGrid, mut values: DMatrix<f64>) -> Self {
        let n = values.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (values[(i, j)] + values[(j, i)]);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Self { axis, values }
    }

    /// `f(x, x')` evaluated on every pair of axis points.
    pub fn from_fn(axis: AxisGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let p = axis.points().to_vec();
        let n = p.len();
        let values = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            f(p[a], p[b])
        });
        Self::new(axis, values)
    }

    /// The constant-one kernel.
    pub fn constant(axis: AxisGrid) -> Self {
        let n = axis.len();
        Self {
            axis,
            values: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn zeros(axis: AxisGrid) -> Self {
        let n = axis.len();
        Self {
            axis,
            values: DMatrix::zeros(n, n),
        }
    }

    pub fn axis(&self) -> &AxisGrid {
        &self.axis
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    /// `int int k(x, x') dx dx'`.
    pub fn integral(&self) -> f64 {
        self.weighted_sum(|v| v)
    }

    /// `int int |k(x, x')| dx dx'`.
    pub fn abs_integral(&self) -> f64 {
        self.weighted_sum(f64::abs)
    }

    /// Squared L2 norm under the quadrature measure.
    pub fn l2_norm_sq(&self) -> f64 {
        self.weighted_sum(|v| v * v)
    }

    /// `int k(x, x) dx`.
    pub fn diagonal_integral(&self) -> f64 {
        let w = self.axis.weights();
        (0..self.len()).map(|i| w[i] * self.values[(i, i)]).sum()
    }

    /// The matrix `W K W` with `W` the diagonal quadrature weights, which
    /// turns double integrals against this kernel into bilinear forms.
    pub(crate) fn weighted(&self) -> DMatrix<f64> {
        let w = self.axis.weights();
        DMatrix::from_fn(self.len(), self.len(), |i, j| {
            w[i] * self.values[(i, j)] * w[j]
        })
    }

    pub(crate) fn scaled(&self, c: f64) -> Self {
        Self {
            axis: self.axis.clone(),
            values: &self.values * c,
        }
    }

    fn weighted_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        let w = self.axis.weights();
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += w[j] * f(self.values[(i, j)]);
            }
            total += w[i] * row;
        }
        total
    }
}
