//! Separable approximations `A -> A^x` for `x` in {trace, product, SPCA}.
//!
//! Trace and product approximations only need marginal contractions of the
//! input, so they run on any [`KernelSource`] without materializing it.
//! SPCA needs the leading eigenpair of a flip kernel and therefore works on
//! a [`DenseCovariance`].

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{check_psi, DenseCovariance};
use crate::error::{Error, Result};
use crate::grid::{AxisGrid, MarginalKernel, ProductGrid};
use crate::kernel::{check_budget, KernelSource};
use crate::numerics::{sym_eig_top2, SymmetricMatrix};

const TRACE_TOL: f64 = 1e-12;
const PRODUCT_TOL: f64 = 1e-12;
const EIGENGAP_TOL: f64 = 1e-10;

/// `A(s, t, s', t') = factor1(s, s') * factor2(t, t') / normalizer`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableKernel {
    grid: ProductGrid,
    factor1: MarginalKernel,
    factor2: MarginalKernel,
    normalizer: f64,
    // factor1 / normalizer, used for evaluation
    scaled1: DMatrix<f64>,
}

impl SeparableKernel {
    pub fn new(factor1: MarginalKernel, factor2: MarginalKernel, normalizer: f64) -> Result<Self> {
        if !(normalizer.is_finite() && normalizer != 0.0) {
            return Err(Error::degenerate(format!(
                "separable normalizer must be finite and non-zero, got {normalizer}"
            )));
        }
        let grid = ProductGrid::new(factor1.axis().clone(), factor2.axis().clone());
        let scaled1 = factor1.values() / normalizer;
        Ok(Self {
            grid,
            factor1,
            factor2,
            normalizer,
            scaled1,
        })
    }

    pub fn factor1(&self) -> &MarginalKernel {
        &self.factor1
    }

    pub fn factor2(&self) -> &MarginalKernel {
        &self.factor2
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    #[inline]
    pub fn eval(&self, s: usize, t: usize, s2: usize, t2: usize) -> f64 {
        self.scaled1[(s, s2)] * self.factor2.get(t, t2)
    }

    /// Values on arbitrary lists of flat grid indices.
    pub fn eval_separable(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let d = self.grid.len();
        if let Some(&bad) = rows.iter().chain(cols).find(|&&i| i >= d) {
            return Err(Error::domain(format!(
                "index {bad} out of range for {d} grid points"
            )));
        }
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            let (s, t) = self.grid.split(rows[r]);
            let (s2, t2) = self.grid.split(cols[c]);
            self.eval(s, t, s2, t2)
        }))
    }

    fn scaled_marginal(k: &MarginalKernel, c: f64) -> MarginalKernel {
        k.scaled(c)
    }
}

impl KernelSource for SeparableKernel {
    fn grid(&self) -> &ProductGrid {
        &self.grid
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        let nt = self.grid.n_time();
        let f2 = self.factor2.values();
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (c, j) in cols.clone().enumerate() {
            let (s2, t2) = (j / nt, j % nt);
            for (r, i) in rows.clone().enumerate() {
                let (s, t) = (i / nt, i % nt);
                out[(r, c)] = self.scaled1[(s, s2)] * f2[(t, t2)];
            }
        }
        out
    }

    fn trace(&self) -> f64 {
        self.factor1.diagonal_integral() * self.factor2.diagonal_integral() / self.normalizer
    }

    fn partial_trace_spatial(&self) -> MarginalKernel {
        Self::scaled_marginal(
            &self.factor1,
            self.factor2.diagonal_integral() / self.normalizer,
        )
    }

    fn partial_trace_temporal(&self) -> MarginalKernel {
        Self::scaled_marginal(
            &self.factor2,
            self.factor1.diagonal_integral() / self.normalizer,
        )
    }

    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel {
        let inner = bilinear(&self.factor2, psi);
        Self::scaled_marginal(&self.factor1, inner / self.normalizer)
    }

    fn contract_spatial(&self, k: &MarginalKernel) -> MarginalKernel {
        let inner = bilinear(&self.factor1, k);
        Self::scaled_marginal(&self.factor2, inner / self.normalizer)
    }

    fn magnitude_hint(&self) -> f64 {
        self.factor1.sup_norm() * self.factor2.sup_norm() / self.normalizer.abs()
    }
}

/// `int int a(x, x') b(x, x') dx dx'`.
fn bilinear(a: &MarginalKernel, b: &MarginalKernel) -> f64 {
    let w = a.axis().weights();
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += w[j] * a.get(i, j) * b.get(i, j);
        }
        total += w[i] * row;
    }
    total
}

/// Which separable approximation to use.
#[derive(Debug, Clone, PartialEq)]
pub enum ApproxKind {
    Trace,
    /// Partial product with a symmetric weight function on the temporal axis.
    Product(MarginalKernel),
    Spca,
}

impl ApproxKind {
    pub fn name(&self) -> &'static str {
        match self {
            ApproxKind::Trace => "trace",
            ApproxKind::Product(_) => "product",
            ApproxKind::Spca => "spca",
        }
    }
}

impl fmt::Display for ApproxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight functions `psi` offered for the partial product approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiChoice {
    /// `psi = 1`.
    Const,
    /// `psi(w, w') = cos(w - w')`.
    Cosine,
}

impl PsiChoice {
    pub fn kernel(&self, axis: &AxisGrid) -> MarginalKernel {
        match self {
            PsiChoice::Const => MarginalKernel::constant(axis.clone()),
            PsiChoice::Cosine => MarginalKernel::from_fn(axis.clone(), |a, b| (a - b).cos())
                .expect("cos(w - w') is symmetric"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PsiChoice::Const => "const",
            PsiChoice::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for PsiChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const" => Ok(PsiChoice::Const),
            "cosine" => Ok(PsiChoice::Cosine),
            other => Err(Error::domain(format!(
                "unknown psi '{other}', expected const or cosine"
            ))),
        }
    }
}

/// A grid-independent description of an [`ApproxKind`], suitable for
/// configuration files and report echoes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ApproxChoice {
    Trace,
    Product { psi: PsiChoice },
    Spca,
}

impl ApproxChoice {
    pub fn parse(name: &str, psi: PsiChoice) -> Result<Self> {
        match name {
            "trace" => Ok(ApproxChoice::Trace),
            "product" => Ok(ApproxChoice::Product { psi }),
            "spca" => Ok(ApproxChoice::Spca),
            other => Err(Error::domain(format!(
                "unknown approximation '{other}', expected trace, product or spca"
            ))),
        }
    }

    pub fn build(&self, grid: &ProductGrid) -> ApproxKind {
        match self {
            ApproxChoice::Trace => ApproxKind::Trace,
            ApproxChoice::Product { psi } => ApproxKind::Product(psi.kernel(&grid.temporal)),
            ApproxChoice::Spca => ApproxKind::Spca,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ApproxChoice::Trace => "trace",
            ApproxChoice::Product { .. } => "product",
            ApproxChoice::Spca => "spca",
        }
    }
}

/// Eigen-information behind an SPCA approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpcaDiagnostics {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gap: f64,
    /// Signs applied to the solver's eigenvectors for (factor1, factor2).
    pub sign_convention: [f64; 2],
}

/// Applies the approximation map selected by `kind`. SPCA materializes the
/// kernel and fails if that would exceed `budget_bytes`.
pub fn approximate<K: KernelSource + ?Sized>(
    kernel: &K,
    kind: &ApproxKind,
    budget_bytes: u64,
) -> Result<SeparableKernel> {
    match kind {
        ApproxKind::Trace => approx_trace(kernel),
        ApproxKind::Product(psi) => approx_product(kernel, psi),
        ApproxKind::Spca => {
            let dense = kernel.materialize(budget_bytes)?;
            approx_spca(&dense, budget_bytes).map(|(sep, _)| sep)
        }
    }
}

/// `A^tr = A_1^tr (x) A_2^tr / Tr[A]`.
pub fn approx_trace<K: KernelSource + ?Sized>(kernel: &K) -> Result<SeparableKernel> {
    let tr = kernel.trace();
    let grid = kernel.grid();
    let scale = kernel.magnitude_hint() * grid.spatial.measure() * grid.temporal.measure();
    if !(tr.is_finite() && tr.abs() > TRACE_TOL * scale) {
        return Err(Error::degenerate(format!(
            "trace {tr:e} vanishes relative to kernel magnitude {scale:e}; the trace approximation is undefined"
        )));
    }
    SeparableKernel::new(
        kernel.partial_trace_spatial(),
        kernel.partial_trace_temporal(),
        tr,
    )
}

/// `A^pr = A_1^pr (x) A_2^pr / ||A_1^pr||^2` for the weight function `psi`.
pub fn approx_product<K: KernelSource + ?Sized>(
    kernel: &K,
    psi: &MarginalKernel,
) -> Result<SeparableKernel> {
    let grid = kernel.grid();
    check_psi(grid, psi)?;
    let a1 = kernel.contract_temporal(psi);
    let norm_sq = a1.l2_norm_sq();
    let scale = kernel.magnitude_hint() * grid.spatial.measure() * psi.abs_integral();
    if !(norm_sq.is_finite() && norm_sq.sqrt() > PRODUCT_TOL * scale) {
        return Err(Error::degenerate(format!(
            "partial product marginal vanishes (L2 norm {:e}); choose a different psi",
            norm_sq.sqrt()
        )));
    }
    let a2 = kernel.contract_spatial(&a1);
    SeparableKernel::new(a1, a2, norm_sq)
}

/// The flip kernels of a dense kernel, flattened over index pairs.
///
/// `spatial[(s*S + s'), (u*S + u')]` is
/// `int int A(s, w, s', w') A(u, w', u', w) dw dw'` and `temporal` is the
/// analogue with the roles of space and time exchanged. The pair weights are
/// the quadrature weights of the induced inner products on `K1^2` and `K2^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipKernels {
    pub spatial: DMatrix<f64>,
    pub temporal: DMatrix<f64>,
    pub spatial_pair_weights: Vec<f64>,
    pub temporal_pair_weights: Vec<f64>,
}

impl FlipKernels {
    /// `W^{1/2} K W^{1/2}` for the spatial flip kernel.
    pub fn weighted_spatial(&self) -> SymmetricMatrix {
        weighted_sym(&self.spatial, &self.spatial_pair_weights)
    }

    pub fn weighted_temporal(&self) -> SymmetricMatrix {
        weighted_sym(&self.temporal, &self.temporal_pair_weights)
    }
}

fn weighted_sym(k: &DMatrix<f64>, w: &[f64]) -> SymmetricMatrix {
    let n = k.nrows();
    SymmetricMatrix::symmetrize(DMatrix::from_fn(n, n, |i, j| {
        w[i].sqrt() * k[(i, j)] * w[j].sqrt()
    }))
}

fn pair_weights(axis: &AxisGrid) -> Vec<f64> {
    let w = axis.weights();
    w.iter()
        .flat_map(|a| w.iter().map(move |b| a * b))
        .collect()
}

/// `R[(s, s'), (t, t')] = A(s, t, s', t')`, optionally scaled by the square
/// roots of both pair weights.
fn rearrange(dense: &DenseCovariance, weighted: bool) -> DMatrix<f64> {
    let grid = dense.grid();
    let (ns, nt) = (grid.n_space(), grid.n_time());
    let (ps, pt) = if weighted {
        (pair_weights(&grid.spatial), pair_weights(&grid.temporal))
    } else {
        (vec![1.0; ns * ns], vec![1.0; nt * nt])
    };
    DMatrix::from_fn(ns * ns, nt * nt, |p, c| {
        let (s, s2) = (p / ns, p % ns);
        let (t, t2) = (c / nt, c % nt);
        (ps[p] * pt[c]).sqrt() * dense.get(s, t, s2, t2)
    })
}

/// Permutes the pair index `(a, b) -> (b, a)` along the columns.
fn swap_pair_columns(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, (c % n) * n + c / n)])
}

fn swap_pair_rows(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[((r % n) * n + r / n, c)])
}

pub fn flip_kernels(dense: &DenseCovariance, budget_bytes: u64) -> Result<FlipKernels> {
    let grid = dense.grid();
    let (ns, nt) = (grid.n_space(), grid.n_time());
    check_budget(ns * ns, budget_bytes)?;
    check_budget(nt * nt, budget_bytes)?;
    let r = rearrange(dense, false);
    let pw_s = pair_weights(&grid.spatial);
    let pw_t = pair_weights(&grid.temporal);

    let mut r_sw_t = swap_pair_columns(&r, nt);
    for (mut col, w) in r_sw_t.column_iter_mut().zip(&pw_t) {
        col *= *w;
    }
    let spatial = &r * r_sw_t.transpose();

    let mut r_sw_s = swap_pair_rows(&r, ns);
    for (mut row, w) in r_sw_s.row_iter_mut().zip(&pw_s) {
        row *= *w;
    }
    let temporal = r.transpose() * r_sw_s;

    Ok(FlipKernels {
        spatial: SymmetricMatrix::symmetrize(spatial).into_matrix(),
        temporal: SymmetricMatrix::symmetrize(temporal).into_matrix(),
        spatial_pair_weights: pw_s,
        temporal_pair_weights: pw_t,
    })
}

/// SPCA: `A^PCA = sqrt(lambda1) * v1 (x) u1` from the leading eigenpairs of
/// the flip kernels, with `v1`, `u1` normalized in the quadrature L2 sense.
///
/// The eigenproblem is solved on whichever flip kernel is smaller; the
/// partner eigenfunction follows from one multiplication with the
/// rearranged kernel. Signs are fixed so that `int v1(s, s) ds >= 0` and
/// `<A, v1 (x) u1> >= 0`.
pub fn approx_spca(
    dense: &DenseCovariance,
    budget_bytes: u64,
) -> Result<(SeparableKernel, SpcaDiagnostics)> {
    let grid = dense.grid();
    let (ns, nt) = (grid.n_space(), grid.n_time());
    check_budget(ns.min(nt).pow(2), budget_bytes)?;
    let rw = rearrange(dense, true);

    let (lambda1, lambda2, mut v, mut u) = if ns <= nt {
        let k = &rw * swap_pair_columns(&rw, nt).transpose();
        let (e1, e2) = sym_eig_top2(&SymmetricMatrix::symmetrize(k))?;
        let u = rw.transpose() * &e1.vector;
        (e1.value, e2.value, e1.vector, u)
    } else {
        let k = rw.transpose() * swap_pair_rows(&rw, ns);
        let (e1, e2) = sym_eig_top2(&SymmetricMatrix::symmetrize(k))?;
        let v = &rw * &e1.vector;
        (e1.value, e2.value, v, e1.vector)
    };
    if !(lambda1 > 0.0 && lambda1 - lambda2 > EIGENGAP_TOL * lambda1) {
        return Err(Error::SpectralDegeneracy { lambda1, lambda2 });
    }
    let (vn, un) = (v.norm(), u.norm());
    if vn == 0.0 || un == 0.0 {
        return Err(Error::SpectralDegeneracy { lambda1, lambda2 });
    }
    v /= vn;
    u /= un;

    let pw_s = pair_weights(&grid.spatial);
    let pw_t = pair_weights(&grid.temporal);
    let v_fn = unweight(&v, &pw_s, ns);
    let u_fn = unweight(&u, &pw_t, nt);

    let diag: f64 = (0..ns)
        .map(|s| grid.spatial.weights()[s] * v_fn[(s, s)])
        .sum();
    let sign1 = if diag > 0.0 || (diag == 0.0 && v_fn[v_fn.iamax_full()] >= 0.0) {
        1.0
    } else {
        -1.0
    };
    let inner = sign1 * v.dot(&(&rw * &u));
    let sign2 = if inner >= 0.0 { 1.0 } else { -1.0 };

    let factor1 = MarginalKernel::symmetrized(grid.spatial.clone(), v_fn * sign1);
    let factor2 = MarginalKernel::symmetrized(grid.temporal.clone(), u_fn * sign2);
    let sep = SeparableKernel::new(factor1, factor2, 1.0 / lambda1.sqrt())?;
    Ok((
        sep,
        SpcaDiagnostics {
            lambda1,
            lambda2,
            gap: lambda1 - lambda2,
            sign_convention: [sign1, sign2],
        },
    ))
}

/// Divides a weighted pair vector by the root pair weights and reshapes it
/// to an `n x n` kernel.
fn unweight(v: &DVector<f64>, pw: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| v[a * n + b] / pw[a * n + b].sqrt())
}
