//! The operations every space-time kernel representation must support.
//!
//! A kernel `A(s, t, s', t')` on a [`ProductGrid`] is addressed by flat grid
//! indices `i = s * T + t`. Implementations decide how values are produced:
//! streamed from data, read from a dense matrix, or evaluated from separable
//! factors. The separable approximation maps only ever touch a kernel
//! through these marginal contractions, so the same code serves the
//! empirical covariance and its bootstrap perturbations.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::covariance::DenseCovariance;
use crate::error::{Error, Result};
use crate::grid::{MarginalKernel, ProductGrid};

/// Default cap on a materialized `(S*T) x (S*T)` matrix: 1 GiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 30;

pub trait KernelSource: Sync {
    fn grid(&self) -> &ProductGrid;

    /// Kernel values on a contiguous block of flat indices.
    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64>;

    /// `int int A(u, w, u, w) du dw`.
    fn trace(&self) -> f64;

    /// `A_1^tr(s, s') = int A(s, w, s', w) dw`.
    fn partial_trace_spatial(&self) -> MarginalKernel;

    /// `A_2^tr(t, t') = int A(u, t, u, t') du`.
    fn partial_trace_temporal(&self) -> MarginalKernel;

    /// `int int A(s, w, s', w') psi(w, w') dw dw'`, a kernel on `K1^2`.
    /// `psi` must live on the temporal axis.
    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel;

    /// `int int A(u, t, u', t') k(u, u') du du'`, a kernel on `K2^2`.
    /// `k` must live on the spatial axis.
    fn contract_spatial(&self, k: &MarginalKernel) -> MarginalKernel;

    /// A cheap bound on the sup-norm, used to make degeneracy tolerances
    /// relative. Exact for dense kernels, an upper bound otherwise.
    fn magnitude_hint(&self) -> f64;

    /// The full `(S*T) x (S*T)` matrix, if it fits in `budget_bytes`.
    fn materialize(&self, budget_bytes: u64) -> Result<DenseCovariance> {
        let d = self.grid().len();
        check_budget(d, budget_bytes)?;
        DenseCovariance::from_matrix(self.grid().clone(), self.block(0..d, 0..d))
    }
}

pub(crate) fn check_budget(d: usize, budget_bytes: u64) -> Result<()> {
    let required = (d as u64).saturating_mul(d as u64).saturating_mul(8);
    if required > budget_bytes {
        return Err(Error::Resource {
            what: format!("dense {d} x {d} covariance"),
            required_bytes: required,
            budget_bytes,
        });
    }
    Ok(())
}

/// The pointwise sum of two kernels on the same grid.
pub struct KernelSum<'a, A: ?Sized, B: ?Sized> {
    pub left: &'a A,
    pub right: &'a B,
}

impl<'a, A, B> KernelSum<'a, A, B>
where
    A: KernelSource + ?Sized,
    B: KernelSource + ?Sized,
{
    pub fn new(left: &'a A, right: &'a B) -> Result<Self> {
        if !left.grid().same_shape(right.grid()) {
            return Err(Error::domain("cannot add kernels on different grids"));
        }
        Ok(Self { left, right })
    }
}

fn add_marginals(a: MarginalKernel, b: MarginalKernel) -> MarginalKernel {
    let axis = a.axis().clone();
    MarginalKernel::symmetrized(axis, a.values() + b.values())
}

impl<A, B> KernelSource for KernelSum<'_, A, B>
where
    A: KernelSource + ?Sized,
    B: KernelSource + ?Sized,
{
    fn grid(&self) -> &ProductGrid {
        self.left.grid()
    }

    fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        self.left.block(rows.clone(), cols.clone()) + self.right.block(rows, cols)
    }

    fn trace(&self) -> f64 {
        self.left.trace() + self.right.trace()
    }

    fn partial_trace_spatial(&self) -> MarginalKernel {
        add_marginals(
            self.left.partial_trace_spatial(),
            self.right.partial_trace_spatial(),
        )
    }

    fn partial_trace_temporal(&self) -> MarginalKernel {
        add_marginals(
            self.left.partial_trace_temporal(),
            self.right.partial_trace_temporal(),
        )
    }

    fn contract_temporal(&self, psi: &MarginalKernel) -> MarginalKernel {
        add_marginals(
            self.left.contract_temporal(psi),
            self.right.contract_temporal(psi),
        )
    }

    fn contract_spatial(&self, k: &MarginalKernel) -> MarginalKernel {
        add_marginals(
            self.left.contract_spatial(k),
            self.right.contract_spatial(k),
        )
    }

    fn magnitude_hint(&self) -> f64 {
        self.left.magnitude_hint() + self.right.magnitude_hint()
    }
}
