//! Sup-norm deviation between a kernel and its separable approximation.

use serde::{Deserialize, Serialize};

use crate::covariance::LazyCovariance;
use crate::error::{Error, Result};
use crate::kernel::KernelSource;
use crate::separable::{approximate, ApproxKind, SeparableKernel};

/// Default tile edge for blockwise maximization.
pub const DEFAULT_BLOCK_SIZE: usize = 512;

/// Which index pairs a sup-norm search visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchRegion {
    /// Every `(i, j)`.
    Full,
    /// Only `i <= j`; enough for symmetric kernels.
    UpperTriangle,
}

/// `||C_N - C_N^x||` with its location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub sup_dev: f64,
    /// Grid indices `(s, t, s', t')` of the maximum.
    pub argmax: [usize; 4],
    /// `sqrt(N) * sup_dev`.
    pub scaled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SupLocation {
    pub value: f64,
    pub row: usize,
    pub col: usize,
}

/// `max |a - b|` over the grid, computed tile by tile with at most two
/// `block_size x block_size` tiles alive. Ties go to the first index pair
/// in row-major order, whatever order the tiles are visited in.
pub(crate) fn sup_abs_difference<A, B>(
    a: &A,
    b: Option<&B>,
    block_size: usize,
    region: SearchRegion,
) -> Result<SupLocation>
where
    A: KernelSource + ?Sized,
    B: KernelSource + ?Sized,
{
    let d = a.grid().len();
    if let Some(b) = b {
        if !a.grid().same_shape(b.grid()) {
            return Err(Error::domain("kernels live on different grids"));
        }
    }
    if d == 0 {
        return Err(Error::domain("sup-norm over an empty grid"));
    }
    let bs = block_size.max(1);
    let mut best = SupLocation {
        value: -1.0,
        row: 0,
        col: 0,
    };
    for r0 in (0..d).step_by(bs) {
        let r1 = (r0 + bs).min(d);
        let c_start = match region {
            SearchRegion::Full => 0,
            SearchRegion::UpperTriangle => r0 - r0 % bs,
        };
        for c0 in (c_start..d).step_by(bs) {
            let c1 = (c0 + bs).min(d);
            let mut tile = a.block(r0..r1, c0..c1);
            if let Some(b) = b {
                tile -= b.block(r0..r1, c0..c1);
            }
            for (c, col) in tile.column_iter().enumerate() {
                let j = c0 + c;
                for (r, v) in col.iter().enumerate() {
                    let i = r0 + r;
                    if region == SearchRegion::UpperTriangle && j < i {
                        continue;
                    }
                    let v = v.abs();
                    if v.is_nan() {
                        return Err(Error::domain("kernel difference is NaN"));
                    }
                    if v > best.value || (v == best.value && (i, j) < (best.row, best.col)) {
                        best = SupLocation {
                            value: v,
                            row: i,
                            col: j,
                        };
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Sup-norm of a kernel, evaluated blockwise over the upper triangle.
pub fn kernel_sup_norm<K: KernelSource + ?Sized>(kernel: &K, block_size: usize) -> Result<f64> {
    sup_abs_difference::<K, K>(kernel, None, block_size, SearchRegion::UpperTriangle)
        .map(|loc| loc.value)
}

/// `sup |a - b|` between two kernels on the same grid, with location.
pub fn sup_deviation_between<A, B>(
    a: &A,
    b: &B,
    block_size: usize,
    region: SearchRegion,
) -> Result<(f64, [usize; 4])>
where
    A: KernelSource + ?Sized,
    B: KernelSource + ?Sized,
{
    let loc = sup_abs_difference(a, Some(b), block_size, region)?;
    let grid = a.grid();
    let (s, t) = grid.split(loc.row);
    let (s2, t2) = grid.split(loc.col);
    Ok((loc.value, [s, t, s2, t2]))
}

/// The test statistic `||C_N - sep||` over all grid index pairs.
pub fn sup_deviation(
    cov: &LazyCovariance,
    sep: &SeparableKernel,
    block_size: usize,
) -> Result<DeviationResult> {
    let (sup_dev, argmax) = sup_deviation_between(cov, sep, block_size, SearchRegion::Full)?;
    Ok(DeviationResult {
        sup_dev,
        argmax,
        scaled: (cov.n() as f64).sqrt() * sup_dev,
    })
}

/// `||C_N - C_N^x|| / ||C_N||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeMeasure {
    pub value: f64,
    pub approx_kind: String,
}

pub fn relative_measure(
    cov: &LazyCovariance,
    kind: &ApproxKind,
    block_size: usize,
    budget_bytes: u64,
) -> Result<RelativeMeasure> {
    let norm = kernel_sup_norm(cov, block_size)?;
    if norm == 0.0 {
        return Err(Error::degenerate(
            "the empirical covariance is identically zero",
        ));
    }
    let sep = approximate(cov, kind, budget_bytes)?;
    let dev = sup_deviation(cov, &sep, block_size)?;
    Ok(RelativeMeasure {
        value: dev.sup_dev / norm,
        approx_kind: kind.name().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{DenseCovariance, FunctionalSample};
    use crate::grid::{AxisGrid, MarginalKernel, ProductGrid};
    use crate::kernel::DEFAULT_MEMORY_BUDGET;
    use crate::separable::approx_trace;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis(n: usize) -> AxisGrid {
        AxisGrid::new((0..n).map(|i| (i + 1) as f64 / n as f64).collect()).unwrap()
    }

    fn random_cov(s: usize, t: usize, n: usize, seed: u64) -> LazyCovariance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ProductGrid::new(axis(s), axis(t));
        let obs = (0..n)
            .map(|_| (0..s * t).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        LazyCovariance::new(&FunctionalSample::new(g, obs).unwrap()).unwrap()
    }

    fn separable_sample(s: usize, t: usize, n: usize, seed: u64) -> LazyCovariance {
        // X_n(s, t) = a_n g(s) h(t): covariance is rank one and separable
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs: Vec<f64> = (0..s).map(|_| rng.gen_range(0.5..1.5)).collect();
        let ht: Vec<f64> = (0..t).map(|_| rng.gen_range(0.5..1.5)).collect();
        let obs = (0..n)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                gs.iter()
                    .flat_map(|g| ht.iter().map(move |h| a * g * h))
                    .collect()
            })
            .collect();
        let g = ProductGrid::new(axis(s), axis(t));
        LazyCovariance::new(&FunctionalSample::new(g, obs).unwrap()).unwrap()
    }

    #[test]
    fn separable_sample_has_no_deviation() {
        let cov = separable_sample(3, 4, 6, 1);
        let sep = approx_trace(&cov).unwrap();
        let dev = sup_deviation(&cov, &sep, 5).unwrap();
        assert!(dev.sup_dev <= 1e-8);
    }

    #[test]
    fn constructed_single_entry_difference() {
        let g = ProductGrid::new(axis(2), axis(2));
        let ones = MarginalKernel::constant(axis(2));
        let sep = SeparableKernel::new(ones.clone(), ones, 1.0).unwrap();
        let mut m = DMatrix::from_element(4, 4, 1.0);
        m[(1, 2)] += 0.5;
        m[(2, 1)] += 0.5;
        let dense = DenseCovariance::from_matrix(g, m).unwrap();
        let (v, arg) = sup_deviation_between(&dense, &sep, 3, SearchRegion::Full).unwrap();
        assert_eq!(v, 0.5);
        // first occurrence in row-major order: row 1, column 2
        assert_eq!(arg, [0, 1, 1, 0]);
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let cov = random_cov(3, 3, 5, 2);
        let sep = approx_trace(&cov).unwrap();
        let dense = cov.materialize(1 << 20).unwrap();
        let mut oracle = 0.0f64;
        for s in 0..3 {
            for t in 0..3 {
                for s2 in 0..3 {
                    for t2 in 0..3 {
                        let diff = dense.get(s, t, s2, t2) - sep.eval(s, t, s2, t2);
                        oracle = oracle.max(diff.abs());
                    }
                }
            }
        }
        let dev = sup_deviation(&cov, &sep, DEFAULT_BLOCK_SIZE).unwrap();
        assert!((dev.sup_dev - oracle).abs() <= 1e-14);
        let [s, t, s2, t2] = dev.argmax;
        let at = (dense.get(s, t, s2, t2) - sep.eval(s, t, s2, t2)).abs();
        assert!((at - dev.sup_dev).abs() <= 1e-15);
        assert!((dev.scaled - 5f64.sqrt() * dev.sup_dev).abs() < 1e-15);
    }

    #[test]
    fn blocking_and_region_invariance() {
        for (s, t) in [(2, 3), (4, 4), (6, 6)] {
            let cov = random_cov(s, t, 8, 10 + s as u64);
            let sep = approx_trace(&cov).unwrap();
            let d = s * t;
            let full = sup_deviation(&cov, &sep, d).unwrap();
            for bs in [1, 7] {
                let other = sup_deviation(&cov, &sep, bs).unwrap();
                assert_eq!(other.sup_dev, full.sup_dev, "block size {bs}");
                assert_eq!(other.argmax, full.argmax);
            }
            let (upper, _) =
                sup_deviation_between(&cov, &sep, 7, SearchRegion::UpperTriangle).unwrap();
            assert!((upper - full.sup_dev).abs() <= 1e-12 * full.sup_dev);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let cov = random_cov(2, 3, 4, 3);
        let other = random_cov(3, 2, 4, 3);
        let sep = approx_trace(&other).unwrap();
        assert!(matches!(
            sup_deviation(&cov, &sep, 4),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn relative_measure_behaviour() {
        let cov = separable_sample(3, 4, 6, 4);
        let rm = relative_measure(&cov, &ApproxKind::Trace, 8, DEFAULT_MEMORY_BUDGET).unwrap();
        assert!(rm.value <= 1e-8);

        let g = ProductGrid::new(axis(2), axis(2));
        let same = FunctionalSample::new(g, vec![vec![1.0, 2.0, 3.0, 4.0]; 3]).unwrap();
        let cov = LazyCovariance::new(&same).unwrap();
        assert!(matches!(
            relative_measure(&cov, &ApproxKind::Trace, 8, DEFAULT_MEMORY_BUDGET),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn scaling_observations() {
        let cov = random_cov(3, 4, 7, 5);
        let scaled = LazyCovariance::new(&cov.centered().scaled(3.0)).unwrap();
        let a = sup_deviation(&cov, &approx_trace(&cov).unwrap(), 16).unwrap();
        let b = sup_deviation(&scaled, &approx_trace(&scaled).unwrap(), 16).unwrap();
        assert!((b.sup_dev - 9.0 * a.sup_dev).abs() <= 1e-10 * b.sup_dev);
        let ra = relative_measure(&cov, &ApproxKind::Trace, 16, DEFAULT_MEMORY_BUDGET).unwrap();
        let rb = relative_measure(&scaled, &ApproxKind::Trace, 16, DEFAULT_MEMORY_BUDGET).unwrap();
        assert!((ra.value - rb.value).abs() <= 1e-10);
    }
}
