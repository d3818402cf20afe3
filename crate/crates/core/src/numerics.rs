//! Dense symmetric eigen-solvers and PSD square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Largest order accepted by [`full_sym_eig`] unless a cap is given.
pub const DEFAULT_FULL_EIG_CAP: usize = 4096;

const TOP2_MAX_ITER: usize = 10_000;
const TOP2_TOL: f64 = 1e-12;
const TOP2_BLOCK: usize = 16;
/// Orders up to this size use a dense eigensolver for the top two pairs.
const TOP2_DENSE_MAX: usize = 512;
const TOP2_START_SEED: u64 = 0x5eed_f11b;

/// A real symmetric matrix with exactly symmetric storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts a square matrix that is symmetric up to `1e-10` relative
    /// rounding and stores the average of it and its transpose.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::domain(format!(
                "expected a square matrix, got {} x {}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::domain(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// An eigenvalue with a unit-norm eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// The two algebraically largest eigenpairs.
///
/// Small orders are solved densely. Larger ones use deterministic-start
/// subspace iteration with Rayleigh-Ritz extraction, see [`subspace_top2`].
/// For `n == 1` the second pair is `(0, 0)`, the spectrum of a one-point
/// operator padded with zeros.
pub fn sym_eig_top2(a: &SymmetricMatrix) -> Result<(EigenPair, EigenPair)> {
    subspace_top2(a, TOP2_BLOCK, TOP2_DENSE_MAX)
}

/// Subspace iteration with block size `min(n, block)`; orders up to
/// `dense_max` skip the iteration. The matrix is shifted by a bound on its
/// most negative eigenvalue so the iteration targets the largest values,
/// not the largest magnitudes.
pub(crate) fn subspace_top2(
    a: &SymmetricMatrix,
    block: usize,
    dense_max: usize,
) -> Result<(EigenPair, EigenPair)> {
    let n = a.order();
    if n == 0 {
        return Err(Error::domain("eigenproblem of an empty matrix"));
    }
    let m = a.matrix();
    if n == 1 {
        return Ok((
            EigenPair {
                value: m[(0, 0)],
                vector: DVector::from_element(1, 1.0),
            },
            EigenPair {
                value: 0.0,
                vector: DVector::zeros(1),
            },
        ));
    }
    let norm = m.norm();
    if norm == 0.0 {
        let e = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        return Ok((
            EigenPair {
                value: 0.0,
                vector: e(0),
            },
            EigenPair {
                value: 0.0,
                vector: e(1),
            },
        ));
    }
    if n <= dense_max {
        let (theta, v) = sorted_eigen(m.clone());
        return Ok((
            EigenPair {
                value: theta[0],
                vector: canonical_sign(v.column(0).into_owned()),
            },
            EigenPair {
                value: theta[1],
                vector: canonical_sign(v.column(1).into_owned()),
            },
        ));
    }
    let shift = negative_spectrum_bound(m).min(norm);
    let p = n.min(block);

    let mut rng = ChaCha8Rng::seed_from_u64(TOP2_START_SEED);
    let start = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(start);
    let mut residual = f64::INFINITY;
    for _ in 0..TOP2_MAX_ITER {
        let aq = m * &q;
        let h = SymmetricMatrix::symmetrize(q.transpose() * &aq).into_matrix();
        let (theta, v) = sorted_eigen(h);
        let x = &q * &v;
        let ax = aq * &v;
        let r0 = (ax.column(0) - x.column(0) * theta[0]).norm();
        let r1 = (ax.column(1) - x.column(1) * theta[1]).norm();
        residual = r0.max(r1);
        if residual <= TOP2_TOL * norm || p == n {
            return Ok((
                EigenPair {
                    value: theta[0],
                    vector: canonical_sign(x.column(0).into_owned()),
                },
                EigenPair {
                    value: theta[1],
                    vector: canonical_sign(x.column(1).into_owned()),
                },
            ));
        }
        let z = ax + x * shift;
        q = orthonormalize(z);
    }
    Err(Error::NoConvergence {
        iterations: TOP2_MAX_ITER,
        residual,
    })
}

/// All eigenpairs in descending order of eigenvalue.
pub fn full_sym_eig(a: &SymmetricMatrix) -> Result<Vec<EigenPair>> {
    full_sym_eig_capped(a, DEFAULT_FULL_EIG_CAP)
}

pub fn full_sym_eig_capped(a: &SymmetricMatrix, cap: usize) -> Result<Vec<EigenPair>> {
    let n = a.order();
    if n > cap {
        let bytes = (n as u64) * (n as u64) * 8;
        return Err(Error::Resource {
            what: format!("full eigendecomposition of order {n} (cap {cap})"),
            required_bytes: bytes,
            budget_bytes: (cap as u64) * (cap as u64) * 8,
        });
    }
    let (values, vectors) = sorted_eigen(a.matrix().clone());
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &value)| EigenPair {
            value,
            vector: vectors.column(i).into_owned(),
        })
        .collect())
}

/// Eigenvalue-clipped square root: returns `L` with `L L^T` equal to `A`
/// after eigenvalues below the rounding level `n * eps * ||A||` are set
/// to zero.
pub fn psd_factor(a: &SymmetricMatrix) -> Result<DMatrix<f64>> {
    let pairs = full_sym_eig(a)?;
    let spectral = pairs.iter().fold(0.0f64, |m, p| m.max(p.value.abs()));
    let most_negative = pairs.last().map_or(0.0, |p| p.value);
    if most_negative < -1e-8 * spectral {
        return Err(Error::domain(format!(
            "matrix is not positive semi-definite (eigenvalue {most_negative:e}, norm {spectral:e})"
        )));
    }
    let n = a.order();
    let floor = n as f64 * f64::EPSILON * spectral;
    let mut l = DMatrix::zeros(n, n);
    for (j, p) in pairs.iter().enumerate() {
        if p.value > floor {
            let root = p.value.sqrt();
            l.column_mut(j).copy_from(&(&p.vector * root));
        }
    }
    Ok(l)
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn orthonormalize(z: DMatrix<f64>) -> DMatrix<f64> {
    z.qr().q()
}

/// Upper bound on `max(0, -lambda_min)` from Gershgorin discs.
fn negative_spectrum_bound(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut lower = f64::INFINITY;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        lower = lower.min(m[(i, i)] - off);
    }
    (-lower).max(0.0)
}

/// Flips a vector so its largest-magnitude entry is positive.
fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Cyclic Jacobi sweeps; independent of the solver under test.
    pub(crate) fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum();
            if off.sqrt() < 1e-15 * m.norm() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        d.sort_by(|a, b| b.total_cmp(a));
        d
    }

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose()
    }

    fn sym(m: DMatrix<f64>) -> SymmetricMatrix {
        SymmetricMatrix::new(m).unwrap()
    }

    #[test]
    fn iterative_path_matches_jacobi() {
        for (n, seed) in [(12, 1), (30, 2), (40, 3)] {
            let a = random_psd(n, seed);
            let mut indefinite = a.clone();
            for i in 0..n {
                indefinite[(i, i)] -= 0.6 * a.trace() / n as f64;
            }
            for m in [a, indefinite] {
                let oracle = jacobi_eigenvalues(&m);
                let (e1, e2) = subspace_top2(&sym(m.clone()), 6, 0).unwrap();
                let tol = 1e-9 * m.norm();
                assert!(
                    (e1.value - oracle[0]).abs() <= tol,
                    "{} vs {}",
                    e1.value,
                    oracle[0]
                );
                assert!(
                    (e2.value - oracle[1]).abs() <= tol,
                    "{} vs {}",
                    e2.value,
                    oracle[1]
                );
                check_residual(&m, &e1);
                check_residual(&m, &e2);
            }
        }
    }

    fn check_residual(a: &DMatrix<f64>, p: &EigenPair) {
        let r = (a * &p.vector - &p.vector * p.value).norm();
        assert!(r <= 1e-8 * a.norm() * a.nrows() as f64, "residual {r}");
        assert!((p.vector.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top2_diagonal() {
        let a = sym(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])));
        let (e1, e2) = sym_eig_top2(&a).unwrap();
        assert!((e1.value - 3.0).abs() < 1e-14);
        assert!((e2.value - 1.0).abs() < 1e-14);
        assert!((e1.vector[0].abs() - 1.0).abs() < 1e-12);
        assert!((e2.vector[1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top2_rank_one() {
        let v = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let a = sym(&v * v.transpose());
        let (e1, e2) = sym_eig_top2(&a).unwrap();
        assert!((e1.value - 1.0).abs() < 1e-12);
        assert!(e2.value.abs() < 1e-12);
        assert!((e1.vector.dot(&v).abs() - 1.0).abs() < 1e-12);
        assert!(e2.vector.dot(&v).abs() < 1e-10);
    }

    #[test]
    fn top2_matches_jacobi_on_random_psd() {
        for seed in 0..5 {
            let a = random_psd(8, seed);
            let oracle = jacobi_eigenvalues(&a);
            let (e1, e2) = sym_eig_top2(&sym(a.clone())).unwrap();
            assert!((e1.value - oracle[0]).abs() <= 1e-8 * oracle[0]);
            assert!((e2.value - oracle[1]).abs() <= 1e-8 * oracle[0]);
            check_residual(&a, &e1);
            check_residual(&a, &e2);
        }
    }

    #[test]
    fn top2_large_indefinite_uses_iteration() {
        // order exceeds the block size so the subspace loop actually iterates
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&g + g.transpose()) * 0.5;
        let oracle = jacobi_eigenvalues(&a);
        let (e1, e2) = sym_eig_top2(&sym(a.clone())).unwrap();
        assert!((e1.value - oracle[0]).abs() <= 1e-8 * a.norm());
        assert!((e2.value - oracle[1]).abs() <= 1e-8 * a.norm());
        check_residual(&a, &e1);
        check_residual(&a, &e2);
    }

    #[test]
    fn top2_prefers_value_over_magnitude() {
        let a = sym(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, -10.0, 2.0, -7.0, 0.5, 0.1, -3.0, 0.0, 0.2, -0.4,
        ])));
        let (e1, e2) = sym_eig_top2(&a).unwrap();
        assert!((e1.value - 2.0).abs() < 1e-10);
        assert!((e2.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn full_eig_examples() {
        let id = sym(DMatrix::identity(3, 3));
        for p in full_sym_eig(&id).unwrap() {
            assert!((p.value - 1.0).abs() < 1e-15);
        }
        let d = sym(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 2.0, 3.0,
        ])));
        let vals: Vec<f64> = full_sym_eig(&d).unwrap().iter().map(|p| p.value).collect();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert!(matches!(
            full_sym_eig_capped(&d, 2),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn full_eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&g + g.transpose()) * 0.5;
        let pairs = full_sym_eig(&sym(a.clone())).unwrap();
        let mut recon = DMatrix::zeros(10, 10);
        for p in &pairs {
            recon += &p.vector * p.vector.transpose() * p.value;
        }
        assert!((recon - &a).norm() <= 1e-8 * a.norm() * 10.0);
    }

    #[test]
    fn psd_factor_examples() {
        let id = sym(DMatrix::identity(3, 3));
        let l = psd_factor(&id).unwrap();
        assert!((&l * l.transpose() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);

        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let l = psd_factor(&sym(a.clone())).unwrap();
        assert!((&l * l.transpose() - &a).norm() < 1e-13);
        let mut cols: Vec<f64> = (0..2).map(|j| l.column(j).norm()).collect();
        cols.sort_by(f64::total_cmp);
        assert!((cols[0] - 2.0).abs() < 1e-14 && (cols[1] - 3.0).abs() < 1e-14);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_factor(&sym(bad)), Err(Error::Domain(_))));
    }

    #[test]
    fn rotation_invariance_and_weyl_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [3usize, 6, 10] {
            let a = random_psd(n, 100 + n as u64);
            let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let q = g.qr().q();
            let rotated = &q * &a * q.transpose();
            let (e1, e2) = sym_eig_top2(&sym(a.clone())).unwrap();
            let (r1, r2) = sym_eig_top2(&SymmetricMatrix::symmetrize(rotated)).unwrap();
            assert!((e1.value - r1.value).abs() <= 1e-8 * e1.value);
            assert!((e2.value - r2.value).abs() <= 1e-8 * e1.value);

            let e = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.1..0.1));
            let e = (&e + e.transpose()) * 0.5;
            let e_norm = jacobi_eigenvalues(&e)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let (p1, _) = sym_eig_top2(&sym(&a + &e)).unwrap();
            assert!((p1.value - e1.value).abs() <= e_norm + 1e-8);
        }
    }
}
