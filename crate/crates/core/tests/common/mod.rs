//! Test oracles written directly from the definitions, sharing no code with
//! the library beyond its data types.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use septest::{AxisGrid, FunctionalSample, ProductGrid};

pub fn trapezoid(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 {
                points[i] - points[i - 1]
            } else {
                0.0
            };
            let right = if i + 1 < n {
                points[i + 1] - points[i]
            } else {
                0.0
            };
            (left + right) / 2.0
        })
        .collect()
}

/// `n` strictly increasing points in `[0, 1]`, uniform or jittered.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.gen_bool(0.5) {
        return (1..=n).map(|i| i as f64 / n as f64).collect();
    }
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    p.sort_by(f64::total_cmp);
    for i in 1..n {
        if p[i] <= p[i - 1] + 1e-3 {
            p[i] = p[i - 1] + 1e-3;
        }
    }
    p
}

pub fn random_grid(rng: &mut ChaCha8Rng, s: usize, t: usize) -> ProductGrid {
    ProductGrid::new(
        AxisGrid::new(random_points(rng, s)).unwrap(),
        AxisGrid::new(random_points(rng, t)).unwrap(),
    )
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let rank = rng.gen_range(1..=n);
    let g = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose()
}

pub fn random_sample(rng: &mut ChaCha8Rng, grid: ProductGrid, n: usize) -> FunctionalSample {
    let d = grid.len();
    let obs = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    FunctionalSample::new(grid, obs).unwrap()
}

/// Empirical covariance `(1/N) sum (X_n - mean)(X_n - mean)^T` by loops.
pub fn empirical_cov(sample: &FunctionalSample) -> DMatrix<f64> {
    let d = sample.grid().len();
    let n = sample.len();
    let mean: Vec<f64> = (0..d)
        .map(|i| (0..n).map(|k| sample.observation(k)[i]).sum::<f64>() / n as f64)
        .collect();
    let mut c = DMatrix::zeros(d, d);
    for k in 0..n {
        let x = sample.observation(k);
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / n as f64;
            }
        }
    }
    c
}

/// Marginal contractions of a dense kernel `a[(s*T+t), (s'*T+t')]`.
pub struct DenseOracle<'a> {
    pub a: &'a DMatrix<f64>,
    pub ws: Vec<f64>,
    pub wt: Vec<f64>,
}

impl<'a> DenseOracle<'a> {
    pub fn new(a: &'a DMatrix<f64>, grid: &ProductGrid) -> Self {
        Self {
            a,
            ws: trapezoid(grid.spatial.points()),
            wt: trapezoid(grid.temporal.points()),
        }
    }

    fn s(&self) -> usize {
        self.ws.len()
    }

    fn t(&self) -> usize {
        self.wt.len()
    }

    pub fn at(&self, s: usize, t: usize, s2: usize, t2: usize) -> f64 {
        self.a[(s * self.t() + t, s2 * self.t() + t2)]
    }

    pub fn trace(&self) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.s() {
            for t in 0..self.t() {
                acc += self.ws[s] * self.wt[t] * self.at(s, t, s, t);
            }
        }
        acc
    }

    pub fn partial_trace_spatial(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.s(), self.s(), |s, s2| {
            (0..self.t())
                .map(|t| self.wt[t] * self.at(s, t, s2, t))
                .sum()
        })
    }

    pub fn partial_trace_temporal(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.t(), self.t(), |t, t2| {
            (0..self.s())
                .map(|s| self.ws[s] * self.at(s, t, s, t2))
                .sum()
        })
    }

    /// `int int A(s, w, s', w') psi(w, w') dw dw'`.
    pub fn contract_temporal(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.s(), self.s(), |s, s2| {
            let mut acc = 0.0;
            for w in 0..self.t() {
                for w2 in 0..self.t() {
                    acc += self.wt[w] * self.wt[w2] * self.at(s, w, s2, w2) * psi[(w, w2)];
                }
            }
            acc
        })
    }

    /// `int int A(u, t, u', t') k(u, u') du du'`.
    pub fn contract_spatial(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.t(), self.t(), |t, t2| {
            let mut acc = 0.0;
            for u in 0..self.s() {
                for u2 in 0..self.s() {
                    acc += self.ws[u] * self.ws[u2] * self.at(u, t, u2, t2) * k[(u, u2)];
                }
            }
            acc
        })
    }

    /// Quadrature L2 norm of the kernel.
    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.s() {
            for t in 0..self.t() {
                for s2 in 0..self.s() {
                    for t2 in 0..self.t() {
                        let w = self.ws[s] * self.wt[t] * self.ws[s2] * self.wt[t2];
                        acc += w * self.at(s, t, s2, t2).powi(2);
                    }
                }
            }
        }
        acc.sqrt()
    }
}

/// `kron(f1, f2) / normalizer` in the flat `(s*T+t)` layout.
pub fn separable_matrix(f1: &DMatrix<f64>, f2: &DMatrix<f64>, normalizer: f64) -> DMatrix<f64> {
    let (s, t) = (f1.nrows(), f2.nrows());
    DMatrix::from_fn(s * t, s * t, |i, j| {
        f1[(i / t, j / t)] * f2[(i % t, j % t)] / normalizer
    })
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
