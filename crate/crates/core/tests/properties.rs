mod common;

use common::{max_abs, random_grid, random_psd, separable_matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use septest::io::{parse_bin, parse_csv, to_bin, to_csv};
use septest::statistic::{sup_deviation_between, SearchRegion};
use septest::{
    approximate, run_test, sup_deviation, ApproxChoice, ApproxKind, BootstrapConfig,
    DenseCovariance, FunctionalSample, KernelSource, LazyCovariance, MarginalKernel, ProductGrid,
    DEFAULT_MEMORY_BUDGET,
};

fn kinds(grid: &ProductGrid) -> Vec<ApproxKind> {
    vec![
        ApproxKind::Trace,
        ApproxKind::Product(MarginalKernel::constant(grid.temporal.clone())),
        ApproxKind::Product(
            MarginalKernel::from_fn(grid.temporal.clone(), |a, b| (a - b).cos()).unwrap(),
        ),
        ApproxKind::Spca,
    ]
}

fn gaussian_sample(rng: &mut ChaCha8Rng, s: usize, t: usize, n: usize) -> FunctionalSample {
    let grid = random_grid(rng, s, t);
    let mix = DMatrix::from_fn(s * t, s * t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(s * t, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    FunctionalSample::from_matrix(grid, mix * z).unwrap()
}

fn quick_config(approx: ApproxChoice, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        replicates: 40,
        block_length: 2,
        ..BootstrapConfig::new(30, approx, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn approximations_are_idempotent(seed in any::<u64>(), s in 1usize..6, t in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, s, t);
        let a = random_psd(&mut rng, s * t);
        let dense = DenseCovariance::from_matrix(grid.clone(), a).unwrap();
        let d = grid.len();
        for kind in kinds(&grid) {
            let Ok(once) = approximate(&dense, &kind, DEFAULT_MEMORY_BUDGET) else { continue };
            let once_m = once.block(0..d, 0..d);
            let twice = approximate(&once, &kind, DEFAULT_MEMORY_BUDGET).unwrap();
            let err = max_abs(&(twice.block(0..d, 0..d) - &once_m));
            prop_assert!(err <= 1e-8 * max_abs(&once_m), "{kind}: {err:e}");
        }
    }

    #[test]
    fn separable_kernels_are_fixed_points(seed in any::<u64>(), s in 1usize..5, t in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, s, t);
        let a = separable_matrix(&random_psd(&mut rng, s), &random_psd(&mut rng, t), 1.0);
        let dense = DenseCovariance::from_matrix(grid.clone(), a.clone()).unwrap();
        for kind in kinds(&grid) {
            let Ok(sep) = approximate(&dense, &kind, DEFAULT_MEMORY_BUDGET) else { continue };
            let err = max_abs(&(sep.block(0..s * t, 0..s * t) - &a));
            prop_assert!(err <= 1e-8 * max_abs(&a), "{kind}: {err:e}");
        }
    }

    #[test]
    fn sup_search_ignores_block_size(seed in any::<u64>(), s in 2usize..6, t in 2usize..6, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gaussian_sample(&mut rng, s, t, n);
        let cov = LazyCovariance::new(&sample).unwrap();
        let sep = approximate(&cov, &ApproxKind::Trace, DEFAULT_MEMORY_BUDGET).unwrap();
        let reference = sup_deviation(&cov, &sep, 512).unwrap();
        let tol = 1e-12 * reference.sup_dev;
        for bs in [1, 2, 3, 7] {
            let other = sup_deviation(&cov, &sep, bs).unwrap();
            prop_assert!((other.sup_dev - reference.sup_dev).abs() <= tol);
        }
        let (upper, _) = sup_deviation_between(&cov, &sep, 3, SearchRegion::UpperTriangle).unwrap();
        prop_assert!((upper - reference.sup_dev).abs() <= tol);
    }

    #[test]
    fn statistic_ignores_a_common_shift(seed in any::<u64>(), s in 2usize..5, t in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gaussian_sample(&mut rng, s, t, 30);
        let shift = DMatrix::from_fn(s * t, 1, |_, _| 5.0 * rng.sample::<f64, _>(StandardNormal));
        let mut moved = sample.data().clone();
        for mut col in moved.column_iter_mut() {
            col += &shift;
        }
        let moved = FunctionalSample::from_matrix(sample.grid().clone(), moved).unwrap();
        let cfg = quick_config(ApproxChoice::Trace, seed);
        let a = run_test(&sample, &cfg).unwrap();
        let b = run_test(&moved, &cfg).unwrap();
        let tol = 1e-9 * a.statistic.sup_dev.max(1e-300);
        prop_assert!((a.statistic.sup_dev - b.statistic.sup_dev).abs() <= tol);
        for (x, y) in a.boot_values.iter().zip(&b.boot_values) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(a.statistic.sup_dev));
        }
    }

    #[test]
    fn decision_is_scale_invariant(seed in any::<u64>(), k in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gaussian_sample(&mut rng, 3, 4, 30);
        let approx = [
            ApproxChoice::Trace,
            ApproxChoice::Product { psi: septest::PsiChoice::Const },
            ApproxChoice::Spca,
        ][k];
        let cfg = quick_config(approx, seed);
        let a = run_test(&sample, &cfg).unwrap();
        let b = run_test(&sample.scaled(10.0), &cfg).unwrap();
        prop_assert_eq!(a.reject, b.reject);
        prop_assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn rejection_is_monotone_in_alpha(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gaussian_sample(&mut rng, 3, 3, 30);
        let report = run_test(&sample, &quick_config(ApproxChoice::Trace, seed)).unwrap();
        let alphas = [0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 0.9];
        for pair in alphas.windows(2) {
            prop_assert!(report.quantile_at(pair[0]) >= report.quantile_at(pair[1]));
            prop_assert!(!report.reject_at(pair[0]) || report.reject_at(pair[1]));
        }
    }

    #[test]
    fn csv_and_binary_round_trip(seed in any::<u64>(), s in 1usize..5, t in 1usize..5, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gaussian_sample(&mut rng, s, t, n).scaled(10f64.powi(rng.gen_range(-30..30)));
        let csv = parse_csv(&to_csv(&sample)).unwrap();
        let bin = parse_bin(&to_bin(&sample)).unwrap();
        prop_assert_eq!(csv.data(), sample.data());
        prop_assert_eq!(csv.grid(), sample.grid());
        prop_assert_eq!(bin.data(), sample.data());
        prop_assert_eq!(bin.grid(), sample.grid());
    }
}
