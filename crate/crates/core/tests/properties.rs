//! Randomized invariant checks for the on-disk series format and the
//! moment-parameter inversion.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use windgen_core::grid::{
    load_series_with_meta, save_series, Calendar365, EnsembleSeries, GridMeta, GridPoint,
};
use windgen_core::skewt::{cp_to_dp, dp_moments, SkewTParamsDP};

fn square_grid(side: usize) -> GridMeta {
    let mut pts = Vec::new();
    for row in 0..side {
        for col in 0..side {
            pts.push(GridPoint {
                id: pts.len(),
                lat: 20.0 + row as f64,
                lon: 40.0 + col as f64,
                elev: 0.0,
            });
        }
    }
    GridMeta::new(pts, 1.0).unwrap()
}

/// Correlation matrix built as the normalized Gram matrix of random rows,
/// ridge-loaded so it stays well conditioned.
fn correlation_from(seed: &[f64], d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| seed[i * d + j]);
    let g = &a * a.transpose() + DMatrix::identity(d, d) * d as f64;
    DMatrix::from_fn(d, d, |i, j| g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn series_save_load_roundtrip(
        side in 1usize..=3,
        n_real in 1usize..=3,
        n_years in 1usize..=2,
        standardized in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let meta = square_grid(side);
        let cal = Calendar365::new(2000, n_years).unwrap();
        let mut series = EnsembleSeries::zeros(meta.clone(), cal, n_real, standardized);
        let mut state = seed | 1;
        let mut next = || {
            // splitmix64 step, mapped to [0, 1)
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        for r in 0..n_real {
            for t in 0..series.n_days() {
                for i in 0..series.n_points() {
                    let u = next();
                    // raw series must be nonnegative; standardized may not be
                    let v = if standardized { 20.0 * u - 10.0 } else { 30.0 * u };
                    series.set(r, t, i, v);
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        save_series(&series, &path).unwrap();
        let back = load_series_with_meta(&path, meta, standardized).unwrap();
        prop_assert_eq!(back.n_realizations, n_real);
        prop_assert_eq!(back.n_days(), series.n_days());
        prop_assert_eq!(back.standardized, standardized);
        for (a, b) in series.values().iter().zip(back.values()) {
            // 9-significant-digit decimal text on disk
            prop_assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cp_dp_roundtrip_preserves_moments(
        d in 1usize..=3,
        raw in prop::collection::vec(-1.0f64..1.0, 9),
        alphas in prop::collection::vec(-2.0f64..2.0, 3),
        nu in 6.0f64..25.0,
    ) {
        let obar = correlation_from(&raw, d);
        let dp = SkewTParamsDP {
            xi: DVector::zeros(d),
            omega: obar,
            alpha: DVector::from_iterator(d, alphas.iter().copied().take(d)),
            nu,
        };
        let cp = dp_moments(&dp).unwrap();
        let fit = cp_to_dp(&cp).unwrap();
        let cp2 = dp_moments(&fit.dp).unwrap();
        prop_assert!(fit.residual_distance < 1e-4, "residual {}", fit.residual_distance);
        prop_assert!((cp2.gamma2m - cp.gamma2m).abs() < 1e-3,
            "gamma2m {} vs {}", cp2.gamma2m, cp.gamma2m);
        for i in 0..d {
            prop_assert!((cp2.gamma1[i] - cp.gamma1[i]).abs() < 1e-3,
                "gamma1[{i}] {} vs {}", cp2.gamma1[i], cp.gamma1[i]);
            prop_assert!((cp2.mu[i] - cp.mu[i]).abs() < 1e-6);
            for j in 0..d {
                prop_assert!((cp2.sigma[(i, j)] - cp.sigma[(i, j)]).abs() < 1e-6,
                    "sigma[{i},{j}] {} vs {}", cp2.sigma[(i, j)], cp.sigma[(i, j)]);
            }
        }
    }
}
