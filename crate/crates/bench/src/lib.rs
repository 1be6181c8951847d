//! Shared fixtures for the criterion benchmarks.

use nalgebra::{DMatrix, DVector};
use windgen_core::grid::{GridMeta, GridPoint};
use windgen_core::regions::Partition;
use windgen_core::seasonal::SeasonalModel;
use windgen_core::sim::{GeneratorBundle, InnovationFamily};
use windgen_core::skewt::{FitDiagnostics, RegionSkewT, SkewTParamsDP};
use windgen_core::var::{check_stability_matrices, Estimator, VarCoefficients};

pub fn square_grid(n: usize) -> GridMeta {
    let mut pts = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            pts.push(GridPoint {
                id: r * n + c,
                lat: 25.0 + r as f64 * 0.5,
                lon: 45.0 + c as f64 * 0.5,
                elev: 0.0,
            });
        }
    }
    GridMeta::new(pts, 0.5).unwrap()
}

/// Stencil VAR(2) rescaled to the requested companion-matrix radius.
pub fn stencil_var(meta: &GridMeta, radius: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = meta.n_points();
    let mut a1 = DMatrix::zeros(n, n);
    for i in 0..n {
        a1[(i, i)] = 0.3;
        for &(_, j) in &meta.neighbor_map[i] {
            a1[(i, j)] = 0.08;
        }
    }
    let a2 = DMatrix::from_diagonal_element(n, n, 0.1);
    for _ in 0..200 {
        let (_, m) = check_stability_matrices(&a1, &a2);
        if (m - radius).abs() < 1e-12 {
            break;
        }
        a1 *= radius / m;
    }
    (a1, a2)
}

pub fn demo_bundle(grid_size: usize, alpha: f64, nu: f64) -> (GeneratorBundle, GridMeta) {
    let meta = square_grid(grid_size);
    let n = meta.n_points();
    let (a1, a2) = stencil_var(&meta, 0.8);
    let (stable, max_modulus) = check_stability_matrices(&a1, &a2);
    let seasonal = SeasonalModel {
        n_harmonics: 1,
        mean_coefs: (0..n).map(|i| vec![6.0 + 0.01 * i as f64, 1.5, 0.5]).collect(),
        sd_coefs: (0..n).map(|_| vec![2.0, 0.3, 0.1]).collect(),
    };
    let dp = SkewTParamsDP {
        xi: DVector::zeros(n),
        omega: DMatrix::identity(n, n),
        alpha: DVector::from_element(n, alpha),
        nu,
    };
    let bundle = GeneratorBundle {
        seasonal,
        var: VarCoefficients { a1, a2, estimator: Estimator::Ols, stable, max_modulus },
        partition: Partition { n_clusters: 1, assignment: vec![1; n] },
        regions: vec![RegionSkewT {
            region: 1,
            members: (0..n).collect(),
            dp,
            matern_phi: 250.0,
            matern_kappa: 1.5,
            resid_sd: vec![1.0; n],
            diagnostics: FitDiagnostics {
                l2_distance: 0.0,
                gamma1_mse: 0.0,
                gamma2_mse: 0.0,
                gamma2m_sample: 0.0,
                gamma2m_used: 0.0,
                gamma2m_replaced: false,
            },
        }],
        family: InnovationFamily::SkewT,
        master_seed: 7,
    };
    (bundle, meta)
}
