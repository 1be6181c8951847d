//! Ground-truth dataset generation: a known bundle on a square lattice,
//! used to exercise the full fit/simulate pipeline against known answers.

use nalgebra::{DMatrix, DVector};
use windgen_core::grid::{GridMeta, GridPoint};
use windgen_core::regions::Partition;
use windgen_core::seasonal::SeasonalModel;
use windgen_core::sim::GeneratorBundle;
use windgen_core::skewt::{matern_kappa32, FitDiagnostics, RegionSkewT, SkewTParamsDP};
use windgen_core::stats::haversine_km;
use windgen_core::var::{check_stability_matrices, Estimator, VarCoefficients};
use windgen_core::{Error, Result};

use crate::config::SynthConfig;

pub fn square_grid(side: usize) -> Result<GridMeta> {
    let mut pts = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            pts.push(GridPoint {
                id: r * side + c,
                lat: 25.0 + r as f64 * 0.5,
                lon: 45.0 + c as f64 * 0.5,
                elev: 10.0 * ((r + c) % 3) as f64,
            });
        }
    }
    GridMeta::new(pts, 0.5)
}

/// Stencil A1 (self + N/S/E/W) and diagonal A2, rescaled so the companion
/// matrix has the requested max modulus.
pub fn stencil_truth(meta: &GridMeta, radius: f64) -> (DMatrix<f64>, DMatrix<f64>) {
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

/// Contiguous row-major blocks of near-equal size, labels 1..k.
pub fn block_partition(n: usize, k: usize) -> Partition {
    let assignment = (0..n).map(|i| (i * k / n) + 1).collect();
    Partition { n_clusters: k, assignment }
}

pub fn truth_bundle(cfg: &SynthConfig, master_seed: u64) -> Result<(GeneratorBundle, GridMeta)> {
    let meta = square_grid(cfg.grid_size)?;
    let n = meta.n_points();

    // mean kept high relative to the sd so that negative raw speeds are
    // rare: reference datasets must be nonnegative, and cmd_synth clamps
    // the residual handful of negatives to zero
    let seasonal = SeasonalModel {
        n_harmonics: 2,
        mean_coefs: (0..n)
            .map(|i| vec![8.0 + 0.02 * i as f64, 1.0, 0.3, -0.2, 0.1])
            .collect(),
        sd_coefs: (0..n).map(|i| vec![0.6 + 0.005 * i as f64, 0.08, 0.03, 0.02, 0.0]).collect(),
    };

    let (a1, a2) = stencil_truth(&meta, cfg.spectral_radius);
    let (stable, max_modulus) = check_stability_matrices(&a1, &a2);
    if !stable {
        return Err(Error::Simulation("truth VAR failed its own stability check".into()));
    }

    let partition = block_partition(n, cfg.n_regions);
    let mut regions = Vec::with_capacity(cfg.n_regions);
    for c in 1..=cfg.n_regions {
        let members = partition.members(c);
        let d = members.len();
        let mut omega = DMatrix::identity(d, d);
        for a in 0..d {
            for b in 0..a {
                let pa = &meta.points[members[a]];
                let pb = &meta.points[members[b]];
                let h = haversine_km((pa.lat, pa.lon), (pb.lat, pb.lon));
                let v = matern_kappa32(h, cfg.matern_phi_km);
                omega[(a, b)] = v;
                omega[(b, a)] = v;
            }
        }
        // alternate the slant sign by region so both tails get exercised
        let sign = if c % 2 == 0 { -1.0 } else { 1.0 };
        regions.push(RegionSkewT {
            region: c,
            members,
            dp: SkewTParamsDP {
                xi: DVector::zeros(d),
                omega,
                alpha: DVector::from_element(d, sign * cfg.alpha),
                nu: cfg.nu,
            },
            matern_phi: cfg.matern_phi_km,
            matern_kappa: 1.5,
            resid_sd: vec![1.0; d],
            diagnostics: FitDiagnostics {
                l2_distance: 0.0,
                gamma1_mse: 0.0,
                gamma2_mse: 0.0,
                gamma2m_sample: 0.0,
                gamma2m_used: 0.0,
                gamma2m_replaced: false,
            },
        });
    }

    let bundle = GeneratorBundle {
        seasonal,
        var: VarCoefficients { a1, a2, estimator: Estimator::Ols, stable, max_modulus },
        partition,
        regions,
        family: cfg.family,
        master_seed,
    };
    Ok((bundle, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_partition_covers_and_balances() {
        let p = block_partition(25, 4);
        p.validate(25).unwrap();
        let sizes = p.sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 25);
        assert!(sizes.iter().all(|&s| s >= 2));
    }

    #[test]
    fn truth_bundle_is_stable_and_consistent() {
        let cfg = SynthConfig::default();
        let (bundle, meta) = truth_bundle(&cfg, 1).unwrap();
        assert!(bundle.var.stable);
        assert!((bundle.var.max_modulus - 0.8).abs() < 1e-9);
        assert_eq!(bundle.seasonal.n_points(), meta.n_points());
        let covered: usize = bundle.regions.iter().map(|r| r.members.len()).sum();
        assert_eq!(covered, meta.n_points());
    }
}
