//! Stochastic daily wind-speed generator for regular lat/lon grids.
//!
//! Pipeline: remove seasonal mean/SD cycles with harmonic
//! regression, fit a sparsity-restricted VAR(2) to the standardized
//! series, partition the grid into regions, fit a multivariate skew-t
//! to each region's residuals, then simulate new realizations and map
//! them back to the m/s scale.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod optim;
pub mod regions;
pub mod seasonal;
pub mod sim;
pub mod skewt;
pub mod stats;
pub mod var;

pub use error::{Error, Result};
pub use grid::{
    build_neighbors, format_value, load_grid, load_series, load_series_with_meta,
    load_simulated_series, save_grid,
    save_series, Calendar365, Direction, EnsembleSeries, GridMeta, GridPoint,
};
pub use regions::{
    build_features, cluster_ward, contiguity_report, load_partition, save_partition, FeatureMode,
    Partition,
};
pub use seasonal::{
    destandardize, fit_seasonal, load_seasonal, save_seasonal, standardize, SeasonalModel,
};
pub use sim::{simulate, splitmix64, stream_seed, GeneratorBundle, InnovationFamily};
pub use skewt::{
    cp_to_dp, dp_moments, fit_matern, fit_region, load_regions, matern_kappa32, sample,
    save_regions, FitDiagnostics, RegionFitConfig, RegionSkewT, SkewTParamsCP, SkewTParamsDP,
    SkewTSampler,
};
pub use var::{
    build_restrictions, check_stability, check_stability_matrices, fit_var, load_var,
    residual_moments, save_var, save_var_matrices, significance_report, Estimator, Lag, Residuals,
    Restrictions, Scheme, VarCoefficients, VarModel,
};
pub use analysis::{
    acf, ensemble_acf, ensemble_acf_envelope, ensemble_excursions, excursion_lengths, qq_table,
    seasonal_wpd_stats,
    wpd, wpd_daily, write_acf_csv, write_excursions_csv, write_qq_csv, write_wpd_stats_csv,
    ExcursionSide, ExcursionSummary, QqTable, SeasonDef, WpdConfig, WpdSeasonStats, JJA, MAM,
};
