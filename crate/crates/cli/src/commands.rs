use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use windgen_core::analysis::{
    ensemble_acf_envelope, ensemble_excursions, qq_table, seasonal_wpd_stats, wpd_daily,
    write_acf_csv, write_excursions_csv, write_qq_csv, write_wpd_stats_csv, ExcursionSide, JJA,
    MAM,
};
use windgen_core::grid::{
    load_grid, load_series, load_simulated_series, save_grid, save_series, EnsembleSeries,
    GridMeta,
};
use windgen_core::regions::{
    build_features, cluster_ward, contiguity_report, load_partition, save_partition,
};
use windgen_core::seasonal::{fit_seasonal, load_seasonal, save_seasonal, standardize};
use windgen_core::sim::{simulate, GeneratorBundle, InnovationFamily};
use windgen_core::skewt::{fit_region, load_regions, save_regions, RegionFitConfig};
use windgen_core::var::{
    build_restrictions, fit_var, load_var, save_var, save_var_matrices, significance_report,
    VarModel,
};
use windgen_core::{Error, Result};

use crate::config::RunConfig;
use crate::synth::truth_bundle;

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keep only the listed realizations (empty list = keep all).
fn select_members(series: &EnsembleSeries, ids: &[usize]) -> Result<EnsembleSeries> {
    if ids.is_empty() {
        return Ok(series.clone());
    }
    let mut seen = std::collections::HashSet::new();
    for &id in ids {
        if id >= series.n_realizations {
            return Err(Error::InvalidArgument(format!(
                "training member {id} out of range (have {})",
                series.n_realizations
            )));
        }
        if !seen.insert(id) {
            return Err(Error::InvalidArgument(format!("training member {id} listed twice")));
        }
    }
    let mut out = EnsembleSeries::zeros(
        series.meta.clone(),
        series.calendar,
        ids.len(),
        series.standardized,
    );
    for (rr, &r) in ids.iter().enumerate() {
        for t in 0..series.n_days() {
            for i in 0..series.n_points() {
                out.set(rr, t, i, series.get(r, t, i));
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct RegionReport {
    region: usize,
    size: usize,
    nu: f64,
    matern_phi_km: f64,
    cp_to_dp_residual: f64,
    gamma1_mse: f64,
    gamma2_mse: f64,
    gamma2m_sample: f64,
    gamma2m_used: f64,
    gamma2m_replaced: bool,
    contiguous: bool,
}

#[derive(Serialize)]
struct FitReport {
    stable: bool,
    max_modulus: f64,
    estimator: String,
    n_coefficients: usize,
    n_significant: usize,
    significance_level: f64,
    significance: Vec<SigRow>,
    regions: Vec<RegionReport>,
    merge_costs: Vec<f64>,
}

#[derive(Serialize)]
struct SigRow {
    matrix: String,
    i: usize,
    j: usize,
    estimate: f64,
    std_error: f64,
    p_value: f64,
    significant: bool,
}

fn region_data(model: &VarModel, members: &[usize]) -> DMatrix<f64> {
    let res = &model.residuals;
    let rows = res.n_members * res.n_steps;
    let mut m = DMatrix::zeros(rows, members.len());
    for (col, &i) in members.iter().enumerate() {
        let pooled = res.pooled_point(i);
        for (row, v) in pooled.into_iter().enumerate() {
            m[(row, col)] = v;
        }
    }
    m
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let meta = load_grid(&cfg.grid, cfg.grid_spacing)?;
    meta.validate()?;
    let raw = load_series(&cfg.series, &cfg.grid)?;
    let raw = select_members(&raw, &cfg.training_members)?;

    let seasonal = fit_seasonal(&raw, cfg.n_harmonics, cfg.sd_floor_rel)?;
    save_seasonal(&seasonal, &cfg.out.join("seasonal.json"))?;

    let std_series = standardize(&raw, &seasonal)?;
    let restr = build_restrictions(&meta, cfg.scheme);
    let model = fit_var(&std_series, &restr, cfg.estimator)?;
    save_var(&model, &cfg.out.join("var.json"))?;
    let sig = significance_report(&model, &std_series, cfg.significance_level)?;

    let (partition, merge_costs) = match &cfg.partition_file {
        Some(p) => (load_partition(p, meta.n_points())?, Vec::new()),
        None => {
            let features = build_features(&model, cfg.feature_mode, &meta);
            cluster_ward(&features, cfg.n_clusters)?
        }
    };
    save_partition(&partition, &cfg.out.join("partition.json"))?;
    let contiguous = contiguity_report(&partition, &meta);

    let fit_cfg = RegionFitConfig { gamma2_mse_threshold: cfg.gamma2_mse_threshold };
    let mut regions = Vec::with_capacity(partition.n_clusters);
    for c in 1..=partition.n_clusters {
        let members = partition.members(c);
        let data = region_data(&model, &members);
        let coords: Vec<(f64, f64)> =
            members.iter().map(|&i| (meta.points[i].lat, meta.points[i].lon)).collect();
        regions.push(fit_region(c, members, &data, &coords, &fit_cfg)?);
    }
    save_regions(&regions, &cfg.out.join("skewt.json"))?;

    let report = FitReport {
        stable: model.stable,
        max_modulus: model.max_modulus,
        estimator: format!("{:?}", model.estimator).to_lowercase(),
        n_coefficients: sig.len(),
        n_significant: sig.iter().filter(|t| t.significant).count(),
        significance_level: cfg.significance_level,
        significance: sig
            .into_iter()
            .map(|t| SigRow {
                matrix: format!("{:?}", t.lag),
                i: t.i,
                j: t.j,
                estimate: t.estimate,
                std_error: t.se,
                p_value: t.p_value,
                significant: t.significant,
            })
            .collect(),
        regions: regions
            .iter()
            .map(|r| RegionReport {
                region: r.region,
                size: r.members.len(),
                nu: r.dp.nu,
                matern_phi_km: r.matern_phi,
                cp_to_dp_residual: r.diagnostics.l2_distance,
                gamma1_mse: r.diagnostics.gamma1_mse,
                gamma2_mse: r.diagnostics.gamma2_mse,
                gamma2m_sample: r.diagnostics.gamma2m_sample,
                gamma2m_used: r.diagnostics.gamma2m_used,
                gamma2m_replaced: r.diagnostics.gamma2m_replaced,
                contiguous: contiguous[r.region - 1],
            })
            .collect(),
        merge_costs,
    };
    write_json(&cfg.out.join("fit_report.json"), &report)
}

fn load_bundle(cfg: &RunConfig, meta: &GridMeta) -> Result<GeneratorBundle> {
    let seasonal = load_seasonal(&cfg.out.join("seasonal.json"))?;
    let var = load_var(&cfg.out.join("var.json"))?;
    let partition = load_partition(&cfg.out.join("partition.json"), meta.n_points())?;
    let regions = load_regions(&cfg.out.join("skewt.json"))?;
    Ok(GeneratorBundle {
        seasonal,
        var,
        partition,
        regions,
        family: cfg.family,
        master_seed: cfg.seed,
    })
}

/// FNV-1a over file bytes; recorded in the manifest so a simulation can be
/// tied back to the exact bundle files it used.
fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    burn_in_days: usize,
    family: InnovationFamily,
    n_realizations: usize,
    n_years: usize,
    bundle_hashes: std::collections::BTreeMap<String, String>,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let meta = load_grid(&cfg.grid, cfg.grid_spacing)?;
    let bundle = load_bundle(cfg, &meta)?;
    let series = simulate(&bundle, &meta, cfg.n_realizations, cfg.n_years, cfg.burn_in_days)?;
    save_series(&series, &cfg.out.join("series.csv"))?;

    let mut bundle_hashes = std::collections::BTreeMap::new();
    for name in ["seasonal.json", "var.json", "partition.json", "skewt.json"] {
        bundle_hashes.insert(name.to_string(), file_hash(&cfg.out.join(name))?);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        burn_in_days: cfg.burn_in_days,
        family: cfg.family,
        n_realizations: cfg.n_realizations,
        n_years: cfg.n_years,
        bundle_hashes,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)
}

fn sim_series_path(cfg: &RunConfig) -> PathBuf {
    cfg.sim_series.clone().unwrap_or_else(|| cfg.out.join("series.csv"))
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let reference = load_series(&cfg.series, &cfg.grid)?;
    let simulated = load_simulated_series(&sim_series_path(cfg), &cfg.grid)?;

    let mut sets: Vec<(&str, Vec<Vec<f64>>)> = Vec::new();
    for (stat, rows) in ensemble_acf_envelope(&reference, cfg.max_lag)? {
        sets.push((match stat {
            "mean" => "ref_mean",
            "min" => "ref_min",
            _ => "ref_max",
        }, rows));
    }
    for (stat, rows) in ensemble_acf_envelope(&simulated, cfg.max_lag)? {
        sets.push((match stat {
            "mean" => "sim_mean",
            "min" => "sim_min",
            _ => "sim_max",
        }, rows));
    }
    write_acf_csv(&cfg.out.join("acf.csv"), &sets)?;

    let table = qq_table(&reference, &simulated, None)?;
    write_qq_csv(&cfg.out.join("qq.csv"), &table)?;

    let side = match cfg.excursion_side.as_str() {
        "below" => ExcursionSide::Below,
        _ => ExcursionSide::Above,
    };
    let exc = ensemble_excursions(&simulated, cfg.excursion_threshold, side);
    write_excursions_csv(&cfg.out.join("excursions.csv"), &exc)
}

pub fn cmd_wpd(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let path = sim_series_path(cfg);
    let series = if path.exists() {
        load_simulated_series(&path, &cfg.grid)?
    } else {
        load_series(&cfg.series, &cfg.grid)?
    };
    let daily = wpd_daily(&series, &cfg.wpd)?;
    let rows = seasonal_wpd_stats(&daily, &[MAM, JJA])?;
    write_wpd_stats_csv(&cfg.out.join("wpd_stats.csv"), &rows)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let (bundle, meta) = truth_bundle(&cfg.synth, cfg.seed)?;
    save_grid(&meta, &cfg.out.join("grid.csv"))?;
    let series = simulate(&bundle, &meta, cfg.synth.n_members, cfg.synth.n_years, cfg.burn_in_days)?;
    // reference datasets are nonnegative by contract; the generator's rare
    // negative excursions are clamped rather than preserved here
    let series = series.map_values(|v| v.max(0.0), false);
    save_series(&series, &cfg.out.join("series.csv"))?;

    let truth_dir = cfg.out.join("truth");
    std::fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;
    save_seasonal(&bundle.seasonal, &truth_dir.join("seasonal.json"))?;
    save_var_matrices(
        &bundle.var.a1,
        &bundle.var.a2,
        bundle.var.estimator,
        &truth_dir.join("var.json"),
    )?;
    save_partition(&bundle.partition, &truth_dir.join("partition.json"))?;
    save_regions(&bundle.regions, &truth_dir.join("skewt.json"))?;
    Ok(())
}

/// Rebuild a bundle saved by `cmd_synth` (or `cmd_fit`) from a directory.
pub fn bundle_from_dir(
    dir: &Path,
    meta: &GridMeta,
    family: InnovationFamily,
    master_seed: u64,
) -> Result<GeneratorBundle> {
    Ok(GeneratorBundle {
        seasonal: load_seasonal(&dir.join("seasonal.json"))?,
        var: load_var(&dir.join("var.json"))?,
        partition: load_partition(&dir.join("partition.json"), meta.n_points())?,
        regions: load_regions(&dir.join("skewt.json"))?,
        family,
        master_seed,
    })
}
