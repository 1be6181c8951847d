use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use windgen_core::analysis::WpdConfig;
use windgen_core::regions::FeatureMode;
use windgen_core::sim::InnovationFamily;
use windgen_core::var::{Estimator, Scheme};
use windgen_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// grid.csv with id,lat,lon,elev
    pub grid: PathBuf,
    /// reference ensemble series.csv
    pub series: PathBuf,
    /// output directory; also where fitted bundle files are looked up
    pub out: PathBuf,
    /// lattice spacing in degrees; inferred from the grid when absent
    pub grid_spacing: Option<f64>,

    // seasonal fit
    pub n_harmonics: usize,
    pub sd_floor_rel: f64,

    // VAR fit
    pub scheme: Scheme,
    pub estimator: Estimator,
    /// realization ids used for fitting; empty = all
    pub training_members: Vec<usize>,
    pub significance_level: f64,

    // regions
    pub n_clusters: usize,
    pub feature_mode: FeatureMode,
    /// optional user partition file (bypasses clustering)
    pub partition_file: Option<PathBuf>,

    // skew-t fit
    pub gamma2_mse_threshold: f64,

    // simulation
    pub n_realizations: usize,
    pub n_years: usize,
    pub burn_in_days: usize,
    pub seed: u64,
    pub family: InnovationFamily,

    // validation
    pub max_lag: usize,
    pub excursion_threshold: f64,
    pub excursion_side: String,
    /// simulated series for validate/wpd; defaults to out/series.csv
    pub sim_series: Option<PathBuf>,

    pub wpd: WpdConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: PathBuf::from("grid.csv"),
            series: PathBuf::from("series.csv"),
            out: PathBuf::from("out"),
            grid_spacing: None,
            n_harmonics: 2,
            sd_floor_rel: 0.01,
            scheme: Scheme::Stencil,
            estimator: Estimator::Ols,
            training_members: Vec::new(),
            significance_level: 0.01,
            n_clusters: 9,
            feature_mode: FeatureMode::Corr,
            partition_file: None,
            gamma2_mse_threshold: 0.05,
            n_realizations: 30,
            n_years: 30,
            burn_in_days: 1000,
            seed: 0,
            family: InnovationFamily::SkewT,
            max_lag: 30,
            excursion_threshold: 3.0,
            excursion_side: "above".into(),
            sim_series: None,
            wpd: WpdConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Ground-truth dataset generator settings (`synth` subcommand).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// side length of the square lattice
    pub grid_size: usize,
    pub n_members: usize,
    pub n_years: usize,
    pub n_regions: usize,
    /// target max companion-matrix modulus of the truth VAR
    pub spectral_radius: f64,
    /// common slant parameter of the truth innovations
    pub alpha: f64,
    pub nu: f64,
    pub matern_phi_km: f64,
    pub family: InnovationFamily,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_size: 5,
            n_members: 3,
            n_years: 50,
            n_regions: 4,
            spectral_radius: 0.8,
            alpha: 3.0,
            nu: 8.0,
            matern_phi_km: 60.0,
            family: InnovationFamily::SkewT,
        }
    }
}

/// Load the config file (if given), apply `--set key=value` overrides by
/// dotted JSON path, then typed flags (`--seed`, `--out`), which win last.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut doc: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => serde_json::json!({}),
    };
    if !doc.is_object() {
        return Err(Error::InvalidArgument("config file must hold a JSON object".into()));
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(doc)
        .map_err(|e| Error::InvalidArgument(format!("bad config: {e}")))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = out.to_path_buf();
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_set(doc: &mut serde_json::Value, s: &str) -> Result<()> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("--set needs key=value, got {s:?}")))?;
    // bare words become strings; anything that parses as JSON is kept typed
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidArgument(format!("empty path segment in {key:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("{key:?} descends into a non-object")))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    unreachable!()
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.n_harmonics == 0 {
        return Err(Error::InvalidArgument("n_harmonics must be positive".into()));
    }
    if cfg.n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be positive".into()));
    }
    if !matches!(cfg.excursion_side.as_str(), "above" | "below") {
        return Err(Error::InvalidArgument(format!(
            "excursion_side must be \"above\" or \"below\", got {:?}",
            cfg.excursion_side
        )));
    }
    if cfg.wpd.z <= 0.0 || cfg.wpd.z_r <= 0.0 || cfg.wpd.alpha <= 0.0 {
        return Err(Error::InvalidArgument("WPD heights and exponent must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.significance_level) || cfg.significance_level == 0.0 {
        return Err(Error::InvalidArgument("significance_level must lie in (0, 1)".into()));
    }
    let s = &cfg.synth;
    if s.grid_size < 2 || s.n_regions == 0 || s.grid_size * s.grid_size < 2 * s.n_regions {
        return Err(Error::InvalidArgument(
            "synth grid too small for the requested region count".into(),
        ));
    }
    if !(0.0..1.0).contains(&s.spectral_radius) {
        return Err(Error::InvalidArgument("spectral_radius must lie in [0, 1)".into()));
    }
    if s.nu <= 4.0 {
        return Err(Error::InvalidArgument("synth nu must exceed 4".into()));
    }
    Ok(())
}
