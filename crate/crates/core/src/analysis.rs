//! Validation diagnostics: autocorrelation, ensemble quantiles, threshold
//! excursions, and seasonal wind-power-density summaries, plus tidy CSV
//! writers for each.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{format_value, EnsembleSeries};
use crate::stats;

/// Biased-at-large-lag sample ACF: rho(k) = c(k) / c(0) with the
/// 1/T normalization at every lag.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = x.len();
    if max_lag >= t / 2 {
        return Err(Error::InvalidArgument(format!(
            "max_lag {max_lag} must be below half the series length {t}"
        )));
    }
    let m = stats::mean(x);
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
    if c0 <= 0.0 {
        return Err(Error::InvalidArgument(
            "autocorrelation of a constant series is undefined".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let ck: f64 = (0..t - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / t as f64;
        out.push(ck / c0);
    }
    Ok(out)
}

/// Per-point ACF averaged over realizations. Rows follow point order; each
/// row has `max_lag + 1` entries starting at lag 0.
pub fn ensemble_acf(series: &EnsembleSeries, max_lag: usize) -> Result<Vec<Vec<f64>>> {
    if series.n_realizations == 0 {
        return Err(Error::InvalidArgument("no realizations to analyze".into()));
    }
    let n = series.meta.n_points();
    let mut out = vec![vec![0.0; max_lag + 1]; n];
    for i in 0..n {
        for r in 0..series.n_realizations {
            let a = acf(&series.point_series(r, i), max_lag)?;
            for (k, v) in a.iter().enumerate() {
                out[i][k] += v / series.n_realizations as f64;
            }
        }
    }
    Ok(out)
}

/// Per-point mean/min/max ACF envelope across realizations, keyed by stat
/// name for the tidy CSV output.
pub fn ensemble_acf_envelope(
    series: &EnsembleSeries,
    max_lag: usize,
) -> Result<Vec<(&'static str, Vec<Vec<f64>>)>> {
    if series.n_realizations == 0 {
        return Err(Error::InvalidArgument("no realizations to analyze".into()));
    }
    let n = series.meta.n_points();
    let mut mean = vec![vec![0.0; max_lag + 1]; n];
    let mut lo = vec![vec![f64::INFINITY; max_lag + 1]; n];
    let mut hi = vec![vec![f64::NEG_INFINITY; max_lag + 1]; n];
    for i in 0..n {
        for r in 0..series.n_realizations {
            let a = acf(&series.point_series(r, i), max_lag)?;
            for (k, v) in a.iter().enumerate() {
                mean[i][k] += v / series.n_realizations as f64;
                lo[i][k] = lo[i][k].min(*v);
                hi[i][k] = hi[i][k].max(*v);
            }
        }
    }
    Ok(vec![("mean", mean), ("min", lo), ("max", hi)])
}

/// Default probability grid for QQ tables: 0.5%, 1.0%, ..., 99.5%.
pub fn default_probs() -> Vec<f64> {
    (1..200).map(|k| k as f64 / 200.0).collect()
}

#[derive(Debug, Clone)]
pub struct QqTable {
    pub probs: Vec<f64>,
    /// reference quantiles per point (from observed data), rows by point
    pub ref_q: Vec<Vec<f64>>,
    /// simulated quantiles per point: per-realization quantiles averaged
    /// across the ensemble
    pub sim_q: Vec<Vec<f64>>,
}

fn point_quantiles(series: &EnsembleSeries, point: usize, probs: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; probs.len()];
    for r in 0..series.n_realizations {
        let mut x = series.point_series(r, point);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (j, &p) in probs.iter().enumerate() {
            acc[j] += stats::quantile_sorted(&x, p) / series.n_realizations as f64;
        }
    }
    acc
}

pub fn qq_table(
    reference: &EnsembleSeries,
    simulated: &EnsembleSeries,
    probs: Option<Vec<f64>>,
) -> Result<QqTable> {
    if reference.meta.n_points() != simulated.meta.n_points() {
        return Err(Error::Dimension("reference and simulation grids differ".into()));
    }
    if reference.n_realizations == 0 || simulated.n_realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization on both sides".into()));
    }
    let probs = probs.unwrap_or_else(default_probs);
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
    }
    let n = reference.meta.n_points();
    let mut ref_q = Vec::with_capacity(n);
    let mut sim_q = Vec::with_capacity(n);
    for i in 0..n {
        ref_q.push(point_quantiles(reference, i, &probs));
        sim_q.push(point_quantiles(simulated, i, &probs));
    }
    Ok(QqTable { probs, ref_q, sim_q })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcursionSide {
    Above,
    Below,
}

/// Lengths of maximal runs strictly beyond `threshold`. Runs touching either
/// boundary of the series are censored and dropped.
pub fn excursion_lengths(x: &[f64], threshold: f64, side: ExcursionSide) -> Vec<usize> {
    let beyond = |v: f64| match side {
        ExcursionSide::Above => v > threshold,
        ExcursionSide::Below => v < threshold,
    };
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for (t, &v) in x.iter().enumerate() {
        match (beyond(v), start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if s > 0 {
                    runs.push(t - s);
                }
                start = None;
            }
            _ => {}
        }
    }
    // a run still open at the end is right-censored: drop it
    runs
}

#[derive(Debug, Clone)]
pub struct ExcursionSummary {
    pub point: usize,
    pub threshold: f64,
    pub side: ExcursionSide,
    pub n_runs: usize,
    pub mean_length: f64,
    pub p90_length: f64,
    pub max_length: usize,
}

/// Pool maximal-run lengths across realizations for each point.
pub fn ensemble_excursions(
    series: &EnsembleSeries,
    threshold: f64,
    side: ExcursionSide,
) -> Vec<ExcursionSummary> {
    let n = series.meta.n_points();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut lens: Vec<usize> = Vec::new();
        for r in 0..series.n_realizations {
            lens.extend(excursion_lengths(&series.point_series(r, i), threshold, side));
        }
        let (mean_length, p90_length, max_length) = if lens.is_empty() {
            (0.0, 0.0, 0)
        } else {
            let f: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
            let mut sorted = f.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (
                stats::mean(&f),
                stats::quantile_sorted(&sorted, 0.9),
                *lens.iter().max().unwrap(),
            )
        };
        out.push(ExcursionSummary {
            point: i,
            threshold,
            side,
            n_runs: lens.len(),
            mean_length,
            p90_length,
            max_length,
        });
    }
    out
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WpdConfig {
    /// air density, kg/m^3
    pub rho: f64,
    /// hub height, m
    pub z: f64,
    /// measurement height the series was observed at, m
    pub z_r: f64,
    /// power-law shear exponent
    pub alpha: f64,
    /// clamp negative extrapolated speeds to zero before cubing
    pub clamp_zero: bool,
}

impl Default for WpdConfig {
    fn default() -> Self {
        WpdConfig { rho: 1.225, z: 80.0, z_r: 10.0, alpha: 1.0 / 7.0, clamp_zero: true }
    }
}

/// Wind power density in W/m^2 from a speed at the reference height:
/// extrapolate with the power law, then 0.5 * rho * w^3.
pub fn wpd(speed_at_ref: f64, cfg: &WpdConfig) -> f64 {
    let mut w = speed_at_ref * (cfg.z / cfg.z_r).powf(cfg.alpha);
    if cfg.clamp_zero && w < 0.0 {
        w = 0.0;
    }
    0.5 * cfg.rho * w * w * w
}

pub fn wpd_daily(series: &EnsembleSeries, cfg: &WpdConfig) -> Result<EnsembleSeries> {
    if series.standardized {
        return Err(Error::InvalidArgument(
            "wind power density needs the raw speed scale, not standardized values".into(),
        ));
    }
    Ok(series.map_values(|v| wpd(v, cfg), false))
}

/// A window of day-of-year indices (1-based, inclusive).
#[derive(Debug, Clone, Copy)]
pub struct SeasonDef {
    pub name: &'static str,
    pub first_day: usize,
    pub last_day: usize,
}

pub const MAM: SeasonDef = SeasonDef { name: "MAM", first_day: 60, last_day: 151 };
pub const JJA: SeasonDef = SeasonDef { name: "JJA", first_day: 152, last_day: 243 };

#[derive(Debug, Clone)]
pub struct WpdSeasonStats {
    pub season: &'static str,
    pub point: usize,
    /// across-realization summaries of the interannual SD of season means
    pub sd_median: f64,
    pub sd_min: f64,
    pub sd_max: f64,
    pub sd_q05: f64,
    pub sd_q95: f64,
}

/// Interannual variability of seasonal means: per realization and point,
/// average the daily series over the season window within each year, take
/// the SD across years, then summarize that SD across realizations.
pub fn seasonal_wpd_stats(
    daily: &EnsembleSeries,
    seasons: &[SeasonDef],
) -> Result<Vec<WpdSeasonStats>> {
    let n_years = daily.calendar.n_years;
    if n_years < 2 {
        return Err(Error::InvalidArgument(
            "interannual statistics need at least 2 years".into(),
        ));
    }
    if daily.n_realizations == 0 {
        return Err(Error::InvalidArgument("no realizations to analyze".into()));
    }
    let n = daily.meta.n_points();
    let mut out = Vec::new();
    for season in seasons {
        if season.first_day < 1 || season.last_day > 365 || season.first_day > season.last_day {
            return Err(Error::InvalidArgument(format!(
                "bad season window {}..{}",
                season.first_day, season.last_day
            )));
        }
        let len = (season.last_day - season.first_day + 1) as f64;
        for i in 0..n {
            let mut sds = Vec::with_capacity(daily.n_realizations);
            for r in 0..daily.n_realizations {
                let mut season_means = Vec::with_capacity(n_years);
                for y in 0..n_years {
                    let mut s = 0.0;
                    for d in season.first_day..=season.last_day {
                        s += daily.get(r, y * 365 + d - 1, i);
                    }
                    season_means.push(s / len);
                }
                sds.push(stats::sd(&season_means));
            }
            sds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(WpdSeasonStats {
                season: season.name,
                point: i,
                sd_median: stats::quantile_sorted(&sds, 0.5),
                sd_min: sds[0],
                sd_max: sds[sds.len() - 1],
                sd_q05: stats::quantile_sorted(&sds, 0.05),
                sd_q95: stats::quantile_sorted(&sds, 0.95),
            });
        }
    }
    Ok(out)
}

fn open_csv(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Tidy ACF CSV; each labeled set holds one per-point table of lag values.
pub fn write_acf_csv(path: &Path, sets: &[(&str, Vec<Vec<f64>>)]) -> Result<()> {
    let mut w = open_csv(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "point,lag,stat,value").map_err(io)?;
    for (stat, rows) in sets {
        for (i, row) in rows.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(w, "{i},{k},{stat},{}", format_value(*v)).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn write_qq_csv(path: &Path, table: &QqTable) -> Result<()> {
    let mut w = open_csv(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "point,prob,ref_q,sim_q").map_err(io)?;
    for i in 0..table.ref_q.len() {
        for (j, &p) in table.probs.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{}",
                format_value(p),
                format_value(table.ref_q[i][j]),
                format_value(table.sim_q[i][j])
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

pub fn write_excursions_csv(path: &Path, rows: &[ExcursionSummary]) -> Result<()> {
    let mut w = open_csv(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "point,threshold,side,n_runs,mean_length,p90_length,max_length").map_err(io)?;
    for s in rows {
        let side = match s.side {
            ExcursionSide::Above => "above",
            ExcursionSide::Below => "below",
        };
        writeln!(
            w,
            "{},{},{side},{},{},{},{}",
            s.point,
            format_value(s.threshold),
            s.n_runs,
            format_value(s.mean_length),
            format_value(s.p90_length),
            s.max_length
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn write_wpd_stats_csv(path: &Path, rows: &[WpdSeasonStats]) -> Result<()> {
    let mut w = open_csv(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "season,point,sd_median,sd_min,sd_max,sd_q05,sd_q95").map_err(io)?;
    for s in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.season,
            s.point,
            format_value(s.sd_median),
            format_value(s.sd_min),
            format_value(s.sd_max),
            format_value(s.sd_q05),
            format_value(s.sd_q95)
        )
        .map_err(io)?;
    }
    Ok(())
}
