//! Day-of-year harmonic mean and standard-deviation cycles, common to all
//! ensemble members, and the standardization they induce.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Calendar365, EnsembleSeries, DAYS_PER_YEAR};

/// Per-gridpoint harmonic coefficients for the seasonal mean and SD cycles.
/// Each coefficient vector is `[intercept, a_1, b_1, ..., a_K, b_K]` for
/// `intercept + sum_k a_k sin(2 pi k d / 365) + b_k cos(2 pi k d / 365)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeasonalModel {
    pub n_harmonics: usize,
    pub mean_coefs: Vec<Vec<f64>>,
    pub sd_coefs: Vec<Vec<f64>>,
}

/// Harmonic regression basis at 1-based day of year `d`.
pub fn harmonic_basis(d: usize, n_harmonics: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * n_harmonics + 1);
    row.push(1.0);
    let x = d as f64 / DAYS_PER_YEAR as f64;
    for k in 1..=n_harmonics {
        let w = 2.0 * std::f64::consts::PI * k as f64 * x;
        row.push(w.sin());
        row.push(w.cos());
    }
    row
}

fn eval_coefs(coefs: &[f64], d: usize, n_harmonics: usize) -> f64 {
    harmonic_basis(d, n_harmonics)
        .iter()
        .zip(coefs)
        .map(|(b, c)| b * c)
        .sum()
}

impl SeasonalModel {
    pub fn n_points(&self) -> usize {
        self.mean_coefs.len()
    }

    /// Seasonal mean at point `i`, day-of-year `d` (1-based).
    pub fn mu(&self, i: usize, d: usize) -> f64 {
        eval_coefs(&self.mean_coefs[i], d, self.n_harmonics)
    }

    /// Seasonal SD at point `i`, day-of-year `d` (1-based).
    pub fn sigma(&self, i: usize, d: usize) -> f64 {
        eval_coefs(&self.sd_coefs[i], d, self.n_harmonics)
    }
}

/// Least-squares fit of the harmonic basis to 365 day-of-year targets.
fn fit_harmonics(targets: &[f64; DAYS_PER_YEAR], n_harmonics: usize) -> Result<Vec<f64>> {
    let p = 2 * n_harmonics + 1;
    let mut design = DMatrix::zeros(DAYS_PER_YEAR, p);
    for d in 1..=DAYS_PER_YEAR {
        for (j, b) in harmonic_basis(d, n_harmonics).into_iter().enumerate() {
            design[(d - 1, j)] = b;
        }
    }
    let y = DVector::from_row_slice(targets);
    let svd = design.svd(true, true);
    svd.solve(&y, 1e-12)
        .map(|c| c.iter().copied().collect())
        .map_err(|e| Error::SeasonalFit(format!("singular harmonic design: {e}")))
}

/// Fit the seasonal model: day-of-year means pooled over years and members,
/// harmonic regression of the means, then the same for the SDs of the
/// mean-removed residuals. The fitted SD curve must stay above
/// `sd_floor_rel` times the overall series SD at every calendar day.
pub fn fit_seasonal(
    series: &EnsembleSeries,
    n_harmonics: usize,
    sd_floor_rel: f64,
) -> Result<SeasonalModel> {
    if series.standardized {
        return Err(Error::SeasonalFit("expected a raw (m/s) series".into()));
    }
    if n_harmonics == 0 || 2 * n_harmonics + 1 > DAYS_PER_YEAR {
        return Err(Error::InvalidArgument(format!("bad harmonic count {n_harmonics}")));
    }
    let n = series.n_points();
    let n_per_day = series.n_realizations * series.calendar.n_years;

    let overall_sd = crate::stats::sd(series.values());
    if overall_sd <= 0.0 {
        return Err(Error::SeasonalFit("series has zero variance".into()));
    }
    let floor = sd_floor_rel * overall_sd;

    let mut mean_coefs = Vec::with_capacity(n);
    let mut sd_coefs = Vec::with_capacity(n);
    for i in 0..n {
        let mut day_mean = [0.0; DAYS_PER_YEAR];
        for r in 0..series.n_realizations {
            for t in 0..series.n_days() {
                day_mean[t % DAYS_PER_YEAR] += series.get(r, t, i);
            }
        }
        for m in &mut day_mean {
            *m /= n_per_day as f64;
        }
        let mc = fit_harmonics(&day_mean, n_harmonics)?;

        let mut day_ss = [0.0; DAYS_PER_YEAR];
        for r in 0..series.n_realizations {
            for t in 0..series.n_days() {
                let d = t % DAYS_PER_YEAR;
                let resid = series.get(r, t, i) - eval_coefs(&mc, d + 1, n_harmonics);
                day_ss[d] += resid * resid;
            }
        }
        let mut day_sd = [0.0; DAYS_PER_YEAR];
        for d in 0..DAYS_PER_YEAR {
            day_sd[d] = (day_ss[d] / n_per_day as f64).sqrt();
        }
        let sc = fit_harmonics(&day_sd, n_harmonics)?;
        for d in 1..=DAYS_PER_YEAR {
            let s = eval_coefs(&sc, d, n_harmonics);
            if s < floor {
                return Err(Error::SeasonalFit(format!(
                    "fitted SD curve at gridpoint {i} drops to {s:.3e} on day {d} \
                     (floor {floor:.3e})"
                )));
            }
        }
        mean_coefs.push(mc);
        sd_coefs.push(sc);
    }
    Ok(SeasonalModel { n_harmonics, mean_coefs, sd_coefs })
}

fn check_compatible(series: &EnsembleSeries, model: &SeasonalModel) -> Result<()> {
    if series.n_points() != model.n_points() {
        return Err(Error::Dimension(format!(
            "series has {} points, seasonal model has {}",
            series.n_points(),
            model.n_points()
        )));
    }
    Ok(())
}

/// Map a raw series onto the dimensionless residual scale:
/// `(w - mu_{i,d}) / sigma_{i,d}`.
pub fn standardize(series: &EnsembleSeries, model: &SeasonalModel) -> Result<EnsembleSeries> {
    check_compatible(series, model)?;
    if series.standardized {
        return Err(Error::InvalidArgument("series is already standardized".into()));
    }
    let mut out = series.clone();
    out.standardized = true;
    apply(&mut out, series, model, |w, mu, s| (w - mu) / s);
    Ok(out)
}

/// Exact inverse of [`standardize`].
pub fn destandardize(series: &EnsembleSeries, model: &SeasonalModel) -> Result<EnsembleSeries> {
    check_compatible(series, model)?;
    if !series.standardized {
        return Err(Error::InvalidArgument("series is already on the raw scale".into()));
    }
    let mut out = series.clone();
    out.standardized = false;
    apply(&mut out, series, model, |z, mu, s| mu + s * z);
    Ok(out)
}

fn apply<F: Fn(f64, f64, f64) -> f64>(
    out: &mut EnsembleSeries,
    src: &EnsembleSeries,
    model: &SeasonalModel,
    f: F,
) {
    let n = src.n_points();
    // precomputed 365 x N tables
    let mut mu = vec![0.0; DAYS_PER_YEAR * n];
    let mut sig = vec![0.0; DAYS_PER_YEAR * n];
    for d in 1..=DAYS_PER_YEAR {
        for i in 0..n {
            mu[(d - 1) * n + i] = model.mu(i, d);
            sig[(d - 1) * n + i] = model.sigma(i, d);
        }
    }
    for r in 0..src.n_realizations {
        for t in 0..src.n_days() {
            let d = Calendar365::day_of_year(t) - 1;
            for i in 0..n {
                out.set(r, t, i, f(src.get(r, t, i), mu[d * n + i], sig[d * n + i]));
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PointCoefs {
    id: usize,
    mean_coefs: Vec<f64>,
    sd_coefs: Vec<f64>,
}

pub fn save_seasonal(model: &SeasonalModel, path: &Path) -> Result<()> {
    let rows: Vec<PointCoefs> = (0..model.n_points())
        .map(|i| PointCoefs {
            id: i,
            mean_coefs: model.mean_coefs[i].clone(),
            sd_coefs: model.sd_coefs[i].clone(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_seasonal(path: &Path) -> Result<SeasonalModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<PointCoefs> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if rows.is_empty() {
        return Err(Error::json(path, "empty seasonal model"));
    }
    let p = rows[0].mean_coefs.len();
    if p < 3 || p % 2 == 0 || rows.iter().any(|r| r.mean_coefs.len() != p || r.sd_coefs.len() != p)
    {
        return Err(Error::json(path, "coefficient vectors must share an odd length >= 3"));
    }
    let mut mean_coefs = vec![Vec::new(); rows.len()];
    let mut sd_coefs = vec![Vec::new(); rows.len()];
    for r in rows {
        if r.id >= mean_coefs.len() {
            return Err(Error::json(path, format!("gridpoint id {} out of range", r.id)));
        }
        mean_coefs[r.id] = r.mean_coefs;
        sd_coefs[r.id] = r.sd_coefs;
    }
    Ok(SeasonalModel { n_harmonics: (p - 1) / 2, mean_coefs, sd_coefs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridMeta, GridPoint};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn one_point_meta() -> GridMeta {
        GridMeta::new(vec![GridPoint { id: 0, lat: 20.0, lon: 40.0, elev: 0.0 }], 1.0).unwrap()
    }

    fn synthetic_series(n_years: usize, seed: u64) -> EnsembleSeries {
        // y = 2 + 0.5 sin(2 pi d / 365) + noise(sd 0.1)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cal = Calendar365::new(0, n_years).unwrap();
        let mut s = EnsembleSeries::zeros(one_point_meta(), cal, 1, false);
        for t in 0..s.n_days() {
            let d = Calendar365::day_of_year(t) as f64;
            let w = 2.0
                + 0.5 * (2.0 * std::f64::consts::PI * d / 365.0).sin()
                + 0.1 * rng.sample::<f64, _>(StandardNormal);
            s.set(0, t, 0, w.max(0.0));
        }
        s
    }

    #[test]
    fn constant_series_mean_flat_sd_rejected() {
        let cal = Calendar365::new(0, 2).unwrap();
        let mut s = EnsembleSeries::zeros(one_point_meta(), cal, 1, false);
        for t in 0..s.n_days() {
            s.set(0, t, 0, 7.0);
        }
        let err = fit_seasonal(&s, 5, 1e-3).unwrap_err();
        assert!(matches!(err, Error::SeasonalFit(_)), "{err}");
    }

    #[test]
    fn recovers_single_harmonic() {
        let s = synthetic_series(50, 42);
        let model = fit_seasonal(&s, 1, 1e-3).unwrap();
        let c = &model.mean_coefs[0];
        assert_relative_eq!(c[0], 2.0, epsilon = 0.02); // intercept
        assert_relative_eq!(c[1], 0.5, epsilon = 0.02); // a_1 (sin)
        assert_relative_eq!(c[2], 0.0, epsilon = 0.02); // b_1 (cos)
    }

    #[test]
    fn higher_harmonics_vanish() {
        let s = synthetic_series(50, 43);
        let model = fit_seasonal(&s, 5, 1e-3).unwrap();
        let c = &model.mean_coefs[0];
        for k in 2..=5 {
            assert!(c[2 * k - 1].abs() < 0.02, "a_{k} = {}", c[2 * k - 1]);
            assert!(c[2 * k].abs() < 0.02, "b_{k} = {}", c[2 * k]);
        }
    }

    #[test]
    fn standardize_arithmetic_and_inverse() {
        let s = synthetic_series(10, 44);
        let model = fit_seasonal(&s, 5, 1e-3).unwrap();
        let z = standardize(&s, &model).unwrap();
        assert!(z.standardized);
        // value equal to mu maps to 0
        let mu = model.mu(0, 1);
        let sig = model.sigma(0, 1);
        assert_relative_eq!((mu - mu) / sig, 0.0);
        // round trip
        let back = destandardize(&z, &model).unwrap();
        for t in 0..s.n_days() {
            let a = s.get(0, t, 0);
            let b = back.get(0, t, 0);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn restandardized_series_is_centered_and_unit_scale() {
        let s = synthetic_series(50, 45);
        let model = fit_seasonal(&s, 5, 1e-3).unwrap();
        let z = standardize(&s, &model).unwrap();
        // refit on the standardized series: intercept ~0 mean, ~1 sd,
        // harmonic amplitudes ~0
        let refit_mean = {
            let mut day_mean = [0.0; DAYS_PER_YEAR];
            for t in 0..z.n_days() {
                day_mean[t % DAYS_PER_YEAR] += z.get(0, t, 0);
            }
            for m in &mut day_mean {
                *m /= z.calendar.n_years as f64;
            }
            fit_harmonics(&day_mean, 5).unwrap()
        };
        assert!(refit_mean[0].abs() < 0.05, "intercept {}", refit_mean[0]);
        for c in &refit_mean[1..] {
            assert!(c.abs() < 0.05, "harmonic {c}");
        }
    }

    #[test]
    fn basis_is_periodic() {
        for k in 1..=5 {
            for d in 1..=365 {
                let a = harmonic_basis(d, k);
                let b = harmonic_basis(d + 365, k);
                for (x, y) in a.iter().zip(&b) {
                    assert_relative_eq!(x, y, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let s = synthetic_series(5, 46);
        let model = fit_seasonal(&s, 3, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seasonal.json");
        save_seasonal(&model, &path).unwrap();
        let loaded = load_seasonal(&path).unwrap();
        assert_eq!(loaded.n_harmonics, 3);
        assert_eq!(loaded.mean_coefs, model.mean_coefs);
        assert_eq!(loaded.sd_coefs, model.sd_coefs);
    }
}
