//! Multivariate skew-t core: density, moments, the direct/centered
//! parameterization maps, sampling, and the region-wise method-of-moments
//! fit with a Matern-parameterized scale matrix.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::{golden_section, nelder_mead};
use crate::stats;

/// Direct parameterization (xi, Omega, alpha, nu) of the skew-t family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewTParamsDP {
    pub xi: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub nu: f64,
}

/// Centered parameterization: mean, covariance, marginal skewnesses, and
/// Mardia excess kurtosis. Requires nu > 4.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewTParamsCP {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma1: DVector<f64>,
    pub gamma2m: f64,
}

impl SkewTParamsDP {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// Diagonal scale vector omega_i = sqrt(Omega_ii).
    pub fn omega_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.omega[(i, i)].sqrt())
    }

    /// The scale correlation matrix Omega-bar.
    pub fn omega_bar(&self) -> DMatrix<f64> {
        let w = self.omega_diag();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.omega[(i, j)] / (w[i] * w[j]))
    }

    /// delta = (1 + alpha' Obar alpha)^{-1/2} Obar alpha.
    pub fn delta(&self) -> DVector<f64> {
        let obar = self.omega_bar();
        let oa = &obar * &self.alpha;
        let norm = (1.0 + self.alpha.dot(&oa)).sqrt();
        oa / norm
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        self.omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Omega is not symmetric positive definite".into()))
    }
}

/// b_nu = sqrt(nu) Gamma((nu-1)/2) / (sqrt(pi) Gamma(nu/2)), the mean of
/// |T_nu|; finite for nu > 1.
pub fn b_nu(nu: f64) -> Result<f64> {
    if nu <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "b_nu requires nu > 1 (moment does not exist at nu = {nu})"
        )));
    }
    Ok((0.5 * nu.ln() + ln_gamma(0.5 * (nu - 1.0)) - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * nu))
        .exp())
}

/// Log density of the d-dimensional Student-t with scale `chol(Omega)`.
fn log_t_density(diff: &DVector<f64>, chol: &Cholesky<f64, Dyn>, nu: f64) -> (f64, f64) {
    let d = diff.len() as f64;
    let solved = chol.solve(diff);
    let q = diff.dot(&solved);
    let log_det = 2.0 * (0..diff.len()).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let log_pdf = ln_gamma(0.5 * (nu + d))
        - ln_gamma(0.5 * nu)
        - 0.5 * d * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * (nu + d) * (1.0 + q / nu).ln();
    (log_pdf, q)
}

/// Skew-t density: `2 t_d(z - xi; Omega, nu) T(alpha' w^{-1} (z - xi)
/// sqrt((nu + d)/(nu + Q)); nu + d)`, with Q the Mahalanobis form under
/// Omega^{-1}. Evaluated in log space.
pub fn density(z: &DVector<f64>, dp: &SkewTParamsDP) -> Result<f64> {
    let chol = dp.cholesky()?;
    let d = dp.dim() as f64;
    let diff = z - &dp.xi;
    let (log_t, q) = log_t_density(&diff, &chol, dp.nu);
    let w = dp.omega_diag();
    let u: f64 = (0..dp.dim()).map(|i| dp.alpha[i] * diff[i] / w[i]).sum();
    let arg = u * ((dp.nu + d) / (dp.nu + q)).sqrt();
    let tail = StudentsT::new(0.0, 1.0, dp.nu + d)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .cdf(arg);
    if tail <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0f64.ln() + log_t + tail.ln()).exp())
}

/// Mean, variance, skewness, and excess kurtosis of the standardized
/// univariate skew-t margin with slant delta and dof nu.
pub fn univariate_moments(delta: f64, nu: f64) -> Result<(f64, f64, f64, f64)> {
    if nu <= 4.0 {
        return Err(Error::InvalidArgument("marginal kurtosis requires nu > 4".into()));
    }
    let b = b_nu(nu)?;
    let m1 = b * delta;
    let e2 = nu / (nu - 2.0);
    let e3 = m1 * (3.0 - delta * delta) * nu / (nu - 3.0);
    let e4 = 3.0 * nu * nu / ((nu - 2.0) * (nu - 4.0));
    let var = e2 - m1 * m1;
    let m3 = e3 - 3.0 * m1 * e2 + 2.0 * m1.powi(3);
    let m4 = e4 - 4.0 * m1 * e3 + 6.0 * m1 * m1 * e2 - 3.0 * m1.powi(4);
    Ok((m1, var, m3 / var.powf(1.5), m4 / (var * var) - 3.0))
}

/// Mardia excess kurtosis of a skew-t variate from the closed form,
/// with beta0^2 = mu0' Sigma^{-1} mu0.
fn mardia_closed_form(d: usize, nu: f64, beta0_sq: f64) -> Result<f64> {
    if nu <= 4.0 {
        return Err(Error::InvalidArgument("kurtosis undefined: nu <= 4".into()));
    }
    let b = b_nu(nu)?;
    let d = d as f64;
    let b2 = beta0_sq;
    Ok(2.0 * d * (d + 2.0) / (nu - 4.0)
        + 4.0 * (d + 2.0) / ((nu - 3.0) * (nu - 4.0)) * b2
        + 2.0
            * (2.0 * nu / ((nu - 3.0) * b * b)
                - (3.0 * (nu - 3.0).powi(2) - 6.0) / ((nu - 3.0) * (nu - 4.0)))
            * b2
            * b2)
}

/// Closed-form CP of a DP parameter set (requires nu > 4).
pub fn dp_moments(dp: &SkewTParamsDP) -> Result<SkewTParamsCP> {
    if dp.nu <= 4.0 {
        return Err(Error::InvalidArgument(format!(
            "kurtosis undefined: nu = {} <= 4",
            dp.nu
        )));
    }
    dp.cholesky()?;
    let b = b_nu(dp.nu)?;
    let delta = dp.delta();
    let w = dp.omega_diag();
    let mu_z = &delta * b;
    let mu0 = DVector::from_fn(dp.dim(), |i, _| w[i] * mu_z[i]);
    let mu = &dp.xi + &mu0;
    let sigma = &dp.omega * (dp.nu / (dp.nu - 2.0)) - &mu0 * mu0.transpose();
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("implied covariance not positive definite".into()))?;
    let beta0_sq = mu0.dot(&chol.solve(&mu0));
    let gamma2m = mardia_closed_form(dp.dim(), dp.nu, beta0_sq)?;
    let mut gamma1 = DVector::zeros(dp.dim());
    for i in 0..dp.dim() {
        let (_, _, g1, _) = univariate_moments(delta[i], dp.nu)?;
        gamma1[i] = g1;
    }
    Ok(SkewTParamsCP { mu, sigma, gamma1, gamma2m })
}

/// Scale diagonal implied by (Sigma, delta, nu):
/// omega_i^2 = ((nu-2)/nu Sigma_ii) / (1 - (nu-2)/nu b^2 delta_i^2).
fn omega_diag_from(sigma: &DMatrix<f64>, delta: &DVector<f64>, nu: f64) -> Result<DVector<f64>> {
    let b = b_nu(nu)?;
    let c = (nu - 2.0) / nu;
    let mut w = DVector::zeros(delta.len());
    for i in 0..delta.len() {
        let denom = 1.0 - c * b * b * delta[i] * delta[i];
        if denom <= 0.0 {
            return Err(Error::Numerical("infeasible delta for the given covariance".into()));
        }
        w[i] = (c * sigma[(i, i)] / denom).sqrt();
    }
    Ok(w)
}

/// (gamma1, gamma2M) implied by (delta, nu) under the CP covariance.
fn implied_cp_targets(
    sigma_chol: &Cholesky<f64, Dyn>,
    sigma: &DMatrix<f64>,
    delta: &DVector<f64>,
    nu: f64,
) -> Result<(DVector<f64>, f64)> {
    let d = delta.len();
    let b = b_nu(nu)?;
    let w = omega_diag_from(sigma, delta, nu)?;
    let mu0 = DVector::from_fn(d, |i, _| w[i] * b * delta[i]);
    let beta0_sq = mu0.dot(&sigma_chol.solve(&mu0));
    let gamma2m = mardia_closed_form(d, nu, beta0_sq)?;
    let mut gamma1 = DVector::zeros(d);
    for i in 0..d {
        let (_, _, g1, _) = univariate_moments(delta[i], nu)?;
        gamma1[i] = g1;
    }
    Ok((gamma1, gamma2m))
}

const DELTA_CAP: f64 = 0.999999;

/// Invert the marginal skewness for delta at fixed nu by bisection
/// (gamma1 is odd and increasing in delta). Returns the capped best delta
/// when the target lies outside the feasible range.
fn delta_from_gamma1(target: f64, nu: f64) -> f64 {
    let g = |d: f64| univariate_moments(d, nu).map(|(_, _, g1, _)| g1).unwrap_or(f64::NAN);
    let gmax = g(DELTA_CAP);
    if target.abs() >= gmax {
        return DELTA_CAP.copysign(target);
    }
    let (mut lo, mut hi) = (0.0, DELTA_CAP);
    let t = target.abs();
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).copysign(target)
}

/// Result of the CP -> DP inversion.
#[derive(Debug, Clone)]
pub struct CpToDpFit {
    pub dp: SkewTParamsDP,
    /// l2 distance between the target (gamma1, gamma2M) and the values
    /// implied by the returned DP. Nonzero when the target is infeasible.
    pub residual_distance: f64,
}

/// Margin 1 - delta' Obar^{-1} delta of the slant reconstruction implied by
/// (Sigma, delta, nu); alpha is only defined when this is positive.
fn slant_margin(sigma: &DMatrix<f64>, delta: &DVector<f64>, nu: f64) -> Result<f64> {
    let d = delta.len();
    let b = b_nu(nu)?;
    let w = omega_diag_from(sigma, delta, nu)?;
    let mu0 = DVector::from_fn(d, |i, _| w[i] * b * delta[i]);
    let omega = sigma * ((nu - 2.0) / nu) + &mu0 * mu0.transpose() * ((nu - 2.0) / nu);
    let obar = DMatrix::from_fn(d, d, |i, j| omega[(i, j)] / (w[i] * w[j]));
    let chol = obar
        .cholesky()
        .ok_or_else(|| Error::Numerical("implied Omega not positive definite".into()))?;
    Ok(1.0 - delta.dot(&chol.solve(delta)))
}

const SLANT_MARGIN_FLOOR: f64 = 1e-4;

fn cp_objective(
    sigma_chol: &Cholesky<f64, Dyn>,
    cp: &SkewTParamsCP,
    delta: &DVector<f64>,
    nu: f64,
) -> f64 {
    match implied_cp_targets(sigma_chol, &cp.sigma, delta, nu) {
        Ok((g1, g2m)) => {
            let mut s = (g2m - cp.gamma2m).powi(2);
            for i in 0..delta.len() {
                s += (g1[i] - cp.gamma1[i]).powi(2);
            }
            // quadratic penalty keeping the implied slant reconstructible
            match slant_margin(&cp.sigma, delta, nu) {
                Ok(m) if m < SLANT_MARGIN_FLOOR => {
                    s + 1e6 * (SLANT_MARGIN_FLOOR - m).powi(2)
                }
                Ok(_) => s,
                Err(_) => f64::INFINITY,
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Numerical inversion of the CP: minimizes the squared l2 distance between
/// the implied and target (gamma1, gamma2M) over (delta in (-1,1)^d, nu > 4),
/// on arctanh/log-transformed coordinates, then reconstructs (xi, Omega,
/// alpha) from the moment relations.
pub fn cp_to_dp(cp: &SkewTParamsCP) -> Result<CpToDpFit> {
    let d = cp.mu.len();
    let sigma_chol = cp
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("CP covariance not positive definite".into()))?;

    // symmetric case: closed form nu = 4 + 2d(d+2)/gamma2M
    if cp.gamma1.iter().all(|g| g.abs() < 1e-13) && cp.gamma2m > 0.0 {
        let nu = 4.0 + 2.0 * (d * (d + 2)) as f64 / cp.gamma2m;
        let delta = DVector::zeros(d);
        return reconstruct(cp, &delta, nu, 0.0);
    }

    // nested initialization: for each nu on a grid, invert delta from the
    // marginal skewnesses, then refine nu by golden section
    let nu_obj = |log_nu: f64| -> (f64, DVector<f64>) {
        let nu = 4.0 + log_nu.exp();
        let delta = DVector::from_fn(d, |i, _| delta_from_gamma1(cp.gamma1[i], nu));
        (cp_objective(&sigma_chol, cp, &delta, nu), delta)
    };
    let mut best = (f64::INFINITY, 0.0f64);
    for k in 0..80 {
        let log_nu = -3.0 + 12.0 * k as f64 / 79.0; // nu in [4 + 0.05, 4 + e^9]
        let (v, _) = nu_obj(log_nu);
        if v < best.0 {
            best = (v, log_nu);
        }
    }
    let (log_nu, _) = golden_section(|x| nu_obj(x).0, best.1 - 0.4, best.1 + 0.4, 1e-12, 200);
    let (_, delta0) = nu_obj(log_nu);
    let nu0 = 4.0 + log_nu.exp();

    // joint polish on transformed coordinates
    let mut x0: Vec<f64> = delta0
        .iter()
        .map(|&dl| dl.clamp(-DELTA_CAP, DELTA_CAP).atanh())
        .collect();
    x0.push((nu0 - 4.0).ln());
    let obj = |x: &[f64]| -> f64 {
        let delta = DVector::from_fn(d, |i, _| x[i].tanh());
        let nu = 4.0 + x[d].exp();
        cp_objective(&sigma_chol, cp, &delta, nu)
    };
    let res = nelder_mead(obj, &x0, 0.05, 1e-14, 500 * (d + 1));
    if !res.value.is_finite() {
        return Err(Error::Numerical(format!(
            "CP inversion failed to produce a finite objective (best iterate {:?})",
            res.x
        )));
    }
    let delta = DVector::from_fn(d, |i, _| res.x[i].tanh());
    let nu = 4.0 + res.x[d].exp();
    reconstruct(cp, &delta, nu, res.value.max(0.0).sqrt())
}

/// Rebuild (xi, Omega, alpha) from (mu, Sigma, delta, nu).
fn reconstruct(
    cp: &SkewTParamsCP,
    delta: &DVector<f64>,
    nu: f64,
    residual_distance: f64,
) -> Result<CpToDpFit> {
    let d = cp.mu.len();
    let b = b_nu(nu)?;
    let mut delta = delta.clone();
    let mut shrunk = false;
    for _ in 0..80 {
        let w = omega_diag_from(&cp.sigma, &delta, nu)?;
        let mu0 = DVector::from_fn(d, |i, _| w[i] * b * delta[i]);
        let omega = &cp.sigma * ((nu - 2.0) / nu) + &mu0 * mu0.transpose() * ((nu - 2.0) / nu);
        let obar = DMatrix::from_fn(d, d, |i, j| omega[(i, j)] / (w[i] * w[j]));
        let obar_chol = obar
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("implied Omega not positive definite".into()))?;
        let oinv_delta = obar_chol.solve(&delta);
        let denom = 1.0 - delta.dot(&oinv_delta);
        if denom <= 1e-10 {
            // slant outside the reconstructible region (moment targets can
            // imply this even when each marginal delta is valid); pull delta
            // toward zero and retry
            delta *= 0.98;
            shrunk = true;
            continue;
        }
        let alpha = oinv_delta / denom.sqrt();
        let xi = &cp.mu - &mu0;
        let residual_distance = if shrunk {
            let sigma_chol = cp
                .sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("CP covariance not positive definite".into()))?;
            let (g1, g2m) = implied_cp_targets(&sigma_chol, &cp.sigma, &delta, nu)?;
            let mut s = (g2m - cp.gamma2m).powi(2);
            for i in 0..d {
                s += (g1[i] - cp.gamma1[i]).powi(2);
            }
            s.sqrt()
        } else {
            residual_distance
        };
        return Ok(CpToDpFit {
            dp: SkewTParamsDP { xi, omega, alpha, nu },
            residual_distance,
        });
    }
    Err(Error::Numerical("implied slant outside the feasible region".into()))
}

/// Matern correlation with smoothness 3/2: (1 + h/phi) exp(-h/phi).
pub fn matern_kappa32(h: f64, phi: f64) -> f64 {
    let r = h / phi;
    (1.0 + r) * (-r).exp()
}

/// OLS fit of the Matern range parameter to sample correlations over the
/// off-diagonal distance pairs.
pub fn fit_matern(corr: &DMatrix<f64>, distances_km: &DMatrix<f64>) -> Result<f64> {
    let d = corr.nrows();
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            pairs.push((distances_km[(i, j)], corr[(i, j)]));
        }
    }
    let max_h = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if pairs.is_empty() || max_h <= 0.0 {
        return Err(Error::InvalidArgument("all pairwise distances are zero".into()));
    }
    let sse = |log_phi: f64| -> f64 {
        let phi = log_phi.exp();
        pairs.iter().map(|&(h, c)| (c - matern_kappa32(h, phi)).powi(2)).sum()
    };
    let lo = (max_h * 1e-4).max(1e-6).ln();
    let hi = (max_h * 1e3).ln();
    let (log_phi, _) = golden_section(sse, lo, hi, 1e-12, 400);
    Ok(log_phi.exp())
}

/// Configuration of the region-wise moment fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFitConfig {
    /// Marginal-skewness MSE above which the sample Mardia kurtosis is
    /// replaced by a 1-D search value.
    pub gamma2_mse_threshold: f64,
}

impl Default for RegionFitConfig {
    fn default() -> Self {
        RegionFitConfig { gamma2_mse_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// l2 distance at convergence of the CP -> DP inversion.
    pub l2_distance: f64,
    /// Per-point MSE of the implied marginal skewness against samples.
    pub gamma1_mse: f64,
    /// Per-point MSE of the implied marginal excess kurtosis against samples.
    pub gamma2_mse: f64,
    pub gamma2m_sample: f64,
    pub gamma2m_used: f64,
    pub gamma2m_replaced: bool,
}

/// Fitted skew-t innovation model for one region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSkewT {
    pub region: usize,
    pub members: Vec<usize>,
    pub dp: SkewTParamsDP,
    pub matern_phi: f64,
    pub matern_kappa: f64,
    /// Sample SD of each member's residuals; applied as a rescale at
    /// simulation time when it deviates from 1 by more than 1%.
    pub resid_sd: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

fn marginal_mses(dp: &SkewTParamsDP, g1s: &DVector<f64>, g2s: &DVector<f64>) -> (f64, f64) {
    let delta = dp.delta();
    let d = dp.dim();
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    for i in 0..d {
        match univariate_moments(delta[i], dp.nu) {
            Ok((_, _, g1, g2)) => {
                e1 += (g1 - g1s[i]).powi(2);
                e2 += (g2 - g2s[i]).powi(2);
            }
            Err(_) => {
                e1 = f64::INFINITY;
                e2 = f64::INFINITY;
            }
        }
    }
    (e1 / d as f64, e2 / d as f64)
}

/// Method-of-moments fit of the regional skew-t: mu = 0 imposed, Sigma the
/// Matern correlation matrix on great-circle distances, gamma1 the sample
/// skewnesses, gamma2M the sample Mardia kurtosis (replaced by a 1-D search
/// value when the implied marginal skewness MSE exceeds the threshold).
pub fn fit_region(
    region: usize,
    members: Vec<usize>,
    data: &DMatrix<f64>,
    coords: &[(f64, f64)],
    cfg: &RegionFitConfig,
) -> Result<RegionSkewT> {
    let d = data.ncols();
    if d < 2 {
        return Err(Error::SkewTFit(format!("region {region} has {d} gridpoints; need >= 2")));
    }
    if coords.len() != d || members.len() != d {
        return Err(Error::Dimension("coords/members must match the data width".into()));
    }

    let sample_corr = stats::correlation_matrix(data);
    let distances = DMatrix::from_fn(d, d, |i, j| stats::haversine_km(coords[i], coords[j]));
    let phi = fit_matern(&sample_corr, &distances)?;
    let sigma = DMatrix::from_fn(d, d, |i, j| matern_kappa32(distances[(i, j)], phi));

    let mut resid_sd = Vec::with_capacity(d);
    let mut g1 = DVector::zeros(d);
    let mut g2 = DVector::zeros(d);
    for i in 0..d {
        let col: Vec<f64> = data.column(i).iter().copied().collect();
        resid_sd.push(stats::sd(&col));
        g1[i] = stats::skewness(&col);
        g2[i] = stats::excess_kurtosis(&col);
    }
    let g2m_sample = stats::sample_mardia_kurtosis(data);

    let fit_with = |g2m: f64| -> Result<CpToDpFit> {
        cp_to_dp(&SkewTParamsCP {
            mu: DVector::zeros(d),
            sigma: sigma.clone(),
            gamma1: g1.clone(),
            gamma2m: g2m,
        })
    };

    let fit = fit_with(g2m_sample.max(1e-3))?;
    let (mse1, _) = marginal_mses(&fit.dp, &g1, &g2);

    let (fit, used, replaced) = if mse1 > cfg.gamma2_mse_threshold {
        // search the Mardia target that best matches the sampled marginal
        // skewness and kurtosis jointly
        let hi = (g2m_sample.abs().max(1.0) * 20.0).ln();
        let (log_g2m, _) = golden_section(
            |x| match fit_with(x.exp()) {
                Ok(f) => {
                    let (a, b) = marginal_mses(&f.dp, &g1, &g2);
                    a + b
                }
                Err(_) => f64::INFINITY,
            },
            1e-3f64.ln(),
            hi,
            1e-10,
            200,
        );
        let g2m = log_g2m.exp();
        (fit_with(g2m)?, g2m, true)
    } else {
        (fit, g2m_sample.max(1e-3), false)
    };

    let (gamma1_mse, gamma2_mse) = marginal_mses(&fit.dp, &g1, &g2);
    Ok(RegionSkewT {
        region,
        members,
        dp: fit.dp,
        matern_phi: phi,
        matern_kappa: 1.5,
        resid_sd,
        diagnostics: FitDiagnostics {
            l2_distance: fit.residual_distance,
            gamma1_mse,
            gamma2_mse,
            gamma2m_sample: g2m_sample,
            gamma2m_used: used,
            gamma2m_replaced: replaced,
        },
    })
}

/// Precomputed sampler for one skew-t parameter set. Draws use the
/// conditioning representation of the skew-normal: an augmented normal
/// vector with correlation delta against the latent sign variable, with a
/// coordinate flip on negative sign, then scaled by the chi-square mixing
/// variable.
pub struct SkewTSampler {
    dp: SkewTParamsDP,
    chol_aug: DMatrix<f64>,
    omega_diag: DVector<f64>,
    chi2: ChiSquared<f64>,
    nu: f64,
    /// Skewness-induced offset `omega b_nu delta` (the mean of a draw with
    /// xi = 0).
    pub mean_offset: DVector<f64>,
    /// Full mean `xi + omega b_nu delta`; subtract this to center draws at
    /// zero regardless of how xi was chosen.
    pub mean: DVector<f64>,
}

impl SkewTSampler {
    pub fn new(dp: &SkewTParamsDP) -> Result<SkewTSampler> {
        let d = dp.dim();
        let obar = dp.omega_bar();
        let delta = dp.delta();
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug.view_mut((0, 0), (d, d)).copy_from(&obar);
        for i in 0..d {
            aug[(i, d)] = delta[i];
            aug[(d, i)] = delta[i];
        }
        aug[(d, d)] = 1.0;
        let chol_aug = aug
            .cholesky()
            .ok_or_else(|| Error::Numerical("augmented scale matrix not positive definite".into()))?
            .l()
            .into();
        let w = dp.omega_diag();
        let b = b_nu(dp.nu)?;
        let mean_offset = DVector::from_fn(d, |i, _| w[i] * b * delta[i]);
        let mean = &dp.xi + &mean_offset;
        let chi2 =
            ChiSquared::new(dp.nu).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(SkewTSampler {
            dp: dp.clone(),
            chol_aug,
            omega_diag: w,
            chi2,
            nu: dp.nu,
            mean_offset,
            mean,
        })
    }

    /// One draw from ST_d(xi, Omega, alpha, nu).
    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dp.dim();
        let z = DVector::from_fn(d + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.chol_aug * z;
        let sign = if x[d] > 0.0 { 1.0 } else { -1.0 };
        let v = self.chi2.sample(rng) / self.nu;
        let scale = 1.0 / v.sqrt();
        DVector::from_fn(d, |i, _| self.dp.xi[i] + self.omega_diag[i] * sign * x[i] * scale)
    }

    /// Matrix of `n` draws (rows are observations).
    pub fn draw_matrix<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dp.dim();
        let mut out = DMatrix::zeros(n, d);
        for r in 0..n {
            let y = self.draw(rng);
            for i in 0..d {
                out[(r, i)] = y[i];
            }
        }
        out
    }
}

/// Convenience wrapper: `n` draws from the DP with a caller-supplied RNG.
pub fn sample<R: Rng>(dp: &SkewTParamsDP, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(SkewTSampler::new(dp)?.draw_matrix(n, rng))
}

#[derive(Serialize, Deserialize)]
struct RegionJson {
    id: usize,
    members: Vec<usize>,
    xi: Vec<f64>,
    /// Row-major lower triangle of Omega, rows 0..d.
    omega_lower: Vec<f64>,
    alpha: Vec<f64>,
    nu: f64,
    phi: f64,
    kappa: f64,
    resid_sd: Vec<f64>,
    diagnostics: FitDiagnostics,
}

pub fn save_regions(regions: &[RegionSkewT], path: &Path) -> Result<()> {
    let rows: Vec<RegionJson> = regions
        .iter()
        .map(|r| {
            let d = r.dp.dim();
            let mut omega_lower = Vec::with_capacity(d * (d + 1) / 2);
            for i in 0..d {
                for j in 0..=i {
                    omega_lower.push(r.dp.omega[(i, j)]);
                }
            }
            RegionJson {
                id: r.region,
                members: r.members.clone(),
                xi: r.dp.xi.iter().copied().collect(),
                omega_lower,
                alpha: r.dp.alpha.iter().copied().collect(),
                nu: r.dp.nu,
                phi: r.matern_phi,
                kappa: r.matern_kappa,
                resid_sd: r.resid_sd.clone(),
                diagnostics: r.diagnostics.clone(),
            }
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_regions(path: &Path) -> Result<Vec<RegionSkewT>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<RegionJson> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    rows.into_iter()
        .map(|r| {
            let d = r.xi.len();
            if r.omega_lower.len() != d * (d + 1) / 2 || r.alpha.len() != d {
                return Err(Error::json(path, format!("region {}: inconsistent dimensions", r.id)));
            }
            let mut omega = DMatrix::zeros(d, d);
            let mut k = 0;
            for i in 0..d {
                for j in 0..=i {
                    omega[(i, j)] = r.omega_lower[k];
                    omega[(j, i)] = r.omega_lower[k];
                    k += 1;
                }
            }
            Ok(RegionSkewT {
                region: r.id,
                members: r.members,
                dp: SkewTParamsDP {
                    xi: DVector::from_vec(r.xi),
                    omega,
                    alpha: DVector::from_vec(r.alpha),
                    nu: r.nu,
                },
                matern_phi: r.phi,
                matern_kappa: r.kappa,
                resid_sd: r.resid_sd,
                diagnostics: r.diagnostics,
            })
        })
        .collect()
}
