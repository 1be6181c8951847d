//! Stencil-restricted VAR(2): restriction pattern, restricted OLS/GLS
//! estimation, companion-form stability check, and residual diagnostics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EnsembleSeries, GridMeta};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lag {
    A1,
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Lag-1 dependence on self and N/S/E/W neighbors, diagonal lag-2.
    Stencil,
    /// No restriction: all 2 N^2 coefficients free.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ols,
    Gls,
}

/// Allowed nonzero coefficient positions. Regressor columns are indexed
/// `j` for lag 1 and `N + j` for lag 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restrictions {
    pub n_points: usize,
    pub entries: Vec<(Lag, usize, usize)>,
}

impl Restrictions {
    /// Total number of free coefficients M.
    pub fn m(&self) -> usize {
        self.entries.len()
    }

    /// Regressor column indices (into the stacked `[W_{t-1}; W_{t-2}]`
    /// vector) for equation row `i`, plus the matching entry indices.
    fn row_columns(&self, i: usize) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &(_, row, _))| row == i)
            .map(|(k, &(lag, _, j))| {
                let col = match lag {
                    Lag::A1 => j,
                    Lag::A2 => self.n_points + j,
                };
                (k, col)
            })
            .collect()
    }
}

/// Default scheme: `A1` nonzeros are self plus stencil neighbors, `A2`
/// nonzeros are the diagonal.
pub fn build_restrictions(meta: &GridMeta, scheme: Scheme) -> Restrictions {
    let n = meta.n_points();
    let mut entries = Vec::new();
    match scheme {
        Scheme::Stencil => {
            for i in 0..n {
                entries.push((Lag::A1, i, i));
                for &(_, j) in &meta.neighbor_map[i] {
                    entries.push((Lag::A1, i, j));
                }
                entries.push((Lag::A2, i, i));
            }
        }
        Scheme::Dense => {
            for i in 0..n {
                for j in 0..n {
                    entries.push((Lag::A1, i, j));
                }
                for j in 0..n {
                    entries.push((Lag::A2, i, j));
                }
            }
        }
    }
    Restrictions { n_points: n, entries }
}

/// VAR(2) residuals for each training member, targets t = 3..T.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub n_members: usize,
    pub n_steps: usize,
    pub n_points: usize,
    values: Vec<f64>,
}

impl Residuals {
    #[inline]
    pub fn get(&self, m: usize, t: usize, i: usize) -> f64 {
        self.values[(m * self.n_steps + t) * self.n_points + i]
    }

    /// All residuals of point `i`, pooled over members and time.
    pub fn pooled_point(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_members * self.n_steps);
        for m in 0..self.n_members {
            for t in 0..self.n_steps {
                out.push(self.get(m, t, i));
            }
        }
        out
    }

    /// Pooled (members x steps) x points data matrix.
    pub fn pooled_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            self.n_members * self.n_steps,
            self.n_points,
            &self.values,
        )
    }
}

#[derive(Debug, Clone)]
pub struct VarModel {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub estimator: Estimator,
    pub restrictions: Restrictions,
    pub residuals: Residuals,
    pub stable: bool,
    pub max_modulus: f64,
}

fn member_matrix(series: &EnsembleSeries, r: usize) -> DMatrix<f64> {
    let t_len = series.n_days();
    let n = series.n_points();
    let mut w = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        for i in 0..n {
            w[(t, i)] = series.get(r, t, i);
        }
    }
    w
}

/// Cross-product accumulators over all training members:
/// `zz = sum_t Z_t Z_t^T` (2N x 2N) and `wz = sum_t W_t Z_t^T` (N x 2N),
/// with `Z_t = [W_{t-1}; W_{t-2}]` and targets t = 3..T.
fn cross_products(
    members: &[DMatrix<f64>],
    n: usize,
) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let mut zz = DMatrix::zeros(2 * n, 2 * n);
    let mut wz = DMatrix::zeros(n, 2 * n);
    let mut n_obs = 0;
    for w in members {
        let t_len = w.nrows();
        for t in 2..t_len {
            n_obs += 1;
            for a in 0..2 * n {
                let za = if a < n { w[(t - 1, a)] } else { w[(t - 2, a - n)] };
                for b in a..2 * n {
                    let zb = if b < n { w[(t - 1, b)] } else { w[(t - 2, b - n)] };
                    zz[(a, b)] += za * zb;
                }
                for i in 0..n {
                    wz[(i, a)] += w[(t, i)] * za;
                }
            }
        }
    }
    for a in 0..2 * n {
        for b in 0..a {
            zz[(a, b)] = zz[(b, a)];
        }
    }
    (zz, wz, n_obs)
}

/// Restricted least-squares fit of the VAR(2) coefficients, pooling all
/// training members as i.i.d. realizations. GLS runs one refinement step
/// with the OLS residual covariance.
pub fn fit_var(
    series: &EnsembleSeries,
    restr: &Restrictions,
    estimator: Estimator,
) -> Result<VarModel> {
    if !series.standardized {
        return Err(Error::VarFit("expected a standardized series".into()));
    }
    let n = series.n_points();
    if restr.n_points != n {
        return Err(Error::Dimension(format!(
            "restrictions built for {} points, series has {n}",
            restr.n_points
        )));
    }
    if series.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::VarFit("non-finite value in input series".into()));
    }
    let t_len = series.n_days();
    let min_t = 3 + restr.m() / n;
    if t_len < min_t {
        return Err(Error::VarFit(format!("need at least {min_t} days, got {t_len}")));
    }

    let members: Vec<DMatrix<f64>> =
        (0..series.n_realizations).map(|r| member_matrix(series, r)).collect();
    let (zz, wz, _) = cross_products(&members, n);

    let coefs = solve_ols(restr, &zz, &wz)?;
    let coefs = match estimator {
        Estimator::Ols => coefs,
        Estimator::Gls => {
            let (a1, a2) = scatter(restr, &coefs, n);
            let resid = compute_residuals(&members, &a1, &a2);
            let sigma = stats::covariance_matrix(&resid.pooled_matrix());
            solve_gls(restr, &zz, &wz, &sigma)?
        }
    };

    let (a1, a2) = scatter(restr, &coefs, n);
    let residuals = compute_residuals(&members, &a1, &a2);
    let (stable, max_modulus) = check_stability_matrices(&a1, &a2);
    Ok(VarModel { a1, a2, estimator, restrictions: restr.clone(), residuals, stable, max_modulus })
}

/// Under OLS the restricted normal equations decouple by equation row.
fn solve_ols(restr: &Restrictions, zz: &DMatrix<f64>, wz: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut coefs = vec![0.0; restr.m()];
    for i in 0..restr.n_points {
        let cols = restr.row_columns(i);
        if cols.is_empty() {
            continue;
        }
        let k = cols.len();
        let mut gram = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (a, &(_, ca)) in cols.iter().enumerate() {
            for (b, &(_, cb)) in cols.iter().enumerate() {
                gram[(a, b)] = zz[(ca, cb)];
            }
            rhs[a] = wz[(i, ca)];
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::VarFit(format!(
                "singular normal matrix in equation row {i} (regressor columns {:?})",
                cols.iter().map(|&(_, c)| c).collect::<Vec<_>>()
            ))
        })?;
        let sol = chol.solve(&rhs);
        for (a, &(entry, _)) in cols.iter().enumerate() {
            coefs[entry] = sol[a];
        }
    }
    Ok(coefs)
}

/// Full restricted-GLS normal equations,
/// `[R^T (Z Z^T ox Sigma^{-1}) R] gamma = R^T vec(Sigma^{-1} W Z^T)`,
/// assembled entrywise over the restriction pattern.
fn solve_gls(
    restr: &Restrictions,
    zz: &DMatrix<f64>,
    wz: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let m = restr.m();
    let n = restr.n_points;
    let sig_inv = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::VarFit("residual covariance is not positive definite".into()))?
        .inverse();
    let col_of = |lag: Lag, j: usize| match lag {
        Lag::A1 => j,
        Lag::A2 => n + j,
    };
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    let siw = &sig_inv * wz; // N x 2N
    for (a, &(la, ia, ja)) in restr.entries.iter().enumerate() {
        let ca = col_of(la, ja);
        for (b, &(lb, ib, jb)) in restr.entries.iter().enumerate() {
            let cb = col_of(lb, jb);
            gram[(a, b)] = zz[(ca, cb)] * sig_inv[(ia, ib)];
        }
        rhs[a] = siw[(ia, ca)];
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::VarFit("singular restricted GLS normal matrix".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn scatter(restr: &Restrictions, coefs: &[f64], n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a1 = DMatrix::zeros(n, n);
    let mut a2 = DMatrix::zeros(n, n);
    for (&(lag, i, j), &c) in restr.entries.iter().zip(coefs) {
        match lag {
            Lag::A1 => a1[(i, j)] = c,
            Lag::A2 => a2[(i, j)] = c,
        }
    }
    (a1, a2)
}

fn compute_residuals(members: &[DMatrix<f64>], a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Residuals {
    let n = a1.nrows();
    let t_len = members[0].nrows();
    let n_steps = t_len - 2;
    let mut values = Vec::with_capacity(members.len() * n_steps * n);
    for w in members {
        for t in 2..t_len {
            for i in 0..n {
                let mut pred = 0.0;
                for j in 0..n {
                    pred += a1[(i, j)] * w[(t - 1, j)] + a2[(i, j)] * w[(t - 2, j)];
                }
                values.push(w[(t, i)] - pred);
            }
        }
    }
    Residuals { n_members: members.len(), n_steps, n_points: n, values }
}

/// Max eigenvalue modulus of the companion matrix `[[A1, A2], [I, 0]]`.
pub fn check_stability(model: &VarModel) -> (bool, f64) {
    check_stability_matrices(&model.a1, &model.a2)
}

pub fn check_stability_matrices(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> (bool, f64) {
    let n = a1.nrows();
    let mut companion = DMatrix::zeros(2 * n, 2 * n);
    companion.view_mut((0, 0), (n, n)).copy_from(a1);
    companion.view_mut((0, n), (n, n)).copy_from(a2);
    for i in 0..n {
        companion[(n + i, i)] = 1.0;
    }
    let max_modulus = max_eigenvalue_modulus(&companion);
    (max_modulus < 1.0, max_modulus)
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn max_eigenvalue_modulus(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let fm = faer::Mat::from_fn(n, n, |i, j| m[(i, j)]);
    fm.eigenvalues()
        .expect("eigenvalue iteration failed")
        .iter()
        .map(|z: &faer::c64| z.norm())
        .fold(0.0, f64::max)
}

/// Per-gridpoint skewness and excess kurtosis of the residuals, pooled over
/// time and training members, plus the residual correlation matrix.
pub fn residual_moments(model: &VarModel) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let n = model.residuals.n_points;
    let mut skew = Vec::with_capacity(n);
    let mut kurt = Vec::with_capacity(n);
    for i in 0..n {
        let x = model.residuals.pooled_point(i);
        skew.push(stats::skewness(&x));
        kurt.push(stats::excess_kurtosis(&x));
    }
    let corr = stats::correlation_matrix(&model.residuals.pooled_matrix());
    (skew, kurt, corr)
}

/// One coefficient test in the significance report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefTest {
    pub lag: Lag,
    pub i: usize,
    pub j: usize,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// OLS standard errors under i.i.d. innovations, with Benjamini-Hochberg
/// multiplicity adjustment at the given level. Report only; never alters
/// the fit.
pub fn significance_report(
    model: &VarModel,
    series: &EnsembleSeries,
    level: f64,
) -> Result<Vec<CoefTest>> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = model.restrictions.n_points;
    let members: Vec<DMatrix<f64>> =
        (0..series.n_realizations).map(|r| member_matrix(series, r)).collect();
    let (zz, _, n_obs) = cross_products(&members, n);

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut tests = Vec::with_capacity(model.restrictions.m());
    for i in 0..n {
        let cols = model.restrictions.row_columns(i);
        let k = cols.len();
        let resid = model.residuals.pooled_point(i);
        let dof = (n_obs - k).max(1);
        let sigma2 = resid.iter().map(|e| e * e).sum::<f64>() / dof as f64;
        let mut gram = DMatrix::zeros(k, k);
        for (a, &(_, ca)) in cols.iter().enumerate() {
            for (b, &(_, cb)) in cols.iter().enumerate() {
                gram[(a, b)] = zz[(ca, cb)];
            }
        }
        let inv = gram
            .cholesky()
            .ok_or_else(|| Error::VarFit(format!("singular gram in row {i}")))?
            .inverse();
        for (a, &(entry, _)) in cols.iter().enumerate() {
            let (lag, _, j) = model.restrictions.entries[entry];
            let est = match lag {
                Lag::A1 => model.a1[(i, j)],
                Lag::A2 => model.a2[(i, j)],
            };
            let se = (sigma2 * inv[(a, a)]).sqrt();
            let z = est / se;
            let p = 2.0 * (1.0 - normal.cdf(z.abs()));
            tests.push(CoefTest { lag, i, j, estimate: est, se, p_value: p, significant: false });
        }
    }
    // Benjamini-Hochberg step-up
    let m = tests.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| tests[a].p_value.partial_cmp(&tests[b].p_value).unwrap());
    let mut cutoff = 0;
    for (rank, &idx) in order.iter().enumerate() {
        if tests[idx].p_value <= (rank + 1) as f64 / m as f64 * level {
            cutoff = rank + 1;
        }
    }
    for &idx in &order[..cutoff] {
        tests[idx].significant = true;
    }
    Ok(tests)
}

#[derive(Serialize, Deserialize)]
struct Triplet {
    matrix: String,
    i: usize,
    j: usize,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct VarJson {
    n_points: usize,
    estimator: Estimator,
    max_modulus: f64,
    coefficients: Vec<Triplet>,
}

pub fn save_var(model: &VarModel, path: &Path) -> Result<()> {
    save_var_matrices(&model.a1, &model.a2, model.estimator, path)
}

/// Save bare coefficient matrices (all nonzero entries as triplets).
pub fn save_var_matrices(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    estimator: Estimator,
    path: &Path,
) -> Result<()> {
    let n = a1.nrows();
    let mut coefficients = Vec::new();
    for (lag, m) in [(Lag::A1, a1), (Lag::A2, a2)] {
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    coefficients.push(Triplet {
                        matrix: match lag {
                            Lag::A1 => "A1".into(),
                            Lag::A2 => "A2".into(),
                        },
                        i,
                        j,
                        value: m[(i, j)],
                    });
                }
            }
        }
    }
    let (_, max_modulus) = check_stability_matrices(a1, a2);
    let doc = VarJson { n_points: n, estimator, max_modulus, coefficients };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Coefficient matrices reloaded from `var.json` (no residual store).
#[derive(Debug, Clone)]
pub struct VarCoefficients {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub estimator: Estimator,
    pub stable: bool,
    pub max_modulus: f64,
}

pub fn load_var(path: &Path) -> Result<VarCoefficients> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: VarJson = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let n = doc.n_points;
    let mut a1 = DMatrix::zeros(n, n);
    let mut a2 = DMatrix::zeros(n, n);
    for t in &doc.coefficients {
        if t.i >= n || t.j >= n {
            return Err(Error::json(path, format!("coefficient ({}, {}) out of range", t.i, t.j)));
        }
        match t.matrix.as_str() {
            "A1" => a1[(t.i, t.j)] = t.value,
            "A2" => a2[(t.i, t.j)] = t.value,
            other => return Err(Error::json(path, format!("unknown matrix tag {other}"))),
        }
    }
    let (stable, max_modulus) = check_stability_matrices(&a1, &a2);
    Ok(VarCoefficients { a1, a2, estimator: doc.estimator, stable, max_modulus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Calendar365, GridMeta, GridPoint};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

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

    /// Stencil A1 scaled to the requested companion spectral radius,
    /// plus diagonal A2.
    fn stencil_truth(meta: &GridMeta, radius: f64, a2_diag: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = meta.n_points();
        let mut a1 = DMatrix::zeros(n, n);
        for i in 0..n {
            a1[(i, i)] = 0.5;
            for &(_, j) in &meta.neighbor_map[i] {
                a1[(i, j)] = 0.08;
            }
        }
        let a2 = DMatrix::from_diagonal_element(n, n, a2_diag);
        // rescale A1 until the companion spectral radius matches
        for _ in 0..200 {
            let (_, m) = check_stability_matrices(&a1, &a2);
            if (m - radius).abs() < 1e-10 {
                break;
            }
            a1 *= radius / m;
        }
        (a1, a2)
    }

    /// Direct recursion with Gaussian innovations; independent of the
    /// production simulator.
    fn simulate_var(
        a1: &DMatrix<f64>,
        a2: &DMatrix<f64>,
        n_members: usize,
        n_years: usize,
        meta: &GridMeta,
        seed: u64,
    ) -> EnsembleSeries {
        let n = a1.nrows();
        let cal = Calendar365::new(0, n_years).unwrap();
        let mut s = EnsembleSeries::zeros(meta.clone(), cal, n_members, true);
        for r in 0..n_members {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + r as u64);
            let mut prev1 = DVector::zeros(n);
            let mut prev2 = DVector::zeros(n);
            for t in 0..s.n_days() + 500 {
                let eps =
                    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let w = a1 * &prev1 + a2 * &prev2 + eps;
                if t >= 500 {
                    for i in 0..n {
                        s.set(r, t - 500, i, w[i]);
                    }
                }
                prev2 = prev1;
                prev1 = w;
            }
        }
        s
    }

    #[test]
    fn restriction_counts() {
        let single = GridMeta::new(
            vec![GridPoint { id: 0, lat: 0.0, lon: 0.0, elev: 0.0 }],
            1.0,
        )
        .unwrap();
        assert_eq!(build_restrictions(&single, Scheme::Stencil).m(), 2);

        let meta = square_grid(3);
        // sum(1 + deg) + N = (9 + 24) + 9
        assert_eq!(build_restrictions(&meta, Scheme::Stencil).m(), 42);
        assert_eq!(build_restrictions(&meta, Scheme::Dense).m(), 2 * 81);
    }

    #[test]
    fn stability_examples() {
        let z = DMatrix::zeros(3, 3);
        let (stable, m) = check_stability_matrices(&z, &z);
        assert!(stable);
        assert_eq!(m, 0.0);

        let a1 = DMatrix::from_diagonal_element(3, 3, 1.1);
        let (stable, m) = check_stability_matrices(&a1, &z);
        assert!(!stable);
        assert_relative_eq!(m, 1.1, epsilon = 1e-10);

        // scalar a1 = 0.5, a2 = 0.3: max root of x^2 - 0.5 x - 0.3,
        // quadratic formula gives (0.5 + sqrt(1.45)) / 2
        let a1 = DMatrix::from_element(1, 1, 0.5);
        let a2 = DMatrix::from_element(1, 1, 0.3);
        let (stable, m) = check_stability_matrices(&a1, &a2);
        let expected = (0.5 + 1.45f64.sqrt()) / 2.0;
        assert!(stable);
        assert_relative_eq!(m, expected, epsilon = 1e-10);
    }

    #[test]
    fn recovers_stencil_truth() {
        let meta = square_grid(3);
        let (a1, a2) = stencil_truth(&meta, 0.8, -0.1);
        let series = simulate_var(&a1, &a2, 3, 55, &meta, 7);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();
        for &(lag, i, j) in &restr.entries {
            let (est, truth) = match lag {
                Lag::A1 => (model.a1[(i, j)], a1[(i, j)]),
                Lag::A2 => (model.a2[(i, j)], a2[(i, j)]),
            };
            assert!(
                (est - truth).abs() < 0.02,
                "coef {lag:?}[{i},{j}] = {est}, truth {truth}"
            );
        }
        assert!(model.stable);
    }

    #[test]
    fn white_noise_gives_null_coefficients() {
        let meta = square_grid(3);
        let n = meta.n_points();
        let zero = DMatrix::zeros(n, n);
        let series = simulate_var(&zero, &zero, 3, 55, &meta, 8);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();
        for &(lag, i, j) in &restr.entries {
            let est = match lag {
                Lag::A1 => model.a1[(i, j)],
                Lag::A2 => model.a2[(i, j)],
            };
            assert!(est.abs() < 0.02, "{lag:?}[{i},{j}] = {est}");
        }
    }

    #[test]
    fn scalar_ar2_matches_independent_fit() {
        let meta = GridMeta::new(
            vec![GridPoint { id: 0, lat: 0.0, lon: 0.0, elev: 0.0 }],
            1.0,
        )
        .unwrap();
        let a1 = DMatrix::from_element(1, 1, 0.5);
        let a2 = DMatrix::from_element(1, 1, 0.3);
        let series = simulate_var(&a1, &a2, 1, 550, &meta, 9);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();

        // independent scalar AR(2) least squares: direct 2x2 solve
        let x = series.point_series(0, 0);
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in 2..x.len() {
            s11 += x[t - 1] * x[t - 1];
            s12 += x[t - 1] * x[t - 2];
            s22 += x[t - 2] * x[t - 2];
            b1 += x[t] * x[t - 1];
            b2 += x[t] * x[t - 2];
        }
        let det = s11 * s22 - s12 * s12;
        let phi1 = (b1 * s22 - b2 * s12) / det;
        let phi2 = (b2 * s11 - b1 * s12) / det;
        assert_relative_eq!(model.a1[(0, 0)], phi1, epsilon = 1e-6);
        assert_relative_eq!(model.a2[(0, 0)], phi2, epsilon = 1e-6);

        // Yule-Walker solution agrees asymptotically
        let r1 = stats::correlation(&x[..x.len() - 1], &x[1..]);
        let r2 = stats::correlation(&x[..x.len() - 2], &x[2..]);
        let yw1 = r1 * (1.0 - r2) / (1.0 - r1 * r1);
        let yw2 = (r2 - r1 * r1) / (1.0 - r1 * r1);
        assert_relative_eq!(model.a1[(0, 0)], yw1, epsilon = 5e-3);
        assert_relative_eq!(model.a2[(0, 0)], yw2, epsilon = 5e-3);
    }

    #[test]
    fn zero_pattern_orthogonality_and_gls_identity() {
        let meta = square_grid(3);
        let (a1, a2) = stencil_truth(&meta, 0.7, -0.05);
        let series = simulate_var(&a1, &a2, 2, 12, &meta, 10);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();

        // exact zeros off the restriction pattern
        let n = meta.n_points();
        for i in 0..n {
            for j in 0..n {
                if !restr.entries.contains(&(Lag::A1, i, j)) {
                    assert_eq!(model.a1[(i, j)], 0.0);
                }
                if !restr.entries.contains(&(Lag::A2, i, j)) {
                    assert_eq!(model.a2[(i, j)], 0.0);
                }
            }
        }

        // OLS residuals orthogonal to every included regressor column
        let w = member_matrix(&series, 0);
        for i in 0..n {
            for (_, col) in restr.row_columns(i) {
                let mut dot = 0.0;
                let mut norm = 0.0;
                for t in 2..w.nrows() {
                    let z = if col < n { w[(t - 1, col)] } else { w[(t - 2, col - n)] };
                    // member 0 residuals start at step 0
                    dot += model.residuals.get(0, t - 2, i) * z;
                    norm += z * z;
                }
                // member 0 alone is not orthogonal under pooling; use all members
                let mut full_dot = dot;
                let mut full_norm = norm;
                for m in 1..series.n_realizations {
                    let wm = member_matrix(&series, m);
                    for t in 2..wm.nrows() {
                        let z = if col < n {
                            wm[(t - 1, col)]
                        } else {
                            wm[(t - 2, col - n)]
                        };
                        full_dot += model.residuals.get(m, t - 2, i) * z;
                        full_norm += z * z;
                    }
                }
                assert!(
                    full_dot.abs() / full_norm < 1e-8,
                    "row {i} col {col}: {}",
                    full_dot / full_norm
                );
            }
        }

        // GLS with identity covariance reproduces OLS
        let (zz, wz, _) = cross_products(
            &(0..series.n_realizations)
                .map(|r| member_matrix(&series, r))
                .collect::<Vec<_>>(),
            n,
        );
        let ident = DMatrix::identity(n, n);
        let gls = solve_gls(&restr, &zz, &wz, &ident).unwrap();
        let ols = solve_ols(&restr, &zz, &wz).unwrap();
        for (a, b) in gls.iter().zip(&ols) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn estimation_error_shrinks_with_sample_size() {
        let meta = square_grid(2);
        let (a1, a2) = stencil_truth(&meta, 0.75, -0.08);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let mut errs = Vec::new();
        for n_years in [4usize, 64] {
            let series = simulate_var(&a1, &a2, 1, n_years, &meta, 11);
            let model = fit_var(&series, &restr, Estimator::Ols).unwrap();
            let mut err: f64 = 0.0;
            for &(lag, i, j) in &restr.entries {
                let (est, truth) = match lag {
                    Lag::A1 => (model.a1[(i, j)], a1[(i, j)]),
                    Lag::A2 => (model.a2[(i, j)], a2[(i, j)]),
                };
                err = err.max((est - truth).abs());
            }
            errs.push(err);
        }
        // 16x the data should shrink the error by roughly 4x; allow slack
        assert!(errs[1] < errs[0] / 1.5, "errors: {errs:?}");
    }

    #[test]
    fn residual_moment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 60_000;
        // synthetic residual store with two points: one Gaussian, one shifted
        // lognormal, plus a third perfectly correlated with the first
        let mut values = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            let ln = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
            values.push(g);
            values.push(ln);
            values.push(2.0 * g);
        }
        let resid = Residuals { n_members: 1, n_steps: n, n_points: 3, values };
        let model = VarModel {
            a1: DMatrix::zeros(3, 3),
            a2: DMatrix::zeros(3, 3),
            estimator: Estimator::Ols,
            restrictions: Restrictions { n_points: 3, entries: vec![] },
            residuals: resid,
            stable: true,
            max_modulus: 0.0,
        };
        let (skew, kurt, corr) = residual_moments(&model);
        assert!(skew[0].abs() < 0.05, "gaussian skew {}", skew[0]);
        assert!(kurt[0].abs() < 0.1, "gaussian kurtosis {}", kurt[0]);
        // lognormal(0, 0.5^2) skewness (e^{0.25} + 2) sqrt(e^{0.25} - 1) ~ 1.750
        let w = (0.25_f64).exp();
        let expect = (w + 2.0) * (w - 1.0).sqrt();
        assert!((skew[1] - expect).abs() < 0.15, "lognormal skew {} vs {expect}", skew[1]);
        assert_relative_eq!(corr[(0, 2)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn significance_null_rate() {
        let meta = square_grid(3);
        let n = meta.n_points();
        let zero = DMatrix::zeros(n, n);
        let series = simulate_var(&zero, &zero, 3, 55, &meta, 13);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();
        let report = significance_report(&model, &series, 0.01).unwrap();
        let n_sig = report.iter().filter(|t| t.significant).count();
        // white-noise truth: BH at 1% should flag at most a stray coefficient
        assert!(n_sig <= 2, "{n_sig} significant under the null");
    }

    #[test]
    fn var_json_roundtrip() {
        let meta = square_grid(2);
        let (a1, a2) = stencil_truth(&meta, 0.7, -0.05);
        let series = simulate_var(&a1, &a2, 1, 12, &meta, 14);
        let restr = build_restrictions(&meta, Scheme::Stencil);
        let model = fit_var(&series, &restr, Estimator::Ols).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("var.json");
        save_var(&model, &path).unwrap();
        let loaded = load_var(&path).unwrap();
        assert_eq!(loaded.a1, model.a1);
        assert_eq!(loaded.a2, model.a2);
        assert_relative_eq!(loaded.max_modulus, model.max_modulus, epsilon = 1e-12);
    }
}
