//! Small sample-statistics helpers shared across the fitting pipeline.

use nalgebra::{DMatrix, DVector};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Sample skewness m3 / m2^{3/2}.
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Sample excess kurtosis m4 / m2^2 - 3.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlation matrix of rows-as-observations data (n x d).
pub fn correlation_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    let d = data.ncols();
    let cov = covariance_matrix(data);
    let mut corr = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            corr[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
        }
    }
    corr
}

/// Covariance matrix (denominator n) of rows-as-observations data.
pub fn covariance_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows() as f64;
    let d = data.ncols();
    let means: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n).collect();
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..data.nrows() {
        for i in 0..d {
            let di = data[(r, i)] - means[i];
            for j in i..d {
                cov[(i, j)] += di * (data[(r, j)] - means[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= n;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

/// Mardia's multivariate excess kurtosis estimator:
/// mean of squared Mahalanobis distances minus d(d+2).
pub fn sample_mardia_kurtosis(data: &DMatrix<f64>) -> f64 {
    let n = data.nrows();
    let d = data.ncols();
    let cov = covariance_matrix(data);
    let means: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let chol = cov
        .clone()
        .cholesky()
        .expect("sample covariance must be positive definite for Mardia kurtosis");
    let mut acc = 0.0;
    let mut v = DVector::zeros(d);
    for r in 0..n {
        for j in 0..d {
            v[j] = data[(r, j)] - means[j];
        }
        let u = chol.solve(&v);
        let md = v.dot(&u);
        acc += md * md;
    }
    acc / n as f64 - (d * (d + 2)) as f64
}

/// Linear-interpolation empirical quantile (between order statistics,
/// h = (n-1)p), on an unsorted slice.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s: Vec<f64> = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&s, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in km between (lat, lon) pairs in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * s.sqrt().asin()
}
