//! Gridded ensemble data model: lattice metadata with a first-order stencil
//! neighborhood, a 365-day calendar, and CSV ingestion/serialization.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stencil direction on the lattice. North is increasing latitude, East is
/// increasing longitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::North => "N",
            Direction::South => "S",
            Direction::East => "E",
            Direction::West => "W",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    pub elev: f64,
}

/// Spatial metadata: points of a (possibly masked/irregular) lattice plus the
/// N/S/E/W neighbor relation found by coordinate matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub points: Vec<GridPoint>,
    pub grid_spacing: f64,
    pub neighbor_map: Vec<Vec<(Direction, usize)>>,
}

impl GridMeta {
    /// Build metadata from points, discovering neighbors at `spacing` degrees
    /// (tolerance `spacing / 4`).
    pub fn new(points: Vec<GridPoint>, spacing: f64) -> Result<GridMeta> {
        for (k, p) in points.iter().enumerate() {
            if p.id != k {
                return Err(Error::Grid(format!(
                    "point ids must be 0..N-1 in order; found id {} at position {}",
                    p.id, k
                )));
            }
        }
        let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.lat, p.lon)).collect();
        let neighbor_map = build_neighbors(&coords, spacing, spacing / 4.0)?;
        Ok(GridMeta { points, grid_spacing: spacing, neighbor_map })
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbor_map[i].len()
    }

    /// Checks the stencil invariants: ids contiguous, neighbor relation
    /// symmetric with opposite directions, at most 4 neighbors per point.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.neighbor_map.len() != n {
            return Err(Error::Grid("neighbor_map length differs from point count".into()));
        }
        for (i, nbrs) in self.neighbor_map.iter().enumerate() {
            if nbrs.len() > 4 {
                return Err(Error::Grid(format!("point {i} has {} neighbors", nbrs.len())));
            }
            for &(dir, j) in nbrs {
                if j >= n {
                    return Err(Error::Grid(format!("point {i} links to unknown point {j}")));
                }
                let back = self.neighbor_map[j]
                    .iter()
                    .any(|&(d2, k)| k == i && d2 == dir.opposite());
                if !back {
                    return Err(Error::Grid(format!(
                        "asymmetric link: {i} -> {j} ({dir}) has no opposite back-link"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Find stencil neighbors by coordinate matching: two points are linked when
/// they sit `spacing` degrees apart (within `tol`) along exactly one axis.
pub fn build_neighbors(
    points: &[(f64, f64)],
    spacing: f64,
    tol: f64,
) -> Result<Vec<Vec<(Direction, usize)>>> {
    if spacing <= 0.0 {
        return Err(Error::InvalidArgument("grid spacing must be positive".into()));
    }
    if tol >= spacing / 2.0 {
        return Err(Error::InvalidArgument("neighbor tolerance must be < spacing/2".into()));
    }
    let n = points.len();
    let mut map = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dlat = points[j].0 - points[i].0;
            let dlon = points[j].1 - points[i].1;
            if dlat.abs() < tol && dlon.abs() < tol {
                return Err(Error::Grid(format!("duplicate coordinates at points {i} and {j}")));
            }
            if dlon.abs() < tol && (dlat - spacing).abs() < tol {
                map[i].push((Direction::North, j));
            } else if dlon.abs() < tol && (dlat + spacing).abs() < tol {
                map[i].push((Direction::South, j));
            } else if dlat.abs() < tol && (dlon - spacing).abs() < tol {
                map[i].push((Direction::East, j));
            } else if dlat.abs() < tol && (dlon + spacing).abs() < tol {
                map[i].push((Direction::West, j));
            }
        }
    }
    Ok(map)
}

/// A leap-free calendar: every year has exactly 365 days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar365 {
    pub start_year: i32,
    pub n_years: usize,
}

pub const DAYS_PER_YEAR: usize = 365;

impl Calendar365 {
    pub fn new(start_year: i32, n_years: usize) -> Result<Calendar365> {
        if n_years == 0 {
            return Err(Error::InvalidArgument("calendar needs at least one year".into()));
        }
        Ok(Calendar365 { start_year, n_years })
    }

    pub fn n_days(&self) -> usize {
        DAYS_PER_YEAR * self.n_years
    }

    /// 1-based day of year for a 0-based global day index.
    pub fn day_of_year(t: usize) -> usize {
        t % DAYS_PER_YEAR + 1
    }
}

/// R realizations x T days x N points of daily wind speed, either on the raw
/// m/s scale or on the dimensionless standardized scale.
#[derive(Debug, Clone)]
pub struct EnsembleSeries {
    pub meta: GridMeta,
    pub calendar: Calendar365,
    pub n_realizations: usize,
    pub standardized: bool,
    values: Vec<f64>,
}

impl EnsembleSeries {
    pub fn zeros(
        meta: GridMeta,
        calendar: Calendar365,
        n_realizations: usize,
        standardized: bool,
    ) -> EnsembleSeries {
        let len = n_realizations * calendar.n_days() * meta.n_points();
        EnsembleSeries { meta, calendar, n_realizations, standardized, values: vec![0.0; len] }
    }

    pub fn n_points(&self) -> usize {
        self.meta.n_points()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.n_days()
    }

    #[inline]
    fn idx(&self, r: usize, t: usize, i: usize) -> usize {
        debug_assert!(r < self.n_realizations && t < self.n_days() && i < self.n_points());
        (r * self.n_days() + t) * self.n_points() + i
    }

    #[inline]
    pub fn get(&self, r: usize, t: usize, i: usize) -> f64 {
        self.values[self.idx(r, t, i)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, t: usize, i: usize, v: f64) {
        let k = self.idx(r, t, i);
        self.values[k] = v;
    }

    /// The N values of day `t` in realization `r`.
    pub fn day(&self, r: usize, t: usize) -> &[f64] {
        let k = self.idx(r, t, 0);
        &self.values[k..k + self.n_points()]
    }

    /// Time series of point `i` in realization `r`.
    pub fn point_series(&self, r: usize, i: usize) -> Vec<f64> {
        (0..self.n_days()).map(|t| self.get(r, t, i)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F, standardized: bool) -> EnsembleSeries {
        let mut out = self.clone();
        out.standardized = standardized;
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }
}

/// Decimal text with 9 significant digits, the on-disk number format.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn load_grid(path: &Path, spacing: Option<f64>) -> Result<GridMeta> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        msg: e.to_string(),
    })?;
    let expect = ["id", "lat", "lon", "elev"];
    let hdr = rdr.headers().map_err(|e| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        msg: e.to_string(),
    })?;
    if hdr.iter().collect::<Vec<_>>() != expect {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: format!("expected header id,lat,lon,elev, found {hdr:?}"),
        });
    }
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: row + 1,
            msg: e.to_string(),
        })?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or(())
                .and_then(|s| s.trim().parse::<f64>().map_err(|_| ()))
                .map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    row: row + 1,
                    msg: format!("bad field {}", expect[k]),
                })
        };
        let id = field(0)? as usize;
        points.push(GridPoint { id, lat: field(1)?, lon: field(2)?, elev: field(3)? });
    }
    if points.is_empty() {
        return Err(Error::Grid("grid file has no points".into()));
    }
    let spacing = match spacing {
        Some(s) => s,
        None => infer_spacing(&points),
    };
    GridMeta::new(points, spacing)
}

/// Smallest axis-aligned coordinate gap; falls back to 1 degree for a single
/// point or a grid with no aligned pairs.
fn infer_spacing(points: &[GridPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for a in points {
        for b in points {
            let dlat = (a.lat - b.lat).abs();
            let dlon = (a.lon - b.lon).abs();
            if dlat < 1e-9 && dlon > 1e-9 {
                best = best.min(dlon);
            } else if dlon < 1e-9 && dlat > 1e-9 {
                best = best.min(dlat);
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        1.0
    }
}

pub fn save_grid(meta: &GridMeta, path: &Path) -> Result<()> {
    let mut out = String::from("id,lat,lon,elev\n");
    for p in &meta.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.id,
            format_value(p.lat),
            format_value(p.lon),
            format_value(p.elev)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a `series.csv` (header `realization,t,point_id,value`, rows in any
/// order) against grid metadata. Raw series must be finite and nonnegative.
pub fn load_series(path: &Path, meta_path: &Path) -> Result<EnsembleSeries> {
    let meta = load_grid(meta_path, None)?;
    load_series_with_meta(path, meta, false)
}

/// Load a simulated `series.csv`. Unlike reference data, generator output
/// may legitimately contain negative raw speeds, which are preserved.
pub fn load_simulated_series(path: &Path, meta_path: &Path) -> Result<EnsembleSeries> {
    let meta = load_grid(meta_path, None)?;
    load_series_impl(path, meta, false, true)
}

pub fn load_series_with_meta(
    path: &Path,
    meta: GridMeta,
    standardized: bool,
) -> Result<EnsembleSeries> {
    load_series_impl(path, meta, standardized, false)
}

fn load_series_impl(
    path: &Path,
    meta: GridMeta,
    standardized: bool,
    allow_negative: bool,
) -> Result<EnsembleSeries> {
    let n = meta.n_points();
    let perr = |row: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        row,
        msg,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| perr(0, e.to_string()))?;
    let hdr = rdr.headers().map_err(|e| perr(0, e.to_string()))?;
    if hdr.iter().collect::<Vec<_>>() != ["realization", "t", "point_id", "value"] {
        return Err(perr(0, format!("expected header realization,t,point_id,value, found {hdr:?}")));
    }

    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut max_r = 0usize;
    let mut max_t = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| perr(row + 1, e.to_string()))?;
        if rec.len() != 4 {
            return Err(perr(row + 1, format!("expected 4 fields, found {}", rec.len())));
        }
        let r: usize =
            rec[0].trim().parse().map_err(|_| perr(row + 1, "bad realization index".into()))?;
        let t: usize = rec[1].trim().parse().map_err(|_| perr(row + 1, "bad t index".into()))?;
        let i: usize =
            rec[2].trim().parse().map_err(|_| perr(row + 1, "bad point_id".into()))?;
        let v: f64 = rec[3].trim().parse().map_err(|_| perr(row + 1, "bad value".into()))?;
        if !v.is_finite() {
            return Err(perr(row + 1, "non-finite value".into()));
        }
        if !standardized && !allow_negative && v < 0.0 {
            return Err(perr(row + 1, format!("negative raw wind speed {v}")));
        }
        if i >= n {
            return Err(perr(row + 1, format!("point_id {i} not on the {n}-point grid")));
        }
        max_r = max_r.max(r);
        max_t = max_t.max(t);
        rows.push((r, t, i, v));
    }
    if rows.is_empty() {
        return Err(perr(0, "series file has no rows".into()));
    }
    let n_days = max_t + 1;
    if n_days % DAYS_PER_YEAR != 0 {
        return Err(perr(
            0,
            format!("expected 365 days per year; series spans {n_days} days"),
        ));
    }
    let calendar = Calendar365::new(0, n_days / DAYS_PER_YEAR)?;
    let n_real = max_r + 1;
    let mut series = EnsembleSeries::zeros(meta, calendar, n_real, standardized);
    let mut seen = vec![false; n_real * n_days * n];
    for (r, t, i, v) in rows {
        let k = (r * n_days + t) * n + i;
        if seen[k] {
            return Err(perr(0, format!("duplicate cell (r={r}, t={t}, i={i})")));
        }
        seen[k] = true;
        series.set(r, t, i, v);
    }
    if let Some(k) = seen.iter().position(|&s| !s) {
        let i = k % n;
        let t = (k / n) % n_days;
        let r = k / (n * n_days);
        return Err(perr(0, format!("missing cell (r={r}, t={t}, i={i})")));
    }
    Ok(series)
}

pub fn save_series(series: &EnsembleSeries, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "realization,t,point_id,value").map_err(|e| Error::io(path, e))?;
    for r in 0..series.n_realizations {
        for t in 0..series.n_days() {
            for i in 0..series.n_points() {
                writeln!(w, "{r},{t},{i},{}", format_value(series.get(r, t, i)))
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn square_grid(side: usize, spacing: f64) -> GridMeta {
        let mut pts = Vec::new();
        for row in 0..side {
            for col in 0..side {
                pts.push(GridPoint {
                    id: pts.len(),
                    lat: 20.0 + row as f64 * spacing,
                    lon: 40.0 + col as f64 * spacing,
                    elev: 0.0,
                });
            }
        }
        GridMeta::new(pts, spacing).unwrap()
    }

    #[test]
    fn east_west_pair() {
        let map = build_neighbors(&[(20.0, 40.0), (20.0, 41.0)], 1.0, 0.2).unwrap();
        assert_eq!(map[0], vec![(Direction::East, 1)]);
        assert_eq!(map[1], vec![(Direction::West, 0)]);
    }

    #[test]
    fn single_point_has_no_neighbors() {
        let map = build_neighbors(&[(20.0, 40.0)], 1.0, 0.2).unwrap();
        assert!(map[0].is_empty());
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        assert!(build_neighbors(&[(20.0, 40.0), (20.0, 40.0)], 1.0, 0.2).is_err());
    }

    #[test]
    fn three_by_three_degrees() {
        // corners have 2 neighbors, edges 3, center 4
        let meta = square_grid(3, 1.0);
        meta.validate().unwrap();
        let degs: Vec<usize> = (0..9).map(|i| meta.degree(i)).collect();
        assert_eq!(degs, vec![2, 3, 2, 3, 4, 3, 2, 3, 2]);
    }

    #[test]
    fn irregular_mask_symmetry() {
        // L-shaped mask: drop a corner block from a 4x4 lattice
        let mut pts = Vec::new();
        for row in 0..4 {
            for col in 0..4 {
                if row >= 2 && col >= 2 {
                    continue;
                }
                pts.push(GridPoint {
                    id: pts.len(),
                    lat: 15.0 + row as f64,
                    lon: 35.0 + col as f64,
                    elev: 10.0,
                });
            }
        }
        let meta = GridMeta::new(pts, 1.0).unwrap();
        meta.validate().unwrap();
        let directed: usize = meta.neighbor_map.iter().map(|v| v.len()).sum();
        assert_eq!(directed % 2, 0);
    }

    #[test]
    fn day_of_year_is_one_based() {
        assert_eq!(Calendar365::day_of_year(0), 1);
        assert_eq!(Calendar365::day_of_year(364), 365);
        assert_eq!(Calendar365::day_of_year(365), 1);
    }

    #[test]
    fn series_roundtrip_and_constant_load() {
        let dir = tempdir().unwrap();
        let gpath = dir.path().join("grid.csv");
        let spath = dir.path().join("series.csv");
        let meta = square_grid(1, 1.0);
        save_grid(&meta, &gpath).unwrap();
        let cal = Calendar365::new(0, 1).unwrap();
        let mut s = EnsembleSeries::zeros(meta, cal, 1, false);
        for t in 0..365 {
            s.set(0, t, 0, 5.0);
        }
        save_series(&s, &spath).unwrap();
        let loaded = load_series(&spath, &gpath).unwrap();
        assert_eq!(loaded.n_days(), 365);
        assert!(loaded.values().iter().all(|&v| v == 5.0));

        // second save is byte-identical (9-sig-digit text is stable)
        let spath2 = dir.path().join("series2.csv");
        save_series(&loaded, &spath2).unwrap();
        assert_eq!(
            std::fs::read(&spath).unwrap(),
            std::fs::read(&spath2).unwrap()
        );
    }

    #[test]
    fn short_year_rejected() {
        let dir = tempdir().unwrap();
        let gpath = dir.path().join("grid.csv");
        let spath = dir.path().join("series.csv");
        save_grid(&square_grid(1, 1.0), &gpath).unwrap();
        let mut body = String::from("realization,t,point_id,value\n");
        for t in 0..364 {
            body.push_str(&format!("0,{t},0,1.0\n"));
        }
        std::fs::write(&spath, body).unwrap();
        let err = load_series(&spath, &gpath).unwrap_err();
        assert!(err.to_string().contains("365"), "{err}");
    }

    #[test]
    fn negative_raw_speed_rejected() {
        let dir = tempdir().unwrap();
        let gpath = dir.path().join("grid.csv");
        let spath = dir.path().join("series.csv");
        save_grid(&square_grid(1, 1.0), &gpath).unwrap();
        let mut body = String::from("realization,t,point_id,value\n");
        for t in 0..365 {
            body.push_str(&format!("0,{t},0,{}\n", if t == 7 { -1.0 } else { 1.0 }));
        }
        std::fs::write(&spath, body).unwrap();
        assert!(load_series(&spath, &gpath).is_err());
    }

    #[test]
    fn loaded_grid_roundtrips_values() {
        let dir = tempdir().unwrap();
        let gpath = dir.path().join("grid.csv");
        let meta = square_grid(3, 1.0);
        save_grid(&meta, &gpath).unwrap();
        let loaded = load_grid(&gpath, None).unwrap();
        assert_eq!(loaded.grid_spacing, 1.0);
        assert_eq!(loaded.neighbor_map, meta.neighbor_map);
    }
}
