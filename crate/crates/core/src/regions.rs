//! Ward agglomerative partitioning of the gridpoints on residual features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridMeta;
use crate::stats;
use crate::var::VarModel;

/// Assignment of gridpoints to contiguous cluster labels 1..N_c.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub n_clusters: usize,
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.assignment.len() != n_points {
            return Err(Error::Dimension(format!(
                "partition covers {} points, grid has {n_points}",
                self.assignment.len()
            )));
        }
        let mut sizes = vec![0usize; self.n_clusters];
        for &c in &self.assignment {
            if c == 0 || c > self.n_clusters {
                return Err(Error::InvalidArgument(format!("label {c} outside 1..{}", self.n_clusters)));
            }
            sizes[c - 1] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("empty cluster in partition".into()));
        }
        Ok(())
    }

    /// Member gridpoint ids of cluster `c` (1-based label), in id order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.n_clusters).map(|c| self.members(c).len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Each point's row of the residual correlation matrix.
    Corr,
    /// (skewness, excess kurtosis, scaled lat, scaled lon).
    MomentsCoords,
}

/// Ward's agglomerative clustering cut at `n_clusters`. The merge cost is
/// the increase in within-cluster sum of squares; ties break on the
/// lexicographically smallest (min id, max id) pair, where a cluster's id
/// is its smallest member index. Returns the partition and the merge cost
/// sequence.
pub fn cluster_ward(features: &[Vec<f64>], n_clusters: usize) -> Result<(Partition, Vec<f64>)> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no feature vectors".into()));
    }
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::InvalidArgument(format!("N_c = {n_clusters} outside 1..{n}")));
    }
    let dim = features[0].len();
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::Dimension(format!("feature vector {i} has length {}", f.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature at point {i}")));
        }
    }

    struct Cluster {
        id: usize, // smallest member index
        size: usize,
        centroid: Vec<f64>,
        members: Vec<usize>,
    }
    let mut clusters: Vec<Cluster> = features
        .iter()
        .enumerate()
        .map(|(i, f)| Cluster { id: i, size: 1, centroid: f.clone(), members: vec![i] })
        .collect();

    let ward_cost = |a: &Cluster, b: &Cluster| -> f64 {
        let w = (a.size * b.size) as f64 / (a.size + b.size) as f64;
        let d2: f64 = a
            .centroid
            .iter()
            .zip(&b.centroid)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        w * d2
    };

    let mut merge_costs = Vec::new();
    while clusters.len() > n_clusters {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let cost = ward_cost(&clusters[a], &clusters[b]);
                let key = (
                    clusters[a].id.min(clusters[b].id),
                    clusters[a].id.max(clusters[b].id),
                );
                let better = match best {
                    None => true,
                    Some((c, pa, pb)) => {
                        let pkey = (
                            clusters[pa].id.min(clusters[pb].id),
                            clusters[pa].id.max(clusters[pb].id),
                        );
                        cost < c || (cost == c && key < pkey)
                    }
                };
                if better {
                    best = Some((cost, a, b));
                }
            }
        }
        let (cost, a, b) = best.unwrap();
        merge_costs.push(cost);
        let cb = clusters.swap_remove(b);
        let ca = &mut clusters[a];
        let total = (ca.size + cb.size) as f64;
        for j in 0..dim {
            ca.centroid[j] =
                (ca.centroid[j] * ca.size as f64 + cb.centroid[j] * cb.size as f64) / total;
        }
        ca.size += cb.size;
        ca.members.extend(cb.members);
        ca.id = ca.id.min(cb.id);
    }

    clusters.sort_by_key(|c| c.id);
    let mut assignment = vec![0usize; n];
    for (label, c) in clusters.iter().enumerate() {
        for &i in &c.members {
            assignment[i] = label + 1;
        }
    }
    Ok((Partition { n_clusters, assignment }, merge_costs))
}

/// Features for clustering derived from the fitted VAR residuals.
pub fn build_features(model: &VarModel, mode: FeatureMode, meta: &GridMeta) -> Vec<Vec<f64>> {
    match mode {
        FeatureMode::Corr => {
            let corr = stats::correlation_matrix(&model.residuals.pooled_matrix());
            (0..corr.nrows())
                .map(|i| corr.row(i).iter().copied().collect())
                .collect()
        }
        FeatureMode::MomentsCoords => {
            let n = model.residuals.n_points;
            let lats: Vec<f64> = meta.points.iter().map(|p| p.lat).collect();
            let lons: Vec<f64> = meta.points.iter().map(|p| p.lon).collect();
            let scale = |x: &[f64], v: f64| {
                let s = stats::sd(x);
                if s > 0.0 {
                    (v - stats::mean(x)) / s
                } else {
                    0.0
                }
            };
            (0..n)
                .map(|i| {
                    let r = model.residuals.pooled_point(i);
                    vec![
                        stats::skewness(&r),
                        stats::excess_kurtosis(&r),
                        scale(&lats, lats[i]),
                        scale(&lons, lons[i]),
                    ]
                })
                .collect()
        }
    }
}

/// Whether each cluster's members form a connected component of the stencil
/// neighbor graph. Report only.
pub fn contiguity_report(partition: &Partition, meta: &GridMeta) -> Vec<bool> {
    (1..=partition.n_clusters)
        .map(|c| {
            let members = partition.members(c);
            if members.len() <= 1 {
                return true;
            }
            let inside: std::collections::HashSet<usize> = members.iter().copied().collect();
            let mut seen = std::collections::HashSet::new();
            let mut stack = vec![members[0]];
            while let Some(i) = stack.pop() {
                if !seen.insert(i) {
                    continue;
                }
                for &(_, j) in &meta.neighbor_map[i] {
                    if inside.contains(&j) && !seen.contains(&j) {
                        stack.push(j);
                    }
                }
            }
            seen.len() == members.len()
        })
        .collect()
}

pub fn save_partition(partition: &Partition, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(partition).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_partition(path: &Path, n_points: usize) -> Result<Partition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p: Partition = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    p.validate(n_points)?;
    Ok(p)
}
