//! Spatial cluster filter for isolated false-positive stained nuclei.
//!
//! Nuclei are linked when their centroids lie within `eps_px` of each other
//! and clusters are the connected components of that graph (single linkage).
//! Genuine stained tumour nuclei come in groups, so members of small
//! clusters are dropped.

use crate::nuclei::NucleusInstance;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMode {
    /// Cluster stained nuclei only; unstained nuclei pass through.
    StainedOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostConfig {
    pub enabled: bool,
    /// Level-0 pixels.
    pub eps_px: f64,
    pub min_size: usize,
    pub mode: ClusterMode,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            eps_px: 100.0,
            min_size: 6,
            mode: ClusterMode::StainedOnly,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clusters as sorted id lists, ordered by smallest member.
pub fn cluster_nuclei(instances: &[NucleusInstance], eps_px: f64) -> Vec<Vec<u64>> {
    let pts: Vec<(f64, f64)> = instances.iter().map(|n| n.centroid).collect();
    let ids: Vec<u64> = instances.iter().map(|n| n.id).collect();
    cluster_points(&pts, &ids, eps_px)
}

pub(crate) fn cluster_points(pts: &[(f64, f64)], ids: &[u64], eps_px: f64) -> Vec<Vec<u64>> {
    let eps2 = eps_px * eps_px;
    let cell = eps_px.max(f64::MIN_POSITIVE);
    let key = |p: (f64, f64)| ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut uf = UnionFind((0..pts.len()).collect());
    for (i, &p) in pts.iter().enumerate() {
        let (kx, ky) = key(p);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = grid.get(&(kx + dx, ky + dy)) else { continue };
                for &j in bucket {
                    if j > i {
                        let (ddx, ddy) = (pts[j].0 - p.0, pts[j].1 - p.1);
                        if ddx * ddx + ddy * ddy <= eps2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for i in 0..pts.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(ids[i]);
    }
    let mut clusters: Vec<Vec<u64>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    clusters.sort_by_key(|g| g[0]);
    clusters
}

/// Drops instances that belong to a cluster smaller than `min_size`.
/// Instances not named in any cluster are kept.
pub fn filter_small_clusters(clusters: &[Vec<u64>], instances: Vec<NucleusInstance>, min_size: usize) -> Vec<NucleusInstance> {
    let mut size_of: HashMap<u64, usize> = HashMap::new();
    for c in clusters {
        for &id in c {
            size_of.insert(id, c.len());
        }
    }
    instances
        .into_iter()
        .filter(|n| size_of.get(&n.id).is_none_or(|&s| s >= min_size))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    pub member_ids: Vec<u64>,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub enabled: bool,
    pub eps_px: f64,
    pub min_size: usize,
    pub mode: ClusterMode,
    pub n_input: usize,
    pub n_removed: usize,
    pub clusters: Vec<ClusterRecord>,
}

/// Runs the configured filter and reports every cluster it formed.
pub fn apply_cluster_filter(instances: Vec<NucleusInstance>, cfg: &PostConfig) -> (Vec<NucleusInstance>, ClusterReport) {
    let n_input = instances.len();
    let mut report = ClusterReport {
        enabled: cfg.enabled,
        eps_px: cfg.eps_px,
        min_size: cfg.min_size,
        mode: cfg.mode,
        n_input,
        n_removed: 0,
        clusters: Vec::new(),
    };
    if !cfg.enabled {
        return (instances, report);
    }
    let subject: Vec<NucleusInstance> = match cfg.mode {
        ClusterMode::All => instances.clone(),
        ClusterMode::StainedOnly => instances.iter().filter(|n| n.is_stained()).cloned().collect(),
    };
    let clusters = cluster_nuclei(&subject, cfg.eps_px);
    let kept = filter_small_clusters(&clusters, instances, cfg.min_size);
    report.n_removed = n_input - kept.len();
    report.clusters = clusters
        .into_iter()
        .enumerate()
        .map(|(i, member_ids)| ClusterRecord {
            cluster_id: i + 1,
            retained: member_ids.len() >= cfg.min_size,
            member_ids,
        })
        .collect();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelRuns;
    use crate::nuclei::Frame;
    use crate::stain::StainClass;

    fn at(id: u64, x: u32, y: u32) -> NucleusInstance {
        NucleusInstance::from_mask(id, PixelRuns::from_pixels([(x, y)]), Frame::Global).unwrap()
    }

    #[test]
    fn clique_chain_and_boundary() {
        let clique = vec![at(1, 0, 0), at(2, 3, 0), at(3, 0, 3)];
        assert_eq!(cluster_nuclei(&clique, 5.0), vec![vec![1, 2, 3]]);
        let chain = vec![at(1, 0, 0), at(2, 10, 0), at(3, 20, 0)];
        assert_eq!(cluster_nuclei(&chain, 10.0), vec![vec![1, 2, 3]]);
        let apart = vec![at(7, 0, 0), at(4, 11, 0)];
        assert_eq!(cluster_nuclei(&apart, 10.0), vec![vec![4], vec![7]]);
    }

    fn line(n: u64, y: u32) -> Vec<NucleusInstance> {
        (0..n).map(|i| at(y as u64 * 100 + i + 1, i as u32 * 5, y)).collect()
    }

    #[test]
    fn size_six_retained_five_dropped() {
        let six = line(6, 0);
        let c = cluster_nuclei(&six, 5.0);
        assert_eq!(filter_small_clusters(&c, six.clone(), 6).len(), 6);
        let five = line(5, 0);
        let c = cluster_nuclei(&five, 5.0);
        assert!(filter_small_clusters(&c, five.clone(), 6).is_empty());
        assert_eq!(filter_small_clusters(&c, five.clone(), 1), five);
    }

    #[test]
    fn stained_only_mode_keeps_unstained() {
        let mut v: Vec<NucleusInstance> = line(3, 0).into_iter().map(|n| n.with_stain(StainClass::Light)).collect();
        v.extend(line(2, 50).into_iter().map(|n| n.with_stain(StainClass::Unstained)));
        let (kept, rep) = apply_cluster_filter(v.clone(), &PostConfig { eps_px: 6.0, ..PostConfig::default() });
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|n| !n.is_stained()));
        assert_eq!(rep.n_removed, 3);
        assert_eq!(rep.clusters.len(), 1);
        let cfg = PostConfig {
            eps_px: 6.0,
            mode: ClusterMode::All,
            ..PostConfig::default()
        };
        assert!(apply_cluster_filter(v.clone(), &cfg).0.is_empty());
        let off = PostConfig {
            enabled: false,
            ..PostConfig::default()
        };
        assert_eq!(apply_cluster_filter(v.clone(), &off).0, v);
    }
}
