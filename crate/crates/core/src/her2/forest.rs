//! CART trees with Gini splits and a bagged forest of them.

use super::Her2Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT: &str = "ihc-random-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` uses `floor(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: Some(12),
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), Her2Error> {
        if self.n_trees == 0 {
            return Err(Her2Error::InvalidConfig("n_trees must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Her2Error::InvalidConfig("min_samples_split must be at least 2".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Her2Error::InvalidConfig("features_per_split must be positive".into()));
        }
        Ok(())
    }

    fn mtry(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| (d as f64).sqrt().floor() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        counts: Vec<u32>,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Samples with `x[feature] <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

/// Most frequent class, ties toward the lower index.
pub(crate) fn argmax_low(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            TreeNode::Leaf { counts } => argmax_low(counts),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

fn gini(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.k];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best Gini split on one feature: `(weighted impurity, threshold)`.
    fn best_on(&self, idx: &mut [usize], f: usize) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
        let n = idx.len() as u32;
        let total = self.counts(idx);
        let mut left = vec![0u32; self.k];
        let mut best: Option<(f64, f64)> = None;
        for s in 1..idx.len() {
            left[self.y[idx[s - 1]]] += 1;
            let (a, b) = (self.x[idx[s - 1]][f], self.x[idx[s]][f]);
            if a == b {
                continue;
            }
            let right: Vec<u32> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let nl = s as u32;
            let imp = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            let thr = a + (b - a) / 2.0;
            // midpoint can round up to b for adjacent floats
            let thr = if thr < b { thr } else { a };
            if best.is_none_or(|(bi, _)| imp < bi) {
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_cap = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_cap || idx.len() < self.cfg.min_samples_split {
            return TreeNode::Leaf { counts };
        }
        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        // draw mtry candidates; keep drawing only while none of them splits
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on(idx, f) {
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return TreeNode::Leaf { counts };
        };
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = Box::new(self.grow(l, depth + 1));
        let right = Box::new(self.grow(r, depth + 1));
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<TreeNode>,
}

impl RandomForestModel {
    /// Fits a forest. Trees are grown in parallel, each from its own seed
    /// derived from `cfg.seed` and the tree index.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        feature_names: Vec<String>,
        cfg: &ForestConfig,
    ) -> Result<Self, Her2Error> {
        cfg.validate()?;
        if x.is_empty() || x.len() != y.len() {
            return Err(Her2Error::EmptyInput);
        }
        let d = x[0].len();
        if let Some(bad) = x.iter().find(|r| r.len() != d) {
            return Err(Her2Error::FeatureLength {
                expected: d,
                got: bad.len(),
            });
        }
        if y.iter().any(|&c| c >= n_classes) {
            return Err(Her2Error::InvalidConfig(format!("class index outside 0..{n_classes}")));
        }
        let mtry = cfg.mtry(d);
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, t as u64));
                let n = x.len();
                let mut idx: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut g = Grower {
                    x,
                    y,
                    k: n_classes,
                    cfg,
                    mtry,
                    rng,
                };
                g.grow(&mut idx, 0)
            })
            .collect();
        Ok(Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            n_features: d,
            n_classes,
            feature_names,
            config: cfg.clone(),
            trees,
        })
    }

    pub fn votes(&self, x: &[f64]) -> Result<Vec<u32>, Her2Error> {
        if x.len() != self.n_features {
            return Err(Her2Error::FeatureLength {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut v = vec![0u32; self.n_classes];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        Ok(v)
    }

    /// Majority over trees, ties toward the lower class.
    pub fn predict(&self, x: &[f64]) -> Result<usize, Her2Error> {
        Ok(argmax_low(&self.votes(x)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, Her2Error> {
        let m: Self = serde_json::from_str(text).map_err(|e| Her2Error::Model(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Her2Error::Model(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                m.format, m.version
            )));
        }
        Ok(m)
    }
}
