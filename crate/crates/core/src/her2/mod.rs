//! HER2 membrane scoring: per-region morphology features and a random forest
//! over them.

mod features;
mod forest;
mod io;
mod train;

pub use features::{extract_features, membrane_baseline, FeatureConfig, FeatureCounts, Her2FeatureVector, MembraneRegion};
pub use forest::{ForestConfig, RandomForestModel, TreeNode, MODEL_FORMAT, MODEL_VERSION};
pub(crate) use forest::derive_seed;
pub use io::RegionFiles;
pub use train::{cross_validate, predict_her2, train_rf, CvReport, FoldResult, Her2Prediction, SlideAggregation};

use crate::score::Category;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Her2Error {
    #[error("region {0} is empty")]
    EmptyRegion(String),
    #[error("region {id}: {reason}")]
    FrameMismatch { id: String, reason: String },
    #[error("dataset has a single class")]
    DegenerateDataset,
    #[error("cannot form {k} folds from {n} samples")]
    FoldTooSmall { k: usize, n: usize },
    #[error("no regions to predict")]
    EmptyInput,
    #[error("feature vector has {got} values, model expects {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {reason}")]
    Io { path: std::path::PathBuf, reason: String },
    #[error("model file: {0}")]
    Model(String),
}

/// Membrane staining grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Her2Score {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1+")]
    OnePlus,
    #[serde(rename = "2+")]
    TwoPlus,
    #[serde(rename = "3+")]
    ThreePlus,
}

impl Her2Score {
    pub const ALL: [Her2Score; 4] = [Her2Score::Zero, Her2Score::OnePlus, Her2Score::TwoPlus, Her2Score::ThreePlus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        ["0", "1+", "2+", "3+"][self.index()]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.label() == s.trim())
    }

    pub fn clinical(self) -> Category {
        match self {
            Her2Score::Zero | Her2Score::OnePlus => Category::Negative,
            Her2Score::TwoPlus => Category::Equivocal,
            Her2Score::ThreePlus => Category::Positive,
        }
    }
}

impl std::fmt::Display for Her2Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clinical_map() {
        use Her2Score::*;
        let got: Vec<Category> = Her2Score::ALL.iter().map(|h| h.clinical()).collect();
        assert_eq!(got, vec![Category::Negative, Category::Negative, Category::Equivocal, Category::Positive]);
        assert_eq!(Her2Score::parse("2+"), Some(TwoPlus));
        assert_eq!(serde_json::to_string(&ThreePlus).unwrap(), "\"3+\"");
    }
}
